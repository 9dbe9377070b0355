"""Pin BLAS/OpenMP to one thread before numpy is imported anywhere, so test
timings and numerical results are reproducible on any machine."""

import os

for var in (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    os.environ.setdefault(var, "1")
