"""tdcrop: tendon-driven continuum-robot statics and neural-operator
surrogates.

Subpackages:
    rodmodel  - Cosserat-rod boundary-value solver for tendon-driven rods.
    dataset   - design sampling, equilibrium dataset generation, binary I/O.
    autodiff  - minimal reverse-mode autodiff engine over numpy arrays.
    neuralops - DeepONet and FNO surrogate architectures and losses.
    training  - Adam optimizer, schedule, training loop, checkpoints.
    eval      - metrics, studies (convergence, dropout, OOD), timing bench.
    cli       - command-line entry point (``tdcrop``).
"""

__version__ = "0.1.0"

from . import autodiff, dataset, errors, eval, neuralops, rodmodel, training

__all__ = [
    "autodiff",
    "dataset",
    "errors",
    "eval",
    "neuralops",
    "rodmodel",
    "training",
    "__version__",
]
