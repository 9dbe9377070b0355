"""Dataset generation, normalization, persistence, splitting, and batching.

Designs are sampled uniformly from production parameter ranges, solved to
equilibrium, and stored together with their 42-node tendon-position targets.
Each sample draws from its own counter-based random stream keyed by
``(seed, sample_index)``, so generation is bitwise reproducible regardless
of how the work is partitioned. Failed solves are resampled from the same
per-sample stream and counted in the manifest.
"""

from __future__ import annotations

import io
import json
import os
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, InputDomainError, NonconvergenceError
from .rodmodel import (
    PRODUCTION_STEPS,
    DesignVector,
    design_from_flat,
    design_to_flat,
    solve_equilibrium_batch,
)

__all__ = [
    "ParameterRanges",
    "NormalizationSpec",
    "Dataset",
    "DEFAULT_RANGES",
    "DEFAULT_NORMALIZATION",
    "GRID_POINTS",
    "sample_design",
    "sample_rng",
    "normalize_design",
    "denormalize_design",
    "normalize_rows",
    "generate_dataset",
    "split_dataset",
    "batches",
    "save_dataset",
    "load_dataset",
]

GRID_POINTS = PRODUCTION_STEPS + 1  # 42 equispaced nodes, tip included
N_TENDONS = 4
_MAGIC = b"TDCRDS1\x00"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ParameterRanges:
    """Per-parameter (low, high) sampling bounds.

    Defaults cover the production design space: tendon tensions in [0, 5] N,
    backbone length in [0.1, 0.35] m, helix pitches in [-20, 20] rad/m,
    tendon offsets in [0.005, 0.01] m, Young's modulus in
    [15.5, 45.5] GPa, and backbone radius in [0.5, 1.5] mm.
    """

    tension: tuple = (0.0, 5.0)
    length: tuple = (0.1, 0.35)
    pitch: tuple = (-20.0, 20.0)
    offset: tuple = (0.005, 0.01)
    youngs: tuple = (15.5e9, 45.5e9)
    radius: tuple = (0.0005, 0.0015)

    def validate(self):
        for name in ("tension", "length", "pitch", "offset", "youngs", "radius"):
            low, high = getattr(self, name)
            if not (np.isfinite(low) and np.isfinite(high)) or low > high:
                raise InputDomainError(
                    f"range {name}=({low}, {high}) must satisfy low <= high"
                )

    def to_dict(self) -> dict:
        return {
            name: list(getattr(self, name))
            for name in ("tension", "length", "pitch", "offset", "youngs", "radius")
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterRanges":
        return cls(**{k: tuple(v) for k, v in d.items()})


DEFAULT_RANGES = ParameterRanges()


def _default_scales() -> np.ndarray:
    # flat layout [rho1..4, phi1..4, tau1..4, r, L, E]
    return np.array([100.0] * 4 + [0.1] * 4 + [1.0] * 4 + [1000.0, 10.0, 1e-10])


@dataclass(frozen=True)
class NormalizationSpec:
    """Multiplicative per-coordinate scales applied to flat design vectors.

    The default scales bring every coordinate within one order of magnitude
    of the others (offsets x100, pitches x0.1, tensions x1, radius x1000,
    length x10, modulus x1e-10); arclength inputs are passed through raw,
    in meters.
    """

    scales: np.ndarray = field(default_factory=_default_scales)
    arclength_passthrough: bool = True

    def __post_init__(self):
        scales = np.asarray(self.scales, dtype=np.float64)
        if scales.shape != (15,):
            raise InputDomainError(f"expected 15 scales, got {scales.shape}")
        if np.any(scales == 0.0) or not np.all(np.isfinite(scales)):
            raise InputDomainError("normalization scales must be finite nonzero")
        object.__setattr__(self, "scales", scales)

    def to_dict(self) -> dict:
        return {
            "scales": self.scales.tolist(),
            "arclength_passthrough": self.arclength_passthrough,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationSpec":
        return cls(
            scales=np.asarray(d["scales"], dtype=np.float64),
            arclength_passthrough=bool(d["arclength_passthrough"]),
        )


DEFAULT_NORMALIZATION = NormalizationSpec()


@dataclass
class Dataset:
    """Solved (design, equilibrium) pairs on the 42-node arclength grid.

    ``targets[j, k]`` holds the four tendon positions at node k of sample j,
    tendon-major: (t1x, t1y, t1z, t2x, ..., t4z), in meters.
    """

    designs: np.ndarray            # (N, 15) raw values
    normalized_designs: np.ndarray  # (N, 15)
    targets: np.ndarray            # (N, n, 12)
    arclengths: np.ndarray         # (N, n)
    seed: int
    manifest: dict
    split: dict = None             # {"train": indices, "test": indices}
    split_meta: dict = None        # {"seed": ..., "test_fraction": ...}

    @property
    def n_samples(self) -> int:
        return self.designs.shape[0]

    @property
    def grid_points(self) -> int:
        return self.targets.shape[1]

    def normalization(self) -> NormalizationSpec:
        return NormalizationSpec.from_dict(self.manifest["normalization"])


# ---------------------------------------------------------------------------
def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based random stream for one sample, keyed by (seed, index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def sample_design(rng: np.random.Generator, ranges: ParameterRanges = DEFAULT_RANGES) -> DesignVector:
    """Draw one design, every scalar uniform over its range.

    Draw order is fixed to the flat layout (offsets, pitches, tensions,
    radius, length, modulus) so streams advance identically everywhere.
    """
    ranges.validate()
    rho = rng.uniform(*ranges.offset, 4)
    phi = rng.uniform(*ranges.pitch, 4)
    tau = rng.uniform(*ranges.tension, 4)
    r = rng.uniform(*ranges.radius)
    L = rng.uniform(*ranges.length)
    E = rng.uniform(*ranges.youngs)
    return DesignVector(
        tendon_offsets=rho,
        tendon_pitches=phi,
        tendon_tensions=tau,
        backbone_radius=r,
        backbone_length=L,
        youngs_modulus=E,
    )


def normalize_design(design: DesignVector, spec: NormalizationSpec = DEFAULT_NORMALIZATION) -> np.ndarray:
    """Scale a design to the normalized 15-vector the models consume."""
    return design_to_flat(design) * spec.scales


def denormalize_design(vec, spec: NormalizationSpec = DEFAULT_NORMALIZATION) -> DesignVector:
    """Invert :func:`normalize_design`."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (15,):
        raise InputDomainError(f"expected a 15-vector, got shape {vec.shape}")
    return design_from_flat(vec / spec.scales)


def normalize_rows(flat_rows, spec: NormalizationSpec = DEFAULT_NORMALIZATION) -> np.ndarray:
    """Normalize a (N, 15) array of raw flat designs."""
    flat_rows = np.asarray(flat_rows, dtype=np.float64)
    return flat_rows * spec.scales


# ---------------------------------------------------------------------------
def _targets_from_config(cfg) -> np.ndarray:
    """(4, n, 3) tendon curves -> (n, 12) tendon-major rows."""
    return cfg.tendon_curves.transpose(1, 0, 2).reshape(cfg.arclengths.size, 12)


def generate_dataset(
    n_samples: int,
    seed: int,
    ranges: ParameterRanges = DEFAULT_RANGES,
    normalization: NormalizationSpec = DEFAULT_NORMALIZATION,
    steps: int = PRODUCTION_STEPS,
    max_failure_fraction: float = 0.05,
) -> Dataset:
    """Sample, solve, and assemble ``n_samples`` (design, target) pairs.

    Sample j is drawn from stream (seed, j); a failed solve redraws from the
    same stream, so the result does not depend on work partitioning. If the
    number of failed solves exceeds ``max_failure_fraction * n_samples`` the
    run aborts: pervasive nonconvergence signals a solver robustness problem
    that resampling should not paper over.
    """
    if n_samples < 1:
        raise InputDomainError(f"n_samples must be >= 1, got {n_samples}")
    ranges.validate()
    n_grid = steps + 1
    streams = [sample_rng(seed, j) for j in range(n_samples)]
    designs = [sample_design(streams[j], ranges) for j in range(n_samples)]
    configs = [None] * n_samples
    pending = list(range(n_samples))
    failure_count = 0
    max_failures = max_failure_fraction * n_samples
    while pending:
        solved = solve_equilibrium_batch(
            [designs[j] for j in pending], steps=steps, raise_on_failure=False
        )
        still = []
        for j, cfg in zip(pending, solved):
            if cfg is None:
                failure_count += 1
                if failure_count > max_failures:
                    raise NonconvergenceError(
                        f"dataset generation aborted: {failure_count} failed "
                        f"solves for {n_samples} requested samples exceeds "
                        f"the {max_failure_fraction:.0%} budget"
                    )
                designs[j] = sample_design(streams[j], ranges)
                still.append(j)
            else:
                configs[j] = cfg
        pending = still

    flat = np.stack([design_to_flat(d) for d in designs])
    targets = np.stack([_targets_from_config(c) for c in configs])
    arclengths = np.stack([c.arclengths for c in configs])
    assert targets.shape == (n_samples, n_grid, 12)
    manifest = {
        "format_version": _FORMAT_VERSION,
        "n_samples": n_samples,
        "grid_points": n_grid,
        "n_tendons": N_TENDONS,
        "ranges": ranges.to_dict(),
        "normalization": normalization.to_dict(),
        "seed": seed,
        "solver_steps": steps,
        "failure_count": failure_count,
        "generator": "tdcrop",
    }
    return Dataset(
        designs=flat,
        normalized_designs=normalize_rows(flat, normalization),
        targets=targets,
        arclengths=arclengths,
        seed=seed,
        manifest=manifest,
    )


# ---------------------------------------------------------------------------
def split_dataset(ds: Dataset, test_fraction: float = 0.2, seed: int = 0) -> Dataset:
    """Uniformly random disjoint train/test split with |test| =
    round(test_fraction * N), deterministic under ``seed``."""
    if not (0.0 < test_fraction < 1.0):
        raise InputDomainError(
            f"test_fraction must be in (0, 1), got {test_fraction}"
        )
    n = ds.n_samples
    n_test = int(round(test_fraction * n))
    perm = np.random.default_rng(np.random.SeedSequence([seed])).permutation(n)
    split = {
        "test": np.sort(perm[:n_test]),
        "train": np.sort(perm[n_test:]),
    }
    return replace(
        ds,
        split=split,
        split_meta={"seed": seed, "test_fraction": test_fraction},
    )


def batches(ds: Dataset, batch_size: int, epoch_seed: int, subset: str = None):
    """Shuffled index blocks covering each index exactly once per epoch; the
    last block may be short. Uses the train split when one is populated
    (or the named ``subset``), otherwise all indices."""
    if batch_size < 1:
        raise InputDomainError(f"batch_size must be >= 1, got {batch_size}")
    if subset is not None:
        indices = np.asarray(ds.split[subset])
    elif ds.split is not None:
        indices = np.asarray(ds.split["train"])
    else:
        indices = np.arange(ds.n_samples)
    rng = np.random.default_rng(np.random.SeedSequence([epoch_seed]))
    order = indices[rng.permutation(indices.size)]
    return [order[i:i + batch_size] for i in range(0, order.size, batch_size)]


# ---------------------------------------------------------------------------
def _payload_arrays(ds: Dataset):
    return (
        np.ascontiguousarray(ds.designs, dtype="<f8"),
        np.ascontiguousarray(ds.arclengths, dtype="<f8"),
        np.ascontiguousarray(ds.targets, dtype="<f8"),
    )


def save_dataset(ds: Dataset, path: str) -> None:
    """Write the dataset atomically; see :func:`load_dataset` for layout."""
    header = dict(ds.manifest)
    header["split"] = ds.split_meta  # derived again on load; may be None
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        crc = 0
        for arr in _payload_arrays(ds):
            data = arr.tobytes()
            crc = zlib.crc32(data, crc)
            f.write(data)
        f.write(struct.pack("<I", crc))
    os.replace(tmp, path)


def load_dataset(path: str) -> Dataset:
    """Read a dataset written by :func:`save_dataset`.

    Layout: 8-byte magic, little-endian u32 header length, UTF-8 JSON header
    (counts, ranges, normalization, seed, failure count), then little-endian
    f64 payload blocks — designs (N x 15), arclengths (N x n), targets
    (N x n x 12) — terminated by a CRC32 of the payload bytes.
    """
    with open(path, "rb") as f:
        raw = f.read()
    buf = io.BytesIO(raw)
    magic = buf.read(8)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    (header_len,) = struct.unpack("<I", _read_exact(buf, 4, path))
    try:
        header = json.loads(_read_exact(buf, header_len, path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable header: {e}") from None
    if header.get("format_version") != _FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported format version {header.get('format_version')}"
        )
    n = int(header["n_samples"])
    n_grid = int(header["grid_points"])
    counts = [(n, 15), (n, n_grid), (n, n_grid, 12)]
    arrays = []
    crc = 0
    for shape in counts:
        nbytes = 8 * int(np.prod(shape))
        data = _read_exact(buf, nbytes, path)
        crc = zlib.crc32(data, crc)
        arrays.append(np.frombuffer(data, dtype="<f8").reshape(shape).copy())
    (stored_crc,) = struct.unpack("<I", _read_exact(buf, 4, path))
    if stored_crc != crc:
        raise FormatError(f"{path}: payload checksum mismatch")
    designs, arclengths, targets = arrays
    split_meta = header.pop("split", None)
    normalization = NormalizationSpec.from_dict(header["normalization"])
    ds = Dataset(
        designs=designs,
        normalized_designs=normalize_rows(designs, normalization),
        targets=targets,
        arclengths=arclengths,
        seed=int(header["seed"]),
        manifest=header,
    )
    if split_meta is not None:
        ds = split_dataset(
            ds,
            test_fraction=split_meta["test_fraction"],
            seed=split_meta["seed"],
        )
    return ds


def _read_exact(buf: io.BytesIO, n: int, path: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated file")
    return data
