"""Metrics and experiment drivers: held-out generalization error, error-vs-N
convergence study, dropout study, out-of-distribution stress bins, and
inference timing benchmarks.

Every study driver is resumable: each (cell, seed) result is written to a
JSON file in the cache directory as soon as it completes and is never
recomputed on a rerun. Trained cell models are kept alongside as
inference-only checkpoints so downstream studies (OOD) reuse them. The cache
directory is taken from the ``TDCROP_CACHE`` environment variable when not
given explicitly.
"""

import json
import math
import os
import platform
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .dataset import (
    DEFAULT_NORMALIZATION,
    DEFAULT_RANGES,
    Dataset,
    GRID_POINTS,
    _targets_from_config,
    load_dataset,
    normalize_rows,
    sample_design,
    save_dataset,
    split_dataset,
)
from .errors import (
    DegenerateFrameError,
    InputDomainError,
    NonconvergenceError,
    TrainingAbortedError,
    UndefinedMetricError,
)
from .neuralops import (
    _tendon_offsets_grid,
    gram_schmidt_frame,
    init_model,
    model_predictions,
)
from .rodmodel import PRODUCTION_STEPS, design_to_flat, solve_equilibrium_batch
from .training import (
    LrSchedule,
    TrainConfig,
    default_window,
    load_checkpoint,
    save_checkpoint,
    train,
)

ALL_ARCHITECTURES = ("deeponet", "deeponet_pose", "fno", "fno_pose")

#: Extension-percentage bins: the -5..0 bin is the in-distribution reference,
#: the four positive bins stress 0..20% beyond the training ranges.
DEFAULT_OOD_BINS = ((-5.0, 0.0), (0.0, 5.0), (5.0, 10.0), (10.0, 15.0), (15.0, 20.0))

STUDY_CSV_HEADER = "study,model,seed,param,value,error,seconds"


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------
def relative_l2(y, y_hat) -> float:
    """Relative Euclidean error ||y - y_hat|| / ||y|| over flattened arrays."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise InputDomainError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    den = float(np.linalg.norm(y.ravel()))
    if den == 0.0:
        raise UndefinedMetricError("relative error undefined for zero-norm target")
    return float(np.linalg.norm((y - y_hat).ravel())) / den


def _per_sample_errors(pred12: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample relative errors for (B, n, 12) stacks."""
    num = np.sqrt(((pred12 - targets) ** 2).sum(axis=(1, 2)))
    den = np.sqrt((targets**2).sum(axis=(1, 2)))
    if np.any(den == 0.0):
        raise UndefinedMetricError("relative error undefined for zero-norm target")
    return num / den


def predictions_tendon_space(model, D, S, designs_flat) -> np.ndarray:
    """Model outputs mapped into the common (B, n, 12) tendon space.

    Tendon-variant outputs pass through; pose-variant raw 9-vectors are
    reconstructed with the strict Gram-Schmidt frame and the design's helical
    tendon offsets. Degenerate frames are reported with the sample index.
    """
    raw = model_predictions(model, D, S)
    if model.meta["variant"] != "pose":
        return raw
    offsets = _tendon_offsets_grid(np.asarray(designs_flat, dtype=np.float64),
                                   np.asarray(S, dtype=np.float64))
    B, n = raw.shape[0], raw.shape[1]
    out = np.empty((B, n, 12))
    for b in range(B):
        try:
            for k in range(n):
                R = gram_schmidt_frame(raw[b, k, 3:6], raw[b, k, 6:9])
                out[b, k] = (raw[b, k, 0:3][None, :] + offsets[b, k] @ R.T).ravel()
        except DegenerateFrameError as exc:
            raise DegenerateFrameError(str(exc), sample_index=b) from exc
    return out


@dataclass(frozen=True)
class EvalReport:
    """Aggregate held-out error for one architecture over one or more seeds."""

    model: str
    per_seed_errors: tuple
    mean_error: float
    accuracy_pct: float
    seed_count: int


def evaluate_model(models, ds: Dataset, subset: str = "test") -> EvalReport:
    """Mean relative tendon-space error of one or more same-kind models.

    ``models`` is a single model or a sequence (one per training seed);
    ``subset`` names a split ("test"/"train") or is None for all samples.
    """
    if not isinstance(models, (list, tuple)):
        models = [models]
    if not models:
        raise InputDomainError("need at least one model to evaluate")
    kinds = {m.kind for m in models}
    if len(kinds) > 1:
        raise InputDomainError(f"mixed architectures in one report: {sorted(kinds)}")
    if subset is None:
        idx = np.arange(ds.n_samples)
    elif ds.split is None:
        raise InputDomainError(f"dataset has no split; subset {subset!r} undefined")
    else:
        idx = np.asarray(ds.split[subset])
    D = ds.normalized_designs[idx]
    S = ds.arclengths[idx]
    T = ds.targets[idx]
    flat = ds.designs[idx]
    errors = []
    for m in models:
        pred12 = predictions_tendon_space(m, D, S, flat)
        errors.append(float(_per_sample_errors(pred12, T).mean()))
    mean = sum(errors) / len(errors)
    return EvalReport(
        model=models[0].kind,
        per_seed_errors=tuple(errors),
        mean_error=mean,
        accuracy_pct=(1.0 - mean) * 100.0,
        seed_count=len(errors),
    )


# ---------------------------------------------------------------------------
# study plumbing
# ---------------------------------------------------------------------------
@dataclass
class StudyConfig:
    """Shared configuration for the convergence/dropout/OOD drivers.

    ``master`` is the master dataset; when it carries no split one is created
    with ``test_fraction``/``split_seed``. Per-architecture epoch budgets are
    desk-scale defaults; the cache directory defaults to ``$TDCROP_CACHE``
    (or ``.tdcrop_cache``).
    """

    master: Dataset
    seeds: tuple = (0, 1, 2)
    architectures: tuple = ALL_ARCHITECTURES
    batch_size: int = 256
    deeponet_epochs: int = 2000
    fno_epochs: int = 1000
    cache_dir: str = None
    split_seed: int = 0
    test_fraction: float = 0.2


def _resolve_cache(config: StudyConfig) -> str:
    d = config.cache_dir or os.environ.get("TDCROP_CACHE") or ".tdcrop_cache"
    os.makedirs(os.path.join(d, "cells"), exist_ok=True)
    os.makedirs(os.path.join(d, "ood"), exist_ok=True)
    return d


def _split_master(config: StudyConfig) -> Dataset:
    ds = config.master
    if ds.split is None:
        ds = split_dataset(ds, config.test_fraction, seed=config.split_seed)
    return ds


def _nested_subset(ds: Dataset, n: int) -> Dataset:
    """First-n train rows as an unsplit dataset, so N-cells nest."""
    train_idx = np.asarray(ds.split["train"])
    if not 1 <= n <= train_idx.size:
        raise InputDomainError(
            f"subset size {n} outside [1, {train_idx.size}] train samples"
        )
    idx = train_idx[:n]
    manifest = dict(ds.manifest)
    manifest["subset"] = {"first_n_of_train": n}
    return Dataset(
        designs=ds.designs[idx],
        normalized_designs=ds.normalized_designs[idx],
        targets=ds.targets[idx],
        arclengths=ds.arclengths[idx],
        seed=ds.seed,
        manifest=manifest,
    )


def _cell_schedule(epochs: int) -> LrSchedule:
    return LrSchedule(initial=1e-4, warmup_fraction=0.3, peak=3e-3, end=5e-6,
                      cycles=1, gamma=0.7, horizon=epochs)


def _epochs_for(config: StudyConfig, kind: str) -> int:
    return (config.deeponet_epochs if kind.startswith("deeponet")
            else config.fno_epochs)


def _atomic_json(payload: dict, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    os.replace(tmp, path)


def _cell_paths(cache: str, arch: str, n: int, q: float, seed: int):
    key = f"{arch}_N{n}_q{q:g}_s{seed}"
    base = os.path.join(cache, "cells", key)
    return base + ".json", base + ".ckpt"


def run_cell(config: StudyConfig, arch: str, n: int, q: float, seed: int) -> dict:
    """Train-and-evaluate one study cell, cached on disk.

    Returns ``{model, N, q, seed, error, seconds, epochs_run, reason}``;
    training failures are recorded in the cell (error = NaN), not raised.
    """
    cache = _resolve_cache(config)
    jpath, cpath = _cell_paths(cache, arch, n, q, seed)
    if os.path.exists(jpath):
        with open(jpath) as fh:
            return json.load(fh)
    master = _split_master(config)
    sub = _nested_subset(master, n)
    epochs = _epochs_for(config, arch)
    tc = TrainConfig(
        max_epochs=epochs,
        batch_size=config.batch_size,
        window=default_window(arch),
        seed=seed,
        dropout_q=q,
        schedule=_cell_schedule(epochs),
    )
    t0 = time.perf_counter()
    cell = {"model": arch, "N": n, "q": q, "seed": seed,
            "epochs_budget": epochs, "batch_size": config.batch_size}
    try:
        result = train(init_model(arch, seed=seed), sub, tc)
    except (TrainingAbortedError, NonconvergenceError) as exc:
        cell.update(error=None, seconds=time.perf_counter() - t0,
                    epochs_run=0, reason=f"failed: {exc}")
    else:
        save_checkpoint(cpath, result.model, state=None,
                        epoch=result.stopped_epoch, seed=seed)
        report = evaluate_model(result.model, master, subset="test")
        cell.update(
            error=report.mean_error,
            seconds=time.perf_counter() - t0,
            epochs_run=result.stopped_epoch,
            reason=result.reason,
            train_rel_l2=result.records[-1].rel_l2,
        )
    _atomic_json(cell, jpath)
    return cell


def _cell_row(study: str, cell: dict, param: str, value) -> dict:
    error = cell["error"] if cell["error"] is not None else math.nan
    return {
        "study": study,
        "model": cell["model"],
        "seed": cell["seed"],
        "param": param,
        "value": value,
        "error": error,
        "seconds": cell["seconds"],
    }


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------
def _clean_n_list(n_list) -> list:
    out = sorted(set(int(n) for n in n_list))
    if not out:
        raise InputDomainError("empty N list")
    if out[0] < 1:
        raise InputDomainError(f"N must be >= 1, got {out[0]}")
    return out


def convergence_study(n_list, config: StudyConfig) -> list:
    """Held-out error as a function of training-set size N.

    Subsets are nested (first N rows of the master train split) so each
    larger-N run extends the smaller ones; every (architecture, N, seed)
    cell is cached. Returns CSV-ready row dicts.
    """
    rows = []
    for arch in config.architectures:
        for n in _clean_n_list(n_list):
            for seed in config.seeds:
                cell = run_cell(config, arch, n, 0.0, seed)
                rows.append(_cell_row("convergence", cell, "N", n))
    return rows


def dropout_study(q_list, config: StudyConfig, n: int = None) -> list:
    """Held-out error as a function of the training dropout rate q.

    Trains with dropout active and evaluates with it disabled; the q = 0
    column shares cache cells with the convergence study at the same N.
    """
    qs = sorted(set(float(q) for q in q_list))
    if not qs:
        raise InputDomainError("empty q list")
    for q in qs:
        if not 0.0 <= q <= 0.5:
            raise InputDomainError(f"dropout rate {q} outside [0, 0.5]")
    if n is None:
        n = min(2000, np.asarray(_split_master(config).split["train"]).size)
    rows = []
    for arch in config.architectures:
        for q in qs:
            for seed in config.seeds:
                cell = run_cell(config, arch, n, q, seed)
                rows.append(_cell_row("dropout", cell, "q", q))
    return rows


# ---------------------------------------------------------------------------
# out-of-distribution generation and study
# ---------------------------------------------------------------------------
def _flat_bounds(ranges) -> tuple:
    """Table ranges mapped onto the flat design layout (lo, hi) 15-vectors."""
    lo = np.array([ranges.offset[0]] * 4 + [ranges.pitch[0]] * 4
                  + [ranges.tension[0]] * 4
                  + [ranges.radius[0], ranges.length[0], ranges.youngs[0]])
    hi = np.array([ranges.offset[1]] * 4 + [ranges.pitch[1]] * 4
                  + [ranges.tension[1]] * 4
                  + [ranges.radius[1], ranges.length[1], ranges.youngs[1]])
    return lo, hi


_PITCH_SLOTS = range(4, 8)  # signed range: extended symmetrically at both ends


def _ood_design_flat(rng, lo, hi, bin_lo: float, bin_hi: float) -> np.ndarray:
    """One OOD design: per parameter, draw an extension percentage in the bin
    and sample inside the extension strip beyond the original range (or fully
    in-distribution when the percentage is non-positive)."""
    pct = rng.uniform(bin_lo, bin_hi, 15)
    x = np.empty(15)
    for j in range(15):
        width = hi[j] - lo[j]
        if pct[j] <= 0.0:
            x[j] = rng.uniform(lo[j], hi[j])
            continue
        delta = (pct[j] / 100.0) * width
        if j in _PITCH_SLOTS and rng.integers(0, 2) == 0:
            x[j] = rng.uniform(lo[j] - delta, lo[j])
        else:
            x[j] = rng.uniform(hi[j], hi[j] + delta)
    return x


def ood_generate(
    count_per_bin: int,
    seed: int,
    bins=DEFAULT_OOD_BINS,
    ranges=DEFAULT_RANGES,
    normalization=DEFAULT_NORMALIZATION,
    steps: int = PRODUCTION_STEPS,
) -> dict:
    """Solved ground-truth datasets for each extension bin.

    Returns ``{(lower, upper): Dataset}``. Bins must be 5 percentage points
    wide; sample j of bin k draws from stream (seed, k, j), failed solves
    redraw from the same stream, and a bin aborts once more than 10% of its
    requested samples have failed.
    """
    if count_per_bin < 1:
        raise InputDomainError(f"count_per_bin must be >= 1, got {count_per_bin}")
    for a, b in bins:
        if abs((b - a) - 5.0) > 1e-9:
            raise InputDomainError(f"bin ({a}, {b}) is not 5 percentage points wide")
    ranges.validate()
    lo, hi = _flat_bounds(ranges)
    out = {}
    for a, b in bins:
        # streams are keyed by the bin's own edge (not its position in the
        # tuple) so a bin regenerates identically whether requested alone or
        # as part of the full set
        bin_key = int(round(b * 1000.0)) + 1_000_000
        streams = [
            np.random.Generator(
                np.random.Philox(np.random.SeedSequence([seed, bin_key, j]))
            )
            for j in range(count_per_bin)
        ]
        flats = [_ood_design_flat(streams[j], lo, hi, a, b)
                 for j in range(count_per_bin)]
        configs = [None] * count_per_bin
        pending = list(range(count_per_bin))
        failures = 0
        while pending:
            solved = solve_equilibrium_batch(
                np.stack([flats[j] for j in pending]),
                steps=steps, raise_on_failure=False,
            )
            still = []
            for j, cfg in zip(pending, solved):
                if cfg is None:
                    failures += 1
                    if failures > 0.10 * count_per_bin:
                        raise NonconvergenceError(
                            f"OOD bin ({a}, {b}): {failures} failed solves for "
                            f"{count_per_bin} samples exceeds the 10% budget"
                        )
                    flats[j] = _ood_design_flat(streams[j], lo, hi, a, b)
                    still.append(j)
                else:
                    configs[j] = cfg
            pending = still
        designs = np.stack(flats)
        manifest = {
            "format_version": 1,
            "n_samples": count_per_bin,
            "grid_points": steps + 1,
            "n_tendons": 4,
            "ranges": ranges.to_dict(),
            "normalization": normalization.to_dict(),
            "seed": seed,
            "solver_steps": steps,
            "failure_count": failures,
            "generator": "tdcrop",
            "ood_bin": [a, b],
        }
        out[(a, b)] = Dataset(
            designs=designs,
            normalized_designs=normalize_rows(designs, normalization),
            targets=np.stack([_targets_from_config(c) for c in configs]),
            arclengths=np.stack([c.arclengths for c in configs]),
            seed=seed,
            manifest=manifest,
        )
    return out


def ood_study(
    config: StudyConfig,
    count_per_bin: int = 1000,
    seed: int = 7,
    bins=DEFAULT_OOD_BINS,
    n: int = None,
) -> list:
    """Error of the cached N-cell models on each extension bin.

    Bin ground-truth datasets are generated once and cached; the models come
    from the convergence cache at size ``n`` (trained on demand if absent).
    Rows carry the bin's upper extension percentage as the value.
    """
    cache = _resolve_cache(config)
    if n is None:
        n = min(2000, np.asarray(_split_master(config).split["train"]).size)
    datasets = {}
    for k, (a, b) in enumerate(bins):
        path = os.path.join(
            cache, "ood", f"bin_{a:g}_{b:g}_c{count_per_bin}_s{seed}.tdcrds"
        )
        if os.path.exists(path):
            datasets[(a, b)] = load_dataset(path)
        else:
            ds = ood_generate(count_per_bin, seed, bins=((a, b),))[(a, b)]
            save_dataset(ds, path)
            datasets[(a, b)] = ds
    rows = []
    for arch in config.architectures:
        for s in config.seeds:
            cell = run_cell(config, arch, n, 0.0, s)
            if cell["error"] is None:
                for (a, b) in bins:
                    rows.append(_cell_row("ood", cell, "bin", b))
                continue
            _, cpath = _cell_paths(cache, arch, n, 0.0, s)
            model, _, _, _ = load_checkpoint(cpath, expect_kind=arch)
            for (a, b) in bins:
                ds = datasets[(a, b)]
                t0 = time.perf_counter()
                report = evaluate_model(model, ds, subset=None)
                rows.append({
                    "study": "ood", "model": arch, "seed": s,
                    "param": "bin", "value": b,
                    "error": report.mean_error,
                    "seconds": time.perf_counter() - t0,
                })
    return rows


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TimingRow:
    model: str
    workload: int
    seconds: float
    hardware: str


def _hardware_descriptor() -> str:
    name = ""
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.lower().startswith("model name"):
                    name = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    name = name or platform.processor() or platform.machine() or "unknown CPU"
    return f"{name}, {os.cpu_count()} logical cores"


def timing_bench(
    kinds=ALL_ARCHITECTURES,
    workloads=(1, 1000, 80000),
    repeats: int = 5,
    warmups: int = 2,
    seed: int = 0,
    n_nodes: int = GRID_POINTS,
) -> list:
    """Median batch-inference wall-clock per architecture and workload size.

    Uses freshly initialized models (inference cost does not depend on the
    parameter values) and per-design arclength grids; each workload is timed
    ``repeats`` times after ``warmups`` discarded runs.
    """
    if repeats < 1 or warmups < 0:
        raise InputDomainError("repeats must be >= 1 and warmups >= 0")
    hardware = _hardware_descriptor()
    top = max(workloads)
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    flats = np.stack(
        [design_to_flat(sample_design(rng)) for _ in range(min(top, 4096))]
    )
    reps = int(np.ceil(top / flats.shape[0]))
    flats = np.tile(flats, (reps, 1))[:top]
    D_all = normalize_rows(flats)
    S_all = np.linspace(0.0, 1.0, n_nodes)[None, :] * flats[:, 13:14]
    rows = []
    for kind in kinds:
        model = init_model(kind, seed=seed)
        for w in workloads:
            D, S = D_all[:w], S_all[:w]
            for _ in range(warmups):
                model_predictions(model, D, S)
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                model_predictions(model, D, S)
                times.append(time.perf_counter() - t0)
            rows.append(TimingRow(kind, int(w), statistics.median(times), hardware))
    return rows


# ---------------------------------------------------------------------------
# CSV / JSON emission
# ---------------------------------------------------------------------------
def write_study_rows(rows, path: str) -> None:
    """Plot-ready study CSV with the stable 7-column layout."""
    lines = [STUDY_CSV_HEADER]
    for r in rows:
        lines.append(
            f'{r["study"]},{r["model"]},{r["seed"]},{r["param"]},'
            f'{r["value"]!r},{r["error"]!r},{r["seconds"]!r}'
        )
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_study_rows(path: str) -> list:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != STUDY_CSV_HEADER:
        raise InputDomainError(f"{path} is not a study CSV")
    rows = []
    for line in lines[1:]:
        study, model, seed, param, value, error, seconds = line.split(",")
        rows.append({
            "study": study, "model": model, "seed": int(seed), "param": param,
            "value": float(value), "error": float(error),
            "seconds": float(seconds),
        })
    return rows


def summarize_study(rows) -> list:
    """Seed-mean summary entries grouped by (study, model, param, value)."""
    groups = {}
    for r in rows:
        key = (r["study"], r["model"], r["param"], float(r["value"]))
        groups.setdefault(key, []).append(r)
    out = []
    for (study, model, param, value) in sorted(groups):
        cell_rows = groups[(study, model, param, value)]
        errors = [r["error"] for r in cell_rows]
        ok = [e for e in errors if not math.isnan(e)]
        mean = sum(ok) / len(ok) if ok else None
        out.append({
            "study": study,
            "model": model,
            "param": param,
            "value": value,
            "mean_error": mean,
            "per_seed_errors": [None if math.isnan(e) else e for e in errors],
            "seeds": [r["seed"] for r in cell_rows],
        })
    return out


def write_study_summary(rows, path: str) -> None:
    _atomic_json({"summary": summarize_study(rows)}, path)
