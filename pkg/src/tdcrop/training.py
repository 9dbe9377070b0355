"""Adam optimization under a cyclical cosine-annealing schedule, with
window-smoothed convergence stopping, checkpointing, and deterministic
resumability.

Every source of randomness in an epoch is derived from ``(seed, epoch)``
alone, and checkpoints carry the smoothed-error history, so a resumed run
reproduces the uninterrupted trajectory bitwise.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import neuralops
from .autodiff import Tensor
from .dataset import Dataset, batches
from .errors import FormatError, InputDomainError, TrainingAbortedError
from .neuralops import Model, grad, init_model

__all__ = [
    "AdamState",
    "LrSchedule",
    "TrainConfig",
    "TrainRecord",
    "TrainResult",
    "init_adam",
    "adam_step",
    "lr_at",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "write_records",
    "read_records",
]

_CKPT_MAGIC = b"TDCRCKPT"
_CKPT_VERSION = 1


@dataclass
class AdamState:
    """First/second-moment trees congruent with the parameter tree."""

    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class LrSchedule:
    """Cyclical cosine annealing with warm restarts: the horizon splits into
    equal cycles; each cycle warms up linearly to its peak over the leading
    fraction, then cosine-decays to the end value; successive peaks shrink
    by gamma. Cycle 0 starts from ``initial``, later cycles from ``end``."""

    initial: float = 1e-4
    warmup_fraction: float = 0.3
    peak: float = 3e-3
    end: float = 5e-6
    cycles: int = 4
    gamma: float = 0.7
    horizon: int = 100_000


@dataclass
class TrainConfig:
    """Training-loop knobs; window/threshold drive the stopping rule."""

    max_epochs: int
    batch_size: int = 256
    window: int = None          # default: 200 for DeepONets, 100 for FNOs
    threshold: float = 1e-3
    seed: int = 0
    dropout_q: float = 0.0
    checkpoint_path: str = None
    checkpoint_cadence: int = 0  # epochs between checkpoints; 0 disables
    schedule: LrSchedule = field(default_factory=LrSchedule)


@dataclass
class TrainRecord:
    epoch: int
    loss: float
    rel_l2: float
    lr: float
    seconds: float


@dataclass
class TrainResult:
    model: Model
    records: list
    stopped_epoch: int
    reason: str  # "converged" or "max_epochs"
    checkpoint_path: str = None


def default_window(kind: str) -> int:
    return 200 if kind.startswith("deeponet") else 100


# ---------------------------------------------------------------------------
def init_adam(model: Model) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(t.data) for k, t in model.params.items()},
        v={k: np.zeros_like(t.data) for k, t in model.params.items()},
    )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One Adam update over the whole parameter tree (params and state are
    updated in place and returned)."""
    if not lr > 0.0:
        raise InputDomainError(f"learning rate must be positive, got {lr}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingAbortedError(
                f"non-finite gradient for parameter block {name!r}", block=name
            )
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if not np.all(np.isfinite(p.data)):
            raise TrainingAbortedError(
                f"non-finite update in parameter block {name!r}", block=name
            )
    return params, state


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Learning rate at an epoch; raises outside [0, horizon)."""
    if not (0 <= epoch < schedule.horizon):
        raise InputDomainError(
            f"epoch {epoch} outside schedule horizon [0, {schedule.horizon})"
        )
    cycle_len = schedule.horizon / schedule.cycles
    k = min(int(epoch // cycle_len), schedule.cycles - 1)
    e_loc = epoch - k * cycle_len
    start = schedule.initial if k == 0 else schedule.end
    peak = schedule.peak * schedule.gamma**k
    warm = schedule.warmup_fraction * cycle_len
    if e_loc <= warm:
        return start + (peak - start) * (e_loc / warm)
    x = (e_loc - warm) / (cycle_len - warm)
    return schedule.end + (peak - schedule.end) * 0.5 * (1.0 + math.cos(math.pi * x))


# ---------------------------------------------------------------------------
def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, 1]))


def _epoch_batch_seed(seed: int, epoch: int) -> int:
    # batches() keys its shuffle by a single integer; derive one stable
    # value per (seed, epoch) pair
    return int(
        np.random.SeedSequence([seed, epoch]).generate_state(1, np.uint64)[0]
        & 0x7FFFFFFF
    )


class _StopRule:
    """Stop once the window-smoothed relative error has not improved by the
    relative threshold for a full window of epochs."""

    def __init__(self, window: int, threshold: float, history=None):
        self.window = window
        self.threshold = threshold
        self.history = list(history) if history else []
        self._best = math.inf
        self._best_epoch = -1
        for e in range(len(self.history)):
            self._observe(e)

    def _smoothed(self, epoch: int) -> float:
        lo = max(0, epoch - self.window + 1)
        return float(np.mean(self.history[lo: epoch + 1]))

    def _observe(self, epoch: int):
        if epoch >= self.window - 1:
            s = self._smoothed(epoch)
            if s < self._best * (1.0 - self.threshold) or self._best_epoch < 0:
                self._best = s
                self._best_epoch = epoch

    def update(self, epoch: int, rel: float) -> bool:
        assert epoch == len(self.history)
        self.history.append(rel)
        self._observe(epoch)
        return (
            self._best_epoch >= 0 and epoch - self._best_epoch >= self.window
        )


def train(
    model: Model,
    ds: Dataset,
    config: TrainConfig,
    resume_from: str = None,
) -> TrainResult:
    """Optimize ``model`` on the dataset's train split (all samples when no
    split is populated); see :class:`TrainConfig` for the stopping rule and
    checkpoint cadence. ``resume_from`` continues a checkpointed run and
    reproduces the uninterrupted trajectory bitwise."""
    start_epoch = 0
    rel_history = []
    if resume_from is not None:
        model, state, start_epoch, extra = load_checkpoint(
            resume_from, expect_kind=model.kind if model is not None else None
        )
        if state is None:
            raise FormatError(
                f"{resume_from}: checkpoint has no optimizer state; cannot resume"
            )
        rel_history = extra.get("rel_history", [])
    else:
        state = init_adam(model)
    window = config.window or default_window(model.kind)
    rule = _StopRule(window, config.threshold, history=rel_history)
    pose = model.meta["variant"] == "pose"
    records = []
    reason = "max_epochs"
    last_ckpt = None

    def emit_checkpoint(completed: int):
        nonlocal last_ckpt
        if config.checkpoint_path:
            save_checkpoint(
                config.checkpoint_path, model, state=state, epoch=completed,
                seed=config.seed, extra={"rel_history": rule.history},
            )
            last_ckpt = config.checkpoint_path

    epoch = start_epoch
    for epoch in range(start_epoch, config.max_epochs):
        t0 = time.perf_counter()
        lr = lr_at(config.schedule, epoch)
        rng = _epoch_rng(config.seed, epoch)
        loss_sum = 0.0
        rel_sum = 0.0
        count = 0
        for idx in batches(ds, config.batch_size, _epoch_batch_seed(config.seed, epoch)):
            try:
                loss, rel, grads = grad(
                    model,
                    ds.normalized_designs[idx],
                    ds.arclengths[idx],
                    ds.targets[idx],
                    designs_flat=ds.designs[idx] if pose else None,
                    dropout_q=config.dropout_q,
                    rng=rng,
                )
                adam_step(model.params, grads, state, lr)
            except TrainingAbortedError as e:
                e.checkpoint_path = last_ckpt
                raise
            if not math.isfinite(loss):
                raise TrainingAbortedError(
                    f"non-finite loss at epoch {epoch}", checkpoint_path=last_ckpt
                )
            loss_sum += loss * idx.size
            rel_sum += rel * idx.size
            count += idx.size
        mean_loss = loss_sum / count
        mean_rel = rel_sum / count
        records.append(
            TrainRecord(epoch, mean_loss, mean_rel, lr, time.perf_counter() - t0)
        )
        done = rule.update(epoch, mean_rel)
        completed = epoch + 1
        if config.checkpoint_cadence and completed % config.checkpoint_cadence == 0:
            emit_checkpoint(completed)
        if done:
            reason = "converged"
            break
    completed = epoch + 1 if records else start_epoch
    emit_checkpoint(completed)
    return TrainResult(
        model=model, records=records, stopped_epoch=completed,
        reason=reason, checkpoint_path=last_ckpt,
    )


# ---------------------------------------------------------------------------
def write_records(records, path: str) -> None:
    """Write per-epoch training records as CSV."""
    with open(path, "w") as f:
        f.write("epoch,loss,rel_l2,lr,seconds\n")
        for r in records:
            f.write(f"{r.epoch},{r.loss!r},{r.rel_l2!r},{r.lr!r},{r.seconds!r}\n")


def read_records(path: str):
    out = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "epoch,loss,rel_l2,lr,seconds":
            raise FormatError(f"{path}: unexpected header {header!r}")
        for line in f:
            e, loss, rel, lr, sec = line.strip().split(",")
            out.append(
                TrainRecord(int(e), float(loss), float(rel), float(lr), float(sec))
            )
    return out


# ---------------------------------------------------------------------------
def save_checkpoint(
    path: str,
    model: Model,
    state: AdamState = None,
    epoch: int = 0,
    seed: int = 0,
    extra: dict = None,
) -> None:
    """Write a checkpoint atomically: magic, JSON header, named little-endian
    f64 parameter blocks in declaration order (then Adam m/v blocks when
    optimizer state is present), CRC32-terminated."""
    header = {
        "format_version": _CKPT_VERSION,
        "kind": model.kind,
        "meta": model.meta,
        "seed": seed,
        "epoch": epoch,
        "has_optimizer": state is not None,
        "adam_t": state.t if state is not None else None,
        "blocks": [[k, list(t.data.shape)] for k, t in model.params.items()],
    }
    if state is not None:
        header["adam_hparams"] = [state.beta1, state.beta2, state.eps]
    if extra:
        header.update(extra)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays = [t.data for t in model.params.values()]
    if state is not None:
        arrays += [state.m[k] for k in model.params]
        arrays += [state.v[k] for k in model.params]
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        crc = 0
        for arr in arrays:
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            crc = zlib.crc32(data, crc)
            f.write(data)
        f.write(struct.pack("<I", crc))
    os.replace(tmp, path)


def load_checkpoint(path: str, expect_kind: str = None):
    """Read a checkpoint; returns ``(model, adam_state_or_None, epoch, extra)``
    where ``extra`` holds any auxiliary header fields (seed, histories)."""
    with open(path, "rb") as f:
        buf = io.BytesIO(f.read())
    if buf.read(8) != _CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    (hlen,) = struct.unpack("<I", _read_exact(buf, 4, path))
    try:
        header = json.loads(_read_exact(buf, hlen, path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable header: {e}") from None
    if header.get("format_version") != _CKPT_VERSION:
        raise FormatError(
            f"{path}: unsupported checkpoint version {header.get('format_version')}"
        )
    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(
            f"{path}: checkpoint holds a {kind!r} model, expected {expect_kind!r}"
        )
    blocks = header["blocks"]
    names = [b[0] for b in blocks]
    shapes = {b[0]: tuple(b[1]) for b in blocks}
    template = init_model(kind, seed=0, **_size_overrides(kind, header["meta"]))
    if list(template.params) != names or any(
        template.params[k].data.shape != shapes[k] for k in names
    ):
        raise FormatError(f"{path}: parameter blocks do not match {kind!r}")

    def read_tree():
        out = {}
        nonlocal crc
        for name in names:
            shape = shapes[name]
            nbytes = 8 * int(np.prod(shape)) if shape else 8
            data = _read_exact(buf, nbytes, path)
            crc = zlib.crc32(data, crc)
            out[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
        return out

    crc = 0
    params = read_tree()
    state = None
    if header["has_optimizer"]:
        m, v = read_tree(), read_tree()
        b1, b2, eps = header["adam_hparams"]
        state = AdamState(m=m, v=v, t=int(header["adam_t"]),
                          beta1=b1, beta2=b2, eps=eps)
    (stored_crc,) = struct.unpack("<I", _read_exact(buf, 4, path))
    if stored_crc != crc:
        raise FormatError(f"{path}: checkpoint checksum mismatch")
    model = Model(
        kind=kind,
        meta=header["meta"],
        params={k: Tensor(arr, requires_grad=True) for k, arr in params.items()},
    )
    reserved = {
        "format_version", "kind", "meta", "seed", "epoch", "has_optimizer",
        "adam_t", "adam_hparams", "blocks",
    }
    extra = {k: val for k, val in header.items() if k not in reserved}
    extra["seed"] = header["seed"]
    return model, state, int(header["epoch"]), extra


def _size_overrides(kind: str, meta: dict) -> dict:
    keys = (
        ("hidden_branch", "hidden_trunk", "p", "n_hidden")
        if kind.startswith("deeponet")
        else ("width", "modes", "n_layers")
    )
    return {k: meta[k] for k in keys}


def _read_exact(buf: io.BytesIO, n: int, path: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated checkpoint")
    return data
