"""Neural-operator surrogates for rod equilibria.

Four from-scratch architectures built on :mod:`tdcrop.autodiff`:

* ``deeponet``      - branch/trunk MLPs fused into 12 per-channel inner
                      products over p basis functions; outputs tendon
                      positions (n, 12).
* ``deeponet_pose`` - same topology, 9 outputs (backbone offset + two raw
                      frame columns).
* ``fno``           - lift to a 128-channel grid function, five Fourier
                      layers (truncated real-FFT spectral mixing + diagonal
                      pointwise path), projection to 12 channels.
* ``fno_pose``      - FNO with 9 output channels.

All parameters are float64 tensors; forward passes are deterministic given
(params, inputs, rng).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    DegenerateFrameError,
    InputDomainError,
    TrainingAbortedError,
)
from .rodmodel import DesignVector, design_to_flat, tendon_offset_vector

__all__ = [
    "Model",
    "MlpParams",
    "FourierLayerParams",
    "PoseOutput",
    "ARCHITECTURES",
    "init_model",
    "count_params",
    "mlp_forward",
    "deeponet_branch",
    "deeponet_forward",
    "fourier_layer",
    "fno_forward",
    "forward_batch",
    "gram_schmidt_frame",
    "pose_to_tendons",
    "loss_tendon",
    "loss_pose",
    "batch_loss",
    "grad",
    "apply_dropout",
    "model_predictions",
]

GS_EPS = 1e-9

# architecture tag -> (variant, output channels)
ARCHITECTURES = {
    "deeponet": ("tendon", 12),
    "deeponet_pose": ("pose", 9),
    "fno": ("tendon", 12),
    "fno_pose": ("pose", 9),
}

_DON_DEFAULTS = {
    "deeponet": dict(hidden_branch=64, hidden_trunk=128, p=59, n_hidden=5),
    "deeponet_pose": dict(hidden_branch=62, hidden_trunk=134, p=66, n_hidden=5),
}
_FNO_DEFAULTS = dict(width=128, modes=5, n_layers=5)

DESIGN_DIM = 15


@dataclass
class Model:
    """One surrogate: architecture tag, hyperparameters, named parameters."""

    kind: str
    meta: dict
    params: dict  # name -> Tensor, in declaration order

    @property
    def channels(self) -> int:
        return self.meta["channels"]


@dataclass
class MlpParams:
    """Affine-tanh chain; the final layer is unactivated and may be biasless."""

    weights: list
    biases: list  # entries may be None


@dataclass
class FourierLayerParams:
    w_re: Tensor
    w_im: Tensor
    w_diag: Tensor
    bias: Tensor
    modes: int


@dataclass
class PoseOutput:
    r: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    R: np.ndarray = field(default=None)


def _glorot(rng, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, shape)


def init_model(kind: str, seed: int, **overrides) -> Model:
    """Construct a freshly initialized model.

    Dense layers use Glorot-uniform weights with zero biases; spectral
    weights use U(0,1)/(width*width) for both real and imaginary parts.
    Hyperparameters may be overridden for reduced-size test instances.
    """
    if kind not in ARCHITECTURES:
        raise InputDomainError(f"unknown architecture {kind!r}")
    variant, channels = ARCHITECTURES[kind]
    rng = np.random.default_rng(seed)
    params: dict = {}
    if kind.startswith("deeponet"):
        cfg = dict(_DON_DEFAULTS[kind])
        cfg.update(overrides)
        hb, ht, p, n_hidden = (
            cfg["hidden_branch"], cfg["hidden_trunk"], cfg["p"], cfg["n_hidden"],
        )
        for prefix, d_in, width in (("branch", DESIGN_DIM, hb), ("trunk", 1, ht)):
            last = d_in
            for i in range(n_hidden):
                params[f"{prefix}.{i}.W"] = Tensor(
                    _glorot(rng, last, width), requires_grad=True
                )
                params[f"{prefix}.{i}.b"] = Tensor(
                    np.zeros(width), requires_grad=True
                )
                last = width
            params[f"{prefix}.head.W"] = Tensor(
                _glorot(rng, last, channels * p), requires_grad=True
            )
        meta = dict(
            variant=variant, channels=channels,
            hidden_branch=hb, hidden_trunk=ht, p=p, n_hidden=n_hidden,
        )
    else:
        cfg = dict(_FNO_DEFAULTS)
        cfg.update(overrides)
        width, modes, n_layers = cfg["width"], cfg["modes"], cfg["n_layers"]
        params["lift.W"] = Tensor(
            _glorot(rng, DESIGN_DIM + 1, width), requires_grad=True
        )
        params["lift.b"] = Tensor(np.zeros(width), requires_grad=True)
        scale = 1.0 / (width * width)
        for i in range(n_layers):
            params[f"fourier.{i}.w_re"] = Tensor(
                rng.uniform(0.0, 1.0, (width, width)) * scale, requires_grad=True
            )
            params[f"fourier.{i}.w_im"] = Tensor(
                rng.uniform(0.0, 1.0, (width, width)) * scale, requires_grad=True
            )
            params[f"fourier.{i}.w_diag"] = Tensor(
                _glorot(rng, width, width, shape=(width,)), requires_grad=True
            )
            params[f"fourier.{i}.b"] = Tensor(np.zeros(width), requires_grad=True)
        params["proj.W"] = Tensor(_glorot(rng, width, channels), requires_grad=True)
        params["proj.b"] = Tensor(np.zeros(channels), requires_grad=True)
        meta = dict(
            variant=variant, channels=channels,
            width=width, modes=modes, n_layers=n_layers,
        )
    return Model(kind=kind, meta=meta, params=params)


def count_params(model: Model) -> int:
    return int(sum(t.data.size for t in model.params.values()))


# ---------------------------------------------------------------------------
def apply_dropout(activations, q: float, rng, training: bool):
    """Inverted dropout: zero units with probability q and scale survivors by
    1/(1-q) during training; identity at inference or q=0."""
    if not (0.0 <= q < 1.0):
        raise InputDomainError(f"dropout rate must be in [0, 1), got {q}")
    if not training or q == 0.0:
        return activations
    if isinstance(activations, Tensor):
        mask = (rng.random(activations.data.shape) >= q) / (1.0 - q)
        return ad.mul(activations, mask)
    mask = (rng.random(np.shape(activations)) >= q) / (1.0 - q)
    return activations * mask


def mlp_forward(params: MlpParams, x):
    """Affine-tanh chain; final layer unactivated. Accepts a Tensor or an
    ndarray; returns the same flavor."""
    is_tensor = isinstance(x, Tensor)
    h = x if is_tensor else Tensor(np.asarray(x, dtype=np.float64))
    n_layers = len(params.weights)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        if h.data.shape[-1] != W.data.shape[0]:
            raise InputDomainError(
                f"mlp layer {i}: input width {h.data.shape[-1]} != {W.data.shape[0]}"
            )
        if b is not None and i < n_layers - 1:
            h = ad.affine_tanh(h, W, b)
            continue
        h = ad.matmul(h, W)
        if b is not None:
            h = ad.add(h, b)
        if i < n_layers - 1:
            h = ad.tanh(h)
    return h if is_tensor else h.data


def _mlp_of(model: Model, prefix: str) -> MlpParams:
    weights, biases = [], []
    i = 0
    while f"{prefix}.{i}.W" in model.params:
        weights.append(model.params[f"{prefix}.{i}.W"])
        biases.append(model.params.get(f"{prefix}.{i}.b"))
        i += 1
    weights.append(model.params[f"{prefix}.head.W"])
    biases.append(None)
    return MlpParams(weights=weights, biases=biases)


def _mlp_hidden(model: Model, prefix: str, h: Tensor, training, q, rng) -> Tensor:
    """Hidden part of a branch/trunk MLP (everything before the head), with
    dropout between consecutive hidden layers during training."""
    i = 0
    while f"{prefix}.{i}.W" in model.params:
        W = model.params[f"{prefix}.{i}.W"]
        b = model.params[f"{prefix}.{i}.b"]
        h = ad.affine_tanh(h, W, b)
        i += 1
        if training and q > 0.0 and f"{prefix}.{i}.W" in model.params:
            h = apply_dropout(h, q, rng, training)
    return h


def deeponet_branch(model: Model, d_norm) -> np.ndarray:
    """Branch output for one or more normalized designs, reshaped (..., c, p).
    Depends only on the design, never on the arclength grid."""
    D = np.atleast_2d(np.asarray(d_norm, dtype=np.float64))
    with ad.no_grad():
        h = _mlp_hidden(model, "branch", Tensor(D), False, 0.0, None)
        out = ad.matmul(h, model.params["branch.head.W"]).data
    c, p = model.meta["channels"], model.meta["p"]
    out = out.reshape(D.shape[0], c, p)
    return out[0] if np.asarray(d_norm).ndim == 1 else out


def _deeponet_batch(model, D, S, training, q, rng) -> Tensor:
    """(B, 15) x (B, n) -> (B, n, c). The head contraction is fused: the
    branch coefficients are folded into the trunk head before the final
    matmul, cutting the per-node cost from O(c*p) to O(c) output channels."""
    B, n = S.shape
    c, p = model.meta["channels"], model.meta["p"]
    bh = _mlp_hidden(model, "branch", Tensor(D), training, q, rng)
    br = ad.matmul(bh, model.params["branch.head.W"])  # (B, c*p)
    th = _mlp_hidden(
        model, "trunk", Tensor(S.reshape(B * n, 1)), training, q, rng
    )  # (B*n, ht)
    H = model.params["trunk.head.W"]  # (ht, c*p)
    ht = H.data.shape[0]
    # G[b, m, k] = sum_l H[m, k*p+l] * br[b, k*p+l]
    Hk = ad.transpose(ad.reshape(H, (ht, c, p)), (1, 2, 0))  # (c, p, ht)
    Bk = ad.transpose(ad.reshape(br, (B, c, p)), (1, 0, 2))  # (c, B, p)
    G = ad.transpose(ad.matmul(Bk, Hk), (1, 2, 0))  # (c,B,ht) -> (B, ht, c)
    out = ad.matmul(ad.reshape(th, (B, n, ht)), G)  # (B, n, c)
    return out


def deeponet_forward(model: Model, d_norm, s_grid) -> np.ndarray:
    """Single-design DeepONet evaluation: (15,) x (n,) -> (n, c)."""
    d_norm = np.asarray(d_norm, dtype=np.float64).reshape(1, DESIGN_DIM)
    s_grid = np.asarray(s_grid, dtype=np.float64).reshape(1, -1)
    with ad.no_grad():
        out = _deeponet_batch(model, d_norm, s_grid, False, 0.0, None)
    return out.data[0]


# ---------------------------------------------------------------------------
_DFT_BASIS_CACHE: dict = {}


def _dft_bases(n: int, modes: int):
    """Truncated real-DFT analysis/synthesis matrices for an n-point grid.

    Convention: unnormalized forward transform, 1/n-scaled inverse. The
    synthesis pair folds in the Hermitian doubling of interior bins and the
    vanishing imaginary parts of the DC (and Nyquist) bins, so that
    ``syn_re @ Re(Y) + syn_im @ Im(Y)`` equals the inverse real FFT of the
    zero-padded truncated spectrum ``Y``.
    """
    key = (n, modes)
    hit = _DFT_BASIS_CACHE.get(key)
    if hit is None:
        j = np.arange(n)
        k = np.arange(modes)
        ang = 2.0 * np.pi * np.outer(k, j) / n  # (modes, n)
        ana_re = np.cos(ang)
        ana_im = -np.sin(ang)
        c = np.full(modes, 2.0)
        c[0] = 1.0
        if n % 2 == 0 and modes == n // 2 + 1:
            c[-1] = 1.0
        syn_re = (c / n)[None, :] * np.cos(ang.T)
        syn_im = -(c / n)[None, :] * np.sin(ang.T)
        # single synthesis product over the stacked (Re, Im) coefficients
        syn = np.hstack([syn_re, syn_im])
        hit = _DFT_BASIS_CACHE[key] = (ana_re, ana_im, syn)
    return hit


def _fourier_layer_t(x: Tensor, lp: FourierLayerParams,
                     relu: bool = False) -> Tensor:
    """One Fourier layer on a node-leading batch (n, B, width).

    The truncated real-DFT spectral path is evaluated as dense matrix
    products against cached basis matrices: analyze the leading modes, mix
    channels with the shared complex matrix, synthesize back to the grid in
    one stacked product; the diagonal pointwise path, bias, and (optionally)
    the inter-layer ReLU are applied in a single fused tape node.
    """
    n, b, width = x.data.shape
    modes = lp.modes
    if n < 2 * modes:
        raise InputDomainError(
            f"grid of {n} nodes is too small for {modes} modes"
        )
    ana_re, ana_im, syn = _dft_bases(n, modes)
    xf = ad.reshape(x, (n, b * width))
    xre = ad.reshape(ad.matmul(Tensor(ana_re), xf), (modes * b, width))
    xim = ad.reshape(ad.matmul(Tensor(ana_im), xf), (modes * b, width))
    zre = ad.matmul(xre, lp.w_re) - ad.matmul(xim, lp.w_im)
    zim = ad.matmul(xre, lp.w_im) + ad.matmul(xim, lp.w_re)
    z = ad.concat(
        [ad.reshape(zre, (modes, b * width)),
         ad.reshape(zim, (modes, b * width))], axis=0
    )
    spec = ad.reshape(ad.matmul(Tensor(syn), z), (n, b, width))
    return ad.pointwise_affine(spec, x, lp.w_diag, lp.bias, relu=relu)


def _fno_layer_params(model: Model, i: int) -> FourierLayerParams:
    return FourierLayerParams(
        w_re=model.params[f"fourier.{i}.w_re"],
        w_im=model.params[f"fourier.{i}.w_im"],
        w_diag=model.params[f"fourier.{i}.w_diag"],
        bias=model.params[f"fourier.{i}.b"],
        modes=model.meta["modes"],
    )


def fourier_layer(x, lp: FourierLayerParams) -> np.ndarray:
    """One Fourier layer on a single grid function (n, width): truncated
    spectral mixing plus the diagonal pointwise path."""
    x = np.asarray(x, dtype=np.float64)
    with ad.no_grad():
        out = _fourier_layer_t(Tensor(x[:, None, :]), lp)
    return out.data[:, 0, :]


def _fno_batch(model, D, S, training, q, rng) -> Tensor:
    """(B, 15) x (B, n) -> (B, n, c), computed in node-leading layout so
    every transform in every layer is a single large matrix product."""
    B, n = S.shape
    width, channels = model.meta["width"], model.meta["channels"]
    rows = np.empty((n, B, DESIGN_DIM + 1))
    rows[:, :, :DESIGN_DIM] = D[None, :, :]
    rows[:, :, DESIGN_DIM] = S.T
    h = ad.add(
        ad.matmul(ad.reshape(Tensor(rows), (n * B, DESIGN_DIM + 1)),
                  model.params["lift.W"]),
        model.params["lift.b"],
    )
    h = ad.reshape(h, (n, B, width))
    n_layers = model.meta["n_layers"]
    for i in range(n_layers):
        h = _fourier_layer_t(h, _fno_layer_params(model, i),
                             relu=(i < n_layers - 1))
        if i < n_layers - 1 and training and q > 0.0:
            h = apply_dropout(h, q, rng, training)
    out = ad.add(
        ad.matmul(ad.reshape(h, (n * B, width)), model.params["proj.W"]),
        model.params["proj.b"],
    )
    return ad.transpose(ad.reshape(out, (n, B, channels)), (1, 0, 2))


def fno_forward(model: Model, d_norm, s_grid) -> np.ndarray:
    """Single-design FNO evaluation: (15,) x (n,) -> (n, c)."""
    d_norm = np.asarray(d_norm, dtype=np.float64).reshape(1, DESIGN_DIM)
    s_grid = np.asarray(s_grid, dtype=np.float64).reshape(1, -1)
    with ad.no_grad():
        out = _fno_batch(model, d_norm, s_grid, False, 0.0, None)
    return out.data[0]


def forward_batch(
    model: Model, D, S, training: bool = False, dropout_q: float = 0.0, rng=None
) -> Tensor:
    """Batched forward pass for any architecture: (B,15) x (B,n) -> (B,n,c)."""
    D = np.asarray(D, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if model.kind.startswith("deeponet"):
        return _deeponet_batch(model, D, S, training, dropout_q, rng)
    return _fno_batch(model, D, S, training, dropout_q, rng)


# ---------------------------------------------------------------------------
def gram_schmidt_frame(a1, a2) -> np.ndarray:
    """Orthonormal right-handed frame from two raw columns (strict: raises on
    near-degenerate input)."""
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    n1 = np.linalg.norm(a1)
    if n1 <= GS_EPS:
        raise DegenerateFrameError("first frame column is near zero")
    e1 = a1 / n1
    v = a2 - (e1 @ a2) * e1
    n2 = np.linalg.norm(v)
    if n2 <= GS_EPS:
        raise DegenerateFrameError("frame columns are near collinear")
    e2 = v / n2
    e3 = np.cross(e1, e2)
    return np.stack([e1, e2, e3], axis=-1)


def _cross_t(u: Tensor, v: Tensor) -> Tensor:
    ux, uy, uz = u[..., 0], u[..., 1], u[..., 2]
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    return ad.stack(
        [uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx], axis=-1
    )


def _gs_frames_t(a1: Tensor, a2: Tensor, eps: float = GS_EPS):
    """Batched differentiable Gram-Schmidt on (..., 3) column pairs.

    The smoothing term ``eps**2`` sits inside each radicand so that both the
    normalization denominators (>= eps) and the sqrt gradients (<= 0.5/eps)
    stay finite through transient degenerate outputs during training.
    Returns (..., 3, 3) frames.
    """
    n1 = ad.sqrt((a1 * a1).sum(axis=-1, keepdims=True) + eps * eps)
    e1 = a1 / n1
    proj = (e1 * a2).sum(axis=-1, keepdims=True)
    v = a2 - proj * e1
    n2 = ad.sqrt((v * v).sum(axis=-1, keepdims=True) + eps * eps)
    e2 = v / n2
    e3 = _cross_t(e1, e2)
    return ad.stack([e1, e2, e3], axis=-1)


def pose_output(raw9) -> PoseOutput:
    """Split a raw 9-vector (r, a1, a2) and reconstruct the frame (strict)."""
    raw9 = np.asarray(raw9, dtype=np.float64).reshape(9)
    r, a1, a2 = raw9[0:3], raw9[3:6], raw9[6:9]
    R = gram_schmidt_frame(a1, a2)
    return PoseOutput(r=r, a1=a1, a2=a2, R=R)


def pose_to_tendons(pose: PoseOutput, design: DesignVector, s: float) -> np.ndarray:
    """Tendon positions implied by a pose at arclength s:
    tendon_i = r + R @ offset_i(s). Returns (4, 3)."""
    R = pose.R if pose.R is not None else gram_schmidt_frame(pose.a1, pose.a2)
    out = np.empty((4, 3))
    for i in range(1, 5):
        out[i - 1] = pose.r + R @ tendon_offset_vector(design, i, s)
    return out


def _tendon_offsets_grid(designs_flat: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Helical tendon offsets for every (sample, node, tendon): (B, n, 4, 3)."""
    rho = designs_flat[:, None, 0:4]
    phi = designs_flat[:, None, 4:8]
    psi = 2.0 * np.pi * np.arange(4) / 4.0
    theta = psi[None, None, :] + phi * S[..., None]
    ax = rho * np.cos(theta)
    ay = rho * np.sin(theta)
    return np.stack([ax, ay, np.zeros_like(ax)], axis=-1)


def _pose_pred_to_tendons_t(pred: Tensor, offsets: np.ndarray,
                            eps: float = GS_EPS) -> Tensor:
    """(B, n, 9) raw pose predictions -> (B, n, 12) tendon positions through
    differentiable Gram-Schmidt; ``offsets`` is the constant (B, n, 4, 3)
    helical offset grid."""
    r = pred[..., 0:3]
    a1 = pred[..., 3:6]
    a2 = pred[..., 6:9]
    R = _gs_frames_t(a1, a2, eps)  # (B, n, 3, 3)
    rotated = ad.matmul(R, Tensor(np.swapaxes(offsets, -1, -2)))  # (B,n,3,4)
    tendons = ad.transpose(rotated, (0, 1, 3, 2)) + ad.reshape(
        r, (*r.shape[:-1], 1, 3)
    )
    B, n = offsets.shape[0], offsets.shape[1]
    return ad.reshape(tendons, (B, n, 12))


# ---------------------------------------------------------------------------
def loss_tendon(pred, target) -> float:
    """Mean over grid nodes of the summed squared tendon-position error."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InputDomainError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float((diff * diff).sum(axis=-1).mean())


def loss_pose(pose_pred, target, design: DesignVector, s_grid=None) -> float:
    """Tendon-space loss of a raw pose prediction (n, 9) against stored
    tendon targets (n, 12); Gram-Schmidt (smoothed) is applied to the raw
    frame columns first."""
    pose_pred = np.asarray(pose_pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n = pose_pred.shape[0]
    if s_grid is None:
        s_grid = np.linspace(0.0, design.backbone_length, n)
    offsets = _tendon_offsets_grid(
        design_to_flat(design)[None], np.asarray(s_grid)[None]
    )
    with ad.no_grad():
        pred12 = _pose_pred_to_tendons_t(Tensor(pose_pred[None]), offsets)
    return loss_tendon(pred12.data[0], target)


def _batch_loss_t(model: Model, pred: Tensor, targets: np.ndarray,
                  offsets) -> Tensor:
    """Batch-mean training loss as a Tensor; ``pred`` is the raw forward
    output (B, n, c)."""
    if model.meta["variant"] == "pose":
        pred12 = _pose_pred_to_tendons_t(pred, offsets)
    else:
        pred12 = pred
    diff = pred12 - Tensor(targets)
    return (diff * diff).sum(axis=-1).mean()


def batch_loss(model: Model, D, S, targets, designs_flat=None) -> float:
    """Inference-mode batch loss (no tape)."""
    D = np.asarray(D, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    offsets = None
    if model.meta["variant"] == "pose":
        offsets = _tendon_offsets_grid(np.asarray(designs_flat), S)
    with ad.no_grad():
        pred = forward_batch(model, D, S)
        loss = _batch_loss_t(model, pred, targets, offsets)
    return float(loss.data)


def _rel_l2_rows(pred12: np.ndarray, targets: np.ndarray) -> np.ndarray:
    num = np.sqrt(((pred12 - targets) ** 2).sum(axis=(1, 2)))
    den = np.sqrt((targets**2).sum(axis=(1, 2)))
    return num / den


def grad(model: Model, D, S, targets, designs_flat=None,
         dropout_q: float = 0.0, rng=None):
    """Reverse-mode gradients of the batch-mean loss for every parameter.

    Returns ``(loss, rel_l2, grads)`` where ``rel_l2`` is the batch mean of
    per-sample relative l2 errors measured from the same forward pass and
    ``grads`` maps parameter names to ndarrays congruent with the parameters.
    Raises a diagnostic error naming the parameter block if any gradient is
    non-finite.
    """
    D = np.asarray(D, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    offsets = None
    if model.meta["variant"] == "pose":
        offsets = _tendon_offsets_grid(np.asarray(designs_flat), S)
    for t in model.params.values():
        t.zero_grad()
    pred = forward_batch(model, D, S, training=True, dropout_q=dropout_q, rng=rng)
    if model.meta["variant"] == "pose":
        pred12 = _pose_pred_to_tendons_t(pred, offsets)
    else:
        pred12 = pred
    diff = pred12 - Tensor(targets)
    loss = (diff * diff).sum(axis=-1).mean()
    loss.backward()
    rel = float(_rel_l2_rows(pred12.data, targets).mean())
    grads = {}
    for name, t in model.params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise TrainingAbortedError(
                f"non-finite gradient in parameter block {name!r}", block=name
            )
        grads[name] = g
    return float(loss.data), rel, grads


def model_predictions(model: Model, D, S, chunk: int = None) -> np.ndarray:
    """Inference over many designs in cache-sized chunks: (B,15) x (B,n)
    -> (B, n, c) raw outputs (pose models return raw 9-vectors).

    The default chunk size is tuned per architecture so every activation
    stays cache-resident on a single core.
    """
    D = np.asarray(D, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if chunk is None:
        chunk = 128 if model.kind.startswith("deeponet") else 16
    B = D.shape[0]
    out = np.empty((B, S.shape[1], model.channels))
    with ad.no_grad():
        for lo in range(0, B, chunk):
            hi = min(lo + chunk, B)
            out[lo:hi] = forward_batch(model, D[lo:hi], S[lo:hi]).data
    return out
