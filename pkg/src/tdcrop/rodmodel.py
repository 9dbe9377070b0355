"""Cosserat-rod statics for tendon-driven continuum robots.

Computes static equilibria of a clamped-base rod actuated by helically routed
tendons: the coupled rod-tendon ODE system is integrated with fixed-step RK4
and the free-tip boundary condition is enforced by a damped-Newton shooting
method with a tension-homotopy fallback.

Conventions: positions/forces are expressed in the world frame; strains in the
body frame. The flat state layout used internally is
``[r (3), R row-major (9), n (3), m (3)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InputDomainError,
    IntegrationBlowupError,
    NonconvergenceError,
    SolverDegeneracyError,
)

__all__ = [
    "DEFAULT_POISSON",
    "N_TENDONS",
    "DesignVector",
    "StiffnessMatrices",
    "RodState",
    "EquilibriumConfig",
    "design_from_flat",
    "design_to_flat",
    "stiffness_from_material",
    "tendon_offset_vector",
    "rod_ode_rhs",
    "integrate_ivp",
    "tip_residual",
    "solve_equilibrium",
    "solve_equilibrium_batch",
]

DEFAULT_POISSON = 0.3
N_TENDONS = 4
PRODUCTION_STEPS = 41
SHOOTING_TOL = 1e-8
MAX_NEWTON_ITERS = 50
MIN_LINESEARCH_STEP = 2.0 ** -20
HOMOTOPY_LAMBDAS = (0.25, 0.5, 0.75, 1.0)
COND_LIMIT = 1e12

_EYE3 = np.eye(3)
_EYE3_FLAT = np.eye(3).reshape(9)


def _base_angles(n_tendons: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_tendons) / n_tendons


@dataclass
class DesignVector:
    """One robot design and actuation: tendon geometry, tensions, rod material.

    Fields:
        tendon_offsets: radial offsets rho_i [m], shape (4,), all > 0.
        tendon_pitches: helix pitches phi_i [rad/m], shape (4,).
        tendon_tensions: tensions tau_i [N], shape (4,), all >= 0.
        backbone_radius: rod cross-section radius r [m], > 0.
        backbone_length: rod length L [m], > 0.
        youngs_modulus: E [Pa], > 0.
    """

    tendon_offsets: np.ndarray
    tendon_pitches: np.ndarray
    tendon_tensions: np.ndarray
    backbone_radius: float
    backbone_length: float
    youngs_modulus: float

    def __post_init__(self):
        self.tendon_offsets = np.asarray(self.tendon_offsets, dtype=np.float64)
        self.tendon_pitches = np.asarray(self.tendon_pitches, dtype=np.float64)
        self.tendon_tensions = np.asarray(self.tendon_tensions, dtype=np.float64)
        self.backbone_radius = float(self.backbone_radius)
        self.backbone_length = float(self.backbone_length)
        self.youngs_modulus = float(self.youngs_modulus)
        self.validate()

    def validate(self):
        for name, arr in (
            ("tendon_offsets", self.tendon_offsets),
            ("tendon_pitches", self.tendon_pitches),
            ("tendon_tensions", self.tendon_tensions),
        ):
            if arr.shape != (N_TENDONS,):
                raise InputDomainError(
                    f"{name} must have shape ({N_TENDONS},), got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise InputDomainError(f"{name} contains non-finite values")
        if not np.all(self.tendon_offsets > 0):
            raise InputDomainError("tendon_offsets must all be positive")
        if not np.all(self.tendon_tensions >= 0):
            raise InputDomainError("tendon_tensions must be non-negative")
        if not (math.isfinite(self.backbone_radius) and self.backbone_radius > 0):
            raise InputDomainError("backbone_radius must be positive")
        if not (math.isfinite(self.backbone_length) and self.backbone_length > 0):
            raise InputDomainError("backbone_length must be positive")
        if not (math.isfinite(self.youngs_modulus) and self.youngs_modulus > 0):
            raise InputDomainError("youngs_modulus must be positive")


def design_to_flat(design: DesignVector) -> np.ndarray:
    """Flatten a design to the canonical 15-vector
    [rho1..rho4, phi1..phi4, tau1..tau4, r, L, E]."""
    return np.concatenate(
        [
            design.tendon_offsets,
            design.tendon_pitches,
            design.tendon_tensions,
            [
                design.backbone_radius,
                design.backbone_length,
                design.youngs_modulus,
            ],
        ]
    )


def design_from_flat(vec: np.ndarray) -> DesignVector:
    """Inverse of :func:`design_to_flat`."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (15,):
        raise InputDomainError(f"flat design must have shape (15,), got {vec.shape}")
    return DesignVector(
        tendon_offsets=vec[0:4],
        tendon_pitches=vec[4:8],
        tendon_tensions=vec[8:12],
        backbone_radius=vec[12],
        backbone_length=vec[13],
        youngs_modulus=vec[14],
    )


@dataclass
class StiffnessMatrices:
    """Diagonal constitutive stiffnesses: K_s = diag(GA, GA, EA),
    K_b = diag(EI, EI, GJ)."""

    K_s: np.ndarray
    K_b: np.ndarray


def stiffness_from_material(
    E: float, r: float, poisson: float = DEFAULT_POISSON
) -> StiffnessMatrices:
    """Build shear/extension and bending/torsion stiffness matrices for a
    solid circular cross-section of radius ``r`` and Young's modulus ``E``."""
    if not (math.isfinite(E) and E > 0):
        raise InputDomainError("E must be positive")
    if not (math.isfinite(r) and r > 0):
        raise InputDomainError("r must be positive")
    if not (0 <= poisson < 0.5):
        raise InputDomainError("poisson must lie in [0, 0.5)")
    area = math.pi * r * r
    inertia = math.pi * r**4 / 4.0
    shear_mod = E / (2.0 * (1.0 + poisson))
    K_s = np.diag([shear_mod * area, shear_mod * area, E * area])
    K_b = np.diag([E * inertia, E * inertia, shear_mod * 2.0 * inertia])
    return StiffnessMatrices(K_s=K_s, K_b=K_b)


def _stiff_diag(E, r, poisson=DEFAULT_POISSON):
    """Diagonals of K_s and K_b for per-row arrays of E and r."""
    E = np.asarray(E, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    area = np.pi * r * r
    inertia = np.pi * r**4 / 4.0
    shear_mod = E / (2.0 * (1.0 + poisson))
    ks = np.stack([shear_mod * area, shear_mod * area, E * area], axis=-1)
    kb = np.stack([E * inertia, E * inertia, shear_mod * 2.0 * inertia], axis=-1)
    return ks, kb


def tendon_offset_vector(design: DesignVector, i: int, s: float) -> np.ndarray:
    """Cross-section offset of tendon ``i`` (1-based) at arclength ``s``:
    rho_i * (cos(psi_i + phi_i s), sin(psi_i + phi_i s), 0)."""
    if not (1 <= i <= N_TENDONS):
        raise InputDomainError(f"tendon index must be in 1..{N_TENDONS}, got {i}")
    if not (0 <= s <= design.backbone_length):
        raise InputDomainError(
            f"arclength {s} outside [0, {design.backbone_length}]"
        )
    psi = _base_angles(N_TENDONS)[i - 1]
    theta = psi + design.tendon_pitches[i - 1] * s
    rho = design.tendon_offsets[i - 1]
    return np.array([rho * math.cos(theta), rho * math.sin(theta), 0.0])


@dataclass
class RodState:
    """Rod cross-section state at one arclength: position, frame, internal
    force and moment (world frame)."""

    r: np.ndarray
    R: np.ndarray
    n: np.ndarray
    m: np.ndarray
    s: float


@dataclass
class EquilibriumConfig:
    """A solved equilibrium sampled on an equispaced arclength grid.

    ``tendon_curves[i][k] = backbone[k] + frames[k] @ offset_i(s_k)`` exactly
    by construction. ``residual_norm`` certifies the tip boundary condition.
    """

    arclengths: np.ndarray
    backbone: np.ndarray
    frames: np.ndarray
    tendon_curves: np.ndarray
    base_loads: np.ndarray
    residual_norm: float
    iterations: int
    homotopy_used: bool = False


class _DesignArrays:
    """Per-row design parameters for batched kernels."""

    __slots__ = ("rho", "phi", "tau", "r", "L", "E", "ks", "kb", "psi")

    def __init__(self, rho, phi, tau, r, L, E, psi=None):
        self.rho = np.ascontiguousarray(rho, dtype=np.float64)
        self.phi = np.ascontiguousarray(phi, dtype=np.float64)
        self.tau = np.ascontiguousarray(tau, dtype=np.float64)
        self.r = np.ascontiguousarray(r, dtype=np.float64)
        self.L = np.ascontiguousarray(L, dtype=np.float64)
        self.E = np.ascontiguousarray(E, dtype=np.float64)
        self.ks, self.kb = _stiff_diag(self.E, self.r)
        if psi is None:
            psi = _base_angles(self.rho.shape[-1])
        self.psi = np.asarray(psi, dtype=np.float64)

    @classmethod
    def from_design(cls, design: DesignVector, rows: int) -> "_DesignArrays":
        tile = lambda a: np.broadcast_to(a, (rows,) + np.shape(a)).copy()
        return cls(
            tile(design.tendon_offsets),
            tile(design.tendon_pitches),
            tile(design.tendon_tensions),
            np.full(rows, design.backbone_radius),
            np.full(rows, design.backbone_length),
            np.full(rows, design.youngs_modulus),
        )

    @classmethod
    def from_flat_batch(cls, flat: np.ndarray) -> "_DesignArrays":
        flat = np.asarray(flat, dtype=np.float64)
        return cls(
            flat[:, 0:4], flat[:, 4:8], flat[:, 8:12],
            flat[:, 12], flat[:, 13], flat[:, 14],
        )

    def repeat(self, k: int) -> "_DesignArrays":
        return _DesignArrays(
            np.repeat(self.rho, k, axis=0),
            np.repeat(self.phi, k, axis=0),
            np.repeat(self.tau, k, axis=0),
            np.repeat(self.r, k),
            np.repeat(self.L, k),
            np.repeat(self.E, k),
            psi=self.psi,
        )

    def take(self, idx) -> "_DesignArrays":
        return _DesignArrays(
            self.rho[idx], self.phi[idx], self.tau[idx],
            self.r[idx], self.L[idx], self.E[idx],
            psi=self.psi,
        )

    def with_tension_scale(self, lam: float) -> "_DesignArrays":
        return _DesignArrays(
            self.rho, self.phi, self.tau * lam, self.r, self.L, self.E,
            psi=self.psi,
        )

    def __len__(self):
        return self.r.shape[0]


def _offset_terms(da: _DesignArrays, s: np.ndarray):
    """Tendon offsets and their first two arclength derivatives at per-row
    arclengths ``s``. Returns (ax, ay, apx, apy, appx, appy), each (B, T)."""
    theta = da.psi[None, :] + da.phi * s[:, None]
    ax = da.rho * np.cos(theta)
    ay = da.rho * np.sin(theta)
    apx = -da.phi * ay
    apy = da.phi * ax
    appx = -da.phi * apy
    appy = da.phi * apx
    return ax, ay, apx, apy, appx, appy


def _cond_guard(A: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """Return a boolean mask of rows whose 6x6 system has condition number
    above COND_LIMIT.

    Fast path: the system matrix is symmetric with block structure
    [[S, B], [B^T, C]], S >= diag(ks) in the PSD order. A 2x2 eigenvalue bound
    built from min diag(ks), ||B||_F and a determinant-based lower bound on
    lambda_min(C) certifies well-conditioned rows without an eigendecomposition;
    only uncertified rows pay for an exact symmetric eigensolve.
    """
    abs_A = np.abs(A)
    norm_ub = abs_A.sum(axis=2).max(axis=1)

    C = A[:, 3:, 3:]
    c00, c01, c02 = C[:, 0, 0], C[:, 0, 1], C[:, 0, 2]
    c11, c12, c22 = C[:, 1, 1], C[:, 1, 2], C[:, 2, 2]
    det2 = c00 * c11 - c01 * c01
    detC = (
        c00 * (c11 * c22 - c12 * c12)
        - c01 * (c01 * c22 - c12 * c02)
        + c02 * (c01 * c12 - c11 * c02)
    )
    c_pd = (c00 > 0) & (det2 > 0) & (detC > 0)
    lamC_max = np.abs(C).sum(axis=2).max(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lamC_lo = np.where(c_pd & (lamC_max > 0), detC / (lamC_max * lamC_max), 0.0)

    s_lo = ks.min(axis=-1)
    B = A[:, :3, 3:]
    b_norm = np.sqrt((B * B).sum(axis=(1, 2)))
    half_sum = 0.5 * (s_lo + lamC_lo)
    half_diff = 0.5 * (s_lo - lamC_lo)
    lam_lo = half_sum - np.sqrt(half_diff * half_diff + b_norm * b_norm)

    with np.errstate(divide="ignore", invalid="ignore"):
        certified = (lam_lo > 0) & (norm_ub / lam_lo < COND_LIMIT)
    certified &= np.isfinite(norm_ub)
    bad = ~certified
    if np.any(bad):
        idx = np.nonzero(bad)[0]
        finite = np.all(np.isfinite(A[idx]), axis=(1, 2))
        exact_bad = np.ones(idx.shape[0], dtype=bool)
        if np.any(finite):
            sub = idx[finite]
            eig = np.linalg.eigvalsh(A[sub])
            abs_eig = np.abs(eig)
            emin = abs_eig.min(axis=1)
            emax = abs_eig.max(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                cond = np.where(emin > 0, emax / emin, np.inf)
            exact_bad[finite] = cond > COND_LIMIT
        bad[:] = False
        bad[idx] = exact_bad
    return bad


def _rhs(s, Y, da: _DesignArrays, strict: bool = False):
    """Batched ODE right-hand side: Y (B, 18) -> dY (B, 18).

    ``strict`` raises on a degenerate implicit system; otherwise degenerate
    rows yield NaN derivatives (rejected later by the shooting line search).
    """
    B = Y.shape[0]
    R = Y[:, 3:12].reshape(B, 3, 3)
    Rt = R.transpose(0, 2, 1)
    nloc = np.matmul(Rt, Y[:, 12:15, None])[:, :, 0]
    mloc = np.matmul(Rt, Y[:, 15:18, None])[:, :, 0]
    nu = nloc / da.ks
    nu[:, 2] += 1.0
    kap = mloc / da.kb

    ax, ay, apx, apy, appx, appy = _offset_terms(da, s)
    kx, ky, kz = kap[:, 0:1], kap[:, 1:2], kap[:, 2:3]
    wx = nu[:, 0:1] - kz * ay + apx
    wy = nu[:, 1:2] + kz * ax + apy
    wz = nu[:, 2:3] + kx * ay - ky * ax
    wn2 = wx * wx + wy * wy + wz * wz
    wn = np.sqrt(wn2)
    w = np.stack([wx, wy, wz], axis=-1)
    w_outer = w[..., :, None] * w[..., None, :] / wn2[..., None, None]
    Lam = (da.tau / wn)[..., None, None] * (_EYE3[None, None] - w_outer)

    vx = wx + apx
    vy = wy + apy
    cx = ky * wz - kz * vy + appx
    cy = kz * vx - kx * wz + appy
    cz = kx * vy - ky * vx
    cvec = np.stack([cx, cy, cz], axis=-1)

    zeros = np.zeros_like(ax)
    ahat = np.stack(
        [
            np.stack([zeros, zeros, ay], axis=-1),
            np.stack([zeros, zeros, -ax], axis=-1),
            np.stack([-ay, ax, zeros], axis=-1),
        ],
        axis=-2,
    )

    Lam_sum = Lam.sum(axis=1)
    Lam_ahat = np.matmul(Lam, ahat)
    ahat_Lam = np.matmul(ahat, Lam)
    ahat_Lam_ahat = np.matmul(ahat_Lam, ahat)

    A = np.empty((B, 6, 6))
    A[:, :3, :3] = Lam_sum
    A[:, 0, 0] += da.ks[:, 0]
    A[:, 1, 1] += da.ks[:, 1]
    A[:, 2, 2] += da.ks[:, 2]
    A[:, :3, 3:] = -Lam_ahat.sum(axis=1)
    A[:, 3:, :3] = ahat_Lam.sum(axis=1)
    A[:, 3:, 3:] = -ahat_Lam_ahat.sum(axis=1)
    A[:, 3, 3] += da.kb[:, 0]
    A[:, 4, 4] += da.kb[:, 1]
    A[:, 5, 5] += da.kb[:, 2]

    Lc = np.matmul(Lam, cvec[..., None])[..., 0].sum(axis=1)
    aLc = np.matmul(ahat_Lam, cvec[..., None])[..., 0].sum(axis=1)
    Ks_dnu = da.ks * nu
    Ks_dnu[:, 2] -= da.ks[:, 2]
    Kb_dk = da.kb * kap
    rhs_vec = np.empty((B, 6))
    rhs_vec[:, :3] = -Lc - np.cross(kap, Ks_dnu)
    rhs_vec[:, 3:] = -aLc - np.cross(nu, Ks_dnu) - np.cross(kap, Kb_dk)

    bad = _cond_guard(A, da.ks)
    if np.any(bad):
        if strict:
            row = int(np.nonzero(bad)[0][0])
            sub = A[row]
            if not (np.all(np.isfinite(sub)) and np.all(np.isfinite(rhs_vec[row]))):
                raise IntegrationBlowupError(
                    "non-finite state during integration", s=float(s[row])
                )
            eig = np.abs(np.linalg.eigvalsh(sub))
            cond = float(eig.max() / eig.min()) if eig.min() > 0 else float("inf")
            raise SolverDegeneracyError(
                "implicit strain-rate system is numerically singular",
                condition_number=cond,
            )
        A = A.copy()
        A[bad] = np.eye(6)

    rates = np.linalg.solve(A, rhs_vec[..., None])[..., 0]
    nud, kapd = rates[:, :3], rates[:, 3:]

    khat = np.zeros((B, 3, 3))
    khat[:, 0, 1] = -kap[:, 2]
    khat[:, 0, 2] = kap[:, 1]
    khat[:, 1, 0] = kap[:, 2]
    khat[:, 1, 2] = -kap[:, 0]
    khat[:, 2, 0] = -kap[:, 1]
    khat[:, 2, 1] = kap[:, 0]

    dY = np.empty_like(Y)
    dY[:, 0:3] = np.matmul(R, nu[..., None])[..., 0]
    dY[:, 3:12] = np.matmul(R, khat).reshape(B, 9)
    dn_loc = np.cross(kap, Ks_dnu) + da.ks * nud
    dm_loc = np.cross(kap, Kb_dk) + da.kb * kapd
    dY[:, 12:15] = np.matmul(R, dn_loc[..., None])[..., 0]
    dY[:, 15:18] = np.matmul(R, dm_loc[..., None])[..., 0]
    if np.any(bad):
        dY[bad] = np.nan
    return dY


def _reorth(Rflat: np.ndarray) -> np.ndarray:
    """Gram-Schmidt projection of each row's frame back onto SO(3)
    (columnwise), guarding against drift accumulation."""
    B = Rflat.shape[0]
    R = Rflat.reshape(B, 3, 3)
    e1 = R[:, :, 0]
    e1 = e1 / np.linalg.norm(e1, axis=-1, keepdims=True)
    c2 = R[:, :, 1]
    e2 = c2 - (e1 * c2).sum(axis=-1, keepdims=True) * e1
    e2 = e2 / np.linalg.norm(e2, axis=-1, keepdims=True)
    e3 = np.cross(e1, e2)
    return np.stack([e1, e2, e3], axis=-1).reshape(B, 9)


def _integrate(n0m0, da: _DesignArrays, steps, keep_traj=False, strict=False):
    """Fixed-step RK4 over [0, L] per row from the clamped base with base
    loads ``n0m0`` (B, 6). Returns the final flat states (B, 18), or the full
    trajectory (steps+1, B, 18) when ``keep_traj``."""
    B = n0m0.shape[0]
    h = da.L / steps
    Y = np.zeros((B, 18))
    Y[:, 3:12] = _EYE3_FLAT[None, :]
    Y[:, 12:18] = n0m0
    s = np.zeros(B)
    if keep_traj:
        traj = np.empty((steps + 1, B, 18))
        traj[0] = Y
    h_col = h[:, None]
    half = h_col / 2.0
    sixth = h_col / 6.0
    with np.errstate(all="ignore"):
        for k in range(steps):
            k1 = _rhs(s, Y, da, strict)
            k2 = _rhs(s + h / 2.0, Y + half * k1, da, strict)
            k3 = _rhs(s + h / 2.0, Y + half * k2, da, strict)
            k4 = _rhs(s + h, Y + h_col * k3, da, strict)
            Y = Y + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if strict and not np.all(np.isfinite(Y)):
                row = np.nonzero(~np.all(np.isfinite(Y), axis=1))[0][0]
                raise IntegrationBlowupError(
                    "non-finite state during integration",
                    s=float(s[row] + h[row]),
                )
            Y[:, 3:12] = _reorth(Y[:, 3:12])
            s = s + h
            if keep_traj:
                traj[k + 1] = Y
    return traj if keep_traj else Y


def _tip_terms(Y, da: _DesignArrays):
    """World tendon tangents t_i(L) and offsets a_i(L) from final states."""
    B = Y.shape[0]
    R = Y[:, 3:12].reshape(B, 3, 3)
    Rt = R.transpose(0, 2, 1)
    nloc = np.matmul(Rt, Y[:, 12:15, None])[:, :, 0]
    mloc = np.matmul(Rt, Y[:, 15:18, None])[:, :, 0]
    nu = nloc / da.ks
    nu[:, 2] += 1.0
    kap = mloc / da.kb
    ax, ay, apx, apy, _, _ = _offset_terms(da, da.L)
    wx = nu[:, 0:1] - kap[:, 2:3] * ay + apx
    wy = nu[:, 1:2] + kap[:, 2:3] * ax + apy
    wz = nu[:, 2:3] + kap[:, 0:1] * ay - kap[:, 1:2] * ax
    w = np.stack([wx, wy, wz], axis=-1)
    w = w / np.linalg.norm(w, axis=-1, keepdims=True)
    t_world = np.matmul(R[:, None], w[..., None])[..., 0]
    a = np.stack([ax, ay, np.zeros_like(ax)], axis=-1)
    arm = np.matmul(R[:, None], a[..., None])[..., 0]
    return t_world, arm


def _tip_residual_batch(n0m0, da: _DesignArrays, steps, strict=False):
    """Boundary-condition violation for each row: internal loads at the tip
    must balance the tendon termination point loads."""
    with np.errstate(all="ignore"):
        Y = _integrate(n0m0, da, steps, strict=strict)
        t_world, arm = _tip_terms(Y, da)
        F = (da.tau[..., None] * t_world).sum(axis=1)
        M = np.cross(arm, da.tau[..., None] * t_world).sum(axis=1)
        res = np.empty((n0m0.shape[0], 6))
        res[:, :3] = Y[:, 12:15] + F
        res[:, 3:] = Y[:, 15:18] + M
    return res


def _initial_guess(da: _DesignArrays) -> np.ndarray:
    """Base-section load-transport guess: with straight-rod tangents at s=0,
    the internal loads that balance the tendon loads crossing the base
    section are n0 = -sum tau_i t_i(0), m0 = -sum a_i(0) x tau_i t_i(0)."""
    theta0 = da.psi[None, :]
    ax = da.rho * np.cos(theta0)
    ay = da.rho * np.sin(theta0)
    apx = -da.phi * ay
    apy = da.phi * ax
    wn = np.sqrt(apx * apx + apy * apy + 1.0)
    tx, ty, tz = apx / wn, apy / wn, 1.0 / wn
    g = np.empty((len(da), 6))
    g[:, 0] = -(da.tau * tx).sum(axis=1)
    g[:, 1] = -(da.tau * ty).sum(axis=1)
    g[:, 2] = -(da.tau * tz).sum(axis=1)
    g[:, 3] = -(da.tau * (ay * tz)).sum(axis=1)
    g[:, 4] = -(da.tau * (-ax * tz)).sum(axis=1)
    g[:, 5] = -(da.tau * (ax * ty - ay * tx)).sum(axis=1)
    return g


def _newton_batch(x0, da: _DesignArrays, steps, tol, maxit):
    """Damped Newton on base loads for all rows simultaneously.

    Returns (x, res_norm, iters, ok): per-row solutions, final residual
    norms, iteration counts, and success flags. Row arithmetic is identical
    to a single-row solve, so batch results match one-at-a-time solves
    bitwise.
    """
    D = len(da)
    x = np.array(x0, dtype=np.float64, copy=True)
    res_norm = np.full(D, np.inf)
    best_norm = np.full(D, np.inf)
    iters = np.zeros(D, dtype=np.int64)
    active = np.ones(D, dtype=bool)
    ok = np.zeros(D, dtype=bool)
    da7 = None
    for _ in range(maxit):
        if not np.any(active):
            break
        idx = np.nonzero(active)[0]
        sub = da.take(idx)
        nsub = idx.shape[0]
        pert = 1e-7 * (1.0 + np.abs(x[idx]))
        X = np.repeat(x[idx], 7, axis=0).reshape(nsub, 7, 6)
        for comp in range(6):
            X[:, 1 + comp, comp] += pert[:, comp]
        da7 = sub.repeat(7)
        res = _tip_residual_batch(X.reshape(nsub * 7, 6), da7, steps)
        res = res.reshape(nsub, 7, 6)
        r0 = res[:, 0, :]
        with np.errstate(invalid="ignore"):
            nrm = np.sqrt((r0 * r0).sum(axis=1))
        iters[idx] += 1

        finite = np.isfinite(nrm)
        conv = finite & (nrm < tol)
        res_norm[idx] = np.where(finite, nrm, res_norm[idx])
        better = finite & (nrm < best_norm[idx])
        best_norm[idx] = np.where(better, nrm, best_norm[idx])
        if np.any(conv):
            ok[idx[conv]] = True
            active[idx[conv]] = False
        work = np.nonzero(finite & ~conv)[0]
        dead = np.nonzero(~finite)[0]
        if dead.size:
            active[idx[dead]] = False
        if work.size == 0:
            continue

        J = (res[work, 1:, :] - r0[work, None, :]).transpose(0, 2, 1) / pert[
            work, None, :
        ]
        rhs_rows = -r0[work]
        dx = np.full((work.size, 6), np.nan)
        solvable = np.zeros(work.size, dtype=bool)
        finite_J = np.all(np.isfinite(J), axis=(1, 2))
        if np.any(finite_J):
            fidx = np.nonzero(finite_J)[0]
            try:
                sol = np.linalg.solve(J[fidx], rhs_rows[fidx][..., None])[..., 0]
                good = np.all(np.isfinite(sol), axis=1)
                dx[fidx[good]] = sol[good]
                solvable[fidx[good]] = True
            except np.linalg.LinAlgError:
                for j in fidx:
                    try:
                        sol_j = np.linalg.solve(J[j], rhs_rows[j])
                        if np.all(np.isfinite(sol_j)):
                            dx[j] = sol_j
                            solvable[j] = True
                    except np.linalg.LinAlgError:
                        pass
        if np.any(~solvable):
            active[idx[work[~solvable]]] = False
            work = work[solvable]
            dx = dx[solvable]
            if work.size == 0:
                continue

        # Armijo backtracking with per-row step halving.
        alpha = np.ones(work.size)
        accepted = np.zeros(work.size, dtype=bool)
        pending = np.arange(work.size)
        base_nrm = nrm[work]
        while pending.size:
            cand = x[idx[work[pending]]] + alpha[pending, None] * dx[pending]
            sub_p = da.take(idx[work[pending]])
            rn = _tip_residual_batch(cand, sub_p, steps)
            with np.errstate(invalid="ignore"):
                nn = np.sqrt((rn * rn).sum(axis=1))
            good = np.isfinite(nn) & (
                nn < (1.0 - 1e-4 * alpha[pending]) * base_nrm[pending]
            )
            acc = pending[good]
            if acc.size:
                x[idx[work[acc]]] = cand[good]
                accepted[acc] = True
            rest = pending[~good]
            alpha[rest] = alpha[rest] / 2.0
            keep = alpha[rest] >= MIN_LINESEARCH_STEP
            pending = rest[keep]
        stalled = ~accepted
        if np.any(stalled):
            active[idx[work[stalled]]] = False

    # Rows that exhausted the iteration budget: evaluate the final residual.
    leftover = np.nonzero(active)[0]
    if leftover.size:
        rn = _tip_residual_batch(x[leftover], da.take(leftover), steps)
        with np.errstate(invalid="ignore"):
            nn = np.sqrt((rn * rn).sum(axis=1))
        fin = np.isfinite(nn)
        res_norm[leftover] = np.where(fin, nn, res_norm[leftover])
        best_norm[leftover] = np.where(
            fin & (nn < best_norm[leftover]), nn, best_norm[leftover]
        )
        ok[leftover] = fin & (nn < tol)
    return x, res_norm, best_norm, iters, ok


def _shoot(da: _DesignArrays, steps, tol=SHOOTING_TOL, maxit=MAX_NEWTON_ITERS):
    """Full shooting strategy for a batch of designs: damped Newton from the
    load-transport guess, then per-row tension homotopy for failures.

    Returns (x, res_norm, iters, homotopy_mask, ok).
    """
    x0 = _initial_guess(da)
    x, res_norm, best_norm, iters, ok = _newton_batch(x0, da, steps, tol, maxit)
    homotopy = np.zeros(len(da), dtype=bool)
    fails = np.nonzero(~ok)[0]
    for row in fails:
        homotopy[row] = True
        sub = da.take([row])
        xr = np.zeros((1, 6))
        row_ok = True
        for lam in HOMOTOPY_LAMBDAS:
            sub_l = sub.with_tension_scale(lam)
            xr, rn, bn, it, okr = _newton_batch(xr, sub_l, steps, tol, maxit)
            iters[row] += int(it[0])
            best_norm[row] = min(best_norm[row], float(bn[0]))
            if not okr[0]:
                row_ok = False
                break
        if row_ok:
            x[row] = xr[0]
            res_norm[row] = float(rn[0])
            ok[row] = True
        else:
            res_norm[row] = best_norm[row]
    return x, res_norm, iters, homotopy, ok


def _config_from_solution(design, da1, x, steps, res_norm, iters, homotopy):
    traj = _integrate(x[None], da1, steps, keep_traj=True, strict=True)[:, 0, :]
    n_nodes = steps + 1
    L = design.backbone_length
    arclengths = np.arange(n_nodes) * (L / steps)
    arclengths[-1] = L
    backbone = traj[:, 0:3].copy()
    frames = traj[:, 3:12].reshape(n_nodes, 3, 3).copy()
    tendon_curves = np.empty((N_TENDONS, n_nodes, 3))
    for i in range(1, N_TENDONS + 1):
        for k in range(n_nodes):
            offset = tendon_offset_vector(design, i, float(arclengths[k]))
            tendon_curves[i - 1, k] = backbone[k] + frames[k] @ offset
    return EquilibriumConfig(
        arclengths=arclengths,
        backbone=backbone,
        frames=frames,
        tendon_curves=tendon_curves,
        base_loads=x.copy(),
        residual_norm=float(res_norm),
        iterations=int(iters),
        homotopy_used=bool(homotopy),
    )


def rod_ode_rhs(state: RodState, design: DesignVector):
    """Arclength derivatives (dr, dR, dn, dm) of the rod state under the
    tendon load model. The distributed tendon loads depend on the strain
    rates, so a 6x6 linear system in (nu', kappa') is assembled and solved."""
    design.validate()
    R = np.asarray(state.R, dtype=np.float64)
    if not np.all(np.isfinite(R)) or not np.allclose(R.T @ R, _EYE3, atol=1e-8):
        raise InputDomainError("state frame is not orthonormal")
    for name, v in (("r", state.r), ("n", state.n), ("m", state.m)):
        if not np.all(np.isfinite(np.asarray(v, dtype=np.float64))):
            raise InputDomainError(f"state.{name} contains non-finite values")
    Y = np.empty((1, 18))
    Y[0, 0:3] = state.r
    Y[0, 3:12] = R.reshape(9)
    Y[0, 12:15] = state.n
    Y[0, 15:18] = state.m
    da = _DesignArrays.from_design(design, 1)
    dY = _rhs(np.array([float(state.s)]), Y, da, strict=True)[0]
    return dY[0:3], dY[3:12].reshape(3, 3), dY[12:15], dY[15:18]


def integrate_ivp(base: RodState, design: DesignVector, steps: int):
    """Integrate the rod IVP from the clamped base with classical RK4 at
    fixed step h = L/steps; returns states at all steps+1 grid nodes with
    frames re-orthonormalized after every step."""
    design.validate()
    if steps < PRODUCTION_STEPS:
        raise InputDomainError(f"steps must be >= {PRODUCTION_STEPS}, got {steps}")
    if not np.allclose(base.r, 0.0, atol=1e-12) or not np.allclose(
        base.R, _EYE3, atol=1e-12
    ):
        raise InputDomainError("base state must have r = 0 and R = I")
    if base.s != 0.0:
        raise InputDomainError("base state must be at s = 0")
    n0m0 = np.concatenate([base.n, base.m])[None, :]
    da = _DesignArrays.from_design(design, 1)
    traj = _integrate(n0m0, da, steps, keep_traj=True, strict=True)[:, 0, :]
    L = design.backbone_length
    out = []
    for k in range(steps + 1):
        s_k = L if k == steps else k * (L / steps)
        out.append(
            RodState(
                r=traj[k, 0:3].copy(),
                R=traj[k, 3:12].reshape(3, 3).copy(),
                n=traj[k, 12:15].copy(),
                m=traj[k, 15:18].copy(),
                s=float(s_k),
            )
        )
    return out


def tip_residual(base_loads, design: DesignVector, steps: int = PRODUCTION_STEPS):
    """Violation of the free-tip boundary condition for given base loads
    (n0, m0): residual = [n(L) + sum tau_i t_i(L);
    m(L) + sum (R(L) a_i(L)) x tau_i t_i(L)]."""
    design.validate()
    base_loads = np.asarray(base_loads, dtype=np.float64).reshape(6)
    da = _DesignArrays.from_design(design, 1)
    return _tip_residual_batch(base_loads[None, :], da, steps, strict=True)[0]


def solve_equilibrium(
    design: DesignVector, steps: int = PRODUCTION_STEPS
) -> EquilibriumConfig:
    """Solve the rod-tendon boundary-value problem by shooting and return the
    sampled equilibrium configuration with its residual certificate."""
    design.validate()
    da = _DesignArrays.from_flat_batch(design_to_flat(design)[None, :])
    x, res_norm, iters, homotopy, ok = _shoot(da, steps)
    if not ok[0]:
        raise NonconvergenceError(
            "shooting failed to converge", best_residual=float(res_norm[0])
        )
    return _config_from_solution(
        design, da, x[0], steps, res_norm[0], iters[0], homotopy[0]
    )


def solve_equilibrium_batch(
    designs, steps: int = PRODUCTION_STEPS, raise_on_failure: bool = True
):
    """Solve many designs at once (rows of a (D, 15) array or a list of
    DesignVector). Per-design arithmetic matches :func:`solve_equilibrium`
    bitwise. Returns a list of EquilibriumConfig, or, when
    ``raise_on_failure`` is False, a list whose failed entries are None,
    alongside nothing else."""
    if isinstance(designs, np.ndarray):
        flat = np.asarray(designs, dtype=np.float64)
        design_objs = [design_from_flat(row) for row in flat]
    else:
        design_objs = list(designs)
        flat = np.stack([design_to_flat(d) for d in design_objs])
    da = _DesignArrays.from_flat_batch(flat)
    x, res_norm, iters, homotopy, ok = _shoot(da, steps)
    configs = []
    for j, design in enumerate(design_objs):
        if not ok[j]:
            if raise_on_failure:
                raise NonconvergenceError(
                    f"shooting failed to converge for design {j}",
                    best_residual=float(res_norm[j]),
                )
            configs.append(None)
            continue
        da1 = da.take([j])
        configs.append(
            _config_from_solution(
                design, da1, x[j], steps, res_norm[j], iters[j], homotopy[j]
            )
        )
    return configs
