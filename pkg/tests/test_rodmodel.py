"""Rod-model unit tests.

Golden values marked "fine-grid reference" were computed with an independent
implementation of the same physics integrated at 2048 RK4 steps and verified
to residual norms below 1e-12; they are frozen here as regression anchors.
"""

import numpy as np
import pytest

from tdcrop import rodmodel as rm
from tdcrop.errors import (
    InputDomainError,
    IntegrationBlowupError,
)

# Fine-grid reference solutions (steps=2048, shooting tolerance 1e-10).
GOLDENS = {
    "single_straight": dict(
        flat=[0.01, 0.01, 0.01, 0.01, 0.0, 0.0, 0.0, 0.0,
              5.0, 0.0, 0.0, 0.0, 0.001, 0.2, 30e9],
        tip=[4.18058456367738362e-02, 0.0, 1.94039331675801341e-01],
    ),
    "helical_pair": dict(
        flat=[0.012, 0.008, 0.015, 0.01, 4.0, -2.0, 1.0, 0.0,
              3.0, 1.5, 0.0, 2.0, 0.0012, 0.25, 80e9],
        tip=[8.40250019784092271e-03, 7.45504040582677975e-04,
             2.49806170802960026e-01],
    ),
    "soft_strong": dict(
        flat=[0.02, 0.005, 0.01, 0.015, 0.5, 6.0, -6.0, 2.0,
              5.0, 4.0, 3.0, 1.0, 0.0006, 0.3, 50e9],
        tip=[8.37506227265952669e-02, 3.72039856221053622e-02,
             -4.51309143257752829e-02],
    ),
    "short_mixed": dict(
        flat=[0.006, 0.009, 0.014, 0.018, -8.0, 3.0, 0.0, 9.0,
              0.5, 2.5, 4.5, 1.0, 0.002, 0.1, 210e9],
        tip=[-1.08534195141521202e-04, 9.37855913676108227e-06,
             9.99996001233997012e-02],
    ),
}


def table1_design(rng):
    """Random design drawn from the production sampling ranges."""
    return rm.DesignVector(
        tendon_offsets=rng.uniform(0.005, 0.01, 4),
        tendon_pitches=rng.uniform(-20.0, 20.0, 4),
        tendon_tensions=rng.uniform(0.0, 5.0, 4),
        backbone_radius=rng.uniform(0.0005, 0.0015),
        backbone_length=rng.uniform(0.1, 0.35),
        youngs_modulus=rng.uniform(15.5e9, 45.5e9),
    )


def local_strains(state, design):
    sm = rm.stiffness_from_material(design.youngs_modulus, design.backbone_radius)
    nu = (state.R.T @ state.n) / np.diag(sm.K_s)
    nu[2] += 1.0
    kap = (state.R.T @ state.m) / np.diag(sm.K_b)
    return nu, kap


def tendon_tangent(state, design, i):
    """World tangent of tendon i at the state's arclength, from first
    principles (constitutive inversion + tendon geometry)."""
    nu, kap = local_strains(state, design)
    s = min(state.s, design.backbone_length)
    a = rm.tendon_offset_vector(design, i, s)
    psi = 2.0 * np.pi * (i - 1) / 4.0
    th = psi + design.tendon_pitches[i - 1] * s
    rho = design.tendon_offsets[i - 1]
    ap = rho * design.tendon_pitches[i - 1] * np.array([-np.sin(th), np.cos(th), 0.0])
    w = nu + np.cross(kap, a) + ap
    return state.R @ (w / np.linalg.norm(w))


class TestDesignVector:
    def test_flat_roundtrip(self):
        rng = np.random.default_rng(0)
        d = table1_design(rng)
        flat = rm.design_to_flat(d)
        assert flat.shape == (15,)
        d2 = rm.design_from_flat(flat)
        assert np.array_equal(rm.design_to_flat(d2), flat)

    def test_layout(self):
        d = rm.DesignVector([1, 2, 3, 4], [5, 6, 7, 8], [9, 10, 11, 12], 13, 14, 15)
        assert np.array_equal(rm.design_to_flat(d), np.arange(1.0, 16.0))

    @pytest.mark.parametrize(
        "kw",
        [
            dict(tendon_offsets=[0.0, 0.01, 0.01, 0.01]),
            dict(tendon_tensions=[-1.0, 0, 0, 0]),
            dict(backbone_radius=0.0),
            dict(backbone_length=-0.1),
            dict(youngs_modulus=0.0),
            dict(tendon_pitches=[np.nan, 0, 0, 0]),
            dict(tendon_offsets=[0.01, 0.01, 0.01]),
        ],
    )
    def test_validation_errors(self, kw):
        base = dict(
            tendon_offsets=[0.01] * 4,
            tendon_pitches=[0.0] * 4,
            tendon_tensions=[1.0] * 4,
            backbone_radius=0.001,
            backbone_length=0.2,
            youngs_modulus=30e9,
        )
        base.update(kw)
        with pytest.raises(InputDomainError):
            rm.DesignVector(**base)

    def test_from_flat_shape_error(self):
        with pytest.raises(InputDomainError):
            rm.design_from_flat(np.zeros(14))


class TestStiffness:
    def test_hand_values(self):
        sm = rm.stiffness_from_material(30e9, 0.001, 0.3)
        area = np.pi * 1e-6
        inertia = np.pi * 1e-12 / 4.0
        assert sm.K_s[2, 2] == pytest.approx(30e9 * area, rel=1e-12)
        assert sm.K_s[2, 2] == pytest.approx(9.4248e4, rel=1e-4)
        assert sm.K_b[0, 0] == pytest.approx(30e9 * inertia, rel=1e-12)
        assert sm.K_b[0, 0] == pytest.approx(2.3562e-2, rel=1e-4)

    def test_structure(self):
        sm = rm.stiffness_from_material(2.0, 0.37, 0.0)
        # G = E/2 when poisson = 0; J = 2I for a circular section.
        assert sm.K_s[0, 0] == pytest.approx(sm.K_s[2, 2] / 2.0, rel=1e-14)
        assert sm.K_s[0, 0] == sm.K_s[1, 1]
        assert sm.K_b[0, 0] == sm.K_b[1, 1]
        assert sm.K_b[2, 2] == pytest.approx(sm.K_b[0, 0], rel=1e-14)
        assert np.all(np.diag(sm.K_s) > 0) and np.all(np.diag(sm.K_b) > 0)
        assert np.count_nonzero(sm.K_s - np.diag(np.diag(sm.K_s))) == 0
        assert np.count_nonzero(sm.K_b - np.diag(np.diag(sm.K_b))) == 0

    def test_domain_errors(self):
        with pytest.raises(InputDomainError):
            rm.stiffness_from_material(-1.0, 0.001)
        with pytest.raises(InputDomainError):
            rm.stiffness_from_material(30e9, 0.0)
        with pytest.raises(InputDomainError):
            rm.stiffness_from_material(30e9, 0.001, poisson=0.5)


class TestTendonOffset:
    def setup_method(self):
        self.d = rm.DesignVector(
            [0.01, 0.01, 0.01, 0.008],
            [0.0, 0.0, 0.0, 10.0],
            [0.0] * 4,
            0.001,
            0.2,
            30e9,
        )

    def test_zero_pitch_base_angles(self):
        assert np.allclose(
            rm.tendon_offset_vector(self.d, 1, 0.2), [0.01, 0.0, 0.0], atol=1e-15
        )
        assert np.allclose(
            rm.tendon_offset_vector(self.d, 2, 0.13), [0.0, 0.01, 0.0], atol=1e-15
        )
        assert np.allclose(
            rm.tendon_offset_vector(self.d, 3, 0.0), [-0.01, 0.0, 0.0], atol=1e-15
        )

    def test_helical_value(self):
        d = rm.DesignVector(
            [0.008] * 4, [10.0] * 4, [0.0] * 4, 0.001, 0.2, 30e9
        )
        v = rm.tendon_offset_vector(d, 1, 0.1)
        assert v == pytest.approx(
            [0.008 * np.cos(1.0), 0.008 * np.sin(1.0), 0.0], abs=1e-12
        )
        assert v[2] == 0.0

    def test_index_and_range_errors(self):
        for i in (0, 5, -1):
            with pytest.raises(InputDomainError):
                rm.tendon_offset_vector(self.d, i, 0.1)
        for s in (-1e-9, 0.2 + 1e-9):
            with pytest.raises(InputDomainError):
                rm.tendon_offset_vector(self.d, 1, s)


class TestOdeRhs:
    def test_unloaded_reference(self):
        d = rm.DesignVector([0.01] * 4, [0.0] * 4, [0.0] * 4, 0.001, 0.2, 30e9)
        st = rm.RodState(np.zeros(3), np.eye(3), np.zeros(3), np.zeros(3), 0.05)
        dr, dR, dn, dm = rm.rod_ode_rhs(st, d)
        assert np.array_equal(dr, [0.0, 0.0, 1.0])
        assert np.count_nonzero(dR) == 0
        assert np.count_nonzero(dn) == 0
        assert np.count_nonzero(dm) == 0

    def test_opposing_tendons_cancel(self):
        d = rm.DesignVector([0.01] * 4, [0.0] * 4, [2.0, 0.0, 2.0, 0.0],
                            0.001, 0.2, 30e9)
        st = rm.RodState(np.zeros(3), np.eye(3), np.zeros(3), np.zeros(3), 0.05)
        dr, dR, dn, dm = rm.rod_ode_rhs(st, d)
        assert np.allclose(dm, 0.0, atol=1e-14)

    def test_matches_fd_of_tendon_force(self):
        # Along a converged solution, dn/ds must equal the negated arclength
        # derivative of the total tendon force sum tau_i t_i(s).
        flat = np.array(GOLDENS["single_straight"]["flat"])
        d = rm.design_from_flat(flat)
        cfg = rm.solve_equilibrium(d)
        base = rm.RodState(
            np.zeros(3), np.eye(3),
            cfg.base_loads[:3].copy(), cfg.base_loads[3:].copy(), 0.0,
        )
        states = rm.integrate_ivp(base, d, 512)
        h = d.backbone_length / 512
        worst = 0.0
        for k in range(1, 512, 37):
            tm = np.array([tendon_tangent(states[k - 1], d, i) for i in range(1, 5)])
            tp = np.array([tendon_tangent(states[k + 1], d, i) for i in range(1, 5)])
            fd = -(d.tendon_tensions[:, None] * (tp - tm)).sum(0) / (2 * h)
            _, _, dn, _ = rm.rod_ode_rhs(states[k], d)
            worst = max(
                worst, np.linalg.norm(dn - fd) / max(np.linalg.norm(fd), 1e-12)
            )
        assert worst < 1e-5

    def test_bad_frame_rejected(self):
        d = rm.DesignVector([0.01] * 4, [0.0] * 4, [1.0] * 4, 0.001, 0.2, 30e9)
        st = rm.RodState(np.zeros(3), np.eye(3) * 1.5, np.zeros(3), np.zeros(3), 0.0)
        with pytest.raises(InputDomainError):
            rm.rod_ode_rhs(st, d)


class TestIntegrateIvp:
    def test_zero_tension_straight(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            d = table1_design(rng)
            d.tendon_tensions = np.zeros(4)
            base = rm.RodState(np.zeros(3), np.eye(3), np.zeros(3), np.zeros(3), 0.0)
            states = rm.integrate_ivp(base, d, 41)
            assert len(states) == 42
            for st in states:
                assert np.allclose(st.r[:2], 0.0, atol=1e-12)
                assert st.r[2] == pytest.approx(st.s, abs=1e-12)
                assert np.allclose(st.R, np.eye(3), atol=1e-12)

    def test_rk4_order(self):
        flat = np.array(GOLDENS["helical_pair"]["flat"])
        d = rm.design_from_flat(flat)
        cfg = rm.solve_equilibrium(d)
        base = rm.RodState(
            np.zeros(3), np.eye(3),
            cfg.base_loads[:3].copy(), cfg.base_loads[3:].copy(), 0.0,
        )
        tips = [rm.integrate_ivp(base, d, n)[-1].r for n in (41, 82, 164)]
        ratio = np.linalg.norm(tips[0] - tips[1]) / np.linalg.norm(tips[1] - tips[2])
        order = np.log2(ratio)
        assert 3.5 <= order <= 4.5

    def test_base_validation(self):
        d = rm.DesignVector([0.01] * 4, [0.0] * 4, [1.0] * 4, 0.001, 0.2, 30e9)
        good = rm.RodState(np.zeros(3), np.eye(3), np.zeros(3), np.zeros(3), 0.0)
        with pytest.raises(InputDomainError):
            rm.integrate_ivp(good, d, 40)
        bad_r = rm.RodState(np.ones(3), np.eye(3), np.zeros(3), np.zeros(3), 0.0)
        with pytest.raises(InputDomainError):
            rm.integrate_ivp(bad_r, d, 41)
        bad_R = rm.RodState(np.zeros(3), np.eye(3) * 2, np.zeros(3), np.zeros(3), 0.0)
        with pytest.raises(InputDomainError):
            rm.integrate_ivp(bad_R, d, 41)

    def test_blowup_carries_arclength(self):
        d = rm.DesignVector([0.01] * 4, [0.0] * 4, [1.0] * 4, 0.001, 0.2, 30e9)
        base = rm.RodState(
            np.zeros(3), np.eye(3), np.zeros(3), np.array([1e20, 0.0, 0.0]), 0.0
        )
        with pytest.raises(IntegrationBlowupError) as exc:
            rm.integrate_ivp(base, d, 41)
        assert 0.0 <= exc.value.s <= d.backbone_length


class TestTipResidual:
    def test_zero_everything(self):
        d = rm.DesignVector([0.01] * 4, [0.0] * 4, [0.0] * 4, 0.001, 0.2, 30e9)
        res = rm.tip_residual(np.zeros(6), d)
        assert np.array_equal(res, np.zeros(6))

    def test_unloaded_transmits_base_force(self):
        d = rm.DesignVector([0.01] * 4, [0.0] * 4, [0.0] * 4, 0.001, 0.2, 30e9)
        eps = 1e-3
        res = rm.tip_residual(np.array([0, 0, eps, 0, 0, 0.0]), d)
        assert np.array_equal(res[:3], [0.0, 0.0, eps])
        assert np.array_equal(res[3:], np.zeros(3))

    def test_zero_at_solution(self):
        for name in ("helical_pair", "short_mixed"):
            d = rm.design_from_flat(np.array(GOLDENS[name]["flat"]))
            cfg = rm.solve_equilibrium(d)
            res = rm.tip_residual(cfg.base_loads, d)
            assert np.linalg.norm(res) < 1e-8
            assert np.linalg.norm(res) == pytest.approx(
                cfg.residual_norm, rel=1e-6, abs=1e-12
            )


class TestSolveEquilibrium:
    def test_zero_tension_straight(self):
        rng = np.random.default_rng(11)
        d = table1_design(rng)
        d.tendon_tensions = np.zeros(4)
        cfg = rm.solve_equilibrium(d)
        assert np.allclose(cfg.backbone[:, :2], 0.0, atol=1e-12)
        assert np.allclose(cfg.backbone[:, 2], cfg.arclengths, atol=1e-12)
        assert np.allclose(cfg.frames, np.eye(3)[None], atol=1e-12)

    def test_golden_tips(self):
        for name, g in GOLDENS.items():
            d = rm.design_from_flat(np.array(g["flat"]))
            cfg = rm.solve_equilibrium(d)
            err = np.linalg.norm(cfg.backbone[-1] - np.array(g["tip"]))
            assert err < 1e-4 * d.backbone_length, name
            assert cfg.residual_norm < 1e-8

    def test_config_invariants(self):
        d = rm.design_from_flat(np.array(GOLDENS["soft_strong"]["flat"]))
        cfg = rm.solve_equilibrium(d)
        n = cfg.arclengths.shape[0]
        assert n == 42
        assert cfg.arclengths[0] == 0.0
        assert cfg.arclengths[-1] == d.backbone_length
        assert np.all(np.diff(cfg.arclengths) > 0)
        hs = np.diff(cfg.arclengths)
        assert np.allclose(hs, hs[0], rtol=1e-12)
        for R in cfg.frames:
            assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-10
            assert np.linalg.det(R) > 0
        # tendon curves are exactly backbone + frame * offset
        for i in range(1, 5):
            for k in (0, 17, 41):
                off = rm.tendon_offset_vector(d, i, float(cfg.arclengths[k]))
                expect = cfg.backbone[k] + cfg.frames[k] @ off
                assert np.array_equal(cfg.tendon_curves[i - 1, k], expect)

    def test_equivariance_quarter_turn(self):
        # Shifting every tendon parameter one slot is the same robot rotated
        # by 90 degrees about z, so the solution must rotate with it.
        flat = np.array(GOLDENS["helical_pair"]["flat"])
        shifted = flat.copy()
        for lo in (0, 4, 8):
            shifted[lo:lo + 4] = np.roll(flat[lo:lo + 4], 1)
        cfg_a = rm.solve_equilibrium(rm.design_from_flat(flat))
        cfg_b = rm.solve_equilibrium(rm.design_from_flat(shifted))
        Rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        assert np.max(np.abs(cfg_b.backbone - cfg_a.backbone @ Rz.T)) < 1e-8

    def test_equivariance_generic_angle(self):
        # Internal hook: rotating all tendon base angles by delta rotates the
        # whole solution by Rz(delta).
        flat = np.array(GOLDENS["helical_pair"]["flat"])
        da = rm._DesignArrays.from_flat_batch(flat[None])
        x, _, _, _, ok = rm._shoot(da, 41)
        traj = rm._integrate(x, da, 41, keep_traj=True)[:, 0, :]
        delta = 0.7
        da2 = rm._DesignArrays(
            da.rho, da.phi, da.tau, da.r, da.L, da.E, psi=da.psi + delta
        )
        x2, _, _, _, ok2 = rm._shoot(da2, 41)
        traj2 = rm._integrate(x2, da2, 41, keep_traj=True)[:, 0, :]
        assert ok[0] and ok2[0]
        c, s = np.cos(delta), np.sin(delta)
        Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        assert np.max(np.abs(traj2[:, :3] - traj[:, :3] @ Rz.T)) < 1e-8

    def test_single_tendon_planarity(self):
        # Tendon 2 sits on the y axis: bending stays in the y-z plane.
        d = rm.DesignVector(
            [0.01] * 4, [0.0] * 4, [0.0, 4.0, 0.0, 0.0], 0.001, 0.25, 20e9
        )
        cfg = rm.solve_equilibrium(d)
        assert np.max(np.abs(cfg.backbone[:, 0])) < 1e-8 * d.backbone_length

    def test_opposing_tendon_symmetry(self):
        d = rm.DesignVector(
            [0.01] * 4, [0.0] * 4, [3.0, 0.0, 3.0, 0.0], 0.001, 0.2, 20e9
        )
        cfg = rm.solve_equilibrium(d)
        lat = np.max(np.linalg.norm(cfg.backbone[:, :2], axis=1))
        assert lat < 1e-8 * d.backbone_length

    def test_four_equal_tensions_symmetry(self):
        d = rm.DesignVector(
            [0.008] * 4, [0.0] * 4, [2.0] * 4, 0.001, 0.2, 20e9
        )
        cfg = rm.solve_equilibrium(d)
        assert np.linalg.norm(cfg.backbone[-1, :2]) < 1e-8 * d.backbone_length

    def test_monotone_tip_deflection(self):
        defl = []
        for tau in np.linspace(0.0, 5.0, 6):
            d = rm.DesignVector(
                [0.01] * 4, [0.0] * 4, [tau, 0.0, 0.0, 0.0], 0.001, 0.2, 30e9
            )
            cfg = rm.solve_equilibrium(d)
            defl.append(np.linalg.norm(cfg.backbone[-1] - [0, 0, 0.2]))
        assert all(b >= a - 1e-12 for a, b in zip(defl, defl[1:]))

    def test_force_invariant_along_rod(self):
        # Pointwise force balance: n(s) = -sum_i tau_i t_i(s) at every node.
        d = rm.design_from_flat(np.array(GOLDENS["soft_strong"]["flat"]))
        cfg = rm.solve_equilibrium(d)
        base = rm.RodState(
            np.zeros(3), np.eye(3),
            cfg.base_loads[:3].copy(), cfg.base_loads[3:].copy(), 0.0,
        )
        for st in rm.integrate_ivp(base, d, 41):
            tot = np.zeros(3)
            for i in range(1, 5):
                tot += d.tendon_tensions[i - 1] * tendon_tangent(st, d, i)
            assert np.linalg.norm(st.n + tot) < 1e-3


class TestBatchSolving:
    def test_single_vs_batch_bitwise(self):
        rng = np.random.default_rng(42)
        designs = [table1_design(rng) for _ in range(12)]
        flat = np.stack([rm.design_to_flat(d) for d in designs])
        batch = rm.solve_equilibrium_batch(flat)
        for d, cfg_b in zip(designs, batch):
            cfg_1 = rm.solve_equilibrium(d)
            assert np.array_equal(cfg_1.base_loads, cfg_b.base_loads)
            assert np.array_equal(cfg_1.backbone, cfg_b.backbone)
            assert np.array_equal(cfg_1.frames, cfg_b.frames)
            assert np.array_equal(cfg_1.tendon_curves, cfg_b.tendon_curves)
            assert cfg_1.residual_norm == cfg_b.residual_norm
            assert cfg_1.iterations == cfg_b.iterations

    def test_batch_accepts_design_list(self):
        rng = np.random.default_rng(3)
        designs = [table1_design(rng) for _ in range(3)]
        out = rm.solve_equilibrium_batch(designs)
        assert len(out) == 3
        assert all(c.residual_norm < 1e-8 for c in out)
