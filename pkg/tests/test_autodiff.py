"""Autodiff engine tests: every op finite-difference-verified at generic
points, plus tape mechanics (accumulation, no_grad, graph freeing)."""

import numpy as np
import pytest

import tdcrop.autodiff as ad
from tdcrop.autodiff import Tensor

RNG_SEED = 20240817


def fd_check(fn, shapes, seed=0, h=1e-6, rtol=1e-6, atol=1e-9, shift=0.0):
    """Compare reverse-mode gradients of scalar-valued ``fn`` against central
    finite differences for every input entry. ``shift`` moves inputs away
    from the origin (e.g. off ReLU kinks)."""
    rng = np.random.default_rng(seed)
    datas = [rng.normal(0.0, 1.0, s) + shift for s in shapes]
    tensors = [Tensor(d.copy(), requires_grad=True) for d in datas]
    out = fn(*tensors)
    assert out.data.size == 1
    out.backward()
    for t, d in zip(tensors, datas):
        assert t.grad is not None
        assert t.grad.shape == d.shape
        flat = d.ravel()
        grad = t.grad.ravel()
        idxs = range(flat.size) if flat.size <= 24 else \
            np.random.default_rng(1).choice(flat.size, 24, replace=False)
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + h
            fp = float(fn(*[Tensor(x) for x in datas]).data)
            flat[i] = keep - h
            fm = float(fn(*[Tensor(x) for x in datas]).data)
            flat[i] = keep
            fd = (fp - fm) / (2.0 * h)
            assert abs(fd - grad[i]) <= atol + rtol * max(abs(fd), abs(grad[i])), (
                f"entry {i}: fd={fd!r} analytic={grad[i]!r}"
            )


class TestElementwiseOps:
    def test_add_gradients(self):
        fd_check(lambda a, b: (ad.add(a, b) ** 2).sum(), [(3, 4), (3, 4)])

    def test_add_broadcast_gradients(self):
        fd_check(lambda a, b: (ad.add(a, b) ** 2).sum(), [(3, 4), (4,)])
        fd_check(lambda a, b: (ad.add(a, b) ** 2).sum(), [(2, 3, 4), (3, 1)])

    def test_mul_gradients(self):
        fd_check(lambda a, b: (ad.mul(a, b) ** 2).sum(), [(3, 4), (3, 4)])
        fd_check(lambda a, b: (ad.mul(a, b) ** 2).sum(), [(2, 3, 4), (4,)])

    def test_power_gradients(self):
        fd_check(lambda a: (a ** 3).sum(), [(3, 4)])
        fd_check(lambda a: ((a ** 2) ** 0.5).sum(), [(5,)], shift=3.0)

    def test_tanh_gradients(self):
        fd_check(lambda a: ad.tanh(a).sum(), [(4, 5)])

    def test_relu_gradients_off_kink(self):
        # shift inputs away from 0 where the subgradient is ambiguous
        fd_check(lambda a: (ad.relu(a) ** 2).sum(), [(4, 5)], shift=2.0)
        fd_check(lambda a: (ad.relu(a) ** 2).sum(), [(4, 5)], shift=-2.0)

    def test_relu_zero_region_gradient_is_zero(self):
        a = Tensor(-np.ones((3, 3)), requires_grad=True)
        ad.relu(a).sum().backward()
        assert np.array_equal(a.grad, np.zeros((3, 3)))

    def test_sqrt_gradients(self):
        fd_check(lambda a: ad.sqrt(a).sum(), [(4, 4)], shift=5.0)

    def test_division_gradients(self):
        fd_check(lambda a, b: (a / b).sum(), [(3, 3), (3, 3)], shift=4.0)


class TestMatmulOps:
    def test_matmul_2d(self):
        fd_check(lambda a, b: (ad.matmul(a, b) ** 2).sum(), [(3, 4), (4, 5)])

    def test_matmul_batched(self):
        fd_check(lambda a, b: (ad.matmul(a, b) ** 2).sum(),
                 [(2, 3, 4), (2, 4, 5)])

    def test_matmul_broadcast_stack(self):
        fd_check(lambda a, b: (ad.matmul(a, b) ** 2).sum(),
                 [(2, 3, 4), (4, 5)])

    def test_affine_tanh_matches_composition(self):
        rng = np.random.default_rng(RNG_SEED)
        x, w, b = rng.normal(0, 1, (6, 3)), rng.normal(0, 1, (3, 4)), rng.normal(0, 1, 4)
        fused = ad.affine_tanh(Tensor(x), Tensor(w), Tensor(b)).data
        plain = np.tanh(x @ w + b)
        assert np.array_equal(fused, plain)

    def test_affine_tanh_gradients(self):
        fd_check(lambda x, w, b: (ad.affine_tanh(x, w, b) ** 2).sum(),
                 [(5, 3), (3, 4), (4,)])

    def test_pointwise_affine_matches_composition(self):
        rng = np.random.default_rng(RNG_SEED)
        base = rng.normal(0, 1, (4, 2, 3))
        x = rng.normal(0, 1, (4, 2, 3))
        w, b = rng.normal(0, 1, 3), rng.normal(0, 1, 3)
        fused = ad.pointwise_affine(Tensor(base), Tensor(x), Tensor(w), Tensor(b)).data
        assert np.allclose(fused, base + x * w + b, rtol=0, atol=1e-15)
        fused_r = ad.pointwise_affine(
            Tensor(base), Tensor(x), Tensor(w), Tensor(b), relu=True
        ).data
        assert np.allclose(fused_r, np.maximum(base + x * w + b, 0.0),
                           rtol=0, atol=1e-15)

    def test_pointwise_affine_gradients(self):
        fd_check(
            lambda s, x, w, b: (ad.pointwise_affine(s, x, w, b) ** 2).sum(),
            [(4, 2, 3), (4, 2, 3), (3,), (3,)],
        )

    def test_pointwise_affine_relu_gradients(self):
        fd_check(
            lambda s, x, w, b:
                (ad.pointwise_affine(s, x, w, b, relu=True) ** 2).sum(),
            [(4, 2, 3), (4, 2, 3), (3,), (3,)],
            shift=1.5,
        )


class TestShapeOps:
    def test_reshape_gradients(self):
        fd_check(lambda a: (ad.reshape(a, (6, 2)) ** 2).sum(), [(3, 4)])

    def test_transpose_gradients(self):
        fd_check(lambda a: (ad.transpose(a, (1, 0, 2)) ** 2).sum(), [(2, 3, 4)])
        fd_check(lambda a: (ad.transpose(a, (2, 0, 1)) ** 2).sum(), [(2, 3, 4)])
        fd_check(lambda a: (ad.transpose(a) ** 2).sum(), [(3, 5)])

    def test_getitem_gradients(self):
        fd_check(lambda a: (a[1:3] ** 2).sum(), [(5, 4)])
        fd_check(lambda a: (a[..., 0] ** 2).sum(), [(5, 4)])

    def test_concat_gradients(self):
        fd_check(lambda a, b: (ad.concat([a, b], axis=0) ** 2).sum(),
                 [(2, 3), (4, 3)])
        fd_check(lambda a, b: (ad.concat([a, b], axis=1) ** 2).sum(),
                 [(3, 2), (3, 5)])

    def test_stack_gradients(self):
        fd_check(lambda a, b: (ad.stack([a, b], axis=-1) ** 2).sum(),
                 [(3, 4), (3, 4)])

    def test_sum_axis_gradients(self):
        fd_check(lambda a: (a.sum(axis=1) ** 2).sum(), [(3, 4)])
        fd_check(lambda a: (a.sum(axis=-1, keepdims=True) ** 2).sum(), [(2, 3, 4)])
        fd_check(lambda a: (a.sum(axis=(0, 2)) ** 2).sum(), [(2, 3, 4)])

    def test_mean_gradients(self):
        fd_check(lambda a: (a.mean(axis=0) ** 2).sum(), [(4, 3)])
        fd_check(lambda a: a.mean() * 1.0, [(7,)])


class TestTapeMechanics:
    def test_gradient_accumulation_on_reuse(self):
        a = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        out = (a * a).sum() + (3.0 * a).sum()  # d/da = 2a + 3
        out.backward()
        assert np.allclose(a.grad, 2.0 * a.data + 3.0)

    def test_backward_requires_scalar(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (a * 2.0).backward()

    def test_no_grad_builds_no_graph(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            out = (a * 2.0).sum()
        assert out._backward is None and out._parents == ()
        assert not out.requires_grad

    def test_no_grad_nests_and_restores(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            with ad.no_grad():
                pass
            inner = a * 1.0
        outer = (a * 1.0).sum()
        assert not inner.requires_grad
        assert outer.requires_grad

    def test_constants_receive_no_gradient(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        c = Tensor(np.ones((2, 2)))  # constant
        (ad.matmul(a, c) ** 2).sum().backward()
        assert a.grad is not None
        assert c.grad is None

    def test_zero_grad_resets(self):
        a = Tensor(np.ones(2), requires_grad=True)
        (a * a).sum().backward()
        assert a.grad is not None
        a.zero_grad()
        assert a.grad is None

    def test_detach_cuts_graph(self):
        a = Tensor(np.array([3.0]), requires_grad=True)
        d = (a * 2.0).detach()
        assert not d.requires_grad

    def test_graph_freed_after_backward(self):
        a = Tensor(np.ones(2), requires_grad=True)
        mid = a * 2.0
        mid.sum().backward()
        assert mid._backward is None and mid._parents == ()

    def test_broadcast_gradient_shapes(self):
        a = Tensor(np.ones((3, 1, 4)), requires_grad=True)
        b = Tensor(np.ones((5, 4)), requires_grad=True)
        (a * b).sum().backward()
        assert a.grad.shape == (3, 1, 4)
        assert b.grad.shape == (5, 4)
        assert np.allclose(a.grad, 5.0)
        assert np.allclose(b.grad, 3.0)

    def test_float64_everywhere(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float64
        assert (t * 2).data.dtype == np.float64

    def test_chained_ops_deterministic(self):
        rng = np.random.default_rng(5)
        x = rng.normal(0, 1, (8, 8))

        def run():
            t = Tensor(x, requires_grad=True)
            out = ad.tanh(ad.matmul(t, t.transpose())).sum()
            out.backward()
            return out.data.copy(), t.grad.copy()

        v1, g1 = run()
        v2, g2 = run()
        assert np.array_equal(v1, v2)
        assert np.array_equal(g1, g2)
