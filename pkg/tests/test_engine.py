"""Autodiff engine oracles: finite differences, op algebra, optimizers."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graspkit.engine import (Adam, SGD, ShapeError, Tensor, concat, grad_check,
                             sinusoidal_embed, stack, zeros)


def fd_check(build_loss, params, h=1e-6):
    """Central finite differences against .backward for a list of Tensors."""
    loss = build_loss()
    loss.backward()
    worst = 0.0
    for p in params:
        g = p.grad.copy()
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            hi = build_loss().item()
            flat[i] = old - h
            lo = build_loss().item()
            flat[i] = old
            num = (hi - lo) / (2 * h)
            err = abs(g.reshape(-1)[i] - num) / max(1e-8, abs(num))
            worst = max(worst, err)
        p.zero_grad()
    return worst


class TestForwardOps:
    def test_add(self):
        out = Tensor([1.0, 2.0]) + Tensor([3.0, 4.0])
        assert np.allclose(out.data, [4.0, 6.0])

    def test_matmul_identity(self, rng):
        a = rng.standard_normal((3, 5))
        out = Tensor(np.eye(3)) @ Tensor(a)
        assert np.allclose(out.data, a)

    def test_softmax_uniform(self):
        out = Tensor([0.0, 0.0, 0.0]).softmax()
        assert np.allclose(out.data, [1 / 3] * 3)

    def test_softmax_rows_sum_to_one(self, rng):
        x = Tensor(rng.standard_normal((6, 9)))
        s = x.softmax(axis=-1).data.sum(axis=-1)
        assert np.all(np.abs(s - 1.0) <= 1e-12)

    def test_layernorm_moments(self, rng):
        x = Tensor(rng.standard_normal((5, 16)) * 3 + 2)
        y = x.layernorm().data
        assert np.all(np.abs(y.mean(axis=-1)) <= 1e-9)
        assert np.all(np.abs(y.var(axis=-1) - 1.0) <= 1e-6)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    def test_nonfinite_rejected(self):
        with pytest.raises(FloatingPointError):
            Tensor([1.0, np.inf]) + Tensor([1.0, 1.0])

    def test_forward_determinism(self, rng):
        x = rng.standard_normal((4, 4))
        a = (Tensor(x).sigmoid() @ Tensor(x)).softmax().data
        b = (Tensor(x).sigmoid() @ Tensor(x)).softmax().data
        assert np.array_equal(a, b)


class TestBackward:
    def test_quadratic_analytic(self):
        w = Tensor([1.0, -2.0], requires_grad=True)
        (w * w).sum().backward()
        assert np.allclose(w.grad, [2.0, -4.0])

    def test_sigmoid_at_zero(self):
        x = Tensor([0.0], requires_grad=True)
        (x.sigmoid() * 3.0).sum().backward()
        assert abs(x.grad[0] - 0.25 * 3.0) <= 1e-9

    def test_nonscalar_loss_rejected(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError):
            (w * w).backward()

    @pytest.mark.parametrize("seed", range(20))
    def test_all_op_kinds_match_fd(self, seed):
        rng = np.random.default_rng(seed)
        w = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        v = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(3), requires_grad=True)

        def build():
            h = (w @ v + b).relu()
            h = concat([h.sigmoid(), h.tanh()], axis=-1)
            h = h.layernorm()
            pooled, _ = h.maxpool_over_points(axis=-2)
            s = (h.softmax(axis=-1) * h).sum(axis=-1)
            return (pooled * pooled).sum() + s.mean() + \
                (w.exp().log()[:2, :3] * 0.5).sum() + \
                (v * v).sqrt().sum() * 0.1 + w.sin().sum() * 0.01 + \
                v.cos().sum() * 0.01

        assert fd_check(build, [w, v, b]) <= 1e-4

    def test_grad_check_helper_quadratic(self):
        w = Tensor([0.3, -1.2], requires_grad=True)
        assert grad_check(lambda: (w * w).sum(), [w]) <= 1e-6

    def test_grad_check_two_layer_mlp(self):
        from graspkit.nn import MLP
        rng = np.random.default_rng(0)
        mlp = MLP([5, 8, 2], rng)
        x = Tensor(rng.standard_normal(5))
        err = grad_check(lambda: (mlp(x) * mlp(x)).sum(), mlp.params())
        assert err <= 1e-4

    def test_stack_and_getitem_grads(self, rng):
        a = Tensor(rng.standard_normal(4), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)

        def build():
            s = stack([a, b], axis=0)
            return (s[0] * s[1]).sum() + (s[:, 1:3] ** 2).sum()

        assert fd_check(build, [a, b]) <= 1e-4


class TestOptimizers:
    def test_sgd_one_step(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([2.0])
        SGD([p], lr=0.1).step()
        assert np.allclose(p.data, [0.8])

    def test_adam_first_step_magnitude(self, rng):
        p = Tensor(rng.standard_normal(8), requires_grad=True)
        g = rng.standard_normal(8)
        p.grad = g.copy()
        before = p.data.copy()
        Adam([p], lr=0.01).step()
        delta = p.data - before
        assert np.all(np.sign(delta) == -np.sign(g))
        assert np.all(np.abs(delta) <= 0.01 * (1 + 1e-6))

    def test_zero_grad_no_update(self):
        p = Tensor([3.0], requires_grad=True)
        p.grad = np.array([0.0])
        Adam([p], lr=0.5).step()
        assert np.allclose(p.data, [3.0])

    def test_grads_cleared_after_step(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([1.0])
        SGD([p], lr=0.1).step()
        assert p.grad is None


class TestSinusoidalEmbed:
    def test_shape_and_range(self):
        e = sinusoidal_embed(7, 16)
        assert e.data.shape == (16,)
        assert np.all(np.abs(e.data) <= 1.0)

    def test_distinct_timesteps(self):
        assert not np.allclose(sinusoidal_embed(1, 16).data,
                               sinusoidal_embed(2, 16).data)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12))
def test_softmax_simplex_property(xs):
    s = Tensor(np.array(xs)).softmax().data
    assert abs(s.sum() - 1.0) <= 1e-12
    assert np.all(s >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_add_mul_match_numpy(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 3, 4))
    out = (Tensor(a) * Tensor(b) + Tensor(a)).data
    assert np.allclose(out, a * b + a, atol=0)


def test_zeros_helper():
    z = zeros((2, 3), requires_grad=True)
    assert z.data.shape == (2, 3) and z.requires_grad
