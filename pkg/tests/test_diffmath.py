import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuclick.diffmath import (
    Rng,
    Tensor,
    binary_cross_entropy,
    check_gradients,
    gru_cell,
    gumbel_sigmoid,
    init_gru,
    multi_head_attention,
    init_attention,
    numeric_grad,
    ops,
    parameter,
    relative_error,
)
from neuclick.errors import ConfigurationError, DimensionError, EmptyBatchError, NumericError

PRIMITIVE_TOL = 1e-6


def _p(rng, *shape, scale=1.0):
    return parameter(rng.normal(0, scale, shape))


def _fd_check(loss_fn, params, tol=PRIMITIVE_TOL):
    errs = check_gradients(loss_fn, params)
    assert max(errs.values()) < tol, errs


class TestTensorBasics:
    def test_shape_matches_values(self):
        t = Tensor(np.arange(6.0).reshape(2, 3))
        assert int(np.prod(t.shape)) == t.data.size

    def test_grad_only_on_requiring_path(self):
        a = parameter([1.0, 2.0])
        b = Tensor([3.0, 4.0])
        (a * b).sum().backward()
        np.testing.assert_array_equal(a.grad, [3.0, 4.0])
        assert b.grad is None

    def test_repeated_backward_accumulates(self):
        a = parameter([1.0, -2.0])
        loss = (a * a).sum()
        loss.backward()
        loss.backward()
        np.testing.assert_allclose(a.grad, 2 * 2 * a.data)

    def test_nonfinite_forward_raises(self):
        with pytest.raises(NumericError):
            ops.log(Tensor([0.0, 1.0]))

    def test_broadcast_mismatch_raises(self):
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


class TestPrimitiveGradients:
    """Every primitive against central differences at 1e-6 relative error."""

    rng = np.random.default_rng(0)

    def test_arithmetic(self):
        a, b = _p(self.rng, 3, 4), _p(self.rng, 4)
        c = parameter(self.rng.uniform(1.0, 2.0, (3, 1)))
        _fd_check(lambda: ((a + b) * a - b / c).sum(), {"a": a, "b": b, "c": c})

    def test_matmul_batched(self):
        a, b = _p(self.rng, 2, 3, 4), _p(self.rng, 4, 5)
        _fd_check(lambda: ops.tanh(a @ b).sum(), {"a": a, "b": b})

    @pytest.mark.parametrize("fn", [ops.sigmoid, ops.tanh, ops.exp, ops.gelu, ops.square])
    def test_unary(self, fn):
        a = _p(self.rng, 3, 5)
        w = self.rng.normal(size=(3, 5))
        _fd_check(lambda: (fn(a) * w).sum(), {"a": a})

    def test_log(self):
        a = parameter(self.rng.uniform(0.5, 2.0, (4,)))
        _fd_check(lambda: ops.log(a).sum(), {"a": a})

    def test_softmax_with_mask(self):
        a = _p(self.rng, 3, 5)
        mask = self.rng.random((3, 5)) > 0.3
        mask[0] = False
        w = self.rng.normal(size=(3, 5))
        _fd_check(lambda: (ops.masked_softmax(a, mask) * w).sum(), {"a": a})

    def test_log_softmax_with_mask(self):
        a = _p(self.rng, 3, 5)
        mask = self.rng.random((3, 5)) > 0.3
        mask[:, 0] = True
        w = self.rng.normal(size=(3, 5))
        _fd_check(lambda: (ops.masked_log_softmax(a, mask) * w).sum(), {"a": a})

    def test_layer_norm(self):
        a, g, b = _p(self.rng, 4, 6), _p(self.rng, 6), _p(self.rng, 6)
        w = self.rng.normal(size=(4, 6))
        _fd_check(lambda: (ops.layer_norm(a, g, b) * w).sum(), {"a": a, "g": g, "b": b})

    def test_embedding_lookup(self):
        table = _p(self.rng, 5, 3)
        ids = np.array([[0, 2, 2], [4, -1, 1]])
        w = self.rng.normal(size=(2, 3, 3))
        _fd_check(lambda: (ops.embedding_lookup(table, ids) * w).sum(), {"t": table})

    def test_concat_stack_index_mean(self):
        a, b = _p(self.rng, 2, 3), _p(self.rng, 2, 2)
        w = self.rng.normal(size=(2, 5))

        def loss():
            c = ops.concat([a, b], axis=1)
            s = ops.stack([c, c * c], axis=0)
            return (s[1] * w).sum() + ops.mean(c, axis=0).sum() + ops.transpose(s, (2, 1, 0))[0].sum()

        _fd_check(loss, {"a": a, "b": b})

    def test_where_and_masked_mean(self):
        a, b = _p(self.rng, 3, 4), _p(self.rng, 3, 4)
        cond = self.rng.random((3, 4)) > 0.5
        mask = self.rng.random((3, 4)) > 0.4
        _fd_check(lambda: (ops.where(cond, a, b * b) + 1).sum() + ops.masked_mean(a, mask, 1).sum(),
                  {"a": a, "b": b})


class TestPrimitiveValues:
    def test_softmax_equal_logits_uniform(self):
        out = ops.masked_softmax(Tensor(np.full((2, 4), 3.7)))
        np.testing.assert_allclose(out.data, 0.25)

    def test_softmax_fully_masked_row_zero(self):
        out = ops.masked_softmax(Tensor(np.ones((2, 3))), np.array([[True, True, False], [False] * 3]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5, 0.0], [0.0, 0.0, 0.0]])

    def test_layer_norm_constant_row(self):
        out = ops.layer_norm(Tensor(np.full((2, 5), 4.2)))
        np.testing.assert_array_equal(out.data, 0.0)


class TestGRUCell:
    def test_zero_params_halves_hidden(self):
        params = {}
        init_gru(params, "gru", 3, 4, Rng(0))
        for p in params.values():
            p.data[...] = 0.0
        h = np.array([[1.0, -2.0, 0.5, 3.0]])
        out = gru_cell(Tensor(np.ones((1, 3))), Tensor(h), params)
        np.testing.assert_allclose(out.data, 0.5 * h)

    def test_scalar_hand_evaluation(self):
        params = {
            "gru.w_ih": parameter([[0.3, -0.4, 0.7]]),
            "gru.w_hh": parameter([[0.2, 0.5, -0.6]]),
            "gru.b_ih": parameter([0.1, -0.1, 0.05]),
            "gru.b_hh": parameter([-0.2, 0.3, 0.15]),
        }
        x, h = 0.8, -0.5
        sig = lambda v: 1 / (1 + math.exp(-v))  # noqa: E731
        r = sig(0.3 * x + 0.1 + 0.2 * h - 0.2)
        z = sig(-0.4 * x - 0.1 + 0.5 * h + 0.3)
        n = math.tanh(0.7 * x + 0.05 + r * (-0.6 * h + 0.15))
        expected = (1 - z) * n + z * h
        out = gru_cell(Tensor([[x]]), Tensor([[h]]), params)
        assert out.data[0, 0] == pytest.approx(expected, abs=1e-14)

    def test_gradient_vs_finite_differences(self):
        rng = Rng(3)
        params = {}
        init_gru(params, "gru", 3, 4, rng)
        x = parameter(rng.normal(size=(2, 3)))
        h = parameter(rng.normal(size=(2, 4)))
        allp = dict(params, x=x, h=h)
        _fd_check(lambda: gru_cell(x, h, params).sum(), allp)

    def test_dimension_error_names_axis(self):
        params = {}
        init_gru(params, "gru", 3, 4, Rng(0))
        with pytest.raises(DimensionError, match="axis 1"):
            gru_cell(Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 4))), params)
        with pytest.raises(DimensionError, match="axis 0"):
            gru_cell(Tensor(np.zeros((3, 3))), Tensor(np.zeros((2, 4))), params)


class TestAttention:
    def test_identical_keys_average_values(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(2, 4, 6))
        k = np.broadcast_to(rng.normal(size=(1, 1, 6)), (2, 4, 6)).copy()
        v = rng.normal(size=(2, 4, 6))
        out = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), np.ones((4, 4), bool), heads=2)
        np.testing.assert_allclose(out.data, np.broadcast_to(v.mean(axis=1, keepdims=True), v.shape), atol=1e-12)

    def test_causal_mask_blocks_future(self):
        rng = Rng(2)
        params = {}
        init_attention(params, "attn", 4, rng)
        x = rng.normal(size=(1, 5, 4))
        causal = np.tril(np.ones((5, 5), bool))
        base = multi_head_attention(Tensor(x), Tensor(x), Tensor(x), causal, 2, params).data
        x2 = x.copy()
        x2[0, 1:] += rng.normal(size=(4, 4))
        pert = multi_head_attention(Tensor(x2), Tensor(x2), Tensor(x2), causal, 2, params).data
        np.testing.assert_array_equal(base[0, 0], pert[0, 0])
        assert not np.allclose(base[0, 1:], pert[0, 1:])

    def test_fully_masked_row_returns_zero(self):
        rng = Rng(2)
        params = {}
        init_attention(params, "attn", 4, rng)
        x = Tensor(rng.normal(size=(1, 3, 4)))
        mask = np.ones((3, 3), bool)
        mask[2] = False
        out = multi_head_attention(x, x, x, mask, 2, params)
        np.testing.assert_array_equal(out.data[0, 2], 0.0)

    def test_gradient_vs_finite_differences(self):
        rng = Rng(4)
        params = {}
        init_attention(params, "attn", 4, rng)
        x = parameter(rng.normal(size=(2, 3, 4)))
        mask = np.array([[[1, 1, 0], [1, 1, 1], [0, 0, 1]], [[1, 0, 0], [1, 1, 0], [1, 1, 1]]], bool)
        w = rng.normal(size=(2, 3, 4))
        _fd_check(lambda: (multi_head_attention(x, x, x, mask, 2, params) * w).sum(), dict(params, x=x))

    def test_heads_must_divide_width(self):
        x = Tensor(np.zeros((1, 2, 5)))
        with pytest.raises(ConfigurationError):
            multi_head_attention(x, x, x, np.ones((2, 2), bool), heads=2)


class TestGumbelSigmoid:
    def test_zero_logit_symmetric(self):
        _, hard = gumbel_sigmoid(Tensor(np.zeros(10_000)), 1.0, Rng(5))
        assert abs(hard.data.mean() - 0.5) <= 0.02

    def test_saturation(self):
        _, hard = gumbel_sigmoid(Tensor(np.full(1000, 1e6)), 0.5, Rng(6))
        assert (hard.data == 1.0).all()

    @pytest.mark.parametrize("logit", [-1.0, 0.5, 2.0])
    def test_hard_mean_is_logistic(self, logit):
        _, hard = gumbel_sigmoid(Tensor(np.full(100_000, logit)), 0.7, Rng(7))
        assert abs(hard.data.mean() - 1 / (1 + math.exp(-logit))) < 0.01

    def test_straight_through_gradient_is_soft_gradient(self):
        logit = parameter(np.array([0.3, -1.2, 2.0]))
        soft, hard = gumbel_sigmoid(logit, 0.8, Rng(8))
        hard.sum().backward()
        g_hard = logit.grad.copy()
        logit.grad = None
        soft2, _ = gumbel_sigmoid(logit, 0.8, Rng(8))
        soft2.sum().backward()
        np.testing.assert_array_equal(g_hard, logit.grad)
        assert set(np.unique(hard.data)) <= {0.0, 1.0}

    def test_soft_gradient_vs_finite_differences(self):
        logit = parameter(np.array([0.3, -1.2, 2.0]))
        _fd_check(lambda: gumbel_sigmoid(logit, 0.8, Rng(9))[0].sum(), {"l": logit})

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_nonpositive_temperature(self, tau):
        with pytest.raises(ConfigurationError):
            gumbel_sigmoid(Tensor([0.0]), tau, Rng(0))


class TestBinaryCrossEntropy:
    def test_half_probability(self):
        assert binary_cross_entropy(Tensor([0.5]), [1.0]).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_perfect_prediction_near_zero(self):
        y = np.array([0.0, 1.0, 1.0, 0.0])
        assert binary_cross_entropy(Tensor(y), y).item() <= 1e-6

    def test_mixed_batch_hand_computed(self):
        p = np.array([[0.2, 0.9, 0.6], [0.7, 0.1, 0.5]])
        y = np.array([[0, 1, 1], [1, 0, 1]], float)
        mask = np.array([[1, 1, 1], [1, 1, 0]], bool)
        terms = [-(math.log(p[i, j]) if y[i, j] else math.log(1 - p[i, j]))
                 for i in range(2) for j in range(3) if mask[i, j]]
        assert binary_cross_entropy(Tensor(p), y, mask).item() == pytest.approx(sum(terms) / len(terms), abs=1e-12)

    def test_all_masked_raises(self):
        with pytest.raises(EmptyBatchError):
            binary_cross_entropy(Tensor([0.5, 0.5]), [1, 0], np.zeros(2, bool))

    def test_gradient(self):
        rng = np.random.default_rng(3)
        p = parameter(rng.uniform(0.1, 0.9, (3, 4)))
        y = (rng.random((3, 4)) > 0.5).astype(float)
        mask = rng.random((3, 4)) > 0.2
        _fd_check(lambda: binary_cross_entropy(p, y, mask), {"p": p})


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rng_determinism(seed):
    a, b = Rng(seed), Rng(seed)
    np.testing.assert_array_equal(a.normal(size=5), b.normal(size=5))
    np.testing.assert_array_equal(a.gumbel(3), b.gumbel(3))
    np.testing.assert_array_equal(a.child("x").uniform(size=2), b.child("x").uniform(size=2))


def test_relative_error_helper():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    t = parameter([2.0])
    np.testing.assert_allclose(numeric_grad(lambda: (t * t * t).sum(), t), [12.0], rtol=1e-8)
