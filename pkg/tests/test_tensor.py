"""Tensor core: forward values, hand-computed gradients, tape mechanics."""

import numpy as np
import pytest
import scipy.sparse as sp

from mmht.errors import ContractViolation, NumericFault
from mmht.tensor import (
    DTYPE,
    NEG_INF,
    Tensor,
    backward,
    concat,
    gather_rows,
    scatter_rows,
    spmm,
    stack,
)


def leaf(data):
    return Tensor(np.asarray(data, dtype=DTYPE), requires_grad=True)


def numeric_grad(f, x, h=1e-6):
    """Central finite differences of scalar f with respect to array x in place."""
    g = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = g.ravel()
    for i in range(x.size):
        old = flat_x[i]
        flat_x[i] = old + h
        fp = f()
        flat_x[i] = old - h
        fm = f()
        flat_x[i] = old
        flat_g[i] = (fp - fm) / (2.0 * h)
    return g


class TestPointwiseGradients:
    """Each op against its hand-derived derivative at fixed points."""

    def test_square_sum(self):
        x = leaf([3.0, -2.0])
        (x ** 2.0).sum().backward()
        np.testing.assert_allclose(x.grad, [6.0, -4.0])

    def test_log(self):
        x = leaf([2.0, 4.0])
        x.log().sum().backward()
        np.testing.assert_allclose(x.grad, [0.5, 0.25])

    def test_exp(self):
        x = leaf([0.0, 1.0])
        x.exp().sum().backward()
        np.testing.assert_allclose(x.grad, [1.0, np.e])

    def test_tanh_at_zero(self):
        x = leaf([0.0])
        x.tanh().sum().backward()
        np.testing.assert_allclose(x.grad, [1.0])

    def test_sigmoid_at_zero(self):
        x = leaf([0.0])
        x.sigmoid().sum().backward()
        np.testing.assert_allclose(x.grad, [0.25])

    def test_relu_gate(self):
        x = leaf([-1.0, 2.0, 0.0])
        x.relu().sum().backward()
        np.testing.assert_allclose(x.grad, [0.0, 1.0, 0.0])

    def test_leaky_relu_default_slope(self):
        x = leaf([-2.0, 3.0])
        x.leaky_relu().sum().backward()
        np.testing.assert_allclose(x.grad, [0.01, 1.0])

    def test_clamp_kills_gradient_outside_range(self):
        x = leaf([-0.5, 0.5, 1.5])
        y = x.clamp(0.0, 1.0)
        np.testing.assert_allclose(y.data, [0.0, 0.5, 1.0])
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [0.0, 1.0, 0.0])

    def test_division_both_sides(self):
        x = leaf([6.0])
        y = leaf([2.0])
        (x / y).sum().backward()
        np.testing.assert_allclose(x.grad, [0.5])
        np.testing.assert_allclose(y.grad, [-1.5])

    def test_rsub_and_rdiv(self):
        x = leaf([4.0])
        (1.0 - x).sum().backward()
        np.testing.assert_allclose(x.grad, [-1.0])
        y = leaf([4.0])
        (1.0 / y).sum().backward()
        np.testing.assert_allclose(y.grad, [-1.0 / 16.0])

    def test_pow_cubic(self):
        x = leaf([2.0])
        (x ** 3.0).sum().backward()
        np.testing.assert_allclose(x.grad, [12.0])

    def test_numpy_left_operand_defers_to_tensor(self):
        x = leaf([1.0, 2.0])
        y = np.asarray([3.0, 4.0]) + x
        assert isinstance(y, Tensor)
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [1.0, 1.0])


class TestBroadcasting:
    def test_bias_add_sums_over_broadcast_axis(self):
        x = leaf(np.zeros((2, 3)))
        b = leaf(np.zeros(3))
        (x + b).sum().backward()
        np.testing.assert_allclose(b.grad, [2.0, 2.0, 2.0])
        np.testing.assert_allclose(x.grad, np.ones((2, 3)))

    def test_scalar_times_matrix(self):
        s = leaf(2.0)
        x = leaf([[1.0, 2.0], [3.0, 4.0]])
        (s * x).sum().backward()
        np.testing.assert_allclose(s.grad, 10.0)
        np.testing.assert_allclose(x.grad, np.full((2, 2), 2.0))

    def test_keepdims_broadcast_chain(self):
        x = leaf([[1.0, 3.0], [5.0, 7.0]])
        centered = x - x.mean(axis=1, keepdims=True)
        np.testing.assert_allclose(centered.data, [[-1.0, 1.0], [-1.0, 1.0]])
        (centered ** 2.0).sum().backward()
        fresh = np.array([[1.0, 3.0], [5.0, 7.0]])

        def f():
            c = fresh - fresh.mean(axis=1, keepdims=True)
            return float((c ** 2).sum())

        np.testing.assert_allclose(x.grad, numeric_grad(f, fresh), atol=1e-8)


class TestMatmul:
    def test_hand_computed_2x2(self):
        a = leaf([[1.0, 2.0], [3.0, 4.0]])
        b = leaf([[5.0, 6.0], [7.0, 8.0]])
        prod = a @ b
        np.testing.assert_allclose(prod.data, [[19.0, 22.0], [43.0, 50.0]])
        prod.sum().backward()
        np.testing.assert_allclose(a.grad, [[11.0, 15.0], [11.0, 15.0]])
        np.testing.assert_allclose(b.grad, [[4.0, 4.0], [6.0, 6.0]])

    def test_batched_matches_per_item_loop(self):
        rng = np.random.default_rng(7)
        a_data = rng.normal(size=(4, 2, 3))
        b_data = rng.normal(size=(4, 3, 5))
        batched = (leaf(a_data) @ leaf(b_data)).data
        for i in range(4):
            np.testing.assert_allclose(batched[i], a_data[i] @ b_data[i])

    def test_broadcast_batch_gradient(self):
        """A shared right operand accumulates across the batch axis."""
        rng = np.random.default_rng(3)
        a = leaf(rng.normal(size=(4, 2, 3)))
        w = leaf(rng.normal(size=(3, 5)))
        (a @ w).sum().backward()
        expect = sum(a.data[i].T @ np.ones((2, 5)) for i in range(4))
        np.testing.assert_allclose(w.grad, expect)

    def test_vector_operand_rejected(self):
        with pytest.raises(ContractViolation):
            leaf([[1.0, 2.0]]) @ leaf([3.0, 4.0])


class TestReductions:
    def test_sum_axis_gradient(self):
        x = leaf(np.arange(6.0).reshape(2, 3))
        y = x.sum(axis=0)
        np.testing.assert_allclose(y.data, [3.0, 5.0, 7.0])
        (y * np.array([1.0, 10.0, 100.0])).sum().backward()
        np.testing.assert_allclose(x.grad, [[1.0, 10.0, 100.0]] * 2)

    def test_mean_divides_by_count(self):
        x = leaf(np.ones((2, 3)))
        x.mean().backward()
        np.testing.assert_allclose(x.grad, np.full((2, 3), 1.0 / 6.0))

    def test_mean_axis_count(self):
        x = leaf(np.ones((2, 3)))
        x.mean(axis=1).sum().backward()
        np.testing.assert_allclose(x.grad, np.full((2, 3), 1.0 / 3.0))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = leaf(rng.normal(size=(5, 7)))
        p = x.softmax(axis=-1)
        np.testing.assert_allclose(p.data.sum(axis=-1), np.ones(5), atol=1e-12)

    def test_softmax_two_class_gradient(self):
        """d softmax(x)[0] / dx = [p0 (1 - p0), -p0 p1] on a 2-vector."""
        x = leaf([1.0, -0.5])
        p = x.softmax(axis=0)
        p[0].backward()
        p0, p1 = p.data
        np.testing.assert_allclose(x.grad, [p0 * (1 - p0), -p0 * p1], atol=1e-12)

    def test_padded_logits_get_exact_zero(self):
        x = leaf([0.0, NEG_INF, 1.0])
        p = x.softmax(axis=0)
        assert p.data[1] == 0.0
        np.testing.assert_allclose(p.data.sum(), 1.0, atol=1e-15)


class TestStructuralOps:
    def test_reshape_round_trip_gradient(self):
        x = leaf(np.arange(6.0))
        y = x.reshape(2, 3)
        (y * y).sum().backward()
        np.testing.assert_allclose(x.grad, 2.0 * np.arange(6.0))

    def test_swapaxes(self):
        x = leaf(np.arange(6.0).reshape(2, 3))
        y = x.swapaxes(0, 1)
        assert y.shape == (3, 2)
        (y[0] * 5.0).sum().backward()
        np.testing.assert_allclose(x.grad, [[5.0, 0.0, 0.0], [5.0, 0.0, 0.0]])

    def test_getitem_scatters_gradient(self):
        x = leaf(np.zeros(4))
        x[1:3].sum().backward()
        np.testing.assert_allclose(x.grad, [0.0, 1.0, 1.0, 0.0])

    def test_concat_splits_gradient(self):
        a = leaf(np.zeros((2, 2)))
        b = leaf(np.zeros((2, 3)))
        y = concat([a, b], axis=1)
        assert y.shape == (2, 5)
        w = np.arange(10.0).reshape(2, 5)
        (y * w).sum().backward()
        np.testing.assert_allclose(a.grad, w[:, :2])
        np.testing.assert_allclose(b.grad, w[:, 2:])

    def test_stack_adds_axis(self):
        a = leaf([1.0, 2.0])
        b = leaf([3.0, 4.0])
        y = stack([a, b], axis=0)
        np.testing.assert_allclose(y.data, [[1.0, 2.0], [3.0, 4.0]])
        (y[1] * 2.0).sum().backward()
        assert a.grad is None or not a.grad.any()
        np.testing.assert_allclose(b.grad, [2.0, 2.0])

    def test_gather_rows_duplicates_accumulate(self):
        x = leaf([[1.0, 1.0], [2.0, 2.0]])
        y = gather_rows(x, [0, 0, 1])
        assert y.shape == (3, 2)
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [[2.0, 2.0], [1.0, 1.0]])

    def test_scatter_rows_duplicates_add_forward(self):
        v = leaf([[1.0], [10.0], [100.0]])
        y = scatter_rows(v, [0, 0, 2], num_rows=3)
        np.testing.assert_allclose(y.data, [[11.0], [0.0], [100.0]])
        (y * np.array([[1.0], [5.0], [9.0]])).sum().backward()
        np.testing.assert_allclose(v.grad, [[1.0], [1.0], [9.0]])

    def test_spmm_matches_dense(self):
        rng = np.random.default_rng(11)
        dense = rng.normal(size=(4, 3)) * (rng.random(size=(4, 3)) < 0.5)
        mat = sp.csr_matrix(dense)
        x = leaf(rng.normal(size=(3, 2)))
        y = spmm(mat, x)
        np.testing.assert_allclose(y.data, dense @ x.data)
        w = rng.normal(size=(4, 2))
        (y * w).sum().backward()
        np.testing.assert_allclose(x.grad, dense.T @ w)


class TestTapeMechanics:
    def test_reuse_accumulates(self):
        x = leaf([2.0])
        (x * x + x).sum().backward()
        np.testing.assert_allclose(x.grad, [5.0])

    def test_constants_build_no_tape(self):
        a = Tensor([1.0])
        b = Tensor([2.0])
        y = a * b + a
        assert not y.requires_grad
        assert y.parents == ()

    def test_detach_blocks_gradient(self):
        x = leaf([3.0])
        y = x.detach()
        loss = (y * y).sum()
        assert not loss.requires_grad
        assert x.grad is None

    def test_non_scalar_backward_rejected(self):
        x = leaf([1.0, 2.0])
        with pytest.raises(ContractViolation):
            (x * 2.0).backward()

    def test_non_finite_loss_raises(self):
        x = leaf([-1.0])
        with np.errstate(invalid="ignore"):
            bad = x.log().sum()
        with pytest.raises(NumericFault):
            bad.backward()

    def test_module_backward_zeroes_and_fills(self):
        """backward(loss, params) clears stale grads and zero-fills unreachable ones."""
        a = leaf([1.0, 2.0])
        b = leaf([5.0])
        a.grad = np.array([9.0, 9.0])
        grads = backward((a * 3.0).sum(), {"a": a, "b": b})
        np.testing.assert_allclose(grads["a"].data, [3.0, 3.0])
        np.testing.assert_allclose(grads["b"].data, [0.0])

    def test_diamond_graph_single_visit(self):
        """A node feeding two consumers is backpropagated once, with summed adjoints."""
        x = leaf([1.5])
        h = x * 2.0
        loss = (h * h + h * 3.0).sum()
        loss.backward()
        np.testing.assert_allclose(x.grad, [2 * 2.0 * 2.0 * 1.5 + 6.0])


class TestFiniteDifferenceOracle:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_composite_expression(self, seed):
        """Autodiff matches central differences on a smooth composite graph."""
        rng = np.random.default_rng(seed)
        x_data = rng.normal(size=(3, 4))
        w_data = rng.normal(size=(4, 2))

        def build(xv, wv):
            h1 = (xv @ wv).tanh()
            h2 = (h1 * 0.4 + 1.5).log()
            p = h2.softmax(axis=-1)
            return (p * h1.sigmoid()).sum() + (h1.mean(axis=0) ** 2.0).sum()

        x = leaf(x_data.copy())
        w = leaf(w_data.copy())
        build(x, w).backward()

        def f_x():
            return build(Tensor(x_data), Tensor(w_data)).item()

        np.testing.assert_allclose(x.grad, numeric_grad(f_x, x_data), atol=1e-7)
        np.testing.assert_allclose(w.grad, numeric_grad(f_x, w_data), atol=1e-7)
