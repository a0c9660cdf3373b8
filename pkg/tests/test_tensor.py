import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mmstance.tensor as T
from mmstance.tensor import Rng, ShapeError, Tensor


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(a, Tensor(np.eye(2, dtype=np.float32)))
        assert out.data.tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_scalar_product(self):
        out = T.matmul(Tensor([[2.0]]), Tensor([[3.0]]))
        assert out.data.tolist() == [[6.0]]

    def test_matches_triple_loop_oracle(self):
        rng = Rng(5)
        a = rng.normal((3, 4), 1.0, np.float64)
        b = rng.normal((4, 2), 1.0, np.float64)
        expect = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expect[i, j] += a[i, k] * b[k, j]
        got = T.matmul(Tensor(a), Tensor(b)).data
        assert np.abs(got - expect).max() < 1e-6

    def test_identity_associativity_is_exact(self):
        rng = Rng(9)
        a = Tensor(rng.normal((5, 5), 1.0, np.float32))
        b = Tensor(rng.normal((5, 3), 1.0, np.float32))
        eye = Tensor(np.eye(5, dtype=np.float32))
        left = T.matmul(T.matmul(a, eye), b).data
        right = T.matmul(a, b).data
        assert np.array_equal(left, right)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_flows_to_both_operands(self):
        a = t64([[1.0, 2.0]], requires_grad=True)
        b = t64([[3.0], [4.0]], requires_grad=True)
        T.mean(T.matmul(a, b)).backward()
        assert np.allclose(a.grad, [[3.0, 4.0]])
        assert np.allclose(b.grad, [[1.0], [2.0]])

    def test_batched(self):
        rng = Rng(2)
        a = rng.normal((4, 3, 5), 1.0, np.float64)
        b = rng.normal((4, 5, 2), 1.0, np.float64)
        got = T.matmul(Tensor(a), Tensor(b)).data
        assert np.abs(got - a @ b).max() < 1e-12


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(Tensor([[0.0, 0.0]])).data
        assert np.allclose(out, [[0.5, 0.5]])

    def test_shift_invariance(self):
        x = Tensor([[0.3, -1.2, 2.0]])
        shifted = Tensor([[10.3, 8.8, 12.0]])
        assert np.abs(T.softmax(x).data - T.softmax(shifted).data).max() < 1e-6

    def test_reference_values(self):
        out = T.softmax(t64([[1.0, 2.0, 3.0]])).data[0]
        assert np.abs(out - [0.0900, 0.2447, 0.6652]).max() < 1e-4

    def test_large_inputs_do_not_overflow(self):
        out = T.softmax(Tensor([[1000.0, 1000.0, -1000.0]])).data
        assert np.isfinite(out).all()
        assert abs(out.sum() - 1.0) < 1e-6

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=8))
    def test_rows_sum_to_one(self, row):
        out = T.softmax(t64([row])).data
        assert abs(out.sum() - 1.0) < 1e-6
        assert ((out > 0) & (out < 1.0 + 1e-12)).all()

    def test_gradient_matches_jacobian(self):
        x = t64([[0.2, -0.4, 1.1]], requires_grad=True)
        y = T.softmax(x)
        T.mean(T.mul(y, y)).backward()
        p = y.data[0]
        dy = 2.0 * p / p.size
        expect = p * (dy - (dy * p).sum())
        assert np.abs(x.grad[0] - expect).max() < 1e-12

    def test_axis_argument(self):
        x = t64([[1.0, 2.0], [3.0, 4.0]])
        out = T.softmax(x, axis=0).data
        assert np.allclose(out.sum(axis=0), 1.0)


class TestLayerNorm:
    def _gb(self, d):
        return (Tensor(np.ones(d, dtype=np.float64), requires_grad=True),
                Tensor(np.zeros(d, dtype=np.float64), requires_grad=True))

    def test_constant_vector_maps_to_zero(self):
        g, b = self._gb(4)
        out = T.layer_norm(t64([[3.0, 3.0, 3.0, 3.0]]), g, b, eps=1e-5)
        assert np.abs(out.data).max() < 1e-6

    def test_already_normalized(self):
        g, b = self._gb(2)
        out = T.layer_norm(t64([[1.0, -1.0]]), g, b, eps=1e-12)
        assert np.abs(out.data - [[1.0, -1.0]]).max() < 1e-6

    def test_matches_formula_oracle(self):
        rng = Rng(13)
        x = rng.normal((1, 5), 2.0, np.float64)
        g, b = self._gb(5)
        eps = 1e-5
        mu = x.mean()
        var = ((x - mu) ** 2).mean()
        expect = (x - mu) / np.sqrt(var + eps)
        got = T.layer_norm(t64(x), g, b, eps=eps).data
        assert np.abs(got - expect).max() < 1e-6

    def test_eps_must_be_positive(self):
        g, b = self._gb(2)
        with pytest.raises(ValueError):
            T.layer_norm(t64([[1.0, 2.0]]), g, b, eps=0.0)


class TestLeakyRelu:
    def test_positive_passthrough(self):
        assert T.leaky_relu(Tensor([5.0]), 0.01).data[0] == 5.0

    def test_negative_scaling(self):
        assert abs(T.leaky_relu(Tensor([-1.0]), 0.01).data[0] - (-0.01)) < 1e-9

    def test_kink_value_and_gradient(self):
        x = t64([0.0], requires_grad=True)
        y = T.leaky_relu(x, 0.01)
        assert y.data[0] == 0.0
        T.sum_(y).backward()
        assert abs(x.grad[0] - 0.01) < 1e-12

    def test_alpha_bounds(self):
        with pytest.raises(ValueError):
            T.leaky_relu(Tensor([1.0]), alpha=1.5)


class TestRng:
    def test_same_seed_same_sequence(self):
        a = Rng(123).normal((100,), 1.0, np.float64)
        b = Rng(123).normal((100,), 1.0, np.float64)
        assert np.array_equal(a, b)

    def test_children_are_independent_and_reproducible(self):
        r = Rng(7)
        a1 = r.child(0).normal((10,), 1.0)
        a2 = Rng(7).child(0).normal((10,), 1.0)
        b = Rng(7).child(1).normal((10,), 1.0)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, b)

    def test_truncated_normal_respects_bounds(self):
        draws = Rng(3).truncated_normal((5000,), std=0.02)
        assert np.abs(draws).max() <= 0.04 + 1e-9


class TestAutodiffPlumbing:
    def test_backward_populates_every_reachable_grad(self):
        a = t64([1.0, 2.0], requires_grad=True)
        b = t64([3.0, 4.0], requires_grad=True)
        unused_path = T.mul(b, 0.0)  # b reachable but with zero contribution
        loss = T.mean(T.add(T.mul(a, a), unused_path))
        loss.backward()
        assert a.grad is not None and b.grad is not None
        assert np.allclose(b.grad, 0.0)

    def test_backward_requires_scalar(self):
        a = t64([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            T.mul(a, 2.0).backward()

    def test_stack_gather_untouched_parent_gets_exact_zero(self):
        p0 = t64([[1.0, 2.0]], requires_grad=True)
        p1 = t64([[3.0, 4.0]], requires_grad=True)
        out = T.stack_gather([p0, p1], [0, 0])
        T.mean(out).backward()
        assert np.array_equal(p1.grad, np.zeros_like(p1.data))
        assert np.allclose(p0.grad, 2 * np.full((1, 2), 0.25))

    def test_embedding_scatter_accumulates(self):
        table = t64(np.arange(12, dtype=np.float64).reshape(4, 3), requires_grad=True)
        out = T.embedding(table, np.array([1, 1, 2]))
        T.sum_(out).backward()
        assert np.allclose(table.grad[1], 2.0)
        assert np.allclose(table.grad[2], 1.0)
        assert np.allclose(table.grad[0], 0.0)

    def test_concat_slice_roundtrip_grads(self):
        a = t64([[1.0, 2.0]], requires_grad=True)
        b = t64([[3.0, 4.0]], requires_grad=True)
        cat = T.concat([a, b], axis=0)
        T.sum_(cat[0:1]).backward()
        assert np.allclose(a.grad, 1.0)
        assert np.allclose(b.grad, 0.0)

    def test_cross_entropy_matches_manual(self):
        logits = t64([[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]], requires_grad=True)
        labels = np.array([1, 2])
        loss = T.cross_entropy(logits, labels)
        z = logits.data
        probs = np.exp(z - z.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        expect = -np.mean(np.log(probs[np.arange(2), labels]))
        assert abs(loss.item() - expect) < 1e-12
        loss.backward()
        onehot = np.zeros_like(z)
        onehot[np.arange(2), labels] = 1.0
        assert np.abs(logits.grad - (probs - onehot) / 2).max() < 1e-12

    def test_dtype_mismatch_raises(self):
        a = Tensor([1.0], dtype=np.float32)
        b = Tensor([1.0], dtype=np.float64)
        with pytest.raises(ShapeError):
            T.add(a, b)

    def test_mean_of_known_values(self):
        x = t64([1.0, 2.0, 3.0], requires_grad=True)
        m = T.mean(x)
        assert abs(m.item() - 2.0) < 1e-12
        m.backward()
        assert np.allclose(x.grad, 1.0 / 3.0)
