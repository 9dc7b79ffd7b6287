import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from synccap import tensor as tt
from synccap.tensor import Tensor, grad_check


def central_diff(f, x, step=1e-6):
    """Independent finite-difference oracle on plain numpy functions."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += step
        xm.flat[i] -= step
        g.flat[i] = (f(xp) - f(xm)) / (2 * step)
    return g


class TestMatmul:
    def test_identity(self):
        out = tt.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_dot(self):
        assert tt.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]

    def test_backward_matches_finite_difference(self):
        A, B = np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])
        a, b = Tensor(A, requires_grad=True), Tensor(B, requires_grad=True)
        tt.matmul(a, b).sum().backward()
        dA = central_diff(lambda x: (x @ B).sum(), A)
        dB = central_diff(lambda x: (A @ x).sum(), B)
        np.testing.assert_allclose(dA, [[3, 4]], atol=1e-6)
        np.testing.assert_allclose(dB, [[1], [2]], atol=1e-6)
        np.testing.assert_allclose(a.grad, dA, atol=1e-6)
        np.testing.assert_allclose(b.grad, dB, atol=1e-6)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
            tt.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestMaskedSoftmax:
    def test_uniform_within_mask(self):
        out = tt.masked_softmax(Tensor([1.0, 1, 1, 1]), [False, True, True, False])
        assert out.data.tolist() == [0.0, 0.5, 0.5, 0.0]

    def test_log2(self):
        out = tt.masked_softmax(Tensor([0.0, math.log(2)]), [True, True])
        np.testing.assert_allclose(out.data, [1 / 3, 2 / 3], rtol=1e-12)

    def test_single_allowed_index_is_one_hot(self):
        out = tt.masked_softmax(Tensor([5.0, -3.0, 100.0]), [False, True, False])
        assert out.data.tolist() == [0.0, 1.0, 0.0]

    def test_fully_masked_row_raises(self):
        with pytest.raises(ValueError):
            tt.masked_softmax(Tensor(np.zeros((2, 3))), [[True, False, False], [False] * 3])

    def test_no_gradient_through_masked_positions(self):
        x = Tensor(np.array([0.3, -1.2, 2.0, 0.5]), requires_grad=True)
        w = np.array([1.0, 2.0, 3.0, 4.0])
        (tt.masked_softmax(x, [True, False, True, True]) * w).sum().backward()
        assert x.grad[1] == 0.0

    @settings(max_examples=60, deadline=None)
    @given(hnp.arrays(np.float64, (4, 7), elements=st.floats(-30, 30)),
           hnp.arrays(np.bool_, (4, 7)))
    def test_rows_sum_to_one_and_masked_exactly_zero(self, scores, mask):
        mask[:, 0] |= ~mask.any(axis=1)
        out = tt.masked_softmax(Tensor(scores), mask).data
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(out[~mask] == 0.0)


class TestLayerNorm:
    def test_two_values(self):
        out = tt.layer_norm(Tensor([1.0, 3.0]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), eps=1e-12)
        # oracle: mean 2, population variance 1
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-9)

    def test_constant_row_gives_shift(self):
        out = tt.layer_norm(Tensor([5.0, 5, 5]), Tensor([2.0, 2, 2]), Tensor([0.1, 0.2, 0.3]))
        assert out.data.tolist() == [0.1, 0.2, 0.3]

    def test_zero_scale_gives_shift(self):
        out = tt.layer_norm(Tensor([1.0, -4, 9]), Tensor([0.0, 0, 0]), Tensor([7.0, 8, 9]))
        assert out.data.tolist() == [7.0, 8.0, 9.0]

    def test_gradients(self):
        rng = np.random.default_rng(0)
        scale = Tensor(rng.normal(size=5), requires_grad=True)
        shift = Tensor(rng.normal(size=5), requires_grad=True)
        w = rng.normal(size=(3, 5))
        err = grad_check(lambda x: (tt.layer_norm(x, scale, shift) * w).sum(), rng.normal(size=(3, 5)))
        assert err < 1e-6
        for p in (scale, shift):
            err = tt.parameters_grad_check(lambda: (tt.layer_norm(Tensor(w), scale, shift) * w).sum(), [p])
            assert err < 1e-6

    def test_requires_two_features(self):
        with pytest.raises(ValueError):
            tt.layer_norm(Tensor([[1.0]]), Tensor([1.0]), Tensor([0.0]))


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        tt.square(x).backward()
        assert x.grad == 6.0

    def test_softmax_sum_has_zero_gradient(self):
        x = Tensor(np.array([0.1, 2.0, -1.0, 0.7]), requires_grad=True)
        tt.softmax(x).sum().backward()
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-12)

    def test_composite_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        W = rng.normal(size=(4, 3))

        def f(x):
            return (tt.relu(x @ W) * tt.log_softmax(x @ W)).sum()

        assert grad_check(f, rng.normal(size=(2, 4)), step=1e-5) < 1e-4

    def test_reuse_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        (x * x + x * 3.0).backward()
        assert x.grad == 7.0

    def test_non_scalar_backward_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_tape_is_topological_and_visits_once(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = x * 2.0
        z = (y + y * y).sum()
        tape = z._tape()
        assert len(tape) == len({id(n) for n in tape})
        pos = {id(n): i for i, n in enumerate(tape)}
        for node in tape:
            for p in node._parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(node)]

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with tt.no_grad():
            y = (x * 3.0).sum()
        assert not y.requires_grad and y._parents == ()

    def test_ops_gradients(self):
        rng = np.random.default_rng(5)
        w = rng.normal(size=(2, 3, 4))
        proj = Tensor(rng.normal(size=(12, 1)))
        fns = [
            lambda x: (tt.exp(x) * w).sum(),
            lambda x: (tt.log(tt.exp(x) + 1.0) * w).sum(),
            lambda x: (x.transpose(0, 2, 1).reshape(2, 12) @ proj).sum(),
            lambda x: (tt.concat([x, x * 2.0], axis=-1) * np.concatenate([w, w], -1)).sum(),
            lambda x: (x[:, 1:, ::2] * w[:, 1:, ::2]).sum(),
            lambda x: (tt.stack([x, x], axis=1) * 0.5).mean(),
            lambda x: (x / (tt.square(x) + 1.0)).sum(),
        ]
        x0 = rng.normal(size=(2, 3, 4))
        for f in fns:
            assert grad_check(f, x0) < 1e-6

    def test_embedding_scatter_add(self):
        table = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        tt.embedding(table, [0, 2, 0]).sum().backward()
        np.testing.assert_array_equal(table.grad, [[2, 2], [0, 0], [1, 1]])
        with pytest.raises(IndexError):
            tt.embedding(table, [3])


class TestGradCheck:
    def test_sum_of_squares(self):
        x = np.random.default_rng(1).normal(size=7)
        assert grad_check(lambda t: tt.square(t).sum(), x) < 1e-8

    def test_step_range(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: t.sum(), np.ones(2), step=1e-2)

    def test_non_finite_is_an_error(self):
        with pytest.raises(tt.NonFiniteError):
            grad_check(lambda t: tt.log(t).sum(), np.array([-1.0, 1.0]))


def test_validate_flags_nan():
    with pytest.raises(tt.NonFiniteError):
        Tensor([1.0, np.nan]).validate()


def test_determinism_bitwise():
    rng = np.random.default_rng(9)
    x, W = rng.normal(size=(5, 8)), rng.normal(size=(8, 8))

    def run():
        t = Tensor(x, requires_grad=True)
        out = tt.layer_norm(tt.softmax(t @ W) @ W, Tensor(np.ones(8)), Tensor(np.zeros(8))).sum()
        out.backward()
        return out.data.tobytes() + t.grad.tobytes()

    assert run() == run()
