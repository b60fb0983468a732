import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graftlm import tensor as T
from graftlm.errors import ContractError, EmptyNeighborhoodError, ShapeError
from graftlm.rng import RngState
from graftlm.tensor import Tensor, backward, zero_grads

from conftest import assert_grad_close, central_difference, sample_indices


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(Tensor(np.eye(2)), a)
        assert np.array_equal(out.data, a.data)

    def test_hand_product(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.shape == (1, 1)
        assert out.data[0, 0] == 11.0

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError) as err:
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        assert "(2, 3)" in str(err.value)

    def test_grad_of_sum_is_broadcast_column_sums(self):
        # d/dA sum(A@B) has every row equal to the row sums of B
        rng = RngState(7)
        a = Tensor(rng.normal((4, 3)), requires_grad=True)
        b = Tensor(rng.normal((3, 5)))
        backward(T.total(T.matmul(a, b)))
        expected = np.tile(b.data.sum(axis=1), (4, 1))
        assert np.allclose(a.grad, expected, rtol=1e-12)

        # and the finite-difference oracle agrees to < 1e-6 in 64-bit
        a2 = Tensor(a.data.copy(), requires_grad=True)

        def value():
            return float((a2.data @ b.data).sum())

        for index in sample_indices(a2.data):
            fd = central_difference(value, a2.data, index)
            assert_grad_close(fd, expected[index], rel_tol=1e-6)


class TestSoftmaxMasked:
    def test_symmetry(self):
        out = T.softmax_masked(Tensor([0.0, 0.0]))
        assert np.allclose(out.data, [0.5, 0.5], atol=1e-15)

    def test_single_unmasked_entry(self):
        out = T.softmax_masked(Tensor([5.0, 123.0]), mask=np.array([True, False]))
        assert out.data[0] == 1.0
        assert out.data[1] == 0.0

    def test_matches_extended_precision_formula(self):
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 50
        xs = [1.0, 2.0, 3.0]
        exps = [mpmath.e ** x for x in xs]
        denom = sum(exps)
        expected = np.array([float(e / denom) for e in exps])
        out = T.softmax_masked(Tensor(xs))
        assert np.allclose(out.data, expected, atol=1e-15)

    def test_all_masked_is_error(self):
        with pytest.raises(EmptyNeighborhoodError):
            T.softmax_masked(Tensor([[1.0, 2.0]]), mask=np.array([[False, False]]))

    @given(
        logits=st.lists(st.floats(-30, 30), min_size=2, max_size=8),
        shift=st.floats(-100, 100),
    )
    @settings(max_examples=60, deadline=None)
    def test_sums_to_one_and_shift_invariant(self, logits, shift):
        x = np.array(logits)
        out = T.softmax_masked(Tensor(x)).data
        assert abs(out.sum() - 1.0) <= 1e-9
        shifted = T.softmax_masked(Tensor(x + shift)).data
        assert np.all(np.abs(out - shifted) <= 1e-9)

    def test_masked_entries_exactly_zero(self):
        mask = np.array([True, False, True, False])
        out = T.softmax_masked(Tensor([1.0, 99.0, 2.0, -99.0]), mask=mask)
        assert out.data[1] == 0.0 and out.data[3] == 0.0
        assert abs(out.data.sum() - 1.0) <= 1e-9


class TestLeakyRelu:
    def test_negative_branch(self):
        assert T.leaky_relu(Tensor(-1.0), 0.01).data == pytest.approx(-0.01)

    def test_positive_branch(self):
        assert T.leaky_relu(Tensor(2.0), 0.01).data == 2.0

    def test_boundary(self):
        assert T.leaky_relu(Tensor(0.0), 0.2).data == 0.0

    def test_slope_validated(self):
        with pytest.raises(ContractError):
            T.leaky_relu(Tensor(1.0), 1.5)


class TestBackward:
    def test_square_at_three(self):
        x = Tensor(3.0, requires_grad=True)
        backward(T.mul(x, x))
        assert x.grad == pytest.approx(6.0)

    def test_softmax_cross_entropy_grad_is_p_minus_onehot(self):
        rng = RngState(3)
        logits = Tensor(rng.normal((1, 5)), requires_grad=True)
        target = 2
        loss = T.scale(T.pick_per_row(T.log_softmax(logits, axis=-1), [target]).sum(), -1.0)
        backward(loss)
        p = np.exp(logits.data - logits.data.max())
        p = p / p.sum()
        onehot = np.zeros(5)
        onehot[target] = 1.0
        assert np.allclose(logits.grad[0], p[0] - onehot, atol=1e-12)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ContractError):
            backward(Tensor([1.0, 2.0], requires_grad=True))

    def test_repeated_cycles_accumulate(self):
        x = Tensor(3.0, requires_grad=True)
        backward(T.mul(x, x))
        backward(T.mul(x, x))
        assert x.grad == pytest.approx(12.0)
        zero_grads([x])
        assert x.grad is None

    def test_graph_freed_after_backward(self):
        x = Tensor(3.0, requires_grad=True)
        y = T.mul(x, x)
        backward(y)
        with pytest.raises(ContractError):
            backward(y)


class TestDropout:
    def test_rate_zero_identity(self):
        x = Tensor([1.0, -2.0, 3.0])
        out = T.dropout(x, 0.0, RngState(0), training=True)
        assert out is x

    def test_inference_identity(self):
        x = Tensor([1.0, -2.0, 3.0])
        out = T.dropout(x, 0.1, RngState(0), training=False)
        assert out is x

    def test_zero_fraction_concentrates(self):
        x = Tensor(np.ones(100_000))
        out = T.dropout(x, 0.5, RngState(11), training=True)
        frac = float((out.data == 0.0).mean())
        assert 0.49 <= frac <= 0.51
        survivors = out.data[out.data != 0.0]
        assert np.allclose(survivors, 2.0)

    def test_rate_validated(self):
        with pytest.raises(ContractError):
            T.dropout(Tensor([1.0]), 1.0, RngState(0), training=True)

    def test_fixed_seed_is_deterministic(self):
        x = Tensor(np.ones(1000))
        a = T.dropout(x, 0.3, RngState(5), training=True).data
        b = T.dropout(x, 0.3, RngState(5), training=True).data
        assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# every differentiable operation passes a randomized finite-difference check
# on at least three random shapes


def _away_from_kinks(arr, margin=0.05):
    arr = arr + np.sign(arr) * margin
    arr[arr == 0] = margin
    return arr


def _op_cases(seed):
    rng = RngState(seed)
    shapes2d = [(2, 3), (4, 4), (5, 2)]
    cases = []
    for m, n in shapes2d:
        x = rng.normal((m, n))
        y = rng.normal((m, n))
        cases.append((f"add{m}x{n}", [x, y], lambda a, b: T.add(a, b)))
        cases.append((f"mul{m}x{n}", [x, y], lambda a, b: T.mul(a, b)))
        cases.append((f"scale{m}x{n}", [x], lambda a: T.scale(a, -1.7)))
        cases.append((f"matmul{m}x{n}", [x, rng.normal((n, m + 1))], lambda a, b: T.matmul(a, b)))
        cases.append((f"transpose{m}x{n}", [x], lambda a: T.transpose(a)))
        cases.append(
            (f"reshape{m}x{n}", [x], lambda a: T.reshape(a, (a.data.shape[1], a.data.shape[0])))
        )
        cases.append((f"narrow{m}x{n}", [x], lambda a: T.narrow(a, 1, 1, a.data.shape[1] - 1)))
        cases.append((f"concat{m}x{n}", [x, y], lambda a, b: T.concat([a, b], axis=0)))
        cases.append((f"rows{m}x{n}", [x], lambda a: T.rows(a, [0, 0, a.data.shape[0] - 1])))
        cases.append(
            (f"pick{m}x{n}", [x], lambda a: T.pick_per_row(a, [0] * a.data.shape[0]))
        )
        cases.append((f"sum{m}x{n}", [x], lambda a: T.total(a)))
        cases.append((f"relu{m}x{n}", [_away_from_kinks(x)], lambda a: T.relu(a)))
        cases.append(
            (f"leaky{m}x{n}", [_away_from_kinks(x)], lambda a: T.leaky_relu(a, 0.2))
        )
        cases.append((f"elu{m}x{n}", [_away_from_kinks(x)], lambda a: T.elu(a)))
        mask = rng.uniform((m, n)) > 0.3
        mask[0, :] = True
        cases.append(
            (f"softmax{m}x{n}", [4 * x], lambda a, _mask=mask: T.softmax_masked(a, _mask, axis=0))
        )
        cases.append((f"logsoftmax{m}x{n}", [4 * x], lambda a: T.log_softmax(a, axis=-1)))
        g = rng.normal((n,), scale=0.3) + 1.0
        b = rng.normal((n,), scale=0.3)
        cases.append(
            (
                f"layernorm{m}x{n}",
                [x, g, b],
                lambda a, gg, bb: T.layer_norm(a, gg, bb),
            )
        )
        cases.append((f"broadcast_add{m}x{n}", [rng.normal((m, 1)), rng.normal((1, n))], lambda a, b: T.add(a, b)))
        cases.append(
            (
                f"dropout{m}x{n}",
                [x],
                lambda a, _s=seed: T.dropout(a, 0.4, RngState(_s), training=True),
            )
        )
    return cases


@pytest.mark.parametrize("case", _op_cases(99), ids=lambda c: c[0])
def test_gradients_match_finite_differences(case):
    name, arrays, op = case
    rng = RngState(hash(name) % (2**32))
    inputs = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*inputs)
    probe = rng.normal(out.data.shape)
    backward(T.total(T.mul(out, Tensor(probe))))

    def value():
        fresh = op(*[Tensor(t.data) for t in inputs])
        return float((fresh.data * probe).sum())

    for t in inputs:
        assert t.grad is not None
        for index in sample_indices(t.data, limit=12):
            fd = central_difference(value, t.data, index)
            assert_grad_close(fd, t.grad[index])


def test_forward_values_deterministic(rng):
    a = rng.normal((6, 6))
    first = T.matmul(T.elu(Tensor(a)), Tensor(a)).data
    second = T.matmul(T.elu(Tensor(a)), Tensor(a)).data
    assert np.array_equal(first, second)
