"""Numeric core: op semantics, shape errors, finite-difference gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synchlab import nn
from synchlab.errors import NumericError, ShapeError
from synchlab.nn import Tensor, finite_diff_check, no_grad, use_dtype


def t64(arr, requires_grad=False):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad, dtype=np.float64)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def test_matmul_identity():
    out = nn.matmul(Tensor(np.eye(2)), Tensor([[5.0], [6.0]]))
    np.testing.assert_allclose(out.data, [[5.0], [6.0]])


def test_matmul_hand_arithmetic():
    out = nn.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    np.testing.assert_allclose(out.data, [[17.0], [39.0]])


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        nn.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradient_finite_differences(rng):
    with use_dtype(np.float64):
        a = t64(rng.normal(size=(3, 4)))
        b = t64(rng.normal(size=(4, 2)))
        err_a = finite_diff_check(lambda x: nn.sum_(nn.matmul(x, b)), a)
        err_b = finite_diff_check(lambda x: nn.sum_(nn.matmul(a, x)), b)
    assert err_a < 1e-6
    assert err_b < 1e-6


def test_matmul_batched_matches_loop(rng):
    a = rng.normal(size=(5, 3, 4)).astype(np.float32)
    b = rng.normal(size=(4, 2)).astype(np.float32)
    out = nn.matmul(Tensor(a), Tensor(b))
    np.testing.assert_allclose(out.data, np.stack([ai @ b for ai in a]), rtol=1e-5)


def test_batched_matmul_gradients(rng):
    with use_dtype(np.float64):
        a = t64(rng.normal(size=(2, 3, 4)))
        b = t64(rng.normal(size=(4, 5)))
        assert finite_diff_check(lambda x: nn.sum_(nn.mul(nn.matmul(x, b), nn.matmul(x, b))), a) < 1e-6
        assert finite_diff_check(lambda x: nn.sum_(nn.matmul(a, x)), b) < 1e-6
        # both operands stacked
        c = t64(rng.normal(size=(2, 4, 3)))
        assert finite_diff_check(lambda x: nn.sum_(nn.matmul(a, x)), c) < 1e-6


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------

def test_softmax_uniform_input():
    out = nn.softmax_lastdim(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)


def test_softmax_analytic():
    out = nn.softmax_lastdim(Tensor([0.0, np.log(3.0)]))
    np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-6)


def test_softmax_empty_lastdim_errors():
    with pytest.raises(ShapeError):
        nn.softmax_lastdim(Tensor(np.zeros((2, 0))))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8),
       st.floats(-20, 20))
def test_softmax_shift_invariance(values, shift):
    x = np.asarray(values, dtype=np.float64)
    a = nn.softmax_lastdim(Tensor(x, dtype=np.float64)).data
    b = nn.softmax_lastdim(Tensor(x + shift, dtype=np.float64)).data
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_softmax_rows_sum_to_one(rng):
    out = nn.softmax_lastdim(Tensor(rng.normal(size=(4, 6, 9)).astype(np.float32)))
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones((4, 6)), atol=1e-6)


def test_softmax_gradient(rng):
    with use_dtype(np.float64):
        x = t64(rng.normal(size=(3, 5)))
        w = rng.normal(size=(3, 5))
        err = finite_diff_check(lambda v: nn.sum_(nn.mul(nn.softmax_lastdim(v), Tensor(w, dtype=np.float64))), x)
    assert err < 1e-6


# ---------------------------------------------------------------------------
# layer_norm
# ---------------------------------------------------------------------------

def test_layer_norm_constant_row_is_zero():
    x = Tensor(np.full((2, 8), 3.7))
    out = nn.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
    np.testing.assert_allclose(out.data, np.zeros((2, 8)), atol=1e-6)


def test_layer_norm_statistics(rng):
    x = Tensor(rng.normal(2.0, 5.0, size=(4, 32)).astype(np.float32))
    out = nn.layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32))).data
    np.testing.assert_allclose(out.mean(axis=-1), np.zeros(4), atol=1e-5)
    np.testing.assert_allclose(out.var(axis=-1), np.ones(4), atol=1e-4)


def test_layer_norm_zero_length_row_errors():
    with pytest.raises(ShapeError):
        nn.layer_norm(Tensor(np.zeros((3, 0))), Tensor(np.zeros(0)), Tensor(np.zeros(0)))


def test_layer_norm_gamma_beta_mismatch():
    with pytest.raises(ShapeError):
        nn.layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(4)))


def test_layer_norm_gradients(rng):
    with use_dtype(np.float64):
        x = t64(rng.normal(size=(3, 6)))
        g = t64(rng.normal(size=6))
        b = t64(rng.normal(size=6))
        w = Tensor(rng.normal(size=(3, 6)), dtype=np.float64)
        loss = lambda xx, gg, bb: nn.sum_(nn.mul(nn.layer_norm(xx, gg, bb), w))
        assert finite_diff_check(lambda v: loss(v, g, b), x) < 1e-5
        assert finite_diff_check(lambda v: loss(x, v, b), g) < 1e-5
        assert finite_diff_check(lambda v: loss(x, g, v), b) < 1e-5


# ---------------------------------------------------------------------------
# cross entropy
# ---------------------------------------------------------------------------

def test_cross_entropy_saturated_margin():
    logits = np.zeros((1, 4), dtype=np.float32)
    logits[0, 2] = 50.0
    loss = nn.cross_entropy(Tensor(logits), [2])
    assert loss.item() < 1e-6


def test_cross_entropy_uniform_logits_21_classes():
    loss = nn.cross_entropy(Tensor(np.zeros((3, 21))), [0, 10, 20])
    np.testing.assert_allclose(loss.item(), np.log(21.0), atol=1e-5)


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        nn.cross_entropy(Tensor(np.zeros((2, 5))), [0, 5])


def test_cross_entropy_gradient_matches_softmax_minus_onehot(rng):
    logits = Tensor(rng.normal(size=(4, 5)).astype(np.float32), requires_grad=True)
    targets = [1, 0, 4, 2]
    loss = nn.cross_entropy(logits, targets)
    loss.backward()
    p = np.exp(logits.data - logits.data.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(4), targets] -= 1.0
    np.testing.assert_allclose(logits.grad, p / 4, atol=1e-6)


def test_cross_entropy_finite_differences(rng):
    with use_dtype(np.float64):
        x = t64(rng.normal(size=(4, 5)))
        err = finite_diff_check(lambda v: nn.cross_entropy(v, [0, 3, 1, 4]), x)
    assert err < 1e-5


# ---------------------------------------------------------------------------
# other fused ops
# ---------------------------------------------------------------------------

def test_l2_normalize_unit_norm(rng):
    out = nn.l2_normalize(Tensor(rng.normal(size=(5, 7)).astype(np.float32)))
    np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1), np.ones(5), atol=1e-5)


def test_l2_normalize_gradient(rng):
    with use_dtype(np.float64):
        x = t64(rng.normal(size=(2, 5)))
        w = Tensor(rng.normal(size=(2, 5)), dtype=np.float64)
        assert finite_diff_check(lambda v: nn.sum_(nn.mul(nn.l2_normalize(v), w)), x) < 1e-6


def test_bce_with_logits_uniform_is_ln2():
    loss = nn.bce_with_logits(Tensor(np.zeros(8)), np.array([1, 0, 1, 0, 1, 0, 1, 0]))
    np.testing.assert_allclose(loss.item(), np.log(2.0), atol=1e-6)


def test_bce_gradient(rng):
    with use_dtype(np.float64):
        x = t64(rng.normal(size=6))
        y = (rng.random(6) > 0.5).astype(np.float64)
        assert finite_diff_check(lambda v: nn.bce_with_logits(v, y), x) < 1e-6


def test_gelu_sigmoid_exp_gradients(rng):
    with use_dtype(np.float64):
        x = t64(rng.normal(size=7))
        assert finite_diff_check(lambda v: nn.sum_(nn.gelu(v)), x) < 1e-6
        assert finite_diff_check(lambda v: nn.sum_(nn.sigmoid(v)), x) < 1e-6
        assert finite_diff_check(lambda v: nn.sum_(nn.exp(v)), x) < 1e-6
        assert finite_diff_check(lambda v: nn.sum_(nn.tanh(v)), x) < 1e-6


def test_structural_op_gradients(rng):
    with use_dtype(np.float64):
        x = t64(rng.normal(size=(3, 4)))
        w = Tensor(rng.normal(size=(4, 3)), dtype=np.float64)
        assert finite_diff_check(lambda v: nn.sum_(nn.mul(nn.transpose(v, (1, 0)), w)), x) < 1e-6
        assert finite_diff_check(lambda v: nn.sum_(nn.mul(nn.reshape(v, (4, 3)), w)), x) < 1e-6
        assert finite_diff_check(lambda v: nn.sum_(v[1:, :2]), x) < 1e-6
        assert finite_diff_check(lambda v: nn.sum_(nn.concat([v, v], axis=0)), x) < 1e-6
        assert finite_diff_check(lambda v: nn.mean(nn.broadcast_to(v, (5, 3, 4))), x) < 1e-6


def test_gather_flat_gradient_accumulates_duplicates():
    with use_dtype(np.float64):
        x = t64([1.0, 2.0, 3.0])
        idx = np.array([0, 1, 1, 2])
        out = nn.gather_flat(x, idx, (4,))
        x.requires_grad = True
        out = nn.gather_flat(x, idx, (4,))
        nn.sum_(out).backward()
        np.testing.assert_allclose(x.grad, [1.0, 2.0, 1.0])


# ---------------------------------------------------------------------------
# graph behaviour
# ---------------------------------------------------------------------------

def test_gradient_accumulation_over_fanout(rng):
    x = Tensor(rng.normal(size=(3,)).astype(np.float32), requires_grad=True)
    y = nn.mul(x, x)
    total = nn.add(nn.sum_(y), nn.sum_(y))  # y used twice
    total.backward()
    np.testing.assert_allclose(x.grad, 4 * x.data, rtol=1e-6)


def test_backward_requires_scalar():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        nn.mul(x, 2.0).backward()


def test_no_grad_skips_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = nn.mul(x, 2.0)
    assert not y.requires_grad
    assert y._parents == ()


def test_nonfinite_output_raises():
    with pytest.raises(NumericError):
        nn.exp(Tensor(np.array([1000.0]), dtype=np.float64))
    with pytest.raises(NumericError):
        nn.log(Tensor([0.0]))


def test_add_rejects_leading_broadcast():
    with pytest.raises(ShapeError):
        nn.add(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 1))))


def test_add_trailing_bias_broadcast(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32), requires_grad=True)
    b = Tensor(rng.normal(size=(4,)).astype(np.float32), requires_grad=True)
    nn.sum_(nn.add(x, b)).backward()
    np.testing.assert_allclose(b.grad, np.full(4, 6.0))
    np.testing.assert_allclose(x.grad, np.ones((2, 3, 4)))


def test_determinism_bitwise(rng):
    x = rng.normal(size=(16, 16)).astype(np.float32)
    w = rng.normal(size=(16, 16)).astype(np.float32)

    def run():
        a = Tensor(x.copy(), requires_grad=True)
        out = nn.sum_(nn.softmax_lastdim(nn.matmul(a, Tensor(w.copy()))))
        out.backward()
        return out.data.copy(), a.grad.copy()

    v1, g1 = run()
    v2, g2 = run()
    assert np.array_equal(v1, v2)
    assert np.array_equal(g1, g2)


# ---------------------------------------------------------------------------
# finite_diff_check contract
# ---------------------------------------------------------------------------

def test_finite_diff_check_on_sum_is_exact():
    x = t64(np.zeros(5))
    err = finite_diff_check(lambda v: nn.sum_(v), x)
    assert err < 1e-9
    assert np.array_equal(x.grad, np.ones(5))


def test_finite_diff_check_rejects_float32():
    from synchlab.errors import ContractError
    with pytest.raises(ContractError):
        finite_diff_check(lambda v: nn.sum_(v), Tensor(np.zeros(3), dtype=np.float32))


def test_finite_diff_check_rejects_nonscalar():
    from synchlab.errors import ContractError
    with pytest.raises(ContractError):
        finite_diff_check(lambda v: v, t64(np.zeros(3)))
