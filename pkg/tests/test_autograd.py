import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fedbert import autograd as ag
from fedbert.errors import ContractError, ShapeError

from gradcheck import check_op
from op_cases import ALL_OPS, build


def test_matmul_identity():
    a = ag.Tensor([[1, 0], [0, 1]])
    b = ag.Tensor([[3, 4], [5, 6]])
    np.testing.assert_array_equal(ag.matmul(a, b).data, [[3, 4], [5, 6]])


def test_matmul_hand_arithmetic():
    out = ag.matmul(ag.Tensor([[1, 2]]), ag.Tensor([[3], [4]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ag.matmul(ag.Tensor(np.ones((2, 3))), ag.Tensor(np.ones((2, 3))))


def test_sum_matmul_gradient_against_finite_differences():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    ta = ag.Tensor(a, requires_grad=True)
    with ag.Tape():
        ag.backward(ag.sum_(ag.matmul(ta, ag.Tensor(b))))
    # d/dA sum(AB) = 1 B^T, checked independently by central differences
    h = 1e-6
    num = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        ap, am = a.copy(), a.copy()
        ap[idx] += h
        am[idx] -= h
        num[idx] = ((ap @ b).sum() - (am @ b).sum()) / (2 * h)
    assert np.max(np.abs(ta.grad - num) / np.maximum(np.abs(num), 1e-12)) < 1e-6


def test_softmax_uniform_and_stable():
    np.testing.assert_allclose(ag.softmax_rows(ag.Tensor([0, 0, 0, 0])).data, [0.25] * 4)
    out = ag.softmax_rows(ag.Tensor([1000.0, 0.0])).data
    assert abs(out[0] - 1.0) < 1e-12 and abs(out[1]) < 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 8)),
              elements=st.floats(-1e3, 1e3)))
def test_softmax_rows_sum_to_one(x):
    out = ag.softmax_rows(ag.Tensor(x)).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_layer_norm_examples():
    one, zero = ag.Tensor(np.ones(3)), ag.Tensor(np.zeros(3))
    np.testing.assert_array_equal(ag.layer_norm(ag.Tensor([1, 1, 1]), one, zero).data, [0, 0, 0])
    out = ag.layer_norm(ag.Tensor([1, 2, 3]), one, zero).data
    # (x - 2) / sqrt(2/3)
    np.testing.assert_allclose(out, [-1.2247, 0.0, 1.2247], atol=1e-3)


def test_layer_norm_moments():
    x = np.random.default_rng(0).normal(3.0, 5.0, size=(6, 16))
    out = ag.layer_norm(ag.Tensor(x), ag.Tensor(np.ones(16)), ag.Tensor(np.zeros(16))).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-9)


def test_gelu_zero():
    assert ag.gelu(ag.Tensor([0.0])).data[0] == 0.0


def test_cross_entropy_certain_target_is_zero():
    logits = ag.Tensor([[1000.0, 0.0, 0.0], [0.0, 0.0, 1000.0]])
    assert abs(ag.cross_entropy_logits(logits, [0, 2]).item()) < 1e-9


def test_cross_entropy_ignores_rows():
    logits = ag.Tensor([[0.0, 0.0], [5.0, -5.0]])
    loss = ag.cross_entropy_logits(logits, [-100, 0], ignore_index=-100).item()
    assert loss == pytest.approx(np.log1p(np.exp(-10.0)))
    assert ag.cross_entropy_logits(logits, [-100, -100]).item() == 0.0


def test_embedding_out_of_range():
    with pytest.raises(IndexError):
        ag.embedding_lookup(ag.Tensor(np.zeros((3, 2))), [0, 3])


def test_dropout_identity_in_eval():
    x = ag.Tensor(np.ones((2, 3)))
    assert ag.dropout(x, 0.5, seed=1, training=False) is x


@pytest.mark.parametrize("name", ALL_OPS)
@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(name, seed):
    op, arrays_ = build(name, seed)
    assert check_op(op, arrays_, seed=seed) < 1e-5


def test_backward_rejects_non_scalar():
    x = ag.Tensor(np.ones(3), requires_grad=True)
    with ag.Tape():
        with pytest.raises(ContractError):
            ag.backward(ag.mul(x, 2.0))


def test_repeated_backward_accumulates():
    x = ag.Tensor([1.0, 2.0], requires_grad=True)
    for _ in range(2):
        with ag.Tape():
            ag.backward(ag.sum_(ag.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    ag.zero_grad([x])
    assert x.grad is None


def test_tape_cleared_after_backward():
    x = ag.Tensor([1.0], requires_grad=True)
    with ag.Tape() as tape:
        y = ag.sum_(ag.tanh(x))
        assert len(tape) == 2
        ag.backward(y)
        assert len(tape) == 0


def test_no_grad_records_nothing():
    x = ag.Tensor([1.0], requires_grad=True)
    with ag.Tape() as tape:
        with ag.no_grad():
            y = ag.tanh(x)
        assert len(tape) == 0 and not y.requires_grad


def test_intermediate_grads_finite():
    x = ag.Tensor(np.random.default_rng(1).normal(size=(3, 4)), requires_grad=True)
    with ag.Tape():
        h = ag.gelu(x)
        s = ag.softmax_rows(h)
        ag.backward(ag.sum_(ag.mul(s, s)))
    for t in (x, h, s):
        assert t.grad is not None and t.grad.shape == t.shape
        assert np.all(np.isfinite(t.grad))


def _seeded_run():
    rng = np.random.default_rng(11)
    w = ag.Tensor(rng.normal(size=(8, 4)), requires_grad=True)
    x = ag.Tensor(rng.normal(size=(4, 8)))
    with ag.Tape():
        h = ag.dropout(ag.gelu(ag.matmul(x, w)), 0.2, seed=5)
        loss = ag.cross_entropy_logits(h, [0, 1, 2, 3])
        ag.backward(loss)
    return loss.data.tobytes(), w.grad.tobytes()


def test_bit_identical_reruns():
    assert _seeded_run() == _seeded_run()
