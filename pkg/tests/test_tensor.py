import math
from decimal import Decimal, getcontext

import numpy as np
import pytest

import gradcases
from clsum import tensor as T
from clsum.tensor import Tensor


@pytest.mark.parametrize("name", sorted(gradcases.CASES))
@pytest.mark.parametrize("i", range(gradcases.N_SHAPES))
def test_gradients_match_finite_differences(name, i):
    assert gradcases.run_case(name, i) < gradcases.TOL


def test_matmul_values():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(eye, m).data, m.data)
    np.testing.assert_array_equal(T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data, [[11.0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_softmax_basic_and_stable():
    np.testing.assert_array_equal(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    out = T.softmax(Tensor([1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out, [0.5, 0.5])


def test_softmax_against_high_precision():
    getcontext().prec = 50
    xs = [Decimal(1), Decimal(2), Decimal(3)]
    z = sum(x.exp() for x in xs)
    ref = [float(x.exp() / z) for x in xs]
    out = T.softmax(Tensor([1.0, 2.0, 3.0])).data
    assert np.max(np.abs(out - ref)) < 1e-12


def test_softmax_rows_sum_and_shift_invariance():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 9)) * 5
    p = T.softmax(Tensor(x)).data
    assert np.max(np.abs(p.sum(axis=-1) - 1.0)) < 1e-12
    shifted = T.softmax(Tensor(x + rng.standard_normal((6, 1)) * 100)).data
    np.testing.assert_allclose(shifted, p, atol=1e-12)


def test_log_softmax_against_logsumexp():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((4, 6))
    ref = np.array([[v - math.log(sum(math.exp(u) for u in row)) for v in row] for row in x])
    assert np.max(np.abs(T.log_softmax(Tensor(x)).data - ref)) < 1e-10


def test_layer_norm_examples():
    g, b = Tensor(np.ones(3)), Tensor(np.zeros(3))
    np.testing.assert_array_equal(T.layer_norm(Tensor([[2.0, 2.0, 2.0]]), g, b).data, [[0.0, 0.0, 0.0]])
    out = T.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0).data
    np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-15)


def test_cross_entropy_examples():
    logits = np.zeros((3, 5))
    targets = np.array([1, 4, 0])
    logits[np.arange(3), targets] = 20.0
    assert T.cross_entropy(Tensor(logits), targets).item() < 1e-6 * 5
    loss = T.cross_entropy(Tensor(np.zeros((2, 8))), [3, 5]).item()
    assert loss == pytest.approx(math.log(8), abs=1e-12)


def test_cross_entropy_against_direct_evaluation():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 6))
    t = rng.integers(0, 6, size=4)
    ref = np.mean([math.log(sum(math.exp(v) for v in row)) - row[j] for row, j in zip(x, t)])
    assert abs(T.cross_entropy(Tensor(x), t).item() - ref) < 1e-10


def test_cross_entropy_reductions_and_mask():
    rng = np.random.default_rng(6)
    x = Tensor(rng.standard_normal((2, 3, 4)))
    t = rng.integers(0, 4, size=(2, 3))
    mask = np.array([[1, 1, 0], [1, 0, 0]], dtype=bool)
    per = T.cross_entropy(x, t, mask, "none").data
    assert np.all(per[~mask] == 0)
    assert T.cross_entropy(x, t, mask, "sum").item() == pytest.approx(per.sum(), abs=1e-12)
    assert T.cross_entropy(x, t, mask, "mean").item() == pytest.approx(per.sum() / 3, abs=1e-12)
    assert np.all(per >= 0)


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    # masked positions are not checked
    T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 7], mask=[True, False])


def test_attention_mask_and_capture():
    rng = np.random.default_rng(7)
    q, k, v = (Tensor(rng.standard_normal((1, 3, 4))) for _ in range(3))
    causal = np.tril(np.ones((3, 3), dtype=bool))[None, None]
    cap = []
    T.attention(q, k, v, 2, causal, capture=cap)
    p = cap[0]
    assert p.shape == (1, 2, 3, 3)
    assert np.all(p[..., ~causal[0, 0]] < 1e-300)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)


def test_backward_accumulates_shared_use():
    x = Tensor([2.0, -1.0], requires_grad=True)
    y = T.tsum(T.mul(x, x))
    y.backward()
    np.testing.assert_array_equal(x.grad, [4.0, -2.0])
    # a second backward adds onto the leaf gradient
    T.tsum(T.mul(x, x)).backward()
    np.testing.assert_array_equal(x.grad, [8.0, -4.0])


def test_no_grad_builds_no_graph():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = T.mul(x, 3.0)
    assert y._parents == () and not y.requires_grad


def test_backward_needs_scalar():
    with pytest.raises(T.ShapeError):
        T.mul(Tensor([1.0, 2.0], requires_grad=True), 2.0).backward()


def test_dropout_identity_in_eval():
    x = Tensor(np.ones(10))
    assert T.dropout(x, 0.5, None, training=False) is x
    out = T.dropout(x, 0.5, np.random.default_rng(0), training=True).data
    assert set(np.unique(out)) <= {0.0, 2.0}
