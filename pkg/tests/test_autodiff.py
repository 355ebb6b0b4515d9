import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from synfuse import autodiff as ad
from synfuse.gradcheck import check_gradients

finite = st.floats(-50, 50, allow_nan=False)


def leaf(rng, *shape):
    return ad.Tensor(rng.normal(size=shape), requires_grad=True)


def test_matmul_identity(rng):
    m = rng.normal(size=(3, 4))
    out = ad.matmul(np.eye(3), m)
    np.testing.assert_array_equal(out.value, m)


def test_relu_definition():
    np.testing.assert_array_equal(ad.relu([-1.0, 0.0, 2.0]).value, [[0.0, 0.0, 2.0]])


def test_mean_rows_by_hand():
    np.testing.assert_array_equal(ad.mean_rows([[1.0, 3.0], [5.0, 7.0]]).value, [[3.0, 5.0]])


def test_shape_mismatch_raises():
    with pytest.raises(ad.ShapeMismatch):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ad.ShapeMismatch):
        ad.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ad.ShapeMismatch):
        ad.concat_cols(np.ones((2, 1)), np.ones((3, 1)))


def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax_rows([[0.0, 0.0]]).value, [[0.5, 0.5]], atol=1e-15)
    big = ad.softmax_rows([[1000.0, 0.0]]).value
    assert np.all(np.isfinite(big)) and big[0, 0] == pytest.approx(1.0) and big[0, 1] < 1e-300
    logs = ad.softmax_rows([[math.log(1), math.log(2), math.log(3)]]).value
    np.testing.assert_allclose(logs, [[1 / 6, 2 / 6, 3 / 6]], rtol=1e-14)


@given(arrays(np.float64, (4, 7), elements=finite))
def test_softmax_rows_sum_to_one(x):
    p = ad.softmax_rows(x).value
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0) and np.all(p <= 1)


def _ln(x, gain=1.0, bias=0.0):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = x.shape[1]
    return ad.layer_norm(x, np.full((1, k), gain), np.full((1, k), bias)).value


def test_layer_norm_examples():
    np.testing.assert_array_equal(_ln([5.0, 5.0, 5.0]), [[0.0, 0.0, 0.0]])
    # eps inside the root shifts the ±1 answer by about eps/2
    np.testing.assert_allclose(_ln([1.0, 3.0]), [[-1.0, 1.0]], atol=1e-5)
    np.testing.assert_allclose(_ln([1.0, 3.0], gain=2.0, bias=1.0), [[-1.0, 3.0]], atol=1e-5)


@given(arrays(np.float64, (3, 6), elements=st.floats(-100, 100)))
def test_layer_norm_standardizes_rows(x):
    out = _ln(x)
    var = x.var(axis=1)
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-9)
    # the variance is var/(var+eps): exactly 1 only in the eps → 0 limit
    np.testing.assert_allclose(out.var(axis=1), var / (var + ad.LN_EPS), atol=1e-9)


def test_dropout_modes(rng):
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(ad.dropout(x, 0.0, True, rng).value, x)
    np.testing.assert_array_equal(ad.dropout(x, 0.3, False, rng).value, x)
    with pytest.raises(ValueError):
        ad.dropout(x, 1.0, True, rng)


def test_dropout_statistics(rng):
    x = np.ones((200, 100))
    out = ad.dropout(x, 0.5, True, rng).value
    survivors = np.mean(out != 0)
    assert abs(survivors - 0.5) < 0.05
    assert abs(out.mean() - 1.0) < 0.05


def test_cross_entropy_examples():
    assert ad.cross_entropy([[1.0, 0.0]], [0]).item() == pytest.approx(0.0, abs=1e-15)
    assert ad.cross_entropy([[0.5, 0.5], [0.5, 0.5]], [0, 1]).item() == pytest.approx(math.log(2))
    assert ad.cross_entropy([[0.9, 0.1]], [1]).item() == pytest.approx(-math.log(0.1), rel=1e-12)
    # a zero probability hits the ln(1e-12) floor
    assert ad.cross_entropy([[1.0, 0.0]], [1]).item() == pytest.approx(-math.log(1e-12))


def test_linear_loss_gradient_is_input_outer_structure(rng):
    w = ad.Parameter(rng.normal(size=(3, 2)), "w")
    x = rng.normal(size=(1, 3))
    with ad.Tape() as tape:
        out = ad.matmul(x, w)
        loss = ad.matmul(out, np.ones((2, 1)))
        tape.backward(loss)
    np.testing.assert_array_equal(w.grad, np.repeat(x.T, 2, axis=1))


def test_parameter_grads_accumulate_across_tapes(rng):
    w = ad.Parameter(rng.normal(size=(2, 2)), "w")
    for _ in range(2):
        with ad.Tape() as tape:
            tape.backward(ad.matmul(ad.matmul(np.ones((1, 2)), w), np.ones((2, 1))))
    np.testing.assert_array_equal(w.grad, 2 * np.ones((2, 2)))
    w.zero_grad()
    assert not w.grad.any()


def test_no_tape_records_nothing(rng):
    w = ad.Parameter(rng.normal(size=(2, 2)), "w")
    with ad.Tape() as tape:
        with ad.no_tape():
            ad.matmul(w, w)
        assert len(tape) == 0
        ad.matmul(w, w)
        assert len(tape) == 1


def test_adam_first_step_closed_form():
    w = ad.Parameter(np.zeros((1, 1)), "w")
    w.grad = np.ones((1, 1))
    ad.Adam([w], lr=0.001).step()
    assert w.value[0, 0] == pytest.approx(-0.001, rel=1e-6)


def test_adam_rejects_non_finite_gradient():
    w = ad.Parameter(np.zeros((1, 2)), "layer.w")
    w.grad = np.array([[1.0, np.nan]])
    with pytest.raises(ad.NonFiniteGradient, match="layer.w"):
        ad.Adam([w]).step()
    assert not w.value.any()


PRIMITIVES = {
    "matmul": lambda a, b, r: ad.matmul(a, ad.transpose(b)),
    "add": lambda a, b, r: ad.add(a, b),
    "sub": lambda a, b, r: ad.sub(a, b),
    "mul": lambda a, b, r: ad.mul(a, b),
    "scale": lambda a, b, r: ad.scale(a, -1.7),
    "relu": lambda a, b, r: ad.relu(a),
    "gelu": lambda a, b, r: ad.gelu(a),
    "transpose": lambda a, b, r: ad.transpose(a),
    "concat_cols": lambda a, b, r: ad.concat_cols(a, b),
    "concat_rows": lambda a, b, r: ad.concat_rows(a, b),
    "mean_rows": lambda a, b, r: ad.mean_rows(a),
    "max_rows": lambda a, b, r: ad.max_rows(a),
    "gather_rows": lambda a, b, r: ad.gather_rows(a, [0, 2, 2, 4]),
    "softmax_rows": lambda a, b, r: ad.softmax_rows(a),
    "layer_norm": lambda a, b, r: ad.layer_norm(a, ad.mean_rows(b), ad.max_rows(b)),
    "dropout": lambda a, b, r: ad.dropout(a, 0.4, True, np.random.default_rng(r)),
    "add_bias": lambda a, b, r: ad.add_bias(a, ad.mean_rows(b)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", range(20))
def test_primitive_gradients(name, seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng, 5, 5), leaf(rng, 5, 5)
    weights = rng.normal(size=(10, 3))  # random projection makes the scalar loss sensitive to every output

    def loss():
        out = PRIMITIVES[name](a, b, seed)
        proj = ad.matmul(out, weights[: out.shape[1]])
        return ad.mean_rows(ad.transpose(ad.mean_rows(ad.mul(proj, proj))))

    report = check_gradients(loss, [a, b])
    assert report.max_rel_error < 1e-4, report


@pytest.mark.parametrize("seed", range(20))
def test_cross_entropy_gradient(seed):
    rng = np.random.default_rng(seed)
    logits = leaf(rng, 5, 2)
    labels = rng.integers(0, 2, size=5)
    report = check_gradients(lambda: ad.cross_entropy(ad.softmax_rows(logits), labels), [logits])
    assert report.max_rel_error < 1e-4, report
