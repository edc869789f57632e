import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saligrad.tensor import (as_tensor, check_finite, elementwise, fold_patches,
                             norms, unfold_patches)


def unfold_oracle(x, n):
    """Patch extraction the slow way: one explicit loop per output column."""
    k, h, w = x.shape
    pad = n // 2
    padded = np.zeros((k, h + 2 * pad, w + 2 * pad))
    padded[:, pad:pad + h, pad:pad + w] = x
    cols = np.zeros((k * n * n, h * w))
    for r in range(h):
        for c in range(w):
            patch = padded[:, r:r + n, c:c + n]
            cols[:, r * w + c] = patch.reshape(-1)
    return cols


def test_unfold_matches_loop_oracle(rng):
    for k, h, w, n in [(1, 4, 4, 3), (3, 5, 7, 3), (2, 6, 6, 5), (4, 3, 3, 1)]:
        x = rng.standard_normal((k, h, w))
        got = unfold_patches(x, n)
        assert got.shape == (k * n * n, h * w)
        np.testing.assert_array_equal(got, unfold_oracle(x, n))


def test_unfold_1x1_is_a_reshape(rng):
    x = rng.standard_normal((3, 5, 4))
    np.testing.assert_array_equal(unfold_patches(x, 1), x.reshape(3, 20))


def test_unfold_rejects_even_kernel(rng):
    with pytest.raises(ValueError):
        unfold_patches(rng.standard_normal((1, 4, 4)), 2)


def test_fold_is_the_adjoint_of_unfold(rng):
    # <unfold(x), C> == <x, fold(C)> for all C, the defining property of the
    # scatter-add backward pass
    for k, h, w, n in [(2, 4, 5, 3), (1, 6, 6, 5), (3, 4, 4, 1)]:
        x = rng.standard_normal((k, h, w))
        cols = rng.standard_normal((k * n * n, h * w))
        lhs = float(np.sum(unfold_patches(x, n) * cols))
        rhs = float(np.sum(x * fold_patches(cols, n, k, h, w)))
        assert abs(lhs - rhs) < 1e-10 * max(abs(lhs), 1.0)


def test_conv_via_unfold_matches_direct_convolution(rng):
    # weight @ unfold(x) must equal the textbook same-padding convolution
    k_in, k_out, h, w, n = 3, 4, 6, 5, 3
    x = rng.standard_normal((k_in, h, w))
    weight = rng.standard_normal((k_out, k_in * n * n))
    got = (weight @ unfold_patches(x, n)).reshape(k_out, h, w)

    pad = n // 2
    padded = np.zeros((k_in, h + 2 * pad, w + 2 * pad))
    padded[:, pad:pad + h, pad:pad + w] = x
    w4 = weight.reshape(k_out, k_in, n, n)
    expected = np.zeros((k_out, h, w))
    for o in range(k_out):
        for r in range(h):
            for c in range(w):
                expected[o, r, c] = np.sum(w4[o] * padded[:, r:r + n, c:c + n])
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)


def test_elementwise_ops(rng):
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((2, 3))
    np.testing.assert_array_equal(elementwise(a, b, "add"), a + b)
    np.testing.assert_array_equal(elementwise(a, b, "mul"), a * b)


def test_elementwise_rejects_shape_mismatch(rng):
    with pytest.raises(ValueError):
        elementwise(rng.standard_normal((2, 3)), rng.standard_normal((3, 2)), "add")
    with pytest.raises(ValueError):
        elementwise(rng.standard_normal((2,)), rng.standard_normal((2,)), "sub")


def test_norms_against_numpy(rng):
    v = rng.standard_normal(40)
    got = norms(v)
    assert got["l2"] == pytest.approx(float(np.linalg.norm(v)), abs=1e-12)
    assert got["maxabs"] == pytest.approx(float(np.max(np.abs(v))), abs=1e-12)
    assert got["sum"] == pytest.approx(float(v.sum()), abs=1e-12)
    assert got["possum"] == pytest.approx(float(np.clip(v, 0, None).sum()), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_norms_invariants(values):
    got = norms(np.asarray(values))
    assert got["l2"] >= 0
    assert got["maxabs"] >= 0
    assert got["possum"] >= got["sum"] - 1e-9


def test_as_tensor_rejects_nan_and_bad_shape():
    with pytest.raises(ValueError):
        as_tensor([1.0, float("nan")])
    with pytest.raises(ValueError):
        as_tensor([1.0, 2.0], shape=(3,))
    out = as_tensor([[1, 2], [3, 4]])
    assert out.dtype == np.float64
    assert out.flags["C_CONTIGUOUS"]


def test_check_finite_raises():
    check_finite("x", np.ones(3))
    with pytest.raises(FloatingPointError):
        check_finite("x", np.array([1.0, np.inf]))
