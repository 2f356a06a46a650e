"""Adjoint (dot-product) and finite-difference checks for every primitive."""

import numpy as np
import pytest

from lenslesskit import autodiff as ad


def fd_check(build, x0, h=1e-5, tol=1e-6):
    """Compare backward() against central differences for scalar build(leaf)."""
    x_leaf = ad.leaf(x0)
    out = build(x_leaf)
    ad.backward(out)
    got = x_leaf.grad

    def f(x):
        return float(ad.value_of(build(ad.Var(x))))

    ref = ad.numerical_gradient(f, x0, h=h)
    assert ad.relative_error(got, ref) < tol, f"rel err {ad.relative_error(got, ref)}"


def dot_product_check(apply_linear, in_shape, out_shape=None, complex_in=False, tol=1e-10):
    """<J v, u> == <v, J^T u> for a linear primitive."""
    rng = np.random.default_rng(0)
    if complex_in:
        v = rng.standard_normal(in_shape) + 1j * rng.standard_normal(in_shape)
    else:
        v = rng.standard_normal(in_shape)
    leaf = ad.Var(v, requires_grad=True)
    out = apply_linear(leaf)
    out_val = ad.value_of(out)
    if np.iscomplexobj(out_val):
        u = rng.standard_normal(out_val.shape) + 1j * rng.standard_normal(out_val.shape)
    else:
        u = rng.standard_normal(out_val.shape)
    ad.backward(out, seed=u)
    # real inner product over (re, im) pairs
    lhs = np.sum(out_val.real * np.asarray(u).real) + np.sum(out_val.imag * np.asarray(u).imag)
    g = leaf.grad
    rhs = np.sum(np.asarray(v).real * g.real) + np.sum(np.asarray(v).imag * np.asarray(g).imag)
    assert abs(lhs - rhs) / max(abs(lhs), 1e-12) < tol


def test_plain_arrays_pass_through_untouched():
    a = np.ones((2, 2, 1))
    out = ad.add(a, a)
    assert isinstance(out, np.ndarray)
    out2 = ad.add(ad.leaf(a), a)
    assert isinstance(out2, ad.Var)
    assert np.array_equal(out, ad.value_of(out2))


def test_linear_primitive_adjoints():
    dot_product_check(lambda v: ad.fft2(v), (6, 5, 2))
    dot_product_check(lambda v: ad.fft2(v), (6, 5, 2), complex_in=True)
    dot_product_check(lambda v: ad.ifft2_real(v), (4, 6, 3), complex_in=True)
    dot_product_check(lambda v: ad.pad_center(v, (9, 9)), (5, 4, 2))
    dot_product_check(lambda v: ad.crop_center(v, (3, 3)), (7, 8, 2))
    dot_product_check(lambda v: ad.roll(v, 2, 0), (5, 5, 1))
    dot_product_check(lambda v: ad.concat_channels(v, np.zeros((4, 4, 2))), (4, 4, 3))
    dot_product_check(lambda v: ad.mul(v, 1.7), (3, 3, 2))
    dot_product_check(
        lambda v: ad.mul(v, np.full((3, 3, 2), 0.3 - 0.8j)), (3, 3, 2), complex_in=True
    )


def test_fft_pair_round_trip_gradient():
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal((5, 5, 2))
    fd_check(lambda v: ad.mean(ad.square(ad.ifft2_real(ad.fft2(v)))), x0)


def test_arith_gradients():
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((4, 4, 2))
    other = rng.standard_normal((4, 4, 2))
    fd_check(lambda v: ad.mean(ad.square(ad.add(v, other))), x0)
    fd_check(lambda v: ad.mean(ad.square(ad.sub(other, v))), x0)
    fd_check(lambda v: ad.mean(ad.square(ad.mul(v, other))), x0)
    fd_check(lambda v: ad.mean(ad.square(ad.div(other, ad.add(ad.square(v), 1.0)))), x0)


def test_scalar_broadcast_gradients():
    rng = np.random.default_rng(3)
    arr = rng.standard_normal((4, 4, 1))
    s0 = np.asarray(0.37)
    fd_check(lambda s: ad.mean(ad.square(ad.mul(s, arr))), s0)
    fd_check(lambda s: ad.mean(ad.square(ad.div(arr, ad.softplus(s)))), s0)


def test_softplus_forward_and_inverse():
    vals = np.array([1e-6, 1e-3, 0.5, 20.0, 50.0])
    raw = ad.softplus_inverse(vals)
    back = ad.value_of(ad.softplus(raw))
    assert np.max(np.abs(back - vals) / vals) < 1e-12
    assert np.all(ad.value_of(ad.softplus(np.array([-100.0, 0.0, 100.0]))) > 0)


def test_soft_threshold_values_and_gradient():
    x = np.array([[-2.0, -0.5, 0.0, 0.5, 2.0]]).reshape(1, 5, 1)
    out = ad.soft_threshold(x, 1.0)
    assert np.allclose(out.ravel(), [-1.0, 0.0, 0.0, 0.0, 1.0])
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal((4, 4, 1))
    fd_check(lambda v: ad.mean(ad.square(ad.soft_threshold(v, 0.3))), x0)
    # gradient w.r.t. the threshold scalar
    t0 = np.asarray(0.3)
    fd_check(lambda t: ad.mean(ad.square(ad.soft_threshold(x0, ad.softplus(t)))), t0)


def test_soft_threshold_subgradient_is_zero_in_dead_zone():
    x = np.array([[[0.0]], [[0.2]]])  # both inside the threshold
    leaf = ad.Var(x, requires_grad=True)
    out = ad.sum_all(ad.soft_threshold(leaf, 0.5))
    ad.backward(out)
    assert np.all(leaf.grad == 0.0)


def test_nonlinearity_gradients():
    rng = np.random.default_rng(5)
    x0 = rng.standard_normal((4, 4, 2))
    fd_check(lambda v: ad.mean(ad.square(ad.maximum0(v))), x0)
    fd_check(lambda v: ad.mean(ad.square(ad.leaky_relu(v, 0.1))), x0)
    x_in = rng.uniform(0.1, 0.9, size=(4, 4, 2))  # keep away from clamp corners
    fd_check(lambda v: ad.mean(ad.square(ad.clamp01(v))), x_in)


def test_complex_pair_gradients():
    rng = np.random.default_rng(6)
    re0 = rng.standard_normal((4, 4, 1))
    im_fixed = rng.standard_normal((4, 4, 1))
    spec = rng.standard_normal((4, 4, 1)) + 1j * rng.standard_normal((4, 4, 1))
    spec = spec + np.conj(np.roll(np.flip(spec, (0, 1)), (1, 1), (0, 1)))  # hermitianize

    def build(re):
        w = ad.complex_pair(re, im_fixed)
        return ad.mean(ad.square(ad.ifft2_real(ad.mul(w, spec))))

    fd_check(build, re0)


def test_conv3x3_gradients():
    rng = np.random.default_rng(7)
    x0 = rng.standard_normal((5, 5, 2))
    w0 = 0.3 * rng.standard_normal((3, 3, 2, 3))
    b0 = 0.1 * rng.standard_normal(3)
    target = rng.standard_normal((5, 5, 3))

    fd_check(lambda v: ad.mean(ad.square(ad.sub(ad.conv3x3(v, w0, b0), target))), x0)
    fd_check(lambda w: ad.mean(ad.square(ad.sub(ad.conv3x3(x0, w, b0), target))), w0)
    fd_check(lambda b: ad.mean(ad.square(ad.sub(ad.conv3x3(x0, w0, b), target))), b0)


def test_composed_linear_ops_equal_transposed_product():
    # gradient of <A x, u> w.r.t. x equals A^T u for a two-stage linear map
    rng = np.random.default_rng(8)
    x = rng.standard_normal((6, 6, 1))
    u = rng.standard_normal((4, 4, 1))
    leaf = ad.Var(x, requires_grad=True)
    out = ad.crop_center(ad.roll(leaf, 1, 0), (4, 4))
    ad.backward(out, seed=u)
    manual = np.roll(np.pad(u, ((1, 1), (1, 1), (0, 0))), -1, axis=0)
    assert np.allclose(leaf.grad, manual)


def test_unused_parameter_gets_no_gradient():
    used = ad.leaf(np.ones((2, 2, 1)))
    unused = ad.leaf(np.ones((2, 2, 1)))
    out = ad.mean(ad.square(used))
    ad.backward(out)
    assert unused.grad is None
    assert used.grad is not None


def test_gradient_accumulates_until_zeroed():
    p = ad.leaf(np.ones((2, 2, 1)))
    for _ in range(2):
        ad.backward(ad.sum_all(ad.mul(p, 2.0)))
    assert np.allclose(p.grad, 4.0)
    ad.zero_grads([p])
    assert p.grad is None


def test_backward_requires_var():
    with pytest.raises(TypeError):
        ad.backward(np.ones(3))
