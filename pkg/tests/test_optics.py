import numpy as np
import pytest

from lenslesskit import numerics, optics


def delta_psf(size=5, c=3):
    psf = np.zeros((size, size, c))
    psf[size // 2, size // 2, :] = 1.0
    return psf


def random_psf(rng, h, w, c=3):
    return optics.normalize_psf(rng.uniform(0.0, 1.0, size=(h, w, c)))


def forward_oracle(op, x, psf):
    """Independent path: pad, brute-force zero-boundary convolution, crop."""
    padded = numerics.pad_center(x, op.padded_shape)
    full = numerics.spatial_convolve_oracle(padded, psf, boundary="zero")
    return numerics.crop_center(full, op.sensor_shape)


def test_delta_psf_forward_is_identity():
    rng = np.random.default_rng(0)
    op = optics.make_operator(delta_psf(), (12, 12))
    x = rng.uniform(0, 1, size=(12, 12, 3))
    assert np.max(np.abs(optics.forward(op, x) - x)) < 1e-12


def test_two_point_psf_superposes_copies():
    psf = np.zeros((5, 5, 1))
    psf[2, 2, 0] = 0.5
    psf[2, 4, 0] = 0.5  # second spike two pixels right of center
    op = optics.make_operator(psf, (11, 11))
    scene = np.zeros((11, 11, 1))
    scene[5, 5, 0] = 1.0
    y = optics.forward(op, scene)
    assert y[5, 5, 0] == pytest.approx(0.5, abs=1e-12)
    assert y[5, 7, 0] == pytest.approx(0.5, abs=1e-12)
    assert np.sum(np.abs(y)) == pytest.approx(1.0, abs=1e-10)


def test_forward_matches_bruteforce_grid():
    """Spec acceptance criterion 1, forward half: >=20 instances to 1e-10."""
    rng = np.random.default_rng(1)
    cases = 0
    for sensor in (8, 11, 16, 32):
        for psf_size in ((3, 3), (5, 7), (7, 7)):
            psf = random_psf(rng, *psf_size)
            op = optics.make_operator(psf, (sensor, sensor))
            for _ in range(2):
                x = rng.standard_normal((sensor, sensor, 3))
                got = optics.forward(op, x)
                ref = forward_oracle(op, x, psf)
                assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) < 1e-10
                cases += 1
    assert cases >= 20


def test_forward_zero_scene_and_homogeneity():
    rng = np.random.default_rng(2)
    op = optics.make_operator(random_psf(rng, 5, 5), (10, 10))
    assert np.all(optics.forward(op, np.zeros((10, 10, 3))) == 0.0)
    x = rng.standard_normal((10, 10, 3))
    lhs = optics.forward(op, 2.5 * x)
    rhs = 2.5 * optics.forward(op, x)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_crop_removes_energy():
    rng = np.random.default_rng(3)
    psf = random_psf(rng, 7, 7)
    op = optics.make_operator(psf, (12, 12))
    x = rng.uniform(0, 1, size=(12, 12, 3))
    padded = numerics.pad_center(x, op.padded_shape)
    uncropped = numerics.spatial_convolve_oracle(padded, psf, boundary="zero")
    y = optics.forward(op, x)
    assert np.sum(y**2) <= np.sum(uncropped**2) + 1e-12


def test_adjoint_inner_product_grid():
    """Spec acceptance criterion 1, adjoint half: <x, A^T y> == <A x, y>."""
    rng = np.random.default_rng(4)
    for sensor in (8, 16, 32):
        for psf_size in ((3, 3), (5, 5), (7, 7)):
            op = optics.make_operator(random_psf(rng, *psf_size), (sensor, sensor))
            x = rng.standard_normal((sensor, sensor, 3))
            y = rng.standard_normal((sensor, sensor, 3))
            lhs = np.vdot(optics.forward(op, x), y)
            rhs = np.vdot(x, optics.adjoint(op, y))
            assert abs(lhs - rhs) / abs(rhs) < 1e-10


def test_adjoint_identity_and_zero():
    rng = np.random.default_rng(5)
    op = optics.make_operator(delta_psf(), (9, 9))
    y = rng.standard_normal((9, 9, 3))
    assert np.max(np.abs(optics.adjoint(op, y) - y)) < 1e-12
    assert np.all(optics.adjoint(op, np.zeros((9, 9, 3))) == 0.0)


def test_perturb_epsilon_zero_is_identical():
    rng = np.random.default_rng(6)
    op = optics.make_operator(random_psf(rng, 5, 5), (10, 10))
    delta = rng.standard_normal(op.psf.shape)
    op2 = optics.perturb_operator(op, optics.MismatchSpec(delta, 0.0))
    assert np.array_equal(op2.otf, op.otf)


def test_perturb_linearity_in_epsilon():
    rng = np.random.default_rng(7)
    psf = random_psf(rng, 5, 5)
    op = optics.make_operator(psf, (10, 10))
    delta = rng.standard_normal(psf.shape)
    delta -= delta.mean(axis=(0, 1))
    eps = 3e-2
    op_hat = optics.perturb_operator(op, optics.MismatchSpec(delta, eps))
    op_delta = optics.make_operator(delta, (10, 10))
    x = rng.standard_normal((10, 10, 3))
    lhs = optics.forward(op_hat, x) - optics.forward(op, x)
    rhs = eps * optics.forward(op_delta, x)
    assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)) < 1e-10


def test_perturb_norm_scales_linearly():
    rng = np.random.default_rng(8)
    op = optics.make_operator(random_psf(rng, 5, 5), (10, 10))
    delta = rng.standard_normal(op.psf.shape)
    spec1 = optics.MismatchSpec(delta, 1e-2)
    spec2 = optics.MismatchSpec(delta, 2e-2)
    n1 = np.linalg.norm(optics.perturb_operator(op, spec1).otf - op.otf)
    n2 = np.linalg.norm(optics.perturb_operator(op, spec2).otf - op.otf)
    assert n2 / n1 == pytest.approx(2.0, rel=1e-9)


def test_spectral_radius_cases():
    rng = np.random.default_rng(9)
    op = optics.make_operator(delta_psf(), (8, 8))
    assert optics.spectral_radius(op) == pytest.approx(1.0, abs=1e-12)
    op_half = optics.make_operator(0.5 * delta_psf(), (8, 8))
    assert optics.spectral_radius(op_half) == pytest.approx(0.5, abs=1e-12)
    psf = random_psf(rng, 5, 5)
    op_r = optics.make_operator(psf, (8, 8))
    # direct recomputation from the padded, shifted PSF
    expected = np.max(np.abs(optics.psf_to_otf(psf, op_r.padded_shape)))
    assert optics.spectral_radius(op_r) == pytest.approx(expected, rel=1e-12)


def test_forward_shift_covariance_interior():
    rng = np.random.default_rng(10)
    psf = random_psf(rng, 3, 3)
    op = optics.make_operator(psf, (12, 12))
    x = np.zeros((12, 12, 3))
    x[4:7, 4:7] = rng.uniform(0.2, 1.0, size=(3, 3, 3))
    y = optics.forward(op, x)
    y_shift = optics.forward(op, np.roll(x, (2, 1), axis=(0, 1)))
    # support stays far from the crop boundary, so the shift commutes
    assert np.max(np.abs(np.roll(y, (2, 1), axis=(0, 1)) - y_shift)) < 1e-10


def test_constant_scene_mean_preserved_in_interior():
    rng = np.random.default_rng(11)
    psf = random_psf(rng, 5, 5)
    op = optics.make_operator(psf, (14, 14))
    c = 0.6
    y = optics.forward(op, np.full((14, 14, 3), c))
    r = 2  # psf radius: interior pixels see the full (unit-mass) kernel
    interior = y[r:-r, r:-r]
    assert np.max(np.abs(interior - c)) < 1e-10
    # boundary effect exists but is bounded by the constant itself
    assert y.min() >= -1e-12 and y.max() <= c + 1e-10


def test_normalize_and_check_psf():
    rng = np.random.default_rng(12)
    psf = optics.normalize_psf(rng.uniform(0, 1, size=(5, 5, 3)))
    optics.check_psf(psf)
    sums = psf.sum(axis=(0, 1))
    assert np.max(np.abs(sums - 1.0)) < 1e-9
    with pytest.raises(ValueError):
        optics.normalize_psf(-psf)
