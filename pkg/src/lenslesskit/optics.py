"""Shift-invariant camera operator: build, apply, adjoint, and perturb.

The camera maps a scene to a sensor image by linear convolution with the
point spread function (PSF), realized as circular convolution on a padded
grid followed by a centered crop. The operator is fully described by the
optical transfer function (OTF), the FFT of the zero-padded PSF circularly
shifted so its geometric center sits at index (0, 0).
"""

from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import ShapeMismatchError

PSF_SUM_TOL = 1e-9


def normalize_psf(image):
    """Return a valid PSF image: nonnegative, per-channel sum equal to 1."""
    image = numerics.ensure_image(image, "psf")
    if np.any(image < 0):
        raise ValueError("psf entries must be nonnegative")
    sums = image.sum(axis=(0, 1))
    if np.any(sums <= 0):
        raise ValueError("psf channels must have positive mass")
    return image / sums


def check_psf(image):
    """Validate PSF invariants (nonnegative, unit channel sums)."""
    image = numerics.ensure_image(image, "psf")
    if np.any(image < 0):
        raise ValueError("psf entries must be nonnegative")
    sums = image.sum(axis=(0, 1))
    if np.any(np.abs(sums - 1.0) >= PSF_SUM_TOL):
        raise ValueError(f"psf channel sums {sums} deviate from 1 by >= {PSF_SUM_TOL}")
    return image


@dataclass(frozen=True)
class SystemOperator:
    """Immutable shift-invariant system: OTF plus pad/crop geometry.

    ``otf`` lives on ``padded_shape``; scene and sensor share the same
    ``(H, W)`` footprint and are embedded centered in the padded grid.
    """

    psf: np.ndarray
    otf: np.ndarray
    sensor_shape: tuple
    scene_shape: tuple
    psf_shape: tuple
    padded_shape: tuple

    @property
    def channels(self):
        return self.psf.shape[2]


@dataclass(frozen=True)
class MismatchSpec:
    """Additive operator perturbation: psf -> psf + epsilon * delta_psf."""

    delta_psf: np.ndarray
    epsilon: float


def _padded_shape(sensor_shape, psf_shape):
    # linear-convolution embedding, rounded up to even sizes
    ph = sensor_shape[0] + psf_shape[0] - 1
    pw = sensor_shape[1] + psf_shape[1] - 1
    return ph + ph % 2, pw + pw % 2


def psf_to_otf(psf, padded_shape):
    """Pad a PSF to ``padded_shape``, shift its center to (0, 0), and FFT."""
    hp, wp = psf.shape[:2]
    padded = numerics.pad_center(psf, padded_shape)
    cy = (padded_shape[0] - hp) // 2 + hp // 2
    cx = (padded_shape[1] - wp) // 2 + wp // 2
    origin = np.roll(padded, (-cy, -cx), axis=(0, 1))
    return np.fft.fft2(origin, axes=(0, 1))


def make_operator(psf, sensor_shape):
    """Build the camera operator for a PSF and sensor footprint.

    The PSF is not required to be normalized here (perturbed operators are
    deliberately unnormalized); use :func:`normalize_psf` when constructing
    physical PSFs.
    """
    psf = numerics.ensure_image(psf, "psf")
    sensor_shape = (int(sensor_shape[0]), int(sensor_shape[1]))
    if psf.shape[0] > sensor_shape[0] + psf.shape[0] or min(sensor_shape) < 1:
        raise ShapeMismatchError(f"invalid sensor shape {sensor_shape}")
    padded = _padded_shape(sensor_shape, psf.shape[:2])
    otf = psf_to_otf(psf, padded)
    return SystemOperator(
        psf=psf,
        otf=otf,
        sensor_shape=sensor_shape,
        scene_shape=sensor_shape,
        psf_shape=psf.shape[:2],
        padded_shape=padded,
    )


def make_circular_operator(psf, grid_shape):
    """Uncropped variant: scene, sensor, and padded grid all coincide.

    Forward is then pure circular convolution, and exact inversion is
    pointwise spectral division (used by the decomposition analysis).
    """
    psf = numerics.ensure_image(psf, "psf")
    grid = (int(grid_shape[0]), int(grid_shape[1]))
    if psf.shape[0] > grid[0] or psf.shape[1] > grid[1]:
        raise ShapeMismatchError(f"psf {psf.shape[:2]} larger than grid {grid}")
    return SystemOperator(
        psf=psf,
        otf=psf_to_otf(psf, grid),
        sensor_shape=grid,
        scene_shape=grid,
        psf_shape=psf.shape[:2],
        padded_shape=grid,
    )


def forward(op, x):
    """Apply the camera: pad, circular-convolve with the OTF, center-crop.

    Linear in ``x``; equals linear convolution with the PSF followed by a
    centered crop to the sensor window.
    """
    x = numerics.ensure_image(x, "scene")
    if x.shape[:2] != tuple(op.scene_shape) or x.shape[2] != op.channels:
        raise ShapeMismatchError(
            f"scene shape {x.shape} does not match operator scene {op.scene_shape} "
            f"x {op.channels} channels"
        )
    padded = numerics.pad_center(x, op.padded_shape)
    conv = numerics.ifft2(numerics.fft2(padded) * op.otf)
    return numerics.crop_center(conv, op.sensor_shape)


def adjoint(op, y):
    """Exact adjoint of :func:`forward`: pad, multiply by conj(OTF), crop."""
    y = numerics.ensure_image(y, "measurement")
    if y.shape[:2] != tuple(op.sensor_shape) or y.shape[2] != op.channels:
        raise ShapeMismatchError(
            f"measurement shape {y.shape} does not match operator sensor "
            f"{op.sensor_shape} x {op.channels} channels"
        )
    padded = numerics.pad_center(y, op.padded_shape)
    conv = numerics.ifft2(numerics.fft2(padded) * np.conj(op.otf))
    return numerics.crop_center(conv, op.scene_shape)


def perturb_operator(op, m):
    """Operator built from ``psf + epsilon * delta_psf`` (no renormalization).

    Skipping renormalization keeps the OTF deviation exactly
    ``epsilon * otf(delta_psf)``, so additive-mismatch analysis is exact.
    The perturbed operator keeps the source operator's grid geometry.
    """
    delta = numerics.ensure_image(m.delta_psf, "delta_psf")
    if delta.shape != op.psf.shape:
        raise ShapeMismatchError(
            f"delta_psf shape {delta.shape} != psf shape {op.psf.shape}"
        )
    psf = op.psf + float(m.epsilon) * delta
    return SystemOperator(
        psf=psf,
        otf=psf_to_otf(psf, op.padded_shape),
        sensor_shape=op.sensor_shape,
        scene_shape=op.scene_shape,
        psf_shape=op.psf_shape,
        padded_shape=op.padded_shape,
    )


def spectral_radius(op):
    """Largest OTF magnitude over all frequencies and channels.

    Exact spectral radius of the circular (uncropped) operator; an upper
    bound surrogate for the cropped operator's norm.
    """
    return float(np.max(np.abs(op.otf)))
