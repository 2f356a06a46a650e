"""Array numerics: FFT conventions, padding/cropping, and convolution oracles.

Images are ``(height, width, channels)`` float64 arrays; spectra are complex128
arrays of the same shape in unshifted DFT layout (zero frequency at index
``(0, 0)``). The forward DFT is unnormalized and the inverse carries the
``1/(H*W)`` factor, i.e. the ``numpy.fft`` convention. File I/O elsewhere is
float32; everything here stays in double precision.
"""

import numpy as np

from .errors import ImaginaryResidueError, ShapeMismatchError

#: Inverse transforms of real-signal spectra must satisfy
#: ``max |imag| <= IMAG_RESIDUE_TOL * max |real|`` before the imaginary part
#: is discarded.
IMAG_RESIDUE_TOL = 1e-9


def ensure_image(t, name="image"):
    """Validate and return ``t`` as a float64 (H, W, C) array.

    Raises
    ------
    ShapeMismatchError
        If ``t`` is not three-dimensional with all dims >= 1.
    ValueError
        If ``t`` contains NaN or Inf entries.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3 or min(t.shape) < 1:
        raise ShapeMismatchError(
            f"{name} must be a (H, W, C) array with all dims >= 1, got shape {t.shape}"
        )
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{name} contains non-finite entries")
    return t


def ensure_spectrum(s, name="spectrum"):
    """Validate and return ``s`` as a complex128 (H, W, C) array."""
    s = np.asarray(s, dtype=np.complex128)
    if s.ndim != 3 or min(s.shape) < 1:
        raise ShapeMismatchError(
            f"{name} must be a (H, W, C) array with all dims >= 1, got shape {s.shape}"
        )
    if not np.all(np.isfinite(s)):
        raise ValueError(f"{name} contains non-finite entries")
    return s


def fft2(t):
    """Per-channel 2D DFT of an image (unnormalized forward transform)."""
    t = ensure_image(t)
    return np.fft.fft2(t, axes=(0, 1))


def ifft2(s):
    """Per-channel inverse 2D DFT, returning the real part.

    The imaginary part is discarded only after checking it is negligible
    relative to the real part; spectra that are not (products of) transforms
    of real signals fail this check.

    Raises
    ------
    ImaginaryResidueError
        If ``max |imag| > IMAG_RESIDUE_TOL * max |real|``.
    """
    s = ensure_spectrum(s)
    w = np.fft.ifft2(s, axes=(0, 1))
    imag_max = float(np.max(np.abs(w.imag)))
    real_max = float(np.max(np.abs(w.real)))
    if imag_max > IMAG_RESIDUE_TOL * real_max:
        raise ImaginaryResidueError(
            f"imaginary residue {imag_max:.3e} exceeds {IMAG_RESIDUE_TOL:.0e} * "
            f"max|real| = {IMAG_RESIDUE_TOL * real_max:.3e}"
        )
    return np.ascontiguousarray(w.real)


def circ_convolve(t, k_spec):
    """Per-channel circular convolution via pointwise spectral multiplication.

    ``k_spec`` is the spectrum of a kernel image laid out with its origin at
    index (0, 0); use e.g. ``fft2`` of a circularly shifted kernel.
    """
    t = ensure_image(t)
    k_spec = ensure_spectrum(k_spec, "kernel spectrum")
    if t.shape != k_spec.shape:
        raise ShapeMismatchError(
            f"image shape {t.shape} != kernel spectrum shape {k_spec.shape}"
        )
    return ifft2(fft2(t) * k_spec)


def _shift_zero(t, sy, sx):
    """Shift ``t`` by (sy, sx) filling with zeros: out[i, j] = t[i - sy, j - sx]."""
    h, w = t.shape[:2]
    out = np.zeros_like(t)
    if abs(sy) >= h or abs(sx) >= w:
        return out
    dst_y = slice(max(sy, 0), h + min(sy, 0))
    src_y = slice(max(-sy, 0), h + min(-sy, 0))
    dst_x = slice(max(sx, 0), w + min(sx, 0))
    src_x = slice(max(-sx, 0), w + min(-sx, 0))
    out[dst_y, dst_x] = t[src_y, src_x]
    return out


def kernel_center(kernel_shape):
    """Geometric center index of a kernel axis pair: ``(H // 2, W // 2)``."""
    return kernel_shape[0] // 2, kernel_shape[1] // 2


def spatial_convolve_oracle(t, kernel, boundary="circular"):
    """Direct O(N^2 K^2) spatial convolution; reference for all FFT paths.

    The kernel is centered: tap ``(a, b)`` acts at offset
    ``(a - H_k // 2, b - W_k // 2)``, so an impulse at the kernel center is the
    identity. ``boundary`` selects circular wrap-around or zero fill. Each
    channel is convolved independently with its own kernel channel.
    """
    t = ensure_image(t)
    kernel = ensure_image(kernel, "kernel")
    if (
        kernel.shape[0] > t.shape[0]
        or kernel.shape[1] > t.shape[1]
        or kernel.shape[2] != t.shape[2]
    ):
        raise ShapeMismatchError(
            f"kernel shape {kernel.shape} incompatible with image shape {t.shape}"
        )
    if boundary not in ("circular", "zero"):
        raise ValueError(f"unknown boundary {boundary!r}")
    cy, cx = kernel_center(kernel.shape)
    out = np.zeros_like(t)
    for a in range(kernel.shape[0]):
        for b in range(kernel.shape[1]):
            taps = kernel[a, b]  # (C,)
            if not taps.any():
                continue
            if boundary == "circular":
                shifted = np.roll(t, (a - cy, b - cx), axis=(0, 1))
            else:
                shifted = _shift_zero(t, a - cy, b - cx)
            out += shifted * taps
    return out


def pad_center(t, target_shape):
    """Zero-pad to ``target_shape = (H, W)``, centered.

    On odd size differences the extra pixel goes to the bottom/right, so
    ``crop_center`` is the exact inverse for matching shapes.
    """
    t = np.asarray(t)
    th, tw = target_shape
    h, w = t.shape[:2]
    if th < h or tw < w:
        raise ShapeMismatchError(f"cannot pad {t.shape[:2]} to smaller {target_shape}")
    oy, ox = (th - h) // 2, (tw - w) // 2
    out = np.zeros((th, tw) + t.shape[2:], dtype=t.dtype)
    out[oy : oy + h, ox : ox + w] = t
    return out


def crop_center(t, target_shape):
    """Centered crop to ``target_shape = (H, W)``; inverse of ``pad_center``."""
    t = np.asarray(t)
    th, tw = target_shape
    h, w = t.shape[:2]
    if th > h or tw > w:
        raise ShapeMismatchError(f"cannot crop {t.shape[:2]} to larger {target_shape}")
    oy, ox = (h - th) // 2, (w - tw) // 2
    return t[oy : oy + th, ox : ox + tw].copy()
