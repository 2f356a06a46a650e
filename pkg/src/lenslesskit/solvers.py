"""Camera inversion: Wiener filtering, ADMM, and their trainable variants.

All solvers run on the operator's padded grid and are written against the
:mod:`lenslesskit.autodiff` primitives, so the same code serves both the
plain (ndarray) and the recorded (``Var``) execution. Fixed-parameter ADMM
is literally the unrolled solver with tied, non-learnable parameters, which
makes the two bit-identical by construction.

The ADMM splitting follows the standard FFT-diagonal factorization for
cropped shift-invariant systems: auxiliary variables for the data term
(v = Hx, with the sensor crop handled through the diagonal C^T C mask),
for the anisotropic finite-difference sparsity term (u = Psi x, solved by
soft thresholding), and for the nonnegativity projection (w = x). The
x-update is a closed-form frequency-domain solve because H^T H and
Psi^T Psi are circularly diagonalizable.
"""

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidParamsError, ShapeMismatchError

DEFAULT_TIK_EPS = 1e-4


@dataclass(frozen=True)
class SolverConfig:
    """Fixed solver hyperparameters.

    ``mu1``/``mu2``/``mu3`` weight the data, sparsity, and nonnegativity
    splits; ``tau`` is the sparsity weight; ``tik_eps`` regularizes the
    Wiener inverse. Defaults were frozen after a coarse grid search on the
    synthetic benchmark (see ``benchmarks.py``).
    """

    n_iter: int = 100
    mu1: float = 1e-2
    mu2: float = 1e-3
    mu3: float = 1e-3
    tau: float = 1e-4
    tik_eps: float = DEFAULT_TIK_EPS
    nonneg: bool = True

    def __post_init__(self):
        for name in ("mu1", "mu2", "mu3", "tau", "tik_eps"):
            if getattr(self, name) <= 0:
                raise InvalidParamsError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.n_iter < 1:
            raise InvalidParamsError(f"n_iter must be >= 1, got {self.n_iter}")


def _check_measurement(op, y, name="measurement"):
    val = ad.value_of(y)
    if val.ndim != 3 or val.shape[:2] != tuple(op.sensor_shape) or val.shape[2] != op.channels:
        raise ShapeMismatchError(
            f"{name} shape {val.shape} does not match operator sensor "
            f"{op.sensor_shape} x {op.channels} channels"
        )


def wiener_filter(op, tik_eps):
    """Regularized inverse filter conj(OTF) / (|OTF|^2 + tik_eps)."""
    if tik_eps <= 0:
        raise InvalidParamsError(f"tik_eps must be > 0, got {tik_eps}")
    otf = op.otf
    return np.conj(otf) / ((otf * np.conj(otf)).real + tik_eps)


def wiener_inverse(op, y, tik_eps=DEFAULT_TIK_EPS):
    """Single-step regularized frequency-domain inversion.

    As ``tik_eps -> 0`` with an invertible OTF this approaches exact
    inversion on the padded grid. Differentiable with respect to ``y``.
    """
    _check_measurement(op, y)
    filt = wiener_filter(op, tik_eps)
    spec = ad.mul(ad.fft2(ad.pad_center(y, op.padded_shape)), filt)
    return ad.crop_center(ad.ifft2_real(spec), op.scene_shape)


# ---------------------------------------------------------------------------
# ADMM


def _difference_spectrum(padded_shape):
    """|fft|^2 of the two circular forward-difference kernels, shape (H, W, 1)."""
    ph, pw = padded_shape
    k1 = np.zeros((ph, pw))
    k1[0, 0] = -1.0
    k1[-1, 0] = 1.0
    k2 = np.zeros((ph, pw))
    k2[0, 0] = -1.0
    k2[0, -1] = 1.0
    f1 = np.fft.fft2(k1)
    f2 = np.fft.fft2(k2)
    return (np.abs(f1) ** 2 + np.abs(f2) ** 2)[:, :, None]


def _operator_constants(op):
    otf = op.otf
    otf_sq = (otf * np.conj(otf)).real
    mask = np.zeros(op.padded_shape + (1,))
    oy = (op.padded_shape[0] - op.sensor_shape[0]) // 2
    ox = (op.padded_shape[1] - op.sensor_shape[1]) // 2
    mask[oy : oy + op.sensor_shape[0], ox : ox + op.sensor_shape[1]] = 1.0
    return otf, np.conj(otf), otf_sq, _difference_spectrum(op.padded_shape), mask


class LeAdmmParams:
    """Per-iteration ADMM penalties/threshold, softplus-reparameterized.

    Raw (unconstrained) scalars are stored per iteration; effective values
    ``softplus(raw)`` are strictly positive by construction. Built with
    ``trainable=True`` the raw scalars are autodiff leaves.
    """

    def __init__(self, raw_mu1, raw_mu2, raw_mu3, raw_tau, nonneg=True):
        n = len(raw_mu1)
        if n < 1 or any(len(v) != n for v in (raw_mu2, raw_mu3, raw_tau)):
            raise InvalidParamsError("per-iteration parameter lists must share length >= 1")
        self.raw_mu1 = list(raw_mu1)
        self.raw_mu2 = list(raw_mu2)
        self.raw_mu3 = list(raw_mu3)
        self.raw_tau = list(raw_tau)
        self.nonneg = nonneg

    @property
    def n_iter(self):
        return len(self.raw_mu1)

    @classmethod
    def from_config(cls, cfg, n_iter=None, trainable=True):
        """Tie every iteration to the fixed config values."""
        k = cfg.n_iter if n_iter is None else n_iter
        raws = {}
        for name in ("mu1", "mu2", "mu3", "tau"):
            raw = float(ad.softplus_inverse(getattr(cfg, name)))
            if trainable:
                raws[name] = [ad.leaf(raw) for _ in range(k)]
            else:
                raws[name] = [np.float64(raw) for _ in range(k)]
        return cls(raws["mu1"], raws["mu2"], raws["mu3"], raws["tau"], nonneg=cfg.nonneg)

    def effective(self, k):
        """Strictly positive per-iteration values (mu1, mu2, mu3, tau)."""
        return (
            ad.softplus(self.raw_mu1[k]),
            ad.softplus(self.raw_mu2[k]),
            ad.softplus(self.raw_mu3[k]),
            ad.softplus(self.raw_tau[k]),
        )

    def parameters(self, prefix="le_admm"):
        out = OrderedDict()
        for name, raws in (
            ("mu1", self.raw_mu1),
            ("mu2", self.raw_mu2),
            ("mu3", self.raw_mu3),
            ("tau", self.raw_tau),
        ):
            for k, raw in enumerate(raws):
                if isinstance(raw, ad.Var) and raw.requires_grad:
                    out[f"{prefix}.{name}.{k}"] = raw
        return out


def _admm_iterations(op, y, params):
    """Shared ADMM loop; returns (cropped estimate, per-iteration primal norms)."""
    otf, otf_conj, otf_sq, psi_sq, mask = _operator_constants(op)
    ph, pw = op.padded_shape
    zeros = np.zeros((ph, pw, op.channels))

    cty = ad.pad_center(y, (ph, pw))
    x = zeros
    xi = zeros
    eta1 = zeros
    eta2 = zeros
    rho = zeros
    hx = zeros
    d1 = zeros
    d2 = zeros

    residuals = np.empty(params.n_iter)
    for k in range(params.n_iter):
        mu1, mu2, mu3, tau = params.effective(k)
        thr = ad.div(tau, mu2)

        u1 = ad.soft_threshold(ad.add(d1, ad.div(eta1, mu2)), thr)
        u2 = ad.soft_threshold(ad.add(d2, ad.div(eta2, mu2)), thr)
        v = ad.div(ad.add(ad.add(cty, ad.mul(mu1, hx)), xi), ad.add(mask, mu1))
        w_target = ad.add(x, ad.div(rho, mu3))
        w = ad.maximum0(w_target) if params.nonneg else w_target

        # x-update: frequency-domain solve of
        # (mu1 H^T H + mu2 Psi^T Psi + mu3 I) x = H^T(mu1 v - xi) + Psi^T(mu2 u - eta) + (mu3 w - rho)
        rv = ad.sub(ad.mul(mu1, v), xi)
        ht_rv = ad.ifft2_real(ad.mul(ad.fft2(rv), otf_conj))
        ru1 = ad.sub(ad.mul(mu2, u1), eta1)
        ru2 = ad.sub(ad.mul(mu2, u2), eta2)
        psit = ad.add(
            ad.sub(ad.roll(ru1, 1, 0), ru1),
            ad.sub(ad.roll(ru2, 1, 1), ru2),
        )
        rw = ad.sub(ad.mul(mu3, w), rho)
        rhs = ad.add(ad.add(ht_rv, psit), rw)
        denom = ad.add(ad.add(ad.mul(mu1, otf_sq), ad.mul(mu2, psi_sq)), mu3)
        x = ad.ifft2_real(ad.div(ad.fft2(rhs), denom))

        hx = ad.ifft2_real(ad.mul(ad.fft2(x), otf))
        d1 = ad.sub(ad.roll(x, -1, 0), x)
        d2 = ad.sub(ad.roll(x, -1, 1), x)

        pr_v = ad.sub(hx, v)
        pr_1 = ad.sub(d1, u1)
        pr_2 = ad.sub(d2, u2)
        pr_w = ad.sub(x, w)
        xi = ad.add(xi, ad.mul(mu1, pr_v))
        eta1 = ad.add(eta1, ad.mul(mu2, pr_1))
        eta2 = ad.add(eta2, ad.mul(mu2, pr_2))
        rho = ad.add(rho, ad.mul(mu3, pr_w))

        residuals[k] = np.sqrt(
            np.sum(ad.value_of(pr_v) ** 2)
            + np.sum(ad.value_of(pr_1) ** 2)
            + np.sum(ad.value_of(pr_2) ** 2)
            + np.sum(ad.value_of(pr_w) ** 2)
        )

    out = ad.crop_center(x, op.scene_shape)
    if params.nonneg:
        out = ad.maximum0(out)
    return out, residuals


def admm(op, y, cfg=None):
    """Fixed-parameter ADMM for the cropped shift-invariant inverse problem.

    Solves ``min 0.5 ||C H x - y||^2 + tau ||Psi x||_1 (+ x >= 0)`` and
    returns the estimate together with per-iteration primal residual norms.
    Non-convergence is reported through the residual history, never raised.
    """
    if cfg is None:
        cfg = SolverConfig()
    _check_measurement(op, y)
    params = LeAdmmParams.from_config(cfg, trainable=False)
    image, residuals = _admm_iterations(op, y, params)
    return image, residuals


def unrolled_admm_forward(op, y, params):
    """Differentiable unrolled ADMM with per-iteration learned parameters.

    Identical update equations as :func:`admm`; gradients flow to every raw
    parameter and to ``y`` (needed to backpropagate into pre-processors).
    """
    _check_measurement(op, y)
    image, _ = _admm_iterations(op, y, params)
    return image


# ---------------------------------------------------------------------------
# trainable single-step inversion


class TrainInvParams:
    """Trainable frequency-domain inversion filter, stored as real/imag leaves."""

    def __init__(self, w_re, w_im):
        if ad.value_of(w_re).shape != ad.value_of(w_im).shape:
            raise ShapeMismatchError("w_re and w_im must share a shape")
        self.w_re = w_re if isinstance(w_re, ad.Var) else ad.leaf(w_re)
        self.w_im = w_im if isinstance(w_im, ad.Var) else ad.leaf(w_im)

    @classmethod
    def from_operator(cls, op, tik_eps=DEFAULT_TIK_EPS):
        """Initialize from the operator's regularized inverse filter."""
        filt = wiener_filter(op, tik_eps)
        return cls(ad.leaf(filt.real), ad.leaf(filt.imag))

    @property
    def shape(self):
        return self.w_re.value.shape

    def parameters(self, prefix="train_inv"):
        out = OrderedDict()
        for name, var in (("w_re", self.w_re), ("w_im", self.w_im)):
            if var.requires_grad:
                out[f"{prefix}.{name}"] = var
        return out


def train_inv_forward(op, params, y):
    """Single-step inversion ``crop(ifft(W * fft(pad(y))))``.

    Differentiable with respect to the filter (as real/imag pairs) and ``y``.
    Initialized from the operator it reproduces :func:`wiener_inverse`
    bit-for-bit.
    """
    _check_measurement(op, y)
    if params.shape != op.padded_shape + (op.channels,):
        raise ShapeMismatchError(
            f"filter shape {params.shape} != padded operator shape "
            f"{op.padded_shape + (op.channels,)}"
        )
    w = ad.complex_pair(params.w_re, params.w_im)
    spec = ad.mul(ad.fft2(ad.pad_center(y, op.padded_shape)), w)
    return ad.crop_center(ad.ifft2_real(spec), op.scene_shape)
