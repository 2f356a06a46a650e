"""Minimal reverse-mode differentiation over the pipeline's primitive set.

Every primitive accepts plain ndarrays or :class:`Var` nodes. With plain
arrays it evaluates straight numpy (no recording); with at least one ``Var``
it additionally stores a vector-Jacobian closure. Both paths execute the
same numpy expressions in the same order, so recorded and unrecorded runs
are bit-identical.

Complex quantities use the real-pair convention: the gradient carried for a
complex node is ``dL/dRe + 1j * dL/dIm`` of the (real) loss, which makes the
FFT adjoints the conjugate transforms with matching normalization.
"""

import numpy as np
from scipy.special import expit

__all__ = [
    "Var",
    "leaf",
    "value_of",
    "backward",
    "add",
    "sub",
    "neg",
    "mul",
    "div",
    "square",
    "softplus",
    "softplus_inverse",
    "mean",
    "sum_all",
    "fft2",
    "ifft2_real",
    "pad_center",
    "crop_center",
    "roll",
    "soft_threshold",
    "maximum0",
    "leaky_relu",
    "clamp01",
    "complex_pair",
    "concat_channels",
    "conv3x3",
    "numerical_gradient",
]


class Var:
    """A node in the reverse-mode graph: a value plus how to push gradients back."""

    __slots__ = ("value", "parents", "vjp", "requires_grad", "grad")

    def __init__(self, value, parents=(), vjp=None, requires_grad=False):
        self.value = np.asarray(value)
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.grad = None

    # keep numpy from consuming us in mixed expressions
    __array_ufunc__ = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


def leaf(value, requires_grad=True):
    """Wrap an array as a graph leaf (a learnable parameter by default)."""
    arr = np.asarray(value, dtype=np.float64)
    return Var(arr.copy(), requires_grad=requires_grad)


def value_of(x):
    """Underlying ndarray of a Var, or ``x`` itself."""
    return x.value if isinstance(x, Var) else np.asarray(x)


def _coerce(x):
    if isinstance(x, Var):
        return x.value
    return np.asarray(x)


def _apply(fwd, make_vjp, *inputs):
    vals = tuple(_coerce(x) for x in inputs)
    out = fwd(*vals)
    if not any(isinstance(x, Var) for x in inputs):
        return out
    return Var(out, parents=inputs, vjp=make_vjp(vals, out))


def _unbroadcast(g, shape):
    """Reduce a gradient to ``shape`` by summing over broadcast axes."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if isinstance(p, Var) and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out, seed=None):
    """Accumulate gradients of ``out`` into the ``grad`` of every requiring leaf.

    ``seed`` defaults to ones (use a scalar output for loss gradients).
    Nodes are visited in exact reverse topological order; gradients on leaves
    accumulate across calls (zero them between optimizer steps).
    """
    if not isinstance(out, Var):
        raise TypeError("backward expects a Var output")
    if seed is None:
        seed = np.ones_like(out.value, dtype=out.value.dtype)
    order = _topo_order(out)
    grads = {id(out): np.asarray(seed)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.vjp is None:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not isinstance(parent, Var) or pg is None:
                continue
            if np.iscomplexobj(pg) and not np.iscomplexobj(parent.value):
                pg = pg.real  # adjoint of the real -> complex embedding
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params):
    """Clear accumulated gradients on an iterable of leaves."""
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    def vjp(vals, out):
        va, vb = vals
        return lambda g: (_unbroadcast(g, va.shape), _unbroadcast(g, vb.shape))

    return _apply(lambda x, y: x + y, vjp, a, b)


def sub(a, b):
    def vjp(vals, out):
        va, vb = vals
        return lambda g: (_unbroadcast(g, va.shape), -_unbroadcast(g, vb.shape))

    return _apply(lambda x, y: x - y, vjp, a, b)


def neg(a):
    return _apply(lambda x: -x, lambda vals, out: lambda g: (-g,), a)


def mul(a, b):
    def vjp(vals, out):
        va, vb = vals
        return lambda g: (
            _unbroadcast(g * np.conj(vb), va.shape),
            _unbroadcast(g * np.conj(va), vb.shape),
        )

    return _apply(lambda x, y: x * y, vjp, a, b)


def div(a, b):
    def vjp(vals, out):
        va, vb = vals
        cb = np.conj(vb)
        return lambda g: (
            _unbroadcast(g / cb, va.shape),
            _unbroadcast(-g * np.conj(va) / (cb * cb), vb.shape),
        )

    return _apply(lambda x, y: x / y, vjp, a, b)


def square(a):
    def vjp(vals, out):
        (va,) = vals
        return lambda g: (2.0 * g * va,)

    return _apply(np.square, vjp, a)


def softplus(a):
    """Numerically stable log(1 + exp(a)); maps reals to strict positives."""

    def vjp(vals, out):
        (va,) = vals
        return lambda g: (g * expit(va),)

    return _apply(lambda x: np.logaddexp(0.0, x), vjp, a)


def softplus_inverse(y):
    """Inverse of :func:`softplus` on plain arrays (parameter initialization)."""
    y = np.asarray(y, dtype=np.float64)
    # log(expm1(y)), switching to y + log(-expm1(-y)) where expm1 overflows
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


# ---------------------------------------------------------------------------
# reductions


def mean(a):
    def vjp(vals, out):
        (va,) = vals
        n = va.size
        return lambda g: (np.full(va.shape, g / n, dtype=np.float64),)

    return _apply(lambda x: np.mean(x), vjp, a)


def sum_all(a):
    def vjp(vals, out):
        (va,) = vals
        return lambda g: (np.full(va.shape, g, dtype=np.float64),)

    return _apply(lambda x: np.sum(x), vjp, a)


# ---------------------------------------------------------------------------
# Fourier pairs and geometry


def fft2(a):
    """Per-channel unnormalized forward DFT over the first two axes."""

    def vjp(vals, out):
        (va,) = vals
        n = va.shape[0] * va.shape[1]
        real_input = not np.iscomplexobj(va)

        def pull(g):
            ga = np.fft.ifft2(g, axes=(0, 1)) * n
            return (ga.real if real_input else ga,)

        return pull

    return _apply(lambda x: np.fft.fft2(x, axes=(0, 1)), vjp, a)


def ifft2_real(a):
    """Inverse DFT (1/(H*W) normalization) followed by taking the real part.

    Unlike :func:`lenslesskit.numerics.ifft2` this does not police the
    imaginary residue: solver-internal spectra stay conjugate-symmetric by
    construction, and gradient checks legitimately perturb single bins.
    """

    def vjp(vals, out):
        (va,) = vals
        n = va.shape[0] * va.shape[1]
        return lambda g: (np.fft.fft2(g, axes=(0, 1)) / n,)

    return _apply(lambda x: np.fft.ifft2(x, axes=(0, 1)).real, vjp, a)


def pad_center(a, target_shape):
    th, tw = target_shape

    def fwd(x):
        h, w = x.shape[:2]
        oy, ox = (th - h) // 2, (tw - w) // 2
        out = np.zeros((th, tw) + x.shape[2:], dtype=x.dtype)
        out[oy : oy + h, ox : ox + w] = x
        return out

    def vjp(vals, out):
        (va,) = vals
        h, w = va.shape[:2]
        oy, ox = (th - h) // 2, (tw - w) // 2
        return lambda g: (g[oy : oy + h, ox : ox + w],)

    return _apply(fwd, vjp, a)


def crop_center(a, target_shape):
    th, tw = target_shape

    def fwd(x):
        h, w = x.shape[:2]
        oy, ox = (h - th) // 2, (w - tw) // 2
        return x[oy : oy + th, ox : ox + tw].copy()

    def vjp(vals, out):
        (va,) = vals
        h, w = va.shape[:2]
        oy, ox = (h - th) // 2, (w - tw) // 2

        def pull(g):
            ga = np.zeros(va.shape, dtype=g.dtype)
            ga[oy : oy + th, ox : ox + tw] = g
            return (ga,)

        return pull

    return _apply(fwd, vjp, a)


def roll(a, shift, axis):
    def vjp(vals, out):
        return lambda g: (np.roll(g, -shift, axis=axis),)

    return _apply(lambda x: np.roll(x, shift, axis=axis), vjp, a)


# ---------------------------------------------------------------------------
# nonlinearities


def soft_threshold(a, t):
    """Elementwise soft threshold ``sign(a) * max(|a| - t, 0)``.

    The subgradient where the output is exactly zero is taken as zero, for
    both the input and the threshold.
    """

    def fwd(x, thr):
        return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)

    def vjp(vals, out):
        va, vt = vals
        mask = np.abs(va) > vt
        return lambda g: (
            g * mask,
            _unbroadcast(-g * np.sign(va) * mask, vt.shape),
        )

    return _apply(fwd, vjp, a, t)


def maximum0(a):
    """Projection onto the nonnegative orthant; subgradient at 0 is 0."""

    def vjp(vals, out):
        (va,) = vals
        mask = va > 0
        return lambda g: (g * mask,)

    return _apply(lambda x: np.maximum(x, 0.0), vjp, a)


def leaky_relu(a, slope=0.1):
    def vjp(vals, out):
        (va,) = vals
        factor = np.where(va > 0, 1.0, slope)
        return lambda g: (g * factor,)

    return _apply(lambda x: np.where(x > 0, x, slope * x), vjp, a)


def clamp01(a):
    """Clip to [0, 1]; gradient passes only strictly inside the interval."""

    def vjp(vals, out):
        (va,) = vals
        mask = (va > 0.0) & (va < 1.0)
        return lambda g: (g * mask,)

    return _apply(lambda x: np.clip(x, 0.0, 1.0), vjp, a)


# ---------------------------------------------------------------------------
# structure ops


def complex_pair(re, im):
    """Assemble a complex array from real/imag parts (exact, no arithmetic)."""

    def fwd(r, i):
        z = np.empty(np.broadcast(r, i).shape, dtype=np.complex128)
        z.real = r
        z.imag = i
        return z

    def vjp(vals, out):
        vr, vi = vals
        return lambda g: (
            _unbroadcast(g.real, vr.shape),
            _unbroadcast(g.imag, vi.shape),
        )

    return _apply(fwd, vjp, re, im)


def concat_channels(a, b):
    def vjp(vals, out):
        va, vb = vals
        ca = va.shape[-1]
        return lambda g: (g[..., :ca], g[..., ca:])

    return _apply(lambda x, y: np.concatenate([x, y], axis=-1), vjp, a, b)


def conv3x3(a, w, b):
    """3x3 convolution, zero padding, stride 1: (H, W, Cin) -> (H, W, Cout).

    ``w`` has shape (3, 3, Cin, Cout), ``b`` shape (Cout,).
    """

    def fwd(x, kw, kb):
        h, wdt = x.shape[:2]
        xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
        out = np.empty((h, wdt, kw.shape[3]), dtype=np.float64)
        out[:] = kb
        for dy in range(3):
            for dx in range(3):
                out += xp[dy : dy + h, dx : dx + wdt] @ kw[dy, dx]
        return out

    def vjp(vals, out):
        x, kw, _ = vals
        h, wdt = x.shape[:2]
        xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))

        def pull(g):
            gb = g.sum(axis=(0, 1))
            gw = np.empty_like(kw)
            gxp = np.zeros_like(xp)
            for dy in range(3):
                for dx in range(3):
                    patch = xp[dy : dy + h, dx : dx + wdt]
                    gw[dy, dx] = np.einsum("hwi,hwo->io", patch, g)
                    gxp[dy : dy + h, dx : dx + wdt] += g @ kw[dy, dx].T
            return (gxp[1 : h + 1, 1 : wdt + 1], gw, gb)

        return pull

    return _apply(fwd, vjp, a, w, b)


# ---------------------------------------------------------------------------
# finite differences (shared by the test suite)


def numerical_gradient(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(a, b, floor=1e-8):
    """|a - b| / max(|a|, |b|, floor), elementwise max over arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
