"""Primitive catalog.

Each primitive takes plain arrays and returns ``(out, back)`` where
``back(g)`` maps the output cotangent to one cotangent per input
(``None`` for inputs that are never differentiated).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, apply, primitive

GUARD = 1e-12


def _fail(name, *arrays, why=""):
    shapes = ", ".join(str(a.shape) for a in arrays)
    msg = f"{name}: incompatible shapes {shapes}"
    raise ShapeError(msg + (f" ({why})" if why else ""))


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(name, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        _fail(name, a, b, why="not broadcastable")


@primitive("matmul")
def _matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        _fail("matmul", a, b)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        _fail("matmul", a, b, why="batch axes")
    out = a @ b

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)
        return ga, gb

    return out, back


@primitive("add")
def _add(a, b):
    _broadcast_shape("add", a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


@primitive("sub")
def _sub(a, b):
    _broadcast_shape("sub", a, b)
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


@primitive("mul")
def _mul(a, b):
    _broadcast_shape("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


@primitive("scale")
def _scale(a, factor=1.0):
    return a * factor, lambda g: (g * factor,)


@primitive("safe_div")
def _safe_div(a, b, eps=GUARD):
    """a / b where b >= eps, else 0 (gradient 0 in the guarded region)."""
    _broadcast_shape("safe_div", a, b)
    ok = b >= eps
    denom = np.where(ok, b, 1.0)
    out = np.where(ok, a / denom, 0.0)

    def back(g):
        gm = np.where(ok, g, 0.0)
        return (_unbroadcast(gm / denom, a.shape),
                _unbroadcast(-gm * out / denom, b.shape))

    return out, back


@primitive("concat")
def _concat(*xs, axis=0):
    if not xs:
        raise ShapeError("concat: no inputs")
    ref = xs[0]
    ax = axis % ref.ndim
    for x in xs:
        if x.ndim != ref.ndim or any(
            x.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            _fail("concat", *xs, why=f"axis={axis}")
    out = np.concatenate(xs, axis=ax)
    cuts = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return out, back


@primitive("slice")
def _slice(x, index=()):
    parts = index if isinstance(index, tuple) else (index,)
    if not all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis
               for p in parts):
        raise ShapeError("slice: only basic (int/slice) indexing is supported")
    try:
        out = x[index]
    except IndexError as err:
        raise ShapeError(f"slice: index {index!r} invalid for shape {x.shape}") from err

    def back(g):
        full = np.zeros_like(x)
        full[index] = g
        return (full,)

    return np.array(out), back


@primitive("reshape")
def _reshape(x, shape=()):
    try:
        out = x.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return out, lambda g: (g.reshape(x.shape),)


@primitive("transpose")
def _transpose(x, axes=None):
    if axes is not None and sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    out = np.transpose(x, axes)
    inv = None if axes is None else np.argsort([a % x.ndim for a in axes])
    return out, lambda g: (np.transpose(g, inv),)


@primitive("sum")
def _sum(x, axis=None, keepdims=False):
    out = np.sum(x, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return np.asarray(out), back


@primitive("mean")
def _mean(x, axis=None, keepdims=False):
    if x.size == 0:
        raise ShapeError("mean: empty input")
    out = np.mean(x, axis=axis, keepdims=keepdims)
    count = x.size // max(np.asarray(out).size, 1)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return np.asarray(out), back


def _sigmoid(x):
    # split by sign so large |x| never overflows exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@primitive("sigmoid")
def _sigmoid_prim(x):
    out = _sigmoid(x)
    return out, lambda g: (g * out * (1.0 - out),)


@primitive("tanh")
def _tanh(x):
    out = np.tanh(x)
    return out, lambda g: (g * (1.0 - out * out),)


@primitive("relu")
def _relu(x):
    on = x > 0
    return np.where(on, x, 0.0), lambda g: (np.where(on, g, 0.0),)


@primitive("exp")
def _exp(x):
    out = np.exp(x)
    return out, lambda g: (g * out,)


@primitive("log")
def _log(x):
    return np.log(x), lambda g: (g / x,)


@primitive("square")
def _square(x):
    return x * x, lambda g: (2.0 * g * x,)


@primitive("clip")
def _clip(x, lo=-np.inf, hi=np.inf):
    inside = (x >= lo) & (x <= hi)
    return np.clip(x, lo, hi), lambda g: (np.where(inside, g, 0.0),)


@primitive("conv1d")
def _conv1d(x, k):
    """Valid, stride-1 cross-correlation along the time axis.

    Accepted layouts: x (L,) with k (w,); x (L, E) with k (w, E, K);
    x (B, L, E) with k (w, E, K).
    """
    squeeze = ()
    if x.ndim == 1 and k.ndim == 1:
        xx, kk, squeeze = x[None, :, None], k[:, None, None], (0, 2)
    elif x.ndim == 2 and k.ndim == 3:
        xx, kk, squeeze = x[None], k, (0,)
    elif x.ndim == 3 and k.ndim == 3:
        xx, kk = x, k
    else:
        _fail("conv1d", x, k)
    w = kk.shape[0]
    if xx.shape[2] != kk.shape[1] or xx.shape[1] < w:
        _fail("conv1d", x, k)
    win = sliding_window_view(xx, w, axis=1)  # (B, L-w+1, E, w)
    out = np.einsum("blew,wek->blk", win, kk)

    def back(g):
        gg = g.reshape(out.shape)
        gk = np.einsum("blew,blk->wek", win, gg)
        gx = np.zeros_like(xx)
        span = out.shape[1]
        for o in range(w):
            gx[:, o:o + span, :] += gg @ kk[o].T
        return gx.reshape(x.shape), gk.reshape(k.shape)

    return (out.squeeze(squeeze) if squeeze else out), back


@primitive("maxpool_time")
def _maxpool_time(x, axis=-2):
    """Max over the time axis; ties route the gradient to the first maximum."""
    if x.ndim < 1 or x.shape[axis] == 0:
        _fail("maxpool_time", x, why="empty time axis")
    idx = np.argmax(x, axis=axis)
    out = np.take_along_axis(x, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        gx = np.zeros_like(x)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return out, back


@primitive("softmax")
def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return out, back


@primitive("gru_scan")
def _gru_scan(xw, U, mask=None):
    """Whole GRU recurrence over precomputed input projections ``xw`` (B, T, 3H).

    Fusing the loop into one node keeps the tape short; backward runs
    backpropagation through time on the cached gate activations.
    """
    if xw.ndim != 3 or U.ndim != 2 or xw.shape[-1] != U.shape[1] or U.shape[1] != 3 * U.shape[0]:
        _fail("gru_scan", xw, U)
    B, T, _ = xw.shape
    H = U.shape[0]
    U_zr, U_c = U[:, : 2 * H], U[:, 2 * H:]
    m = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=np.float64)
    hs = np.zeros((T + 1, B, H))
    zs, rs, cs = np.empty((T, B, H)), np.empty((T, B, H)), np.empty((T, B, H))
    for t in range(T):
        h = hs[t]
        zr = _sigmoid(xw[:, t, : 2 * H] + h @ U_zr)
        z, r = zr[:, :H], zr[:, H:]
        c = np.tanh(xw[:, t, 2 * H:] + (r * h) @ U_c)
        hs[t + 1] = h + m[:, t, None] * z * (c - h)
        zs[t], rs[t], cs[t] = z, r, c

    def back(g):
        dxw = np.zeros_like(xw)
        dU = np.zeros_like(U)
        dh = g
        for t in range(T - 1, -1, -1):
            h, z, r, c = hs[t], zs[t], rs[t], cs[t]
            dstep = dh * m[:, t, None]
            dac = dstep * z * (1.0 - c * c)
            dxw[:, t, 2 * H:] = dac
            dU[:, 2 * H:] += (r * h).T @ dac
            drh = dac @ U_c.T
            dzr = np.concatenate([dstep * (c - h) * z * (1.0 - z), drh * h * r * (1.0 - r)],
                                 axis=1)
            dxw[:, t, : 2 * H] = dzr
            dU[:, : 2 * H] += h.T @ dzr
            dh = dh - dstep * z + drh * r + dzr @ U_zr.T
        return dxw, dU

    return hs[T], back


# Thin functional wrappers.

def matmul(a, b):
    return apply("matmul", a, b)


def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def scale(a, factor):
    return apply("scale", a, factor=float(factor))


def safe_div(a, b, eps=GUARD):
    return apply("safe_div", a, b, eps=eps)


def concat(xs, axis=0):
    return apply("concat", *xs, axis=axis)


def reshape(x, shape):
    return apply("reshape", x, shape=tuple(shape))


def transpose(x, axes=None):
    return apply("transpose", x, axes=None if axes is None else tuple(axes))


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    return apply("sum", x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    return apply("mean", x, axis=axis, keepdims=keepdims)


def sigmoid(x):
    return apply("sigmoid", x)


def tanh(x):
    return apply("tanh", x)


def relu(x):
    return apply("relu", x)


def exp(x):
    return apply("exp", x)


def log(x):
    return apply("log", x)


def square(x):
    return apply("square", x)


def clip(x, lo, hi):
    return apply("clip", x, lo=lo, hi=hi)


def conv1d(x, k):
    return apply("conv1d", x, k)


def maxpool_time(x, axis=-2):
    return apply("maxpool_time", x, axis=axis)


def softmax(x):
    return apply("softmax", x)


def gru_scan(xw, U, mask=None):
    return apply("gru_scan", xw, U, mask=mask)
