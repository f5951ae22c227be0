"""Primitive catalog for the tensor engine.

Each primitive validates shapes, computes its forward in numpy, and registers
a VJP closure.  VJPs are written with the ops in this module, so a backward
pass executed with graph construction enabled is itself differentiable; the
discriminator gradient penalty relies on that.

Layout conventions: images are NCHW, video is NCTHW, conv2d weights are
(out, in, kh, kw), transposed-conv weights are (in, out, kh, kw).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import (
    ContractError,
    ShapeError,
    Tensor,
    record,
)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


def constant(x) -> Tensor:
    return as_tensor(x)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=np.float32), requires_grad=requires_grad)


def _sum_np(x: np.ndarray, axis=None, keepdims=False) -> np.ndarray:
    # f64 accumulation keeps finite-difference oracles honest in f32
    return x.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(np.float32)


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    """Sum a cotangent back down to the shape it was broadcast from."""
    if tuple(g.shape) == tuple(shape):
        return g
    nd_extra = g.ndim - len(shape)
    axes = list(range(nd_extra))
    for i, dim in enumerate(shape):
        if dim == 1 and g.shape[nd_extra + i] != 1:
            axes.append(nd_extra + i)
    out = sum_(g, axis=tuple(axes), keepdims=True) if axes else g
    return reshape(out, shape)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None,
        )

    return record("add", (a, b), out, vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g, needs):
        ga = _unbroadcast(mul(g, b.detach() if not b.requires_grad else b), a.shape) if needs[0] else None
        gb = _unbroadcast(mul(g, a.detach() if not a.requires_grad else a), b.shape) if needs[1] else None
        return (ga, gb)

    return record("mul", (a, b), out, vjp)


def scale(x: Tensor, s: float) -> Tensor:
    out = x.data * np.float32(s)

    def vjp(g, needs):
        return (scale(g, s),)

    return record("scale", (x,), out, vjp)


def add_scalar(x: Tensor, c: float) -> Tensor:
    out = x.data + np.float32(c)

    def vjp(g, needs):
        return (g,)

    return record("add_scalar", (x,), out, vjp)


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def div(a: Tensor, b: Tensor) -> Tensor:
    return mul(a, pow_const(b, -1.0))


def pow_const(x: Tensor, p: float) -> Tensor:
    with np.errstate(divide="ignore", over="ignore"):  # -> NumericError
        out = np.power(x.data, np.float32(p))

    def vjp(g, needs):
        return (mul(g, scale(pow_const(x, p - 1.0), p)),)

    return record("pow_const", (x,), out, vjp)


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NumericError
        out_data = np.exp(x.data)

    def vjp(g, needs):
        return (mul(g, out),)

    out = record("exp", (x,), out_data, vjp)
    return out


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)

    def vjp(g, needs):
        return (mul(g, pow_const(x, -1.0)),)

    return record("log", (x,), out, vjp)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {tuple(x.shape)} to {shape}")
    orig = x.shape
    out = x.data.reshape(shape)

    def vjp(g, needs):
        return (reshape(g, orig),)

    return record("reshape", (x,), out, vjp)


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))

    def vjp(g, needs):
        return (permute(g, inv),)

    return record("permute", (x,), out, vjp)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    orig = x.shape
    out = np.ascontiguousarray(np.broadcast_to(x.data, shape))

    def vjp(g, needs):
        return (_unbroadcast(g, orig),)

    return record("broadcast_to", (x,), out, vjp)


def slice_nd(x: Tensor, starts: Sequence[int], sizes: Sequence[int]) -> Tensor:
    if len(starts) != x.ndim or len(sizes) != x.ndim:
        raise ShapeError("slice_nd needs starts/sizes for every axis")
    sl = tuple(slice(s, s + n) for s, n in zip(starts, sizes))
    for axis, (s, n) in enumerate(zip(starts, sizes)):
        if s < 0 or n < 0 or s + n > x.shape[axis]:
            raise ShapeError(f"slice [{s}:{s + n}] out of range on axis {axis} (dim {x.shape[axis]})")
    pads = tuple((s, x.shape[i] - s - n) for i, (s, n) in enumerate(zip(starts, sizes)))
    out = np.ascontiguousarray(x.data[sl])

    def vjp(g, needs):
        return (pad_nd(g, pads),)

    return record("slice", (x,), out, vjp)


def pad_nd(x: Tensor, pads: Sequence[tuple]) -> Tensor:
    if len(pads) != x.ndim:
        raise ShapeError("pad_nd needs a (before, after) pair per axis")
    starts = tuple(p[0] for p in pads)
    sizes = tuple(x.shape)
    out = np.pad(x.data, pads)

    def vjp(g, needs):
        return (slice_nd(g, starts, sizes),)

    return record("pad", (x,), out, vjp)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat of nothing")
    nd = xs[0].ndim
    for t in xs:
        if t.ndim != nd:
            raise ShapeError("concat rank mismatch")
    out = np.concatenate([t.data for t in xs], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in xs])

    def vjp(g, needs):
        grads = []
        for i, t in enumerate(xs):
            if not needs[i]:
                grads.append(None)
                continue
            starts = [0] * nd
            sizes = list(g.shape)
            starts[axis] = int(offsets[i])
            sizes[axis] = t.shape[axis]
            grads.append(slice_nd(g, starts, sizes))
        return tuple(grads)

    return record("concat", tuple(xs), out, vjp)


def split(x: Tensor, sections: int, axis: int) -> tuple:
    """Split into equal parts along an axis (catalog 'split')."""
    dim = x.shape[axis]
    if dim % sections:
        raise ShapeError(f"cannot split dim {dim} into {sections} equal parts")
    step = dim // sections
    parts = []
    for k in range(sections):
        starts = [0] * x.ndim
        sizes = list(x.shape)
        starts[axis] = k * step
        sizes[axis] = step
        parts.append(slice_nd(x, starts, sizes))
    return tuple(parts)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        axes = tuple(range(x.ndim))
    elif isinstance(axis, int):
        axes = (axis,)
    else:
        axes = tuple(axis)
    orig = x.shape
    out = _sum_np(x.data, axis=axes if x.ndim else None, keepdims=keepdims)

    def vjp(g, needs):
        if not keepdims and x.ndim:
            kshape = list(orig)
            for a in axes:
                kshape[a] = 1
            g = reshape(g, kshape)
        return (broadcast_to(g, orig),)

    return record("sum", (x,), out, vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # np.where evaluates both (stable) branches
        out_data = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-x.data)),
                            np.exp(x.data) / (1.0 + np.exp(x.data))).astype(np.float32)

    def vjp(g, needs):
        return (mul(g, mul(out, add_scalar(neg(out), 1.0))),)

    out = record("sigmoid", (x,), out_data, vjp)
    return out


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def vjp(g, needs):
        return (mul(g, add_scalar(neg(mul(out, out)), 1.0)),)

    out = record("tanh", (x,), out_data, vjp)
    return out


# When set (by gradient_check), collects the sign pattern of every
# leaky_relu input so finite differences can detect kink crossings exactly.
KINK_WATCH: Optional[list] = None


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    positive = x.data > 0
    if KINK_WATCH is not None:
        KINK_WATCH.append(positive)
    out = np.where(positive, x.data, np.float32(slope) * x.data)
    mask = Tensor(np.where(positive, np.float32(1.0), np.float32(slope)))

    def vjp(g, needs):
        return (mul(g, mask),)

    return record("leaky_relu", (x,), out, vjp)


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(np.float32(0.0), x.data).astype(np.float32)

    def vjp(g, needs):
        return (mul(g, sigmoid(x)),)

    return record("softplus", (x,), out, vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out_data = (e / e.sum(axis=axis, keepdims=True, dtype=np.float64)).astype(np.float32)

    def vjp(g, needs):
        gy = mul(g, out)
        return (sub(gy, mul(out, sum_(gy, axis=axis, keepdims=True))),)

    out = record("softmax", (x,), out_data, vjp)
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def _swap_last(t: Tensor) -> Tensor:
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(t, axes)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    out = np.matmul(a.data, b.data)

    def vjp(g, needs):
        ga = _unbroadcast(matmul(g, _swap_last(b)), a.shape) if needs[0] else None
        gb = _unbroadcast(matmul(_swap_last(a), g), b.shape) if needs[1] else None
        return (ga, gb)

    return record("matmul", (a, b), out, vjp)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x (..., in) @ w (in, out) + b."""
    flat = x if x.ndim == 2 else reshape(x, (int(np.prod(x.shape[:-1])), x.shape[-1]))
    y = matmul(flat, w)
    if b is not None:
        y = add(y, b)
    if x.ndim != 2:
        y = reshape(y, tuple(x.shape[:-1]) + (w.shape[-1],))
    return y


def one_hot(indices, depth: int) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("one_hot expects a flat index vector")
    if (idx < 0).any() or (idx >= depth).any():
        raise ContractError(f"index out of range for one_hot depth {depth}")
    out = np.zeros((idx.size, depth), dtype=np.float32)
    out[np.arange(idx.size), idx] = 1.0
    return Tensor(out)


def embedding(table: Tensor, indices) -> Tensor:
    """Row lookup as one-hot matmul; the catalog 'embedding lookup'."""
    return matmul(one_hot(indices, table.shape[0]), table)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

def _check_conv_attrs(name, kernel, stride, padding):
    for label, vals in (("kernel", kernel), ("stride", stride), ("padding", padding)):
        for v in vals:
            if v < 0 or (label != "padding" and v <= 0):
                raise ShapeError(f"{name}: {label} {vals} invalid")


def _out_dim(size, k, s, p):
    o = (size + 2 * p - k) // s + 1
    if o <= 0:
        raise ShapeError(f"convolution output dim <= 0 (in={size}, k={k}, s={s}, p={p})")
    return o


def _im2col2d(x: np.ndarray, kh, kw, sh, sw, ph, pw):
    n, c, h, w = x.shape
    oh = _out_dim(h, kh, sh, ph)
    ow = _out_dim(w, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def conv2d(x: Tensor, w: Tensor, stride=1, padding=0) -> Tensor:
    """Cross-correlation; x (N,C,H,W), w (O,C,kh,kw)."""
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OIKK weights")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[1]} vs weight {w.shape[1]}")
    o, _, kh, kw = w.shape
    _check_conv_attrs("conv2d", (kh, kw), (sh, sw), (ph, pw))
    n = x.shape[0]
    cols, oh, ow = _im2col2d(x.data, kh, kw, sh, sw, ph, pw)
    out = np.matmul(w.data.reshape(o, -1), cols).reshape(n, o, oh, ow)
    in_h, in_w = x.shape[2], x.shape[3]

    def vjp(g, needs):
        gx = gw = None
        if needs[0]:
            oph = in_h - ((oh - 1) * sh - 2 * ph + kh)
            opw = in_w - ((ow - 1) * sw - 2 * pw + kw)
            gx = conv_transpose2d(g, w if w.requires_grad else w.detach(),
                                  stride=(sh, sw), padding=(ph, pw), output_padding=(oph, opw))
        if needs[1]:
            gw = _conv2d_wgrad(x if x.requires_grad else x.detach(), g,
                               (kh, kw), (sh, sw), (ph, pw))
        return (gx, gw)

    return record("conv2d", (x, w), out, vjp)


def _conv2d_wgrad(x: Tensor, g: Tensor, kernel, stride, padding) -> Tensor:
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    n, c = x.shape[0], x.shape[1]
    o = g.shape[1]
    cols, oh, ow = _im2col2d(x.data, kh, kw, sh, sw, ph, pw)
    gr = g.data.reshape(n, o, oh * ow)
    out = np.matmul(gr, cols.transpose(0, 2, 1)).sum(axis=0).reshape(o, c, kh, kw)

    def vjp(gg, needs):
        gx = conv_transpose2d(g.detach(), gg, stride=(sh, sw), padding=(ph, pw),
                              output_padding=(x.shape[2] - ((oh - 1) * sh - 2 * ph + kh),
                                              x.shape[3] - ((ow - 1) * sw - 2 * pw + kw))) if needs[0] else None
        gG = conv2d(x.detach(), gg, stride=(sh, sw), padding=(ph, pw)) if needs[1] else None
        return (gx, gG)

    return record("conv2d_wgrad", (x, g), out, vjp)


def conv_transpose2d(x: Tensor, w: Tensor, stride=1, padding=0, output_padding=0) -> Tensor:
    """Transposed cross-correlation; x (N,Ci,H,W), w (Ci,Co,kh,kw)."""
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    oph, opw = (output_padding, output_padding) if isinstance(output_padding, int) else output_padding
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv_transpose2d expects NCHW input and IOKK weights")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv_transpose2d channel mismatch: input {x.shape[1]} vs weight {w.shape[0]}")
    ci, co, kh, kw = w.shape
    _check_conv_attrs("conv_transpose2d", (kh, kw), (sh, sw), (ph, pw))
    if oph >= sh or opw >= sw:
        raise ShapeError("output_padding must be smaller than stride")
    n, _, h, iw = x.shape
    out_h = (h - 1) * sh - 2 * ph + kh + oph
    out_w = (iw - 1) * sw - 2 * pw + kw + opw
    if out_h <= 0 or out_w <= 0:
        raise ShapeError("conv_transpose2d output dim <= 0")
    cols = np.matmul(w.data.reshape(ci, co * kh * kw).T, x.data.reshape(n, ci, h * iw))
    vals = cols.reshape(n, co, kh, kw, h, iw)
    canvas = np.zeros((n, co, out_h + 2 * ph, out_w + 2 * pw), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            canvas[:, :, i:i + sh * h:sh, j:j + sw * iw:sw] += vals[:, :, i, j]
    out = canvas[:, :, ph:ph + out_h, pw:pw + out_w]

    def vjp(g, needs):
        gx = conv2d(g, w if w.requires_grad else w.detach(),
                    stride=(sh, sw), padding=(ph, pw)) if needs[0] else None
        gw = _conv_transpose2d_wgrad(x if x.requires_grad else x.detach(), g,
                                     (kh, kw), (sh, sw), (ph, pw)) if needs[1] else None
        return (gx, gw)

    return record("conv_transpose2d", (x, w), out, vjp)


def _conv_transpose2d_wgrad(x: Tensor, g: Tensor, kernel, stride, padding) -> Tensor:
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    n, ci, h, w_in = x.shape
    co = g.shape[1]
    cols, oh, ow = _im2col2d(g.data, kh, kw, sh, sw, ph, pw)
    if (oh, ow) != (h, w_in):
        raise ShapeError("conv_transpose2d weight-grad geometry mismatch")
    xr = x.data.reshape(n, ci, h * w_in)
    out = np.matmul(xr, cols.transpose(0, 2, 1)).sum(axis=0).reshape(ci, co, kh, kw)

    def vjp(gg, needs):
        gx = conv2d(g.detach(), gg, stride=(sh, sw), padding=(ph, pw)) if needs[0] else None
        gG = conv_transpose2d(x.detach(), gg, stride=(sh, sw), padding=(ph, pw),
                              output_padding=(g.shape[2] - ((h - 1) * sh - 2 * ph + kh),
                                              g.shape[3] - ((w_in - 1) * sw - 2 * pw + kw))) if needs[1] else None
        return (gx, gG)

    return record("conv_transpose2d_wgrad", (x, g), out, vjp)


def _triple(v):
    return (v, v, v) if isinstance(v, int) else tuple(v)


def _im2col3d(x: np.ndarray, k, s, p):
    n, c, t, h, w = x.shape
    kt, kh, kw = k
    st, sh, sw = s
    pt, ph, pw = p
    ot = _out_dim(t, kt, st, pt)
    oh = _out_dim(h, kh, sh, ph)
    ow = _out_dim(w, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    cols = np.empty((n, c, kt, kh, kw, ot, oh, ow), dtype=np.float32)
    for a in range(kt):
        for i in range(kh):
            for j in range(kw):
                cols[:, :, a, i, j] = xp[:, :, a:a + st * ot:st, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return cols.reshape(n, c * kt * kh * kw, ot * oh * ow), (ot, oh, ow)


def conv3d(x: Tensor, w: Tensor, stride=1, padding=0) -> Tensor:
    """x (N,C,T,H,W), w (O,C,kt,kh,kw)."""
    s = _triple(stride)
    p = _triple(padding)
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError("conv3d expects NCTHW input and OIKKK weights")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv3d channel mismatch: input {x.shape[1]} vs weight {w.shape[1]}")
    o = w.shape[0]
    k = tuple(w.shape[2:])
    _check_conv_attrs("conv3d", k, s, p)
    n = x.shape[0]
    cols, od = _im2col3d(x.data, k, s, p)
    out = np.matmul(w.data.reshape(o, -1), cols).reshape(n, o, *od)
    in_d = tuple(x.shape[2:])

    def vjp(g, needs):
        gx = gw = None
        if needs[0]:
            opad = tuple(in_d[i] - ((od[i] - 1) * s[i] - 2 * p[i] + k[i]) for i in range(3))
            gx = conv_transpose3d(g, w if w.requires_grad else w.detach(),
                                  stride=s, padding=p, output_padding=opad)
        if needs[1]:
            gw = _conv3d_wgrad(x if x.requires_grad else x.detach(), g, k, s, p)
        return (gx, gw)

    return record("conv3d", (x, w), out, vjp)


def _conv3d_wgrad(x: Tensor, g: Tensor, k, s, p) -> Tensor:
    n, c = x.shape[0], x.shape[1]
    o = g.shape[1]
    cols, od = _im2col3d(x.data, k, s, p)
    gr = g.data.reshape(n, o, -1)
    out = np.matmul(gr, cols.transpose(0, 2, 1)).sum(axis=0).reshape(o, c, *k)

    def vjp(gg, needs):
        in_d = tuple(x.shape[2:])
        gx = conv_transpose3d(g.detach(), gg, stride=s, padding=p,
                              output_padding=tuple(in_d[i] - ((od[i] - 1) * s[i] - 2 * p[i] + k[i])
                                                   for i in range(3))) if needs[0] else None
        gG = conv3d(x.detach(), gg, stride=s, padding=p) if needs[1] else None
        return (gx, gG)

    return record("conv3d_wgrad", (x, g), out, vjp)


def conv_transpose3d(x: Tensor, w: Tensor, stride=1, padding=0, output_padding=0) -> Tensor:
    """x (N,Ci,T,H,W), w (Ci,Co,kt,kh,kw)."""
    s = _triple(stride)
    p = _triple(padding)
    op = _triple(output_padding)
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError("conv_transpose3d expects NCTHW input and IOKKK weights")
    if x.shape[1] != w.shape[0]:
        raise ShapeError("conv_transpose3d channel mismatch")
    ci, co = w.shape[0], w.shape[1]
    k = tuple(w.shape[2:])
    _check_conv_attrs("conv_transpose3d", k, s, p)
    if any(op[i] >= s[i] for i in range(3)):
        raise ShapeError("output_padding must be smaller than stride")
    n = x.shape[0]
    in_d = tuple(x.shape[2:])
    out_d = tuple((in_d[i] - 1) * s[i] - 2 * p[i] + k[i] + op[i] for i in range(3))
    if any(d <= 0 for d in out_d):
        raise ShapeError("conv_transpose3d output dim <= 0")
    cols = np.matmul(w.data.reshape(ci, -1).T, x.data.reshape(n, ci, -1))
    vals = cols.reshape(n, co, *k, *in_d)
    canvas = np.zeros((n, co) + tuple(out_d[i] + 2 * p[i] for i in range(3)), dtype=np.float32)
    kt, kh, kw = k
    st, sh, sw = s
    t, h, w_in = in_d
    for a in range(kt):
        for i in range(kh):
            for j in range(kw):
                canvas[:, :, a:a + st * t:st, i:i + sh * h:sh, j:j + sw * w_in:sw] += vals[:, :, a, i, j]
    out = canvas[:, :, p[0]:p[0] + out_d[0], p[1]:p[1] + out_d[1], p[2]:p[2] + out_d[2]]

    def vjp(g, needs):
        gx = conv3d(g, w if w.requires_grad else w.detach(), stride=s, padding=p) if needs[0] else None
        gw = _conv_transpose3d_wgrad(x if x.requires_grad else x.detach(), g, k, s, p) if needs[1] else None
        return (gx, gw)

    return record("conv_transpose3d", (x, w), out, vjp)


def _conv_transpose3d_wgrad(x: Tensor, g: Tensor, k, s, p) -> Tensor:
    n, ci = x.shape[0], x.shape[1]
    co = g.shape[1]
    cols, od = _im2col3d(g.data, k, s, p)
    if od != tuple(x.shape[2:]):
        raise ShapeError("conv_transpose3d weight-grad geometry mismatch")
    xr = x.data.reshape(n, ci, -1)
    out = np.matmul(xr, cols.transpose(0, 2, 1)).sum(axis=0).reshape(ci, co, *k)

    def vjp(gg, needs):
        raise NotImplementedError("third-order convolution gradients are not supported")

    return record("conv_transpose3d_wgrad", (x, g), out, vjp)


# ---------------------------------------------------------------------------
# normalization (compositions; differentiable to any order the parts are)
# ---------------------------------------------------------------------------

def resize_nearest(x: Tensor, size) -> Tensor:
    """Nearest-neighbor spatial resize of NCHW maps (differentiable gather)."""
    if x.ndim != 4:
        raise ShapeError("resize_nearest expects NCHW input")
    th, tw = size
    n, c, h, w = x.shape
    if (th, tw) == (h, w):
        return x
    sel_r = np.zeros((th, h), dtype=np.float32)
    sel_r[np.arange(th), (np.arange(th) * h) // th] = 1.0
    sel_c = np.zeros((w, tw), dtype=np.float32)
    sel_c[(np.arange(tw) * w) // tw, np.arange(tw)] = 1.0
    flat = reshape(x, (n * c, h, w))
    rows = matmul(broadcast_to(reshape(Tensor(sel_r), (1, th, h)), (n * c, th, h)), flat)
    out = matmul(rows, broadcast_to(reshape(Tensor(sel_c), (1, w, tw)), (n * c, w, tw)))
    return reshape(out, (n, c, th, tw))


def moments(x: Tensor, axes, keepdims: bool = True):
    mu = mean(x, axis=axes, keepdims=keepdims)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=axes, keepdims=keepdims)
    return mu, xc, var


def normalize(x: Tensor, axes, eps: float = 1e-5) -> Tensor:
    _, xc, var = moments(x, axes)
    return mul(xc, pow_const(add_scalar(var, eps), -0.5))


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over spatial axes (NCHW / NCTHW)."""
    if x.ndim < 3:
        raise ShapeError("instance_norm expects at least one spatial axis")
    axes = tuple(range(2, x.ndim))
    return normalize(x, axes, eps)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Batch-statistics normalization over all axes but channel; covers
    (N,C), (N,C,H,W) and (N,C,T,H,W) inputs.  The stateful running-average
    variant lives in nn.BatchNorm."""
    if x.ndim < 2:
        raise ShapeError("batch_norm expects a channel axis")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("batch_norm affine parameters must be (channels,)")
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    xn = normalize(x, axes, eps)
    return add(mul(xn, reshape(gamma, shape)), reshape(beta, shape))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross entropy from logits: softplus(x) - x*y."""
    t = as_tensor(targets)
    if tuple(t.shape) != tuple(logits.shape):
        raise ShapeError("bce_with_logits target shape mismatch")
    return mean(sub(softplus(logits), mul(logits, t)))


def cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean categorical cross entropy; labels are integer class ids."""
    if logits.ndim != 2:
        raise ShapeError("cross_entropy_with_logits expects (batch, classes) logits")
    idx = np.asarray(labels, dtype=np.int64)
    if idx.shape != (logits.shape[0],):
        raise ShapeError("labels must be one id per row")
    m = Tensor(logits.data.max(axis=1, keepdims=True))
    lse = add(log(sum_(exp(sub(logits, m)), axis=1, keepdims=True)), m)
    picked = sum_(mul(logits, one_hot(idx, logits.shape[1])), axis=1, keepdims=True)
    return mean(sub(lse, picked))


def l2_distance(a: Tensor, b: Tensor) -> Tensor:
    """Squared Euclidean distance summed over all elements."""
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError("l2_distance shape mismatch")
    d = sub(a, b)
    return sum_(mul(d, d))


def sum_squares(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return sum_(mul(x, x), axis=axis, keepdims=keepdims)


def mse(a: Tensor, b: Tensor) -> Tensor:
    d = sub(a, b)
    return mean(mul(d, d))


# ---------------------------------------------------------------------------
# catalog dispatch
# ---------------------------------------------------------------------------

PRIMITIVES = {
    "add": add,
    "mul": mul,
    "scale": scale,
    "add_scalar": add_scalar,
    "pow_const": pow_const,
    "exp": exp,
    "log": log,
    "reshape": reshape,
    "permute": permute,
    "broadcast_to": broadcast_to,
    "slice": slice_nd,
    "pad": pad_nd,
    "concat": concat,
    "split": split,
    "sum": sum_,
    "mean": mean,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "leaky_relu": leaky_relu,
    "softplus": softplus,
    "softmax": softmax,
    "matmul": matmul,
    "linear": linear,
    "embedding": embedding,
    "conv2d": conv2d,
    "conv_transpose2d": conv_transpose2d,
    "conv3d": conv3d,
    "instance_norm": instance_norm,
    "batch_norm": batch_norm,
    "bce_with_logits": bce_with_logits,
    "cross_entropy_with_logits": cross_entropy_with_logits,
    "l2_distance": l2_distance,
}


def apply_primitive(op: str, inputs, **attrs):
    """Look up and apply a catalog primitive by name."""
    if op not in PRIMITIVES:
        raise ContractError(f"unknown primitive '{op}'")
    fn = PRIMITIVES[op]
    if op in ("concat",):
        return fn(inputs, **attrs)
    return fn(*inputs, **attrs)
