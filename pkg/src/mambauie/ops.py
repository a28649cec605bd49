"""Differentiable array ops: convolutions, linear maps, norms, activations,
elementwise arithmetic, pooling and pixel rearrangement.

Forward math runs in the dtype of the inputs (float32 in production,
float64 for oracle/gradient-check paths).  Backward closures return fresh
arrays; inputs are never mutated.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

from .tensor import Tensor, apply_op

__all__ = [
    "ShapeError",
    "conv2d",
    "linear",
    "seq_linear",
    "layer_norm",
    "activation",
    "gelu",
    "silu",
    "sigmoid",
    "softplus",
    "add",
    "sub",
    "mul",
    "global_avg_pool",
    "pixel_rearrange",
    "slice_channels",
    "nchw_to_seq",
    "seq_to_nchw",
    "gather_tokens",
    "reshape",
    "absolute",
    "exp",
    "neg",
    "sum_all",
    "mean_all",
]

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


def _same_dtype(*tensors: Tensor):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise TypeError(f"mixed tensor dtypes: {dt} vs {t.dtype}")
    return dt


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# convolution / linear

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2D convolution with zero padding.

    weight is [Cout, Cin/groups, kh, kw]; depthwise = groups == Cin,
    pointwise = 1x1 kernel with groups == 1.
    """
    if stride <= 0:
        raise ShapeError(f"stride must be positive, got {stride}")
    xv, wv = x.data, weight.data
    if xv.ndim != 4 or wv.ndim != 4:
        raise ShapeError("conv2d expects rank-4 input and weight")
    n, cin, h, w = xv.shape
    cout, cin_g, kh, kw = wv.shape
    if cin % groups or cout % groups or cin // groups != cin_g:
        raise ShapeError(
            f"channel/group mismatch: input {cin} channels, weight "
            f"{cin_g} per group, groups={groups}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("kernel larger than padded input")
    if bias is not None and bias.data.shape != (cout,):
        raise ShapeError("bias must be [Cout]")
    _same_dtype(x, weight, *( [bias] if bias is not None else [] ))

    p = padding
    xp = np.pad(xv, ((0, 0), (0, 0), (p, p), (p, p))) if p else xv
    xg = xp.reshape(n, groups, cin_g, xp.shape[2], xp.shape[3])
    wg = wv.reshape(groups, cout // groups, cin_g, kh, kw)
    out = np.zeros((n, groups, cout // groups, ho, wo), dtype=xv.dtype)
    for u in range(kh):
        for v in range(kw):
            xs = xg[:, :, :, u:u + stride * ho:stride, v:v + stride * wo:stride]
            out += np.einsum("ngchw,goc->ngohw", xs, wg[:, :, :, u, v],
                             optimize=True)
    out = out.reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    def grad(g):
        gg = g.reshape(n, groups, cout // groups, ho, wo)
        gw = np.zeros_like(wv).reshape(groups, cout // groups, cin_g, kh, kw)
        gxp = np.zeros_like(xp).reshape(n, groups, cin_g, xp.shape[2], xp.shape[3])
        for u in range(kh):
            for v in range(kw):
                xs = xg[:, :, :, u:u + stride * ho:stride, v:v + stride * wo:stride]
                gw[:, :, :, u, v] = np.einsum("ngchw,ngohw->goc", xs, gg,
                                              optimize=True)
                gxp[:, :, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += \
                    np.einsum("ngohw,goc->ngchw", gg, wg[:, :, :, u, v],
                              optimize=True)
        gx = gxp.reshape(xp.shape)
        if p:
            gx = gx[:, :, p:p + h, p:p + w]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return np.ascontiguousarray(gx), gw.reshape(wv.shape), gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply_op("conv2d", inputs, out, grad)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-pixel linear map over channels of an NCHW tensor."""
    xv, wv = x.data, weight.data
    if xv.ndim != 4:
        raise ShapeError("linear expects an NCHW input")
    dout, din = wv.shape
    if xv.shape[1] != din:
        raise ShapeError(f"linear: input has {xv.shape[1]} channels, weight expects {din}")
    _same_dtype(x, weight, *( [bias] if bias is not None else [] ))
    out = np.einsum("nchw,oc->nohw", xv, wv, optimize=True)
    if bias is not None:
        out = out + bias.data.reshape(1, dout, 1, 1)

    def grad(g):
        gx = np.einsum("nohw,oc->nchw", g, wv, optimize=True)
        gw = np.einsum("nohw,nchw->oc", g, xv, optimize=True)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply_op("linear", inputs, out, grad)


def seq_linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-token linear map on an (N, L, D) sequence."""
    xv, wv = x.data, weight.data
    if xv.ndim != 3 or xv.shape[2] != wv.shape[1]:
        raise ShapeError("seq_linear: expected (N, L, Din) input matching weight")
    _same_dtype(x, weight, *( [bias] if bias is not None else [] ))
    out = np.einsum("nld,od->nlo", xv, wv, optimize=True)
    if bias is not None:
        out = out + bias.data

    def grad(g):
        gx = np.einsum("nlo,od->nld", g, wv, optimize=True)
        gw = np.einsum("nlo,nld->od", g, xv, optimize=True)
        gb = g.sum(axis=(0, 1)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply_op("seq_linear", inputs, out, grad)


# ---------------------------------------------------------------------------
# normalization / activations

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize channels to zero mean/unit variance per spatial position."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    xv = x.data
    if xv.ndim != 4 or gamma.data.shape != (xv.shape[1],) \
            or beta.data.shape != (xv.shape[1],):
        raise ShapeError("layer_norm: NCHW input with per-channel affine required")
    _same_dtype(x, gamma, beta)
    mu = xv.mean(axis=1, keepdims=True)
    var = xv.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + xv.dtype.type(eps))
    xhat = (xv - mu) * inv
    out = gamma.data.reshape(1, -1, 1, 1) * xhat + beta.data.reshape(1, -1, 1, 1)

    def grad(g):
        gw = gamma.data.reshape(1, -1, 1, 1)
        gxhat = g * gw
        m1 = gxhat.mean(axis=1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
        gx = inv * (gxhat - m1 - xhat * m2)
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        return gx, ggamma, gbeta

    return apply_op("layer_norm", (x, gamma, beta), out, grad)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    xv = x.data
    phi = 0.5 * (1.0 + erf(xv / xv.dtype.type(_SQRT2)))
    out = xv * phi

    def grad(g):
        pdf = np.exp(-0.5 * xv * xv) * xv.dtype.type(_INV_SQRT_2PI)
        return (g * (phi + xv * pdf),)

    return apply_op("gelu", (x,), out, grad)


def silu(x: Tensor) -> Tensor:
    xv = x.data
    s = expit(xv)
    out = xv * s

    def grad(g):
        return (g * (s * (1.0 + xv * (1.0 - s))),)

    return apply_op("silu", (x,), out, grad)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)

    def grad(g):
        return (g * out * (1.0 - out),)

    return apply_op("sigmoid", (x,), out, grad)


def softplus(x: Tensor) -> Tensor:
    xv = x.data
    out = np.logaddexp(xv.dtype.type(0), xv)

    def grad(g):
        return (g * expit(xv),)

    return apply_op("softplus", (x,), out, grad)


_ACTIVATIONS = {"gelu": gelu, "silu": silu, "sigmoid": sigmoid}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# elementwise

def _check_broadcast(a_shape, b_shape):
    try:
        return np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeError(f"incompatible shapes {a_shape} and {b_shape}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    _check_broadcast(a.shape, b.shape)
    out = a.data + b.data

    def grad(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return apply_op("add", (a, b), out, grad)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    _check_broadcast(a.shape, b.shape)
    out = a.data - b.data

    def grad(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return apply_op("sub", (a, b), out, grad)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    _check_broadcast(a.shape, b.shape)
    av, bv = a.data, b.data
    out = av * bv

    def grad(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return apply_op("mul", (a, b), out, grad)


# ---------------------------------------------------------------------------
# pooling / rearrangement

def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean, output shape [N, C, 1, 1]."""
    xv = x.data
    if xv.ndim != 4:
        raise ShapeError("global_avg_pool expects NCHW")
    h, w = xv.shape[2], xv.shape[3]
    out = xv.mean(axis=(2, 3), keepdims=True)

    def grad(g):
        return (np.broadcast_to(g / (h * w), xv.shape).astype(xv.dtype, copy=True),)

    return apply_op("global_avg_pool", (x,), out, grad)


def _rearrange_down(arr: np.ndarray, f: int) -> np.ndarray:
    n, c, h, w = arr.shape
    out = arr.reshape(n, c, h // f, f, w // f, f)
    out = out.transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out).reshape(n, c * f * f, h // f, w // f)


def _rearrange_up(arr: np.ndarray, f: int) -> np.ndarray:
    n, c2, h, w = arr.shape
    c = c2 // (f * f)
    out = arr.reshape(n, c, f, f, h, w)
    out = out.transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out).reshape(n, c, h * f, w * f)


def pixel_rearrange(x: Tensor, factor: int, direction: str) -> Tensor:
    """Lossless space<->depth rearrangement; up(down(x)) == x bit-exactly."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    xv = x.data
    if xv.ndim != 4:
        raise ShapeError("pixel_rearrange expects NCHW")
    n, c, h, w = xv.shape
    if direction == "down":
        if h % factor or w % factor:
            raise ShapeError(
                f"extents {h}x{w} not divisible by factor {factor}")
        out = _rearrange_down(xv, factor)

        def grad(g):
            return (_rearrange_up(g, factor),)
    elif direction == "up":
        if c % (factor * factor):
            raise ShapeError(
                f"channel extent {c} not divisible by factor^2 = {factor * factor}")
        out = _rearrange_up(xv, factor)

        def grad(g):
            return (_rearrange_down(g, factor),)
    else:
        raise ValueError(f"direction must be 'down' or 'up', got {direction!r}")
    return apply_op("pixel_rearrange", (x,), out, grad)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Channel slice [start:stop] of an NCHW tensor."""
    xv = x.data
    if xv.ndim != 4 or not (0 <= start < stop <= xv.shape[1]):
        raise ShapeError(f"bad channel slice [{start}:{stop}] for shape {xv.shape}")
    out = np.ascontiguousarray(xv[:, start:stop])

    def grad(g):
        gx = np.zeros_like(xv)
        gx[:, start:stop] = g
        return (gx,)

    return apply_op("slice_channels", (x,), out, grad)


# ---------------------------------------------------------------------------
# NCHW <-> token-sequence bridging (for the scan module)

def nchw_to_seq(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, H*W, C], row-major token order."""
    xv = x.data
    if xv.ndim != 4:
        raise ShapeError("nchw_to_seq expects NCHW")
    n, c, h, w = xv.shape
    out = np.ascontiguousarray(xv.transpose(0, 2, 3, 1)).reshape(n, h * w, c)

    def grad(g):
        return (np.ascontiguousarray(
            g.reshape(n, h, w, c).transpose(0, 3, 1, 2)),)

    return apply_op("nchw_to_seq", (x,), out, grad)


def seq_to_nchw(x: Tensor, h: int, w: int) -> Tensor:
    """[N, H*W, C] -> [N, C, H, W]; inverse of nchw_to_seq."""
    xv = x.data
    if xv.ndim != 3 or xv.shape[1] != h * w:
        raise ShapeError(f"sequence length {xv.shape} does not match {h}x{w}")
    n, _, c = xv.shape
    out = np.ascontiguousarray(xv.reshape(n, h, w, c).transpose(0, 3, 1, 2))

    def grad(g):
        return (np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n, h * w, c),)

    return apply_op("seq_to_nchw", (x,), out, grad)


def gather_tokens(x: Tensor, index: np.ndarray) -> Tensor:
    """Permute the token axis of an (N, L, D) sequence: out[:, k] = x[:, index[k]]."""
    xv = x.data
    if xv.ndim != 3 or index.shape != (xv.shape[1],):
        raise ShapeError("gather_tokens: index must be a permutation of the token axis")
    inverse = np.argsort(index)
    out = xv[:, index, :]

    def grad(g):
        return (np.ascontiguousarray(g[:, inverse, :]),)

    return apply_op("gather_tokens", (x,), out, grad)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    in_shape = x.data.shape

    def grad(g):
        return (g.reshape(in_shape),)

    return apply_op("reshape", (x,), out, grad)


# ---------------------------------------------------------------------------
# unary / reductions

def absolute(x: Tensor) -> Tensor:
    """|x| with subgradient 0 at ties."""
    xv = x.data
    out = np.abs(xv)

    def grad(g):
        return (g * np.sign(xv),)

    return apply_op("absolute", (x,), out, grad)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def grad(g):
        return (g * out,)

    return apply_op("exp", (x,), out, grad)


def neg(x: Tensor) -> Tensor:
    out = -x.data

    def grad(g):
        return (-g,)

    return apply_op("neg", (x,), out, grad)


def sum_all(x: Tensor) -> Tensor:
    xv = x.data
    out = np.asarray(xv.sum(), dtype=xv.dtype)

    def grad(g):
        return (np.full(xv.shape, g, dtype=xv.dtype),)

    return apply_op("sum_all", (x,), out, grad)


def mean_all(x: Tensor) -> Tensor:
    xv = x.data
    out = np.asarray(xv.mean(), dtype=xv.dtype)

    def grad(g):
        return (np.full(xv.shape, g / xv.size, dtype=xv.dtype),)

    return apply_op("mean_all", (x,), out, grad)
