"""Differentiable array operations built on :class:`~mdsf.tensor.Tensor`.

Spatial operators take channel-first maps ``[C, H, W]`` and use zero
padding throughout.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, as_tensor

LN_EPS = 1e-5

# Chebyshev-ball offsets of a 3x3 neighbourhood, row-major.
NEIGHBOUR_OFFSETS = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ConfigError(f"axis {axis} out of range for rank {x.ndim}")
    return axis % x.ndim


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    axis = _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor._make(out, (x,), backward, "softmax")


def layer_norm(x, axis: int = -1, weight=None, bias=None, eps: float = LN_EPS) -> Tensor:
    """Normalize to zero mean and unit variance along ``axis``, then apply the affine map.

    ``weight`` and ``bias`` must broadcast against ``x``.
    """
    x = as_tensor(x)
    axis = _check_axis(x, axis)
    n = x.shape[axis]
    if n < 2:
        raise ConfigError("layer_norm needs at least two elements along the normalized axis")
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gxm = (g * xhat).mean(axis=axis, keepdims=True)
        x._accum(inv * (g - gm - xhat * gxm))

    out = Tensor._make(xhat, (x,), backward, "layer_norm")
    if weight is not None:
        out = out * weight
    if bias is not None:
        out = out + bias
    return out


def _conv_geometry(size: int, k: int, dilation: int, stride: int) -> tuple[int, int]:
    pad = dilation * (k - 1) // 2
    out = (size + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    return pad, out


def _check_kernel(k: int, dilation: int, stride: int) -> None:
    if k % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {k}")
    if dilation < 1 or stride < 1:
        raise ConfigError(f"dilation and stride must be >= 1, got {dilation}, {stride}")


def depthwise_conv2d(x, kernel, dilation: int = 1, stride: int = 1) -> Tensor:
    """Per-channel 2-D convolution (cross-correlation) with size-preserving zero padding.

    ``x`` is ``[C, H, W]``, ``kernel`` is ``[C, k, k]``. With ``stride`` 2 the
    output is ``ceil(H/2) x ceil(W/2)``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3 or kernel.shape[0] != x.shape[0] or kernel.shape[1] != kernel.shape[2]:
        raise DimensionError(f"depthwise_conv2d expects x[C,H,W], kernel[C,k,k]; got {x.shape}, {kernel.shape}")
    k = kernel.shape[1]
    _check_kernel(k, dilation, stride)
    C, H, W = x.shape
    pad, Ho = _conv_geometry(H, k, dilation, stride)
    _, Wo = _conv_geometry(W, k, dilation, stride)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    kd = kernel.data

    def window(arr, i, j):
        r, c = i * dilation, j * dilation
        return arr[:, r : r + stride * (Ho - 1) + 1 : stride, c : c + stride * (Wo - 1) + 1 : stride]

    out = np.zeros((C, Ho, Wo))
    for i in range(k):
        for j in range(k):
            out += kd[:, i, j, None, None] * window(xp, i, j)

    def backward(g):
        if kernel.requires_grad:
            gk = np.empty_like(kd)
            for i in range(k):
                for j in range(k):
                    gk[:, i, j] = (g * window(xp, i, j)).sum(axis=(1, 2))
            kernel._accum(gk)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    window(gxp, i, j)[...] += kd[:, i, j, None, None] * g
            x._accum(gxp[:, pad : pad + H, pad : pad + W])

    return Tensor._make(out, (x, kernel), backward, "depthwise_conv2d")


def conv2d(x, weight, bias=None, dilation: int = 1, stride: int = 1) -> Tensor:
    """Dense 2-D convolution: ``x[Cin,H,W]``, ``weight[Cout,Cin,k,k]`` -> ``[Cout,Ho,Wo]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != x.shape[0] or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"conv2d expects x[Cin,H,W], weight[Cout,Cin,k,k]; got {x.shape}, {weight.shape}")
    k = weight.shape[2]
    _check_kernel(k, dilation, stride)
    Cin, H, W = x.shape
    pad, Ho = _conv_geometry(H, k, dilation, stride)
    _, Wo = _conv_geometry(W, k, dilation, stride)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    wd = weight.data

    def window(arr, i, j):
        r, c = i * dilation, j * dilation
        return arr[:, r : r + stride * (Ho - 1) + 1 : stride, c : c + stride * (Wo - 1) + 1 : stride]

    out = np.zeros((wd.shape[0], Ho, Wo))
    for i in range(k):
        for j in range(k):
            out += np.einsum("oc,chw->ohw", wd[:, :, i, j], window(xp, i, j), optimize=True)

    def backward(g):
        if weight.requires_grad:
            gw = np.empty_like(wd)
            for i in range(k):
                for j in range(k):
                    gw[:, :, i, j] = np.einsum("ohw,chw->oc", g, window(xp, i, j), optimize=True)
            weight._accum(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    window(gxp, i, j)[...] += np.einsum("oc,ohw->chw", wd[:, :, i, j], g, optimize=True)
            x._accum(gxp[:, pad : pad + H, pad : pad + W])

    out_t = Tensor._make(out, (x, weight), backward, "conv2d")
    if bias is not None:
        out_t = out_t + as_tensor(bias).reshape(-1, 1, 1)
    return out_t


def pointwise(x, weight, bias=None) -> Tensor:
    """1x1 convolution as a matrix product over channels; ``weight`` is ``[Cout, Cin]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    C, H, W = x.shape
    if weight.ndim != 2 or weight.shape[1] != C:
        raise DimensionError(f"pointwise weight {weight.shape} does not match {C} input channels")
    out = (weight @ x.reshape(C, H * W)).reshape(weight.shape[0], H, W)
    if bias is not None:
        out = out + as_tensor(bias).reshape(-1, 1, 1)
    return out


def unfold_neighborhood(x, d: int) -> Tensor:
    """Gather the 3x3 neighbourhood at spacing ``d``: ``[C,H,W]`` -> ``[C,9,H,W]``.

    Slot ``k`` holds ``x[:, y + d*dy, x + d*dx]`` for the ``k``-th entry of
    :data:`NEIGHBOUR_OFFSETS`; positions outside the map read 0.
    """
    x = as_tensor(x)
    if d < 1:
        raise ConfigError(f"dilation must be >= 1, got {d}")
    if x.ndim != 3:
        raise DimensionError(f"unfold_neighborhood expects [C,H,W], got {x.shape}")
    C, H, W = x.shape
    xp = np.pad(x.data, ((0, 0), (d, d), (d, d)))
    slots = [(d + dy * d, d + dx * d) for dy, dx in NEIGHBOUR_OFFSETS]
    out = np.stack([xp[:, r : r + H, c : c + W] for r, c in slots], axis=1)

    def backward(g):
        gxp = np.zeros_like(xp)
        for n, (r, c) in enumerate(slots):
            gxp[:, r : r + H, c : c + W] += g[:, n]
        x._accum(gxp[:, d : d + H, d : d + W])

    return Tensor._make(out, (x,), backward, "unfold")


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic ``[n_out, n_in]`` interpolation matrix, half-pixel centres, edge clamped."""
    m = np.zeros((n_out, n_in))
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize_bilinear(x, height: int, width: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"resize_bilinear expects [C,H,W], got {x.shape}")
    _, H, W = x.shape
    if (H, W) == (height, width):
        return x
    ry, rx = bilinear_matrix(H, height), bilinear_matrix(W, width)
    out = np.einsum("yh,chw,xw->cyx", ry, x.data, rx, optimize=True)

    def backward(g):
        x._accum(np.einsum("yh,cyx,xw->chw", ry, g, rx, optimize=True))

    return Tensor._make(out, (x,), backward, "resize_bilinear")


def log_sigmoid(x) -> Tensor:
    x = as_tensor(x)
    return -((-x).softplus())
