"""Neural-network primitives with hand-written gradients."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from lvnet.errors import ConfigError
from lvnet.numerics import profiling
from lvnet.numerics.tensor import Tensor, make_result

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _im2col(xp: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    """(N, C, Hp, Wp) padded input -> (N*Ho*Wo, C*k*k) patch matrix."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of an (N, Cin, H, W) input with a (Cout, Cin, k, k) kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin:
        raise ConfigError(f"conv2d channel mismatch: input has {cin}, weight expects {wcin}")
    if k != k2:
        raise ConfigError("conv2d supports square kernels only")
    if bias is not None and bias.shape != (cout,):
        raise ConfigError(f"conv2d bias shape {bias.shape} != ({cout},)")

    wmat = weight.data.reshape(cout, cin * k * k)
    if k == 1 and stride == 1 and pad == 0:
        cols = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
        ho, wo = h, w
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
        cols, ho, wo = _im2col(xp, k, stride)
    out = cols @ wmat.T
    profiling.record("conv2d", cols.shape[0] * cols.shape[1] * cout)
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            if k == 1 and stride == 1 and pad == 0:
                gx = np.ascontiguousarray((g2 @ wmat).reshape(n, h, w, cin).transpose(0, 3, 1, 2))
            elif stride == 1 and pad <= k - 1:
                # full correlation of the output gradient with the flipped, transposed kernel
                wflip = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, cout * k * k)
                q = k - 1 - pad
                gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q)))
                gcols, gh, gwid = _im2col(gp, k, 1)
                gx = gcols @ wflip.T
                gx = np.ascontiguousarray(gx.reshape(n, gh, gwid, cin).transpose(0, 3, 1, 2))
                gx = gx[:, :, :h, :w]
            else:
                dcols = (g2 @ wmat).reshape(n, ho, wo, cin, k, k)
                gxp = np.zeros((n, cin, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                            dcols[..., i, j].transpose(0, 3, 1, 2)
                        )
                gx = np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + w])
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, back, "conv2d")


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; weight is (Din, Dout)."""
    din, dout = weight.shape
    if x.shape[-1] != din:
        raise ConfigError(f"affine expects last axis {din}, got input {x.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, din)
    out = x2 @ weight.data
    profiling.record("affine", x2.shape[0] * din * dout)
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.reshape(-1, dout)
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if bias.requires_grad else None)

    return make_result(out.reshape(*lead, dout), parents, back, "affine")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ConfigError(f"layer_norm parameters must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return make_result(out, (x, gamma, beta), back, "layer_norm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), back, "softmax")


def pointwise(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity: ``gelu`` (exact erf form), ``sigmoid`` or ``relu``."""
    a = x.data
    if kind == "relu":
        mask = a > 0
        out = a * mask

        def back(g):
            return (g * mask,)
    elif kind == "sigmoid":
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)

        def back(g):
            return (g * out * (1.0 - out),)
    elif kind == "gelu":
        cdf = 0.5 * (1.0 + erf(a / _SQRT2))
        out = (a * cdf).astype(a.dtype, copy=False)

        def back(g):
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * a * a)
            return ((g * (cdf + a * pdf)).astype(a.dtype, copy=False),)
    else:
        raise ConfigError(f"unknown pointwise kind {kind!r}")
    return make_result(out, (x,), back, kind)


def relu(x: Tensor) -> Tensor:
    return pointwise(x, "relu")


def gelu(x: Tensor) -> Tensor:
    return pointwise(x, "gelu")


def sigmoid(x: Tensor) -> Tensor:
    return pointwise(x, "sigmoid")


def bilinear_matrix(n_in: int, scale: int = 2, dtype=np.float32) -> np.ndarray:
    """(n_in*scale, n_in) interpolation matrix, half-pixel centers, edge clamped."""
    n_out = n_in * scale
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        src = (i + 0.5) / scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        mat[i, lo] += 1.0 - frac
        mat[i, hi] += frac
    return mat.astype(dtype)


def bce_with_logits(logits: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy computed from logits (log-sum-exp stable)."""
    z, t = logits.data, target.data
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(loss.mean(), dtype=z.dtype)

    def back(g):
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        return ((g * (p - t) / z.size).astype(z.dtype), None)

    return make_result(out, (logits, target), back, "bce_with_logits")
