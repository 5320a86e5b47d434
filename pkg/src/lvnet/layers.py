"""Parameterized building blocks registered in a ParameterStore."""

from __future__ import annotations

import numpy as np

from lvnet.numerics import ParameterStore, Tensor, affine, conv2d, layer_norm


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by resampling."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


class Linear:
    def __init__(self, store: ParameterStore, name: str, din: int, dout: int,
                 rng: np.random.Generator, bias: bool = True, dtype=np.float32):
        self.weight = store.add(f"{name}.weight", trunc_normal(rng, (din, dout)).astype(dtype))
        self.bias = store.add(f"{name}.bias", np.zeros(dout, dtype)) if bias else None
        self.din, self.dout = din, dout

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class Conv2d:
    """Square-kernel convolution; He-normal weights (std sqrt(2/fan_in)) and zero bias."""

    def __init__(self, store: ParameterStore, name: str, cin: int, cout: int, k: int,
                 rng: np.random.Generator, stride: int = 1, pad: int | None = None,
                 bias: bool = True, dtype=np.float32):
        std = np.sqrt(2.0 / (cin * k * k))
        self.weight = store.add(f"{name}.weight", (std * rng.standard_normal((cout, cin, k, k))).astype(dtype))
        self.bias = store.add(f"{name}.bias", np.zeros(cout, dtype)) if bias else None
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        self.cin, self.cout, self.k = cin, cout, k

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.gamma = store.add(f"{name}.weight", np.ones(dim, dtype))
        self.beta = store.add(f"{name}.bias", np.zeros(dim, dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)
