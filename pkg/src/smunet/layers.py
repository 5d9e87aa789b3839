"""Small parameterized layers and the deterministic initializer."""

from __future__ import annotations

import numpy as np

from .rng import PortableRng
from .tensor import Tensor, conv2d, group_norm, linear, parameter, silu

__all__ = ["Initializer", "Conv2d", "Linear", "ConvNormAct", "DoubleConv"]


class Initializer:
    """Draws parameter arrays from one portable RNG stream.

    Dense/conv weights use uniform(-s, s) with s = 1/sqrt(fan_in); biases
    start at zero unless a layer overrides them. Construction order fixes
    the draw order, so identical configs and seeds give bitwise-identical
    parameters.
    """

    def __init__(self, seed: int):
        self.rng = PortableRng(seed)

    def dense(self, shape) -> np.ndarray:
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
        s = 1.0 / np.sqrt(max(1, fan_in))
        return self.rng.uniform_array(shape, -s, s)


class Conv2d:
    """3x3 (or 1x1) convolution layer with shape-preserving default padding."""

    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        k: int,
        init: Initializer,
        stride: int = 1,
        bias: bool = True,
    ):
        self.stride = stride
        self.padding = (k - 1) // 2
        self.w = parameter(init.dense((c_out, c_in, k, k)), f"{name}.w")
        self.b = parameter(np.zeros(c_out), f"{name}.b") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def params(self) -> list[Tensor]:
        return [self.w] if self.b is None else [self.w, self.b]


class Linear:
    def __init__(self, name: str, d_in: int, d_out: int, init: Initializer, bias: bool = True):
        self.w = parameter(init.dense((d_out, d_in)), f"{name}.w")
        self.b = parameter(np.zeros(d_out), f"{name}.b") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)

    def params(self) -> list[Tensor]:
        return [self.w] if self.b is None else [self.w, self.b]


class ConvNormAct:
    """conv 3x3 -> group norm -> SiLU."""

    def __init__(self, name: str, c_in: int, c_out: int, init: Initializer, groups: int = 4):
        self.conv = Conv2d(f"{name}.conv", c_in, c_out, 3, init)
        self.groups = min(groups, c_out)
        self.gamma = parameter(np.ones(c_out), f"{name}.norm_gamma")
        self.beta = parameter(np.zeros(c_out), f"{name}.norm_beta")

    def __call__(self, x: Tensor) -> Tensor:
        return silu(group_norm(self.conv(x), self.gamma, self.beta, self.groups))

    def params(self) -> list[Tensor]:
        return self.conv.params() + [self.gamma, self.beta]


class DoubleConv:
    """Two conv-norm-activation units; the encoder/decoder workhorse."""

    def __init__(self, name: str, c_in: int, c_out: int, init: Initializer, groups: int = 4):
        self.u1 = ConvNormAct(f"{name}.u1", c_in, c_out, init, groups)
        self.u2 = ConvNormAct(f"{name}.u2", c_out, c_out, init, groups)

    def __call__(self, x: Tensor) -> Tensor:
        return self.u2(self.u1(x))

    def params(self) -> list[Tensor]:
        return self.u1.params() + self.u2.params()
