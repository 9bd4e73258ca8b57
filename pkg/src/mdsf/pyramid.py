"""Enhanced bidirectional feature pyramid and its building blocks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .functional import depthwise_conv2d, pointwise, resize_bilinear
from .nn import Module, delta_kernel, param, uniform
from .ssm import MambaMixerBlock
from .tensor import Tensor, as_tensor, concat

LEVELS = (3, 4, 5)
STRIDES = {3: 8, 4: 16, 5: 32}


@dataclass
class PyramidSet:
    """Three maps ``[C, H, W]`` at strides 8/16/32; sizes halve level to level."""

    n3: Tensor
    n4: Tensor
    n5: Tensor

    def __post_init__(self):
        maps = [as_tensor(m) for m in (self.n3, self.n4, self.n5)]
        self.n3, self.n4, self.n5 = maps
        if len({m.shape[0] for m in maps}) != 1:
            raise ConfigError(f"pyramid levels must share a channel count, got {[m.shape for m in maps]}")
        check_halving([m.shape for m in maps])

    def __getitem__(self, level: int) -> Tensor:
        if level not in LEVELS:
            raise ConfigError(f"pyramid level must be one of {LEVELS}, got {level}")
        return getattr(self, f"n{level}")

    def __iter__(self):
        return iter((self.n3, self.n4, self.n5))

    @property
    def channels(self) -> int:
        return self.n3.shape[0]

    def shapes(self) -> list:
        return [m.shape for m in self]


def check_halving(shapes) -> None:
    for (_, h0, w0), (_, h1, w1) in zip(shapes, shapes[1:]):
        if (h1 * 2, w1 * 2) != (h0, w0):
            raise ConfigError(f"spatial sizes must halve between levels, got {[s[1:] for s in shapes]}")


class HybridBlock(Module):
    """Local depthwise branch (3x3 + 5x5, each with pointwise mixing) beside a Mamba mixer.

    ``out = x + w_local * local(x) + w_global * mixer(x)``.
    """

    def __init__(self, channels: int, state_size: int = 4, rng=None):
        rng = rng or np.random.default_rng(0)
        C = channels
        self.dw3 = uniform(rng, (C, 3, 3), 9)
        self.dw5 = uniform(rng, (C, 5, 5), 25)
        self.pw3 = uniform(rng, (C, C), C)
        self.pw5 = uniform(rng, (C, C), C)
        self.mixer = MambaMixerBlock(C, state_size, rng=rng)
        self.w_local = param(0.5)
        self.w_global = param(0.5)

    def local(self, x):
        return pointwise(depthwise_conv2d(x, self.dw3), self.pw3) + pointwise(depthwise_conv2d(x, self.dw5), self.pw5)

    def forward(self, x):
        x = as_tensor(x)
        return x + self.w_local * self.local(x) + self.w_global * self.mixer(x)


class ContrastEnhancement(Module):
    """SE-style channel reweighting followed by a 3x3 depthwise refinement."""

    def __init__(self, channels: int, reduction: int = 4, rng=None):
        rng = rng or np.random.default_rng(0)
        C, R = channels, max(1, channels // reduction)
        self.w1 = uniform(rng, (R, C), C)
        self.b1 = param(np.zeros(R))
        self.w2 = uniform(rng, (C, R), R)
        self.b2 = param(np.zeros(C))
        self.dw = uniform(rng, (C, 3, 3), 9)

    def channel_weights(self, x) -> Tensor:
        pooled = as_tensor(x).mean(axis=(1, 2))
        hidden = (self.w1 @ pooled.reshape(-1, 1)).reshape(-1) + self.b1
        return ((self.w2 @ hidden.silu().reshape(-1, 1)).reshape(-1) + self.b2).sigmoid()

    def forward(self, x):
        x = as_tensor(x)
        w = self.channel_weights(x)
        return depthwise_conv2d(x * w.reshape(-1, 1, 1), self.dw)


class EdgeAttention(Module):
    """Two stacked depthwise 3x3 layers give an edge response; positions are reweighted by its magnitude."""

    def __init__(self, channels: int, rng=None):
        rng = rng or np.random.default_rng(0)
        C = channels
        self.dw1 = uniform(rng, (C, 3, 3), 9)
        self.dw2 = uniform(rng, (C, 3, 3), 9)
        self.w_map = param(1.0)
        self.b_map = param(0.0)

    def edge_map(self, x) -> Tensor:
        e = depthwise_conv2d(depthwise_conv2d(x, self.dw1).silu(), self.dw2)
        magnitude = e.abs().sum(axis=0)
        return (magnitude * self.w_map + self.b_map).sigmoid()

    def forward(self, x):
        x = as_tensor(x)
        m = self.edge_map(x)
        return x * m.reshape(1, *m.shape)


class MultiScaleEnhancer(Module):
    """ASPP-style: depthwise 3x3 at dilations 1/2/3 plus a pointwise branch, concatenated and projected."""

    dilations = (1, 2, 3)

    def __init__(self, channels: int, rng=None):
        rng = rng or np.random.default_rng(0)
        C = channels
        self.kernels = [uniform(rng, (C, 3, 3), 9) for _ in self.dilations]
        self.w_point = uniform(rng, (C, C), C)
        self.w_proj = uniform(rng, (C, 4 * C), 4 * C)

    def forward(self, x):
        x = as_tensor(x)
        branches = [depthwise_conv2d(x, k, dilation=d) for k, d in zip(self.kernels, self.dilations)]
        branches.append(pointwise(x, self.w_point))
        return pointwise(concat(branches, axis=0), self.w_proj)

    def set_delta_kernels(self) -> None:
        C = self.w_point.shape[0]
        for k in self.kernels:
            k.data[...] = delta_kernel(C, 3)
        self.w_point.data[...] = np.eye(C)


class EnhancementCascade(Module):
    def __init__(self, channels: int, rng=None):
        self.contrast = ContrastEnhancement(channels, rng=rng)
        self.edge = EdgeAttention(channels, rng=rng)
        self.multi_scale = MultiScaleEnhancer(channels, rng=rng)

    def forward(self, x):
        return self.multi_scale(self.edge(self.contrast(x)))


class EFPN(Module):
    """Lateral 1x1 -> enhancement cascade -> top-down (upsample-add) -> bottom-up (stride-2 depthwise, add)."""

    def __init__(self, in_channels, channels: int, rng=None):
        rng = rng or np.random.default_rng(0)
        if len(in_channels) != 3:
            raise ConfigError("EFPN takes exactly three backbone maps")
        C = channels
        self.lateral = [uniform(rng, (C, c_in), c_in) for c_in in in_channels]
        self.lateral_b = [param(np.zeros(C)) for _ in in_channels]
        self.cascades = [EnhancementCascade(C, rng=rng) for _ in in_channels]
        self.down = [uniform(rng, (C, 3, 3), 9) for _ in range(2)]

    def forward(self, maps) -> PyramidSet:
        maps = [as_tensor(m) for m in maps]
        if len(maps) != 3:
            raise ConfigError("EFPN takes exactly three backbone maps")
        check_halving([m.shape for m in maps])
        lat = [casc(pointwise(m, w, b)) for m, w, b, casc in zip(maps, self.lateral, self.lateral_b, self.cascades)]
        p5 = lat[2]
        p4 = lat[1] + resize_bilinear(p5, *lat[1].shape[1:])
        p3 = lat[0] + resize_bilinear(p4, *lat[0].shape[1:])
        n3 = p3
        n4 = p4 + depthwise_conv2d(n3, self.down[0], stride=2)
        n5 = p5 + depthwise_conv2d(n4, self.down[1], stride=2)
        return PyramidSet(n3, n4, n5)


def efpn(maps, module: EFPN) -> PyramidSet:
    return module(maps)
