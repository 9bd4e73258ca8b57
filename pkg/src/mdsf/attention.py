"""Multi-scale dilated attention (MSDA).

Channels are split into ``n_d`` groups; group ``i`` attends over the 3x3
neighbourhood sampled at spacing ``dilations[i]``, so its receptive field
is ``(2d+1) x (2d+1)``. Q/K/V come from 1x1 projections, which keeps that
bound exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .functional import pointwise, softmax, unfold_neighborhood
from .nn import Module, uniform
from .tensor import Tensor, as_tensor, split


@dataclass(frozen=True)
class MSDAConfig:
    channels: int
    dilations: tuple = (1, 2, 3)

    def __post_init__(self):
        dil = tuple(int(d) for d in self.dilations)
        object.__setattr__(self, "dilations", dil)
        if not dil:
            raise ConfigError("at least one dilation is required")
        if any(d < 1 for d in dil) or any(b <= a for a, b in zip(dil, dil[1:])):
            raise ConfigError(f"dilations must be >= 1 and strictly increasing, got {dil}")
        if self.channels % len(dil):
            raise ConfigError(f"{self.channels} channels cannot be split into {len(dil)} branches")

    @property
    def n_d(self) -> int:
        return len(self.dilations)

    @property
    def branch_channels(self) -> int:
        return self.channels // self.n_d


def attention_weights(Q, K, d: int) -> Tensor:
    """Softmax weights ``[9, H, W]`` of each position over its dilated neighbourhood."""
    Q, K = as_tensor(Q), as_tensor(K)
    c = Q.shape[0]
    keys = unfold_neighborhood(K, d)
    scores = (Q.reshape(c, 1, *Q.shape[1:]) * keys).sum(axis=0) * (1.0 / np.sqrt(c))
    return softmax(scores, axis=0)


def dilated_attention_branch(Q, K, V, d: int) -> Tensor:
    """Neighbourhood attention at dilation ``d`` for ``Q, K, V [c, H, W]``; zero padding at borders."""
    V = as_tensor(V)
    weights = attention_weights(Q, K, d)
    values = unfold_neighborhood(V, d)
    return (weights.reshape(1, *weights.shape) * values).sum(axis=1)


class MSDA(Module):
    def __init__(self, cfg: MSDAConfig, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        C = cfg.channels
        self.w_q = uniform(rng, (C, C), C)
        self.w_k = uniform(rng, (C, C), C)
        self.w_v = uniform(rng, (C, C), C)

    def forward(self, x) -> list:
        x = as_tensor(x)
        if x.shape[0] != self.cfg.channels:
            raise ConfigError(f"MSDA built for {self.cfg.channels} channels, got {x.shape[0]}")
        qs = split(pointwise(x, self.w_q), self.cfg.n_d, axis=0)
        ks = split(pointwise(x, self.w_k), self.cfg.n_d, axis=0)
        vs = split(pointwise(x, self.w_v), self.cfg.n_d, axis=0)
        return [dilated_attention_branch(q, k, v, d) for q, k, v, d in zip(qs, ks, vs, self.cfg.dilations)]


def msda(x, cfg: MSDAConfig, projections: MSDA | None = None) -> list:
    """Branch outputs ``[B^d for d in cfg.dilations]``, each ``[C/n_d, H, W]``."""
    return (projections or MSDA(cfg))(x)
