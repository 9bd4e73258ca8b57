"""Cross-scale gated SSM fusion (SCM), branch aggregation (AFR) and the encoder built from them.

For every attention branch ``B`` of level ``i``:

* a modulator ``F_m`` is formed from the adjacent pyramid levels, resized
  to level ``i`` and projected to the branch width;
* a projection of ``F_m`` gives per-position ``(delta, B, C)``;
* ``B`` is scanned in all four raster directions with those parameters and
  the summed outputs go through a sigmoid to give a gate ``g``;
* the branch becomes ``(1 - alpha) * B + alpha * B * g``.

AFR then concatenates the branches, adds the level input and applies a
channel layer norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import MSDA, MSDAConfig
from .errors import ConfigError, DimensionError
from .functional import layer_norm, pointwise, resize_bilinear
from .nn import Module, param, uniform
from .pyramid import LEVELS, PyramidSet
from .ssm import DELTA_FLOOR, DIRECTIONS, SelectiveInputs, SSMParams, directional_scan_2d
from .tensor import Tensor, as_tensor, concat, split

NEIGHBOURS = {3: (4,), 4: (3, 5), 5: (4,)}


@dataclass
class ModulatorFeatures:
    """Aligned auxiliary map ``F_m [C_m, H, W]`` plus the projection ``W_p`` (and bias) to SSM inputs."""

    F_m: Tensor
    W_p: Tensor
    b_p: Tensor | None = None

    def selective_inputs(self, state_size: int) -> SelectiveInputs:
        C_m, H, W = self.F_m.shape
        proj = self.F_m.reshape(C_m, H * W).transpose() @ self.W_p
        if self.b_p is not None:
            proj = proj + self.b_p
        width = proj.shape[1] - 2 * state_size
        if width < 1:
            raise DimensionError(f"W_p yields {proj.shape[1]} outputs, too few for state size {state_size}")
        raw_delta, B, C = split(proj, [width, state_size, state_size], axis=1)
        return SelectiveInputs(raw_delta.softplus() + DELTA_FLOOR, B, C)


def build_modulator(levels: PyramidSet, target_level: int, weight, bias=None) -> Tensor:
    """Resize the neighbours of ``target_level`` to its size, concatenate, project with ``weight [C_m, k*C]``."""
    if target_level not in NEIGHBOURS:
        raise ConfigError(f"target level must be one of {LEVELS}, got {target_level}")
    _, H, W = levels[target_level].shape
    aligned = [resize_bilinear(levels[j], H, W) for j in NEIGHBOURS[target_level]]
    return pointwise(concat(aligned, axis=0), weight, bias)


def fus_gate(branch, inputs: SelectiveInputs, params: SSMParams) -> Tensor:
    """``sigmoid(sum over the four directions of scan(branch))`` with shared per-position inputs."""
    branch = as_tensor(branch)
    total = None
    for direction in DIRECTIONS:
        y = directional_scan_2d(branch, params, inputs, direction)
        total = y if total is None else total + y
    return total.sigmoid()


def fus_ssm(branch, mod: ModulatorFeatures, params: SSMParams) -> Tensor:
    branch = as_tensor(branch)
    if mod.F_m.shape[1:] != branch.shape[1:]:
        raise DimensionError(f"modulator {mod.F_m.shape} is not aligned with branch {branch.shape}")
    return fus_gate(branch, mod.selective_inputs(params.state_size), params)


def scm_blend(branch, g, alpha) -> Tensor:
    branch, g = as_tensor(branch), as_tensor(g)
    if branch.shape != g.shape:
        raise DimensionError(f"gate {g.shape} does not match branch {branch.shape}")
    return (1.0 - alpha) * branch + alpha * (branch * g)


def afr(branches, skip, weight=None, bias=None) -> Tensor:
    skip = as_tensor(skip)
    merged = concat(branches, axis=0)
    if merged.shape != skip.shape:
        raise DimensionError(f"concatenated branches {merged.shape} do not match skip {skip.shape}")
    return layer_norm(merged + skip, axis=0, weight=weight, bias=bias)


class SCMBlock(Module):
    def __init__(self, branch_channels: int, level_channels: int, n_neighbours: int,
                 state_size: int = 4, rng=None):
        rng = rng or np.random.default_rng(0)
        c, S = branch_channels, state_size
        self.w_mod = uniform(rng, (c, n_neighbours * level_channels), n_neighbours * level_channels)
        self.b_mod = param(np.zeros(c))
        self.w_p = uniform(rng, (c, c + 2 * S), c)
        self.b_p = param(np.zeros(c + 2 * S))
        self.ssm = SSMParams.init(c, S)
        self.alpha = param(0.5)

    def modulator(self, levels: PyramidSet, level: int) -> ModulatorFeatures:
        return ModulatorFeatures(build_modulator(levels, level, self.w_mod, self.b_mod), self.w_p, self.b_p)

    def forward(self, branch, levels: PyramidSet, level: int) -> Tensor:
        g = fus_ssm(branch, self.modulator(levels, level), self.ssm)
        return scm_blend(branch, g, self.alpha)


class LevelEncoder(Module):
    def __init__(self, level: int, cfg: MSDAConfig, state_size: int = 4, rng=None):
        rng = rng or np.random.default_rng(0)
        self.level = level
        self.msda = MSDA(cfg, rng=rng)
        self.scm = [SCMBlock(cfg.branch_channels, cfg.channels, len(NEIGHBOURS[level]), state_size, rng=rng)
                    for _ in cfg.dilations]
        self.ln_w = param(np.ones((cfg.channels, 1, 1)))
        self.ln_b = param(np.zeros((cfg.channels, 1, 1)))

    def forward(self, levels: PyramidSet) -> Tensor:
        x = levels[self.level]
        branches = [blk(b, levels, self.level) for blk, b in zip(self.scm, self.msda(x))]
        return afr(branches, x, self.ln_w, self.ln_b)


class DFMambaEncoder(Module):
    """Per level: MSDA -> per-branch SCM -> AFR. Maps ``{N3,N4,N5}`` to ``{E3,E4,E5}``."""

    def __init__(self, channels: int, dilations=(1, 2, 3), state_size: int = 4, rng=None):
        rng = rng or np.random.default_rng(0)
        self.cfg = MSDAConfig(channels, tuple(dilations))
        self.levels = [LevelEncoder(lvl, self.cfg, state_size, rng=rng) for lvl in LEVELS]

    def forward(self, levels: PyramidSet) -> PyramidSet:
        if levels.channels != self.cfg.channels:
            raise ConfigError(f"encoder built for {self.cfg.channels} channels, got {levels.channels}")
        return PyramidSet(*(enc(levels) for enc in self.levels))

    def scm_blocks(self) -> list:
        return [blk for enc in self.levels for blk in enc.scm]

    def set_alpha(self, value: float, trainable: bool = True) -> None:
        for blk in self.scm_blocks():
            blk.alpha = Tensor(np.array(float(value)), requires_grad=trainable)

    def zero_modulator_projection(self) -> None:
        for blk in self.scm_blocks():
            blk.w_p.data[...] = 0.0
            blk.b_p.data[...] = 0.0


def dfmamba_encoder(levels: PyramidSet, encoder: DFMambaEncoder) -> PyramidSet:
    return encoder(levels)
