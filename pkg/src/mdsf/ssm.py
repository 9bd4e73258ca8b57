"""Selective state-space scan.

Recurrence per channel ``c`` and state ``s``::

    h[t] = exp(delta[t,c] * A[c,s]) * h[t-1] + delta[t,c] * B[t,s] * x[t,c]
    y[t,c] = sum_s C[t,s] * h[t,c,s] + D[c] * x[t,c]

with ``h[-1] = 0``. ``A`` is diagonal (one row of ``S`` negative rates per
channel); ``delta``, ``B`` and ``C`` come from the input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, DomainError
from .functional import layer_norm, pointwise
from .nn import Module, param, uniform
from .tensor import Tensor, as_tensor, split, take

DELTA_FLOOR = 1e-4
DIRECTIONS = ("LR", "RL", "TB", "BT")


@dataclass
class SSMParams(Module):
    """Input-independent parameters. ``A = -exp(A_log)`` keeps every rate negative."""

    A_log: Tensor
    D: Tensor

    @classmethod
    def init(cls, channels: int, state_size: int) -> "SSMParams":
        if state_size < 1:
            raise ConfigError("state size must be >= 1")
        A = np.tile(np.arange(1, state_size + 1, dtype=np.float64), (channels, 1))
        return cls(param(np.log(A)), param(np.ones(channels)))

    @classmethod
    def from_arrays(cls, A, D, requires_grad: bool = True) -> "SSMParams":
        A = np.asarray(A, dtype=np.float64)
        if np.any(A >= 0):
            raise DomainError("all entries of A must be strictly negative")
        return cls(Tensor(np.log(-A), requires_grad), Tensor(np.asarray(D, dtype=np.float64), requires_grad))

    @property
    def A(self) -> Tensor:
        return -(self.A_log.exp())

    @property
    def channels(self) -> int:
        return self.A_log.shape[0]

    @property
    def state_size(self) -> int:
        return self.A_log.shape[1]


@dataclass
class SelectiveInputs:
    """Per-token ``delta [L, C]``, ``B [L, S]``, ``C [L, S]``."""

    delta: Tensor
    B: Tensor
    C: Tensor

    def __post_init__(self):
        self.delta, self.B, self.C = as_tensor(self.delta), as_tensor(self.B), as_tensor(self.C)

    def reorder(self, order: np.ndarray) -> "SelectiveInputs":
        return SelectiveInputs(take(self.delta, order), take(self.B, order), take(self.C, order))


def discretize(params: SSMParams, delta) -> Tensor:
    """Zero-order-hold state transition ``A_bar[t,c,s] = exp(delta[t,c] * A[c,s])``.

    ``B_bar = delta * B`` is formed inside the scan and never materialized.
    """
    delta = as_tensor(delta)
    if np.any(delta.data <= 0):
        raise DomainError("delta must be strictly positive")
    return (delta.reshape(*delta.shape, 1) * params.A.reshape(1, *params.A.shape)).exp()


def selective_scan(x, params: SSMParams, inputs: SelectiveInputs, backend: str | None = None) -> Tensor:
    """Run the recurrence over ``x [L, C]``; returns ``y [L, C]``. Linear in ``L``."""
    x = as_tensor(x)
    A, D = params.A, params.D
    delta, B, Cm = inputs.delta, inputs.B, inputs.C
    if x.ndim != 2:
        raise DimensionError(f"scan input must be [L, C], got {x.shape}")
    L, C = x.shape
    S = A.shape[1]
    expected = {"delta": (delta.shape, (L, C)), "B": (B.shape, (L, S)), "C": (Cm.shape, (L, S)),
                "A": (A.shape, (C, S)), "D": (D.shape, (C,))}
    for name, (got, want) in expected.items():
        if got != want:
            raise DimensionError(f"{name} has shape {got}, expected {want} for x {x.shape}")
    if np.any(delta.data <= 0):
        raise DomainError("delta must be strictly positive")

    parents = (x, delta, A, B, Cm, D)
    need_grad = any(p.requires_grad for p in parents)
    y, hs = kernels.scan_forward(x.data, delta.data, A.data, B.data, Cm.data, D.data,
                                 store_states=need_grad, backend=backend)

    def backward(g):
        grads = kernels.scan_backward(g, x.data, delta.data, A.data, B.data, Cm.data, D.data, hs, backend=backend)
        for p, gp in zip(parents, grads):
            p._accum(gp)

    return Tensor._make(y, parents, backward, "selective_scan")


def scan_order(height: int, width: int, direction: str) -> np.ndarray:
    """Token order of a row-major flattened ``height x width`` map for one scan direction."""
    grid = np.arange(height * width).reshape(height, width)
    if direction == "LR":
        return grid.ravel()
    if direction == "RL":
        return grid.ravel()[::-1].copy()
    if direction == "TB":
        return grid.T.ravel()
    if direction == "BT":
        return grid.T.ravel()[::-1].copy()
    raise ConfigError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def directional_scan_2d(x, params: SSMParams, inputs: SelectiveInputs, direction: str = "LR",
                        backend: str | None = None) -> Tensor:
    """Scan ``x [C, H, W]`` along one of four raster orders.

    ``inputs`` are laid out in row-major spatial order (``[H*W, .]``); they
    are permuted with the tokens so each position keeps its own parameters.
    """
    x = as_tensor(x)
    C, H, W = x.shape
    order = scan_order(H, W, direction)
    inverse = np.argsort(order)
    seq = take(x.reshape(C, H * W).transpose(), order)
    y = selective_scan(seq, params, inputs.reorder(order), backend=backend)
    return take(y, inverse).transpose().reshape(C, H, W)


class MambaMixerBlock(Module):
    """LN -> in-projection (x, z) -> selective inputs from x -> LR scan -> sigmoid(z) gate -> out-projection -> residual."""

    def __init__(self, channels: int, state_size: int = 4, expand: int = 1,
                 rng: np.random.Generator | None = None, zero_out: bool = False):
        rng = rng or np.random.default_rng(0)
        if channels < 2:
            raise ConfigError("the mixer normalizes over channels and needs at least two")
        C, E, S = channels, channels * expand, state_size
        self.inner = E
        self.ln_w = param(np.ones((C, 1, 1)))
        self.ln_b = param(np.zeros((C, 1, 1)))
        self.w_in = uniform(rng, (C, 2 * E), C)
        self.w_dt = uniform(rng, (E, E), E)
        dt = rng.uniform(0.05, 0.5, size=E)
        self.b_dt = param(np.log(np.expm1(dt)))
        self.w_B = uniform(rng, (E, S), E)
        self.w_C = uniform(rng, (E, S), E)
        self.ssm = SSMParams.init(E, S)
        self.w_out = param(np.zeros((C, E))) if zero_out else uniform(rng, (C, E), E)

    def selective_inputs(self, xs: Tensor) -> SelectiveInputs:
        delta = (xs @ self.w_dt + self.b_dt).softplus() + DELTA_FLOOR
        return SelectiveInputs(delta, xs @ self.w_B, xs @ self.w_C)

    def forward(self, x):
        x = as_tensor(x)
        C, H, W = x.shape
        u = layer_norm(x, axis=0, weight=self.ln_w, bias=self.ln_b)
        proj = u.reshape(C, H * W).transpose() @ self.w_in
        xs, z = split(proj, 2, axis=1)
        y = directional_scan_2d(xs.transpose().reshape(self.inner, H, W), self.ssm, self.selective_inputs(xs), "LR")
        y = y * z.transpose().reshape(self.inner, H, W).sigmoid()
        return x + pointwise(y, self.w_out)
