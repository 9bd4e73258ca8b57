"""Parameter containers."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """Variance-preserving (LeCun) uniform init: ``Var = 1 / fan_in``."""
    bound = np.sqrt(3.0 / max(fan_in, 1))
    return param(rng.uniform(-bound, bound, size=shape))


def delta_kernel(channels: int, k: int) -> np.ndarray:
    """Depthwise kernel that passes its input through unchanged."""
    kern = np.zeros((channels, k, k))
    kern[:, k // 2, k // 2] = 1.0
    return kern


class Module:
    """Collects ``Tensor`` parameters from attributes, nested modules and lists of modules."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)
