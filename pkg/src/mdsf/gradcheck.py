"""Central finite-difference gradient oracle."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(fd: np.ndarray, ad: np.ndarray) -> np.ndarray:
    fd, ad = np.asarray(fd), np.asarray(ad)
    return np.abs(fd - ad) / np.maximum(1e-8, np.abs(fd) + np.abs(ad))


def finite_difference(f: Callable[[], Tensor], x: Tensor, index) -> float:
    """Central difference of ``f()`` w.r.t. ``x.data[index]``, step 1e-5*max(1,|x_i|)."""
    orig = x.data[index]
    h = 1e-5 * max(1.0, abs(orig))
    with no_grad():
        x.data[index] = orig + h
        fp = float(f().data)
        x.data[index] = orig - h
        fm = float(f().data)
    x.data[index] = orig
    return (fp - fm) / (2.0 * h)


def gradcheck(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    *,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` is called with the tensors in ``x`` as positional arguments and
    must return a scalar. ``max_coords`` caps the coordinates checked per
    tensor (sampled with ``rng``); by default every coordinate is checked.
    A NaN anywhere yields ``nan``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None
    out = f(*xs)
    if out.data.size != 1 or not np.isfinite(out.data).all():
        return float("nan")
    out.backward()
    ad_grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t, ad in zip(xs, ad_grads):
        n = t.data.size
        flat = np.arange(n)
        if max_coords is not None and n > max_coords:
            flat = rng.choice(n, size=max_coords, replace=False)
        for i in flat:
            idx = np.unravel_index(i, t.shape)
            fd = finite_difference(lambda: f(*xs), t, idx)
            if not np.isfinite(fd) or not np.isfinite(ad[idx]):
                return float("nan")
            worst = max(worst, float(relative_error(fd, ad[idx])))
    return worst


def check_parameters(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    *,
    coords_per_tensor: int | None = 3,
    seed: int = 0,
) -> float:
    """Gradcheck a closure over a list of parameter tensors.

    ``coords_per_tensor`` coordinates are sampled from each tensor; ``None`` checks all of them.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.requires_grad = True
        p.grad = None
    out = loss_fn()
    if not np.isfinite(out.data).all():
        return float("nan")
    out.backward()
    worst = 0.0
    for p in params:
        ad = np.zeros_like(p.data) if p.grad is None else p.grad
        n = p.data.size
        if coords_per_tensor is None or coords_per_tensor >= n:
            picks = np.arange(n)
        else:
            picks = rng.choice(n, size=coords_per_tensor, replace=False)
        for i in picks:
            idx = np.unravel_index(i, p.shape)
            fd = finite_difference(loss_fn, p, idx)
            if not np.isfinite(fd):
                return float("nan")
            worst = max(worst, float(relative_error(fd, ad[idx])))
    return worst
