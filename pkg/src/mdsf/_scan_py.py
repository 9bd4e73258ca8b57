"""Pure-numpy selective-scan kernels (fallback when the compiled extension is absent).

Shapes: ``x, delta: [L, C]``; ``A: [C, S]``; ``B, Cm: [L, S]``; ``D: [C]``.
The recurrence runs sequentially over ``L`` and is vectorized over ``C, S``.
"""
import numpy as np


def scan_forward(x, delta, A, B, Cm, D, store_states=True):
    L, C = x.shape
    S = A.shape[1]
    y = np.empty((L, C))
    hs = np.empty((L, C, S)) if store_states else None
    h = np.zeros((C, S))
    for t in range(L):
        dA = np.exp(delta[t, :, None] * A)
        h = dA * h + (delta[t] * x[t])[:, None] * B[t][None, :]
        y[t] = h @ Cm[t] + D * x[t]
        if store_states:
            hs[t] = h
    return y, hs


def scan_backward(gy, x, delta, A, B, Cm, D, hs):
    L, C = x.shape
    gx = gy * D
    gD = (gy * x).sum(axis=0)
    gdelta = np.empty_like(delta)
    gA = np.zeros_like(A)
    gB = np.empty_like(B)
    gC = np.empty_like(Cm)
    gh = np.zeros_like(A)
    zero = np.zeros_like(A)
    for t in range(L - 1, -1, -1):
        gh += gy[t][:, None] * Cm[t][None, :]
        gC[t] = gy[t] @ hs[t]
        hprev = hs[t - 1] if t > 0 else zero
        dA = np.exp(delta[t, :, None] * A)
        gdA = gh * hprev * dA
        ghB = gh @ B[t]
        gdelta[t] = (gdA * A).sum(axis=1) + ghB * x[t]
        gA += gdA * delta[t][:, None]
        gB[t] = (delta[t] * x[t]) @ gh
        gx[t] += ghB * delta[t]
        gh *= dA
    return gx, gdelta, gA, gB, gC, gD


def scan_forward_associative(x, delta, A, B, Cm, D):
    """Hillis-Steele doubling over the affine maps ``h -> a*h + b``.

    Forward only; O(L log L) work. Exists to cross-check the sequential
    kernel and as a parallel-friendly formulation.
    """
    a = np.exp(delta[:, :, None] * A[None])
    b = (delta * x)[:, :, None] * B[:, None, :]
    L = a.shape[0]
    k = 1
    while k < L:
        b_new = b.copy()
        b_new[k:] = a[k:] * b[:-k] + b[k:]
        a_new = a.copy()
        a_new[k:] = a[k:] * a[:-k]
        a, b = a_new, b_new
        k *= 2
    y = np.einsum("lcs,ls->lc", b, Cm) + D * x
    return y, b
