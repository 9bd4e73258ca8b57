# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled selective-scan kernels. Same contract as ``mdsf._scan_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def scan_forward(double[:, ::1] x, double[:, ::1] delta, double[:, ::1] A,
                 double[:, ::1] B, double[:, ::1] Cm, double[::1] D,
                 bint store_states=True):
    cdef Py_ssize_t L = x.shape[0], C = x.shape[1], S = A.shape[1]
    cdef Py_ssize_t t, c, s
    cdef double dt, u, acc, hv
    y_arr = np.empty((L, C))
    cdef double[:, ::1] y = y_arr
    h_arr = np.zeros((C, S))
    cdef double[:, ::1] h = h_arr
    cdef double[:, :, ::1] hs
    hs_arr = None
    if store_states:
        hs_arr = np.empty((L, C, S))
        hs = hs_arr
    with nogil:
        for t in range(L):
            for c in range(C):
                dt = delta[t, c]
                u = dt * x[t, c]
                acc = 0.0
                for s in range(S):
                    hv = exp(dt * A[c, s]) * h[c, s] + u * B[t, s]
                    h[c, s] = hv
                    acc = acc + Cm[t, s] * hv
                    if store_states:
                        hs[t, c, s] = hv
                y[t, c] = acc + D[c] * x[t, c]
    return y_arr, hs_arr


def scan_backward(double[:, ::1] gy, double[:, ::1] x, double[:, ::1] delta,
                  double[:, ::1] A, double[:, ::1] B, double[:, ::1] Cm,
                  double[::1] D, double[:, :, ::1] hs):
    cdef Py_ssize_t L = x.shape[0], C = x.shape[1], S = A.shape[1]
    cdef Py_ssize_t t, c, s
    cdef double dt, xt, g, dA, hprev, gdA, ghB, gdel, gxx
    gx_arr = np.empty((L, C))
    gdelta_arr = np.empty((L, C))
    gA_arr = np.zeros((C, S))
    gB_arr = np.zeros((L, S))
    gC_arr = np.zeros((L, S))
    gD_arr = np.zeros(C)
    gh_arr = np.zeros((C, S))
    cdef double[:, ::1] gx = gx_arr, gdelta = gdelta_arr, gA = gA_arr
    cdef double[:, ::1] gB = gB_arr, gC = gC_arr, gh = gh_arr
    cdef double[::1] gD = gD_arr
    with nogil:
        for t in range(L - 1, -1, -1):
            for c in range(C):
                dt = delta[t, c]
                xt = x[t, c]
                g = gy[t, c]
                gD[c] += g * xt
                gxx = g * D[c]
                ghB = 0.0
                gdel = 0.0
                for s in range(S):
                    gh[c, s] += g * Cm[t, s]
                    gC[t, s] += g * hs[t, c, s]
                    hprev = hs[t - 1, c, s] if t > 0 else 0.0
                    dA = exp(dt * A[c, s])
                    gdA = gh[c, s] * hprev * dA
                    gdel = gdel + gdA * A[c, s]
                    gA[c, s] += gdA * dt
                    ghB = ghB + gh[c, s] * B[t, s]
                    gB[t, s] += gh[c, s] * dt * xt
                    gh[c, s] = gh[c, s] * dA
                gdelta[t, c] = gdel + ghB * xt
                gx[t, c] = gxx + ghB * dt
    return gx_arr, gdelta_arr, gA_arr, gB_arr, gC_arr, gD_arr
