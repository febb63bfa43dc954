"""Compiled loops for the sparse blade bilinear map and its adjoints.

All arrays are blade-major ``(B, N, C)``; kernels are ``(B, B, Ck)`` with
``Ck`` either ``C`` or 1 (broadcast over channels).  Loop order is fixed, so
results are deterministic.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def bilinear_forward(x, y, k, xor):
    B, N, C = x.shape
    bc = k.shape[2] == 1
    out = np.zeros((B, N, C))
    for o in range(B):
        for a in range(B):
            b = xor[a, o]
            for n in range(N):
                for c in range(C):
                    kv = k[a, o, 0] if bc else k[a, o, c]
                    out[o, n, c] += kv * x[a, n, c] * y[b, n, c]
    return out


@njit(cache=True)
def bilinear_grad_x(y, k, g, xor):
    B, N, C = y.shape
    bc = k.shape[2] == 1
    dx = np.zeros((B, N, C))
    for a in range(B):
        for o in range(B):
            b = xor[a, o]
            for n in range(N):
                for c in range(C):
                    kv = k[a, o, 0] if bc else k[a, o, c]
                    dx[a, n, c] += kv * y[b, n, c] * g[o, n, c]
    return dx


@njit(cache=True)
def bilinear_grad_y(x, k, g, xor):
    B, N, C = x.shape
    bc = k.shape[2] == 1
    dy = np.zeros((B, N, C))
    for b in range(B):
        for a in range(B):
            o = xor[a, b]
            for n in range(N):
                for c in range(C):
                    kv = k[a, o, 0] if bc else k[a, o, c]
                    dy[b, n, c] += kv * x[a, n, c] * g[o, n, c]
    return dy


@njit(cache=True)
def bilinear_grad_k(x, y, g, xor, per_channel):
    B, N, C = x.shape
    dk = np.zeros((B, B, C if per_channel else 1))
    for a in range(B):
        for o in range(B):
            b = xor[a, o]
            for n in range(N):
                for c in range(C):
                    v = x[a, n, c] * y[b, n, c] * g[o, n, c]
                    if per_channel:
                        dk[a, o, c] += v
                    else:
                        dk[a, o, 0] += v
    return dk
