"""Fused elementwise kernels for one tanh layer acting on stacked jets.

Arrays use the layout ``(width, component, point)`` where the component
axis holds ``[u, u_i (i < d), u_ij (i <= j)]``. The numba versions run one
pass over memory; the numpy versions are the fallback and the reference.
"""

from __future__ import annotations

import ctypes
import sys

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _tune_allocator() -> None:
    # Jet stacks are a few MB each; above glibc's default mmap threshold every
    # temporary is a fresh mapping and page-faults on first touch.
    if not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return
    M_TRIM_THRESHOLD, M_TOP_PAD, M_MMAP_THRESHOLD = -1, -2, -3
    libc.mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024)
    libc.mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024)
    libc.mallopt(M_TOP_PAD, 64 * 1024 * 1024)


_tune_allocator()


def _pairs(d):
    return [(i, j) for i in range(d) for j in range(i, d)]


def tanh_forward_np(Z, b, d, order):
    Z[:, 0, :] += b[:, None]
    s = np.tanh(Z[:, 0, :])
    s1 = 1.0 - s * s
    out = np.empty_like(Z)
    out[:, 0, :] = s
    if order >= 1:
        out[:, 1 : 1 + d, :] = s1[:, None, :] * Z[:, 1 : 1 + d, :]
    if order == 2:
        s2 = -2.0 * s * s1
        for p, (i, j) in enumerate(_pairs(d)):
            out[:, 1 + d + p, :] = s2 * Z[:, 1 + i, :] * Z[:, 1 + j, :] + s1 * Z[:, 1 + d + p, :]
    return out, s


def tanh_backward_np(G, Z, s, d, order):
    s1 = 1.0 - s * s
    gZ = np.empty_like(Z)
    g_s = G[:, 0, :].copy()
    if order >= 1:
        ga = G[:, 1 : 1 + d, :]
        g_s1 = np.einsum("wcn,wcn->wn", ga, Z[:, 1 : 1 + d, :])
        gZ[:, 1 : 1 + d, :] = ga * s1[:, None, :]
        if order == 2:
            s2 = -2.0 * s * s1
            gA = G[:, 1 + d :, :]
            g_s1 += np.einsum("wcn,wcn->wn", gA, Z[:, 1 + d :, :])
            gZ[:, 1 + d :, :] = gA * s1[:, None, :]
            g_s2 = np.zeros_like(s)
            for p, (i, j) in enumerate(_pairs(d)):
                t = gA[:, p, :] * s2
                gZ[:, 1 + i, :] += t * Z[:, 1 + j, :]
                gZ[:, 1 + j, :] += t * Z[:, 1 + i, :]
                g_s2 += gA[:, p, :] * Z[:, 1 + i, :] * Z[:, 1 + j, :]
            g_s += (6.0 * s * s - 2.0) * g_s2
        g_s -= 2.0 * s * g_s1
    gZ[:, 0, :] = g_s * s1
    return gZ, gZ[:, 0, :].sum(axis=1)


if numba is not None:

    @numba.njit(cache=True)
    def _tanh_forward_nb(Z, S, d, order):
        w, C, N = Z.shape
        out = np.empty_like(Z)
        t1 = np.empty(N)
        t2 = np.empty(N)
        for k in range(w):
            for n in range(N):
                t = S[k, n]
                out[k, 0, n] = t
                t1[n] = 1.0 - t * t
                t2[n] = -2.0 * t * t1[n]
            if order >= 1:
                for i in range(d):
                    for n in range(N):
                        out[k, 1 + i, n] = t1[n] * Z[k, 1 + i, n]
            if order == 2:
                p = 0
                for i in range(d):
                    for j in range(i, d):
                        for n in range(N):
                            out[k, 1 + d + p, n] = t2[n] * Z[k, 1 + i, n] * Z[k, 1 + j, n] + t1[n] * Z[k, 1 + d + p, n]
                        p += 1
        return out

    @numba.njit(cache=True)
    def _tanh_backward_nb(G, Z, S, d, order):
        w, C, N = Z.shape
        gZ = np.empty_like(Z)
        t1 = np.empty(N)
        t2 = np.empty(N)
        gs = np.empty(N)
        gs1 = np.empty(N)
        gs2 = np.empty(N)
        for k in range(w):
            for n in range(N):
                t = S[k, n]
                t1[n] = 1.0 - t * t
                t2[n] = -2.0 * t * t1[n]
                gs[n] = G[k, 0, n]
                gs1[n] = 0.0
                gs2[n] = 0.0
            if order >= 1:
                for i in range(d):
                    for n in range(N):
                        gs1[n] += G[k, 1 + i, n] * Z[k, 1 + i, n]
                        gZ[k, 1 + i, n] = G[k, 1 + i, n] * t1[n]
            if order == 2:
                p = 0
                for i in range(d):
                    for j in range(i, d):
                        for n in range(N):
                            gA = G[k, 1 + d + p, n]
                            zi = Z[k, 1 + i, n]
                            zj = Z[k, 1 + j, n]
                            gs1[n] += gA * Z[k, 1 + d + p, n]
                            gs2[n] += gA * zi * zj
                            gZ[k, 1 + d + p, n] = gA * t1[n]
                        for n in range(N):
                            tt = G[k, 1 + d + p, n] * t2[n]
                            gZ[k, 1 + i, n] += tt * Z[k, 1 + j, n]
                            gZ[k, 1 + j, n] += tt * Z[k, 1 + i, n]
                        p += 1
                for n in range(N):
                    t = S[k, n]
                    gs[n] += (6.0 * t * t - 2.0) * gs2[n]
            for n in range(N):
                gZ[k, 0, n] = (gs[n] - 2.0 * S[k, n] * gs1[n]) * t1[n]
        return gZ


def tanh_forward(Z, b, d, order):
    """Bias-add, tanh and jet chain rule. ``Z`` is modified in place."""
    if numba is None:
        return tanh_forward_np(Z, b, d, order)
    Z[:, 0, :] += b[:, None]
    s = np.tanh(Z[:, 0, :])
    return _tanh_forward_nb(Z, s, d, order), s


def tanh_backward(G, Z, s, d, order):
    """Cotangent of the pre-activation stack and of the bias."""
    if numba is None:
        return tanh_backward_np(G, Z, s, d, order)
    gZ = _tanh_backward_nb(np.ascontiguousarray(G), Z, s, d, order)
    return gZ, gZ[:, 0, :].sum(axis=1)
