"""Numba kernel implementations.

Same contracts as :mod:`permubench.kernels.np_backend`.  Everything here is
loop-oriented so @njit can compile it; uint64 arithmetic stays in uint64
(numba promotes mixed int ops to float64, hence the explicit casts).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..rng import BLOCK, GOLDEN, MASK64
from .np_backend import blur_weights, dct_matrix

_U64 = np.uint64
_G = _U64(GOLDEN)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)
_DCT = dct_matrix()
_DCT_T = np.ascontiguousarray(_DCT.T)


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> _U64(30))) * _M1
    z = (z ^ (z >> _U64(27))) * _M2
    return z ^ (z >> _U64(31))


@njit(cache=True)
def _bulk_u64(key, n):
    out = np.empty(n, dtype=np.uint64)
    nblocks = (n + BLOCK - 1) // BLOCK
    for b in range(nblocks):
        acc = _mix(_G ^ key)
        acc = _mix((acc + _G) ^ _U64(b))
        s0 = _mix(acc + _G)
        s1 = _mix(acc + _U64(2) * _G)
        s2 = _mix(acc + _U64(3) * _G)
        s3 = _mix(acc + _U64(4) * _G)
        if s0 | s1 | s2 | s3 == _U64(0):
            s0 = _G
        base = b * BLOCK
        m = min(BLOCK, n - base)
        for i in range(m):
            x = s1 * _U64(5)
            out[base + i] = ((x << _U64(7)) | (x >> _U64(57))) * _U64(9)
            t = s1 << _U64(17)
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = (s3 << _U64(45)) | (s3 >> _U64(19))
    return out


def bulk_u64(key: int, n: int) -> np.ndarray:
    if n <= 0:
        return np.empty(0, dtype=np.uint64)
    return _bulk_u64(_U64(key & MASK64), n)


@njit(cache=True)
def _normals_from_u64(u, n):
    out = np.empty(n, dtype=np.float32)
    two_pi = 2.0 * math.pi
    for i in range(len(u) // 2):
        u1 = np.float64((u[2 * i] >> _U64(11)) + _U64(1)) * 2.0**-53
        u2 = np.float64((u[2 * i + 1] >> _U64(11)) + _U64(1)) * 2.0**-53
        r = math.sqrt(-2.0 * math.log(u1))
        out[2 * i] = r * math.cos(two_pi * u2)
        if 2 * i + 1 < n:
            out[2 * i + 1] = r * math.sin(two_pi * u2)
    return out


def normals(key: int, n: int) -> np.ndarray:
    if n <= 0:
        return np.empty(0, dtype=np.float32)
    m = n + (n & 1)
    return _normals_from_u64(bulk_u64(key, m), n)


@njit(cache=True, inline="always")
def _reflect(i, n):
    # index mirroring about the edge samples (numpy pad mode="reflect")
    if n == 1:
        return 0
    period = 2 * n - 2
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - i
    return i


@njit(cache=True)
def _blur(img, w, radius):
    h, wd, ch = img.shape
    tmp = np.empty((h, wd, ch), dtype=np.float64)
    for i in range(h):
        for j in range(wd):
            for c in range(ch):
                acc = 0.0
                for k in range(-radius, radius + 1):
                    acc += w[k + radius] * np.float64(img[_reflect(i + k, h), j, c])
                tmp[i, j, c] = acc
    out = np.empty((h, wd, ch), dtype=np.float32)
    for i in range(h):
        for j in range(wd):
            for c in range(ch):
                acc = 0.0
                for k in range(-radius, radius + 1):
                    acc += w[k + radius] * tmp[i, _reflect(j + k, wd), c]
                out[i, j, c] = acc
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0.0:
        return img.astype(np.float32, copy=True)
    w = blur_weights(sigma)
    return _blur(np.ascontiguousarray(img, dtype=np.float32), w, (len(w) - 1) // 2)


@njit(cache=True)
def _jpeg_plane(plane, q, dct, dct_t):
    h, w = plane.shape
    out = np.empty((h, w), dtype=np.float64)
    block = np.empty((8, 8), dtype=np.float64)
    tmp = np.empty((8, 8), dtype=np.float64)
    coef = np.empty((8, 8), dtype=np.float64)
    for bi in range(h // 8):
        for bj in range(w // 8):
            for i in range(8):
                for j in range(8):
                    block[i, j] = plane[bi * 8 + i, bj * 8 + j] - 128.0
            # coef = dct @ block @ dct.T, then quantize/dequantize
            for i in range(8):
                for j in range(8):
                    acc = 0.0
                    for k in range(8):
                        acc += dct[i, k] * block[k, j]
                    tmp[i, j] = acc
            for i in range(8):
                for j in range(8):
                    acc = 0.0
                    for k in range(8):
                        acc += tmp[i, k] * dct_t[k, j]
                    coef[i, j] = np.rint(acc / q[i, j]) * q[i, j]
            for i in range(8):
                for j in range(8):
                    acc = 0.0
                    for k in range(8):
                        acc += dct_t[i, k] * coef[k, j]
                    tmp[i, j] = acc
            for i in range(8):
                for j in range(8):
                    acc = 0.0
                    for k in range(8):
                        acc += tmp[i, k] * dct[k, j]
                    out[bi * 8 + i, bj * 8 + j] = acc + 128.0
    return out


def jpeg_plane_roundtrip(plane: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    if h % 8 or w % 8:
        raise ValueError(f"plane sides must be multiples of 8, got {h}x{w}")
    return _jpeg_plane(
        np.ascontiguousarray(plane, dtype=np.float64),
        np.ascontiguousarray(qtable, dtype=np.float64),
        _DCT,
        _DCT_T,
    )
