"""Pure-numpy kernel implementations.

Reference backend for the hot non-BLAS loops: bulk random generation,
separable Gaussian blur, and the DCT-quantization round-trip.  The numba
backend (:mod:`permubench.kernels.nb_backend`) mirrors these functions;
integer outputs are bit-identical, float outputs agree to ~1e-12.
"""

from __future__ import annotations

import math

import numpy as np

from ..rng import BLOCK, GOLDEN, MASK64, mix64, splitmix_mix

_U64 = np.uint64
_G = _U64(GOLDEN)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)


def _mix_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _M1
    z = (z ^ (z >> _U64(27))) * _M2
    return z ^ (z >> _U64(31))


def _rotl_vec(x: np.ndarray, k: int) -> np.ndarray:
    return (x << _U64(k)) | (x >> _U64(64 - k))


def bulk_u64(key: int, n: int) -> np.ndarray:
    """n draws of the blocked xoshiro256** stream for `key`, as uint64.

    Blocks advance in lockstep (vectorized across blocks), which is why the
    stream is defined blockwise in the first place.
    """
    if n <= 0:
        return np.empty(0, dtype=np.uint64)
    nblocks = (n + BLOCK - 1) // BLOCK
    # mix64(key, j) with the key half folded in once, scalar side in python
    a1 = splitmix_mix(GOLDEN ^ (key & MASK64))
    pre = _U64((a1 + GOLDEN) & MASK64)
    j = np.arange(nblocks, dtype=np.uint64)
    state = _mix_vec(pre ^ j)
    words = []
    for _ in range(4):
        state = state + _G
        words.append(_mix_vec(state))
    s0, s1, s2, s3 = words
    dead = (s0 | s1 | s2 | s3) == 0
    if dead.any():
        s0 = s0.copy()
        s0[dead] = _G
    iters = BLOCK if nblocks > 1 else n
    out = np.empty((nblocks, iters), dtype=np.uint64)
    five, nine, seventeen = _U64(5), _U64(9), _U64(17)
    for i in range(iters):
        out[:, i] = _rotl_vec(s1 * five, 7) * nine
        t = s1 << seventeen
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = _rotl_vec(s3, 45)
    return out.reshape(-1)[:n]


def normals(key: int, n: int) -> np.ndarray:
    """n standard-normal float32 draws (Box-Muller over the u64 stream)."""
    if n <= 0:
        return np.empty(0, dtype=np.float32)
    m = n + (n & 1)
    u = bulk_u64(key, m)
    # (0,1] uniforms from the top 53 bits; +1 keeps log() off zero
    u1 = ((u[0::2] >> _U64(11)) + _U64(1)).astype(np.float64) * 2.0**-53
    u2 = ((u[1::2] >> _U64(11)) + _U64(1)).astype(np.float64) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * math.pi) * u2
    out = np.empty(m, dtype=np.float64)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n].astype(np.float32)


def blur_weights(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (k / sigma) ** 2)
    return w / w.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of an HxWxC float32 image, reflect padding.

    Taps accumulate in float64 in ascending-offset order so both backends
    produce the same bits.
    """
    if sigma <= 0.0:
        return img.astype(np.float32, copy=True)
    w = blur_weights(sigma)
    r = (len(w) - 1) // 2
    x = img.astype(np.float64)
    h, wd = x.shape[0], x.shape[1]
    pad = np.pad(x, ((r, r), (0, 0), (0, 0)), mode="reflect")
    tmp = np.zeros_like(x)
    for k in range(2 * r + 1):
        tmp += w[k] * pad[k : k + h]
    pad = np.pad(tmp, ((0, 0), (r, r), (0, 0)), mode="reflect")
    out = np.zeros_like(x)
    for k in range(2 * r + 1):
        out += w[k] * pad[:, k : k + wd]
    return out.astype(np.float32)


def dct_matrix() -> np.ndarray:
    """Orthonormal 8x8 DCT-II matrix; equals the JPEG FDCT normalization."""
    c = np.empty((8, 8), dtype=np.float64)
    for i in range(8):
        s = math.sqrt(1.0 / 8.0) if i == 0 else math.sqrt(2.0 / 8.0)
        for j in range(8):
            c[i, j] = s * math.cos((2 * j + 1) * i * math.pi / 16.0)
    return c


_DCT = dct_matrix()


def jpeg_plane_roundtrip(plane: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    """DCT -> quantize -> dequantize -> IDCT over 8x8 blocks of one plane.

    `plane` is float64 in [0,255] with both sides multiples of 8; returns the
    reconstructed plane (unclipped, caller clips).
    """
    h, w = plane.shape
    if h % 8 or w % 8:
        raise ValueError(f"plane sides must be multiples of 8, got {h}x{w}")
    q = qtable.astype(np.float64)
    blocks = plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3) - 128.0
    coef = _DCT @ blocks @ _DCT.T
    recon = _DCT.T @ (np.rint(coef / q) * q) @ _DCT
    recon = recon + 128.0
    return recon.transpose(0, 2, 1, 3).reshape(h, w)
