"""Baseline-JPEG round-trip used as the compression corruption.

Pixel effect only: BT.601 YCbCr conversion, 4:2:0 chroma subsampling,
8x8 DCT + quantization with Annex-K tables scaled by the usual IJG quality
rule, then the inverse path.  The entropy stage is lossless and therefore
omitted; the corruption equals the DCT-quantization round-trip.
"""

from __future__ import annotations

import numpy as np

from . import kernels

# Annex-K base quantization tables
LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
CHROMA_TABLE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)


def scaled_table(base: np.ndarray, quality: int) -> np.ndarray:
    """IJG quality scaling: 50 keeps the base table, 100 is (almost) lossless."""
    q = int(min(max(quality, 1), 100))
    scale = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    t = np.floor((base * scale + 50.0) / 100.0)
    return np.clip(t, 1.0, 255.0)


def rgb_to_ycbcr(rgb: np.ndarray):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return y, cb, cr


def ycbcr_to_rgb(y, cb, cr) -> np.ndarray:
    cb = cb - 128.0
    cr = cr - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _pad_to_multiple(plane: np.ndarray, m: int) -> np.ndarray:
    h, w = plane.shape
    ph = (-h) % m
    pw = (-w) % m
    if ph or pw:
        plane = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    return plane


def _downsample2(plane: np.ndarray) -> np.ndarray:
    p = _pad_to_multiple(plane, 2)
    h, w = p.shape
    return p.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _upsample2(plane: np.ndarray, h: int, w: int) -> np.ndarray:
    up = np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1)
    return up[:h, :w]


def _roundtrip_plane(plane: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    padded = _pad_to_multiple(plane, 8)
    return kernels.jpeg_plane_roundtrip(padded, qtable)[:h, :w]


def roundtrip(img01: np.ndarray, quality: int) -> np.ndarray:
    """Compress-decompress one [0,1] float image; returns float32 in [0,1]."""
    x = np.rint(np.asarray(img01, dtype=np.float64) * 255.0)
    h, w = x.shape[0], x.shape[1]
    y, cb, cr = rgb_to_ycbcr(x)
    qy = scaled_table(LUMA_TABLE, quality)
    qc = scaled_table(CHROMA_TABLE, quality)
    y2 = _roundtrip_plane(y, qy)
    cb2 = _upsample2(_roundtrip_plane(_downsample2(cb), qc), h, w)
    cr2 = _upsample2(_roundtrip_plane(_downsample2(cr), qc), h, w)
    rgb = ycbcr_to_rgb(y2, cb2, cr2)
    return (np.clip(rgb, 0.0, 255.0) / 255.0).astype(np.float32)
