"""Backend dispatch for the hot kernels.

Two interchangeable implementations exist: a numba-jitted one and a pure
numpy one.  PERMUBENCH_NUMBA=0 (or "false"/"off"/"no") forces the numpy
path; the default prefers numba and silently falls back to numpy when numba
is unavailable.  Linear-algebra-heavy model code does not live here (BLAS
already owns it); these kernels cover the per-element loops: bulk PRNG
draws, Gaussian blur, and the JPEG DCT round-trip.

`permubench.rng` defines the stream semantics; `bulk_u64(key, n)[i]` must
equal the i-th draw of `rng.PermStream(key)` on every backend.
"""

from __future__ import annotations

import os
import warnings

from . import np_backend


def _pick():
    flag = os.environ.get("PERMUBENCH_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return np_backend, "numpy"
    try:
        from . import nb_backend

        return nb_backend, "numba"
    except ImportError as exc:  # numba missing or broken: degrade, don't die
        warnings.warn(f"numba backend unavailable ({exc}); using numpy kernels")
        return np_backend, "numpy"


_impl, BACKEND = _pick()

bulk_u64 = _impl.bulk_u64
normals = _impl.normals
gaussian_blur = _impl.gaussian_blur
jpeg_plane_roundtrip = _impl.jpeg_plane_roundtrip
dct_matrix = np_backend.dct_matrix
blur_weights = np_backend.blur_weights

__all__ = [
    "BACKEND",
    "bulk_u64",
    "normals",
    "gaussian_blur",
    "jpeg_plane_roundtrip",
    "dct_matrix",
    "blur_weights",
]
