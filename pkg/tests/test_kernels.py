"""Kernel backends: agreement with the scalar stream, each other, and
direct-formula oracles."""

import math

import numpy as np
import pytest

from permubench import rng
from permubench.kernels import np_backend

try:
    from permubench.kernels import nb_backend

    BACKENDS = [np_backend, nb_backend]
except ImportError:
    nb_backend = None
    BACKENDS = [np_backend]

ids = [b.__name__.rsplit(".", 1)[-1] for b in BACKENDS]


@pytest.fixture(params=BACKENDS, ids=ids)
def backend(request):
    return request.param


class TestBulkU64:
    def test_matches_scalar_stream(self, backend):
        key = rng.mix64(11, rng.tag("kernel-check"))
        n = 2 * rng.BLOCK + 57
        bulk = backend.bulk_u64(key, n)
        stream = rng.PermStream(key)
        assert bulk.dtype == np.uint64
        assert [int(v) for v in bulk] == [stream.next_u64() for _ in range(n)]

    def test_short_request(self, backend):
        key = 5
        assert list(backend.bulk_u64(key, 3)) == list(backend.bulk_u64(key, 100)[:3])
        assert backend.bulk_u64(key, 0).size == 0

    @pytest.mark.skipif(nb_backend is None, reason="numba unavailable")
    def test_backends_bit_identical(self):
        for key in (0, 1, 0xFFFFFFFFFFFFFFFF, rng.mix64(3, rng.tag("x"))):
            a = np_backend.bulk_u64(key, 5000)
            b = nb_backend.bulk_u64(key, 5000)
            assert np.array_equal(a, b)


class TestNormals:
    def test_moments(self, backend):
        z = backend.normals(123, 100_000).astype(np.float64)
        assert abs(z.mean()) < 0.02
        assert abs(z.var() - 1.0) < 0.03
        assert np.isfinite(z).all()

    def test_deterministic(self, backend):
        a = backend.normals(7, 999)
        b = backend.normals(7, 999)
        assert a.dtype == np.float32
        assert np.array_equal(a, b)

    def test_prefix_consistent(self, backend):
        # even-length prefixes share the same underlying uniform pairs
        assert np.array_equal(backend.normals(9, 10), backend.normals(9, 50)[:10])

    @pytest.mark.skipif(nb_backend is None, reason="numba unavailable")
    def test_backends_agree(self):
        a = np_backend.normals(42, 20_000)
        b = nb_backend.normals(42, 20_000)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-6)


def _reference_blur(img, sigma):
    """Dense direct convolution with mirrored indices; the oracle."""
    r = int(math.ceil(3.0 * sigma))
    k = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-0.5 * (k / sigma) ** 2)
    w /= w.sum()
    x = img.astype(np.float64)
    h, wd, c = x.shape

    def mirror(i, n):
        period = 2 * n - 2 if n > 1 else 1
        i %= period
        return period - i if i >= n else i

    out = np.zeros_like(x)
    for i in range(h):
        for j in range(wd):
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    out[i, j] += (
                        w[di + r] * w[dj + r] * x[mirror(i + di, h), mirror(j + dj, wd)]
                    )
    return out.astype(np.float32)


class TestBlur:
    def test_sigma_zero_identity(self, backend):
        img = np.random.default_rng(0).random((8, 8, 3)).astype(np.float32)
        out = backend.gaussian_blur(img, 0.0)
        assert np.array_equal(out, img)
        assert out is not img

    def test_constant_image_unchanged(self, backend):
        img = np.full((12, 12, 3), 0.25, dtype=np.float32)
        np.testing.assert_allclose(backend.gaussian_blur(img, 1.5), img, atol=1e-6)

    def test_matches_dense_reference(self, backend):
        img = np.random.default_rng(3).random((10, 9, 3)).astype(np.float32)
        for sigma in (0.5, 1.0, 1.5):
            got = backend.gaussian_blur(img, sigma)
            np.testing.assert_allclose(got, _reference_blur(img, sigma), atol=2e-6)

    def test_smooths(self, backend):
        rgen = np.random.default_rng(4)
        img = rgen.random((28, 28, 3)).astype(np.float32)
        out = backend.gaussian_blur(img, 1.0)
        assert out.std() < img.std()

    @pytest.mark.skipif(nb_backend is None, reason="numba unavailable")
    def test_backends_agree(self):
        img = np.random.default_rng(5).random((28, 28, 3)).astype(np.float32)
        for sigma in (0.5, 1.0, 1.5):
            a = np_backend.gaussian_blur(img, sigma)
            b = nb_backend.gaussian_blur(img, sigma)
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-6)


def _reference_dct2(block):
    """Direct-sum JPEG FDCT (Annex A formula); oracle for the matrix form."""
    out = np.zeros((8, 8))
    for u in range(8):
        for v in range(8):
            cu = 1.0 / math.sqrt(2.0) if u == 0 else 1.0
            cv = 1.0 / math.sqrt(2.0) if v == 0 else 1.0
            acc = 0.0
            for x in range(8):
                for y in range(8):
                    acc += (
                        block[x, y]
                        * math.cos((2 * x + 1) * u * math.pi / 16)
                        * math.cos((2 * y + 1) * v * math.pi / 16)
                    )
            out[u, v] = 0.25 * cu * cv * acc
    return out


class TestJpegKernel:
    def test_dct_matrix_orthonormal(self):
        c = np_backend.dct_matrix()
        np.testing.assert_allclose(c @ c.T, np.eye(8), atol=1e-12)

    def test_matrix_form_equals_jpeg_fdct(self):
        block = np.random.default_rng(6).uniform(-128, 127, (8, 8))
        c = np_backend.dct_matrix()
        np.testing.assert_allclose(c @ block @ c.T, _reference_dct2(block), atol=1e-9)

    def test_constant_plane_exact(self, backend):
        plane = np.full((16, 16), 128.0)
        q = np.full((8, 8), 16.0)
        np.testing.assert_allclose(backend.jpeg_plane_roundtrip(plane, q), plane, atol=1e-9)

    def test_quantization_error_bounded(self, backend):
        plane = np.random.default_rng(7).uniform(0, 255, (24, 16))
        q = np.ones((8, 8))
        out = backend.jpeg_plane_roundtrip(plane, q)
        # orthonormal transform: pixel error <= sum of coef errors (each <= q/2)
        assert np.max(np.abs(out - plane)) < 4.0
        assert out.shape == plane.shape

    def test_coarser_table_loses_more(self, backend):
        plane = np.random.default_rng(8).uniform(0, 255, (16, 16))
        fine = backend.jpeg_plane_roundtrip(plane, np.full((8, 8), 2.0))
        coarse = backend.jpeg_plane_roundtrip(plane, np.full((8, 8), 64.0))
        assert np.abs(fine - plane).mean() < np.abs(coarse - plane).mean()

    def test_rejects_unaligned(self, backend):
        with pytest.raises(ValueError):
            backend.jpeg_plane_roundtrip(np.zeros((9, 16)), np.ones((8, 8)))

    @pytest.mark.skipif(nb_backend is None, reason="numba unavailable")
    def test_backends_agree(self):
        plane = np.random.default_rng(9).uniform(0, 255, (32, 24))
        q = np.array(
            [[16, 11, 10, 16, 24, 40, 51, 61]] * 8, dtype=np.float64
        )
        a = np_backend.jpeg_plane_roundtrip(plane, q)
        b = nb_backend.jpeg_plane_roundtrip(plane, q)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)
