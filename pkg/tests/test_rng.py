"""Stream generator tests against published algorithm vectors."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permubench import rng

# Frozen from independent scratch implementations of the published
# algorithms (SplitMix64, xoshiro256**, FNV-1a).
SPLITMIX_1234567 = [
    0x599ED017FB08FC85,
    0x2C73F08458540FA5,
    0x883EBCE5A3F27C77,
    0x3FBEF740E9177B3F,
]
SPLITMIX_0_FIRST = 0xE220A8397B1DCDAF
XOSHIRO_1234 = [11520, 0, 1509978240, 1215971899390074240, 1216172134540287360]


class TestPrimitives:
    def test_splitmix_published_vectors(self):
        state = 1234567
        for expected in SPLITMIX_1234567:
            value, state = rng.splitmix_next(state)
            assert value == expected

    def test_splitmix_zero_seed(self):
        value, _ = rng.splitmix_next(0)
        assert value == SPLITMIX_0_FIRST

    def test_xoshiro_published_sequence(self):
        state = [1, 2, 3, 4]
        assert [rng.xoshiro_next(state) for _ in range(5)] == XOSHIRO_1234

    def test_fnv1a_published_vectors(self):
        assert rng.fnv1a64("") == 0xCBF29CE484222325
        assert rng.fnv1a64("a") == 0xAF63DC4C8601EC8C
        assert rng.fnv1a64(b"foobar") == 0x85944171F73967E8

    def test_mix64_requires_args(self):
        with pytest.raises(ValueError):
            rng.mix64()

    @given(st.integers(0, rng.MASK64), st.integers(0, rng.MASK64))
    def test_mix64_order_sensitive(self, a, b):
        assert rng.mix64(a, b) <= rng.MASK64
        if a != b:
            assert rng.mix64(a, b) != rng.mix64(b, a) or a == b

    def test_mix64_deterministic(self):
        assert rng.mix64(3, rng.tag("init")) == rng.mix64(3, rng.tag("init"))
        assert rng.mix64(3, rng.tag("init")) != rng.mix64(3, rng.tag("subset"))


class TestStream:
    def test_matches_blocked_construction(self):
        # The stream definition: block j is its own xoshiro run seeded from
        # mix64(key, j); draws cross block boundaries every BLOCK values.
        key = rng.mix64(7, rng.tag("check"))
        stream = rng.PermStream(key)
        drawn = [stream.next_u64() for _ in range(2 * rng.BLOCK + 100)]
        manual = []
        for block in range(3):
            state = rng.block_state(key, block)
            manual.extend(rng.xoshiro_next(state) for _ in range(rng.BLOCK))
        assert drawn == manual[: len(drawn)]

    def test_distinct_keys_distinct_streams(self):
        a = rng.PermStream(1)
        b = rng.PermStream(2)
        assert [a.next_u64() for _ in range(4)] != [b.next_u64() for _ in range(4)]

    def test_below_range_and_determinism(self):
        s = rng.PermStream(99)
        values = [s.below(10) for _ in range(2000)]
        assert all(0 <= v < 10 for v in values)
        s2 = rng.PermStream(99)
        assert values == [s2.below(10) for _ in range(2000)]
        counts = np.bincount(values, minlength=10)
        assert counts.min() > 100  # ~200 expected per bucket

    def test_below_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            rng.PermStream(1).below(0)

    @given(st.integers(1, 200), st.integers(0, 255))
    @settings(max_examples=50)
    def test_permutation_is_permutation(self, n, key):
        perm = rng.PermStream(key).permutation(n)
        assert sorted(perm) == list(range(n))

    @given(st.integers(1, 100), st.integers(0, 100), st.integers(0, 255))
    @settings(max_examples=50)
    def test_sample_indices_prefix_property(self, n, k, key):
        got = rng.PermStream(key).sample_indices(n, k)
        assert len(got) == min(k, n)
        assert len(set(got)) == len(got)
        assert all(0 <= i < n for i in got)
        # partial shuffle is a prefix of the full shuffle with the same key
        full = rng.PermStream(key).permutation(n)
        assert full[: len(got)] == got
