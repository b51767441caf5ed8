import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import pack_bits_reference
from sphereq.bitpack import pack_codes, pack_fields, packed_bytes, unpack_codes, unpack_fields


class TestPacking:
    @given(st.integers(1, 12), st.lists(st.integers(0, 2**12 - 1), min_size=1, max_size=60))
    def test_matches_reference_layout(self, width, raw):
        codes = [c % (1 << width) for c in raw]
        packed = pack_codes(np.array([codes], dtype=np.int64), width)
        assert packed[0].tobytes() == pack_bits_reference(codes, width)

    @given(st.integers(1, 12), st.integers(1, 5), st.integers(1, 40), st.integers(0, 2**31))
    def test_round_trip(self, width, n, m, seed):
        rng = np.random.default_rng(seed)
        codes = rng.integers(0, 1 << width, size=(n, m))
        packed = pack_codes(codes, width)
        assert packed.shape == (n, packed_bytes(width * m))
        assert np.array_equal(unpack_codes(packed, m, width), codes)

    def test_multiple_fields(self):
        rng = np.random.default_rng(0)
        a = rng.integers(0, 8, size=(3, 10))
        b = rng.integers(0, 2, size=(3, 10))
        packed = pack_fields([(a, 3), (b, 1)])
        assert packed.shape[1] == packed_bytes(40)
        ua, ub = unpack_fields(packed, [(10, 3), (10, 1)])
        assert np.array_equal(ua, a) and np.array_equal(ub, b)

    def test_packed_bytes(self):
        assert packed_bytes(0) == 0
        assert packed_bytes(1) == 1
        assert packed_bytes(8) == 1
        assert packed_bytes(9) == 2

    def test_rejects_out_of_range_codes(self):
        with pytest.raises(ValueError):
            pack_codes(np.array([[4]]), 2)
