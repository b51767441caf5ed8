import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import unit_rows
from sphereq.batchfile import (
    MAGIC,
    batch_from_bytes,
    batch_to_bytes,
    check_header,
    header_for,
    parse_header,
    read_batch,
    write_batch,
)
from sphereq.bitpack import packed_bytes
from sphereq.errors import ConfigError, FormatError
from sphereq.quantizers import make_scheme, quantize_batch

FIXED_SIZE = 103


def encoded(family="eden", variant=None, bits=3, dim=30, n=50, p=None, seed=1):
    cfg = make_scheme(family, bits, dim, variant=variant, block_size=p, seed=seed)
    qb = quantize_batch(cfg, unit_rows(np.random.default_rng(0), n, dim))
    return cfg, qb


class TestLayout:
    def test_exact_size(self):
        cfg, qb = encoded("eden", "ub", 3, 30, 50)
        data = batch_to_bytes(cfg, qb)
        tag = cfg.tag.encode()
        assert len(data) == FIXED_SIZE + len(tag) + 50 * (packed_bytes(90) + 8)
        assert len(data) == 1115

    def test_header_fields(self):
        cfg, qb = encoded("rabitq", "bsm", 2, 16, 7, seed=99)
        data = batch_to_bytes(cfg, qb, original_dim=13, config_hash=b"\x01" * 32)
        assert data[:4] == MAGIC
        fam, var, bits, p = struct.unpack_from("<BBBH", data, 5)
        assert (fam, var, bits, p) == (2, 1, 2, 1)
        dim, odim, seed, count, flags = struct.unpack_from("<IIQQB", data, 12)
        assert (dim, odim, seed, count, flags) == (16, 13, 99, 7, 1)
        h = parse_header(data)
        assert h.tag == cfg.tag and h.config_hash == b"\x01" * 32 and h.has_aux

    def test_record_layout(self):
        cfg, qb = encoded("tq-prod", None, 3, 16, 4)
        data = batch_to_bytes(cfg, qb)
        off = FIXED_SIZE + len(cfg.tag)
        rec = packed_bytes(48) + 12
        for i in range(4):
            base = off + i * rec
            assert data[base : base + packed_bytes(48)] == qb.codes[i].tobytes()
            rho, norm, aux = struct.unpack_from("<fff", data, base + packed_bytes(48))
            assert (rho, norm, aux) == (qb.rho[i], qb.norm[i], qb.aux[i])

    def test_lut_flag(self):
        from sphereq.block_codebook import load_pretrained
        from sphereq.lut import build_lut

        lut = build_lut(load_pretrained(2, 1), L=8, k=2)
        cfg = make_scheme("block", 1, 16, block_size=2, lut=lut)
        qb = quantize_batch(cfg, unit_rows(np.random.default_rng(0), 3, 16))
        assert parse_header(batch_to_bytes(cfg, qb)).uses_lut

    def test_deterministic(self):
        cfg, qb = encoded()
        assert batch_to_bytes(cfg, qb) == batch_to_bytes(*encoded())


class TestRoundTrip:
    @pytest.mark.parametrize(
        "family,variant,bits,p", [("eden", "bsm", 1, None), ("rabitq", "ub", 4, None), ("tq-prod", None, 2, None), ("block", "raw", 2, 2)]
    )
    def test_round_trip(self, tmp_path, family, variant, bits, p):
        cfg, qb = encoded(family, variant, bits, 24, 9, p)
        path = tmp_path / "b.sqz"
        write_batch(path, cfg, qb)
        h, back = read_batch(path)
        check_header(cfg, h)
        np.testing.assert_array_equal(back.codes, qb.codes)
        np.testing.assert_array_equal(back.rho, qb.rho)
        np.testing.assert_array_equal(back.norm, qb.norm)
        if qb.aux is not None:
            np.testing.assert_array_equal(back.aux, qb.aux)
        assert back.tag == qb.tag and back.rotation_seed == qb.rotation_seed

    @given(st.integers(1, 4), st.integers(2, 40), st.integers(0, 6), st.integers(0, 2**64 - 1))
    def test_any_shape(self, bits, dim, n, seed):
        cfg = make_scheme("eden", bits, dim, seed=seed)
        x = unit_rows(np.random.default_rng(1), max(n, 1), dim)[:n]
        qb = quantize_batch(cfg, x) if n else quantize_batch(cfg, unit_rows(np.random.default_rng(1), 1, dim))
        if not n:
            qb = type(qb)(qb.tag, qb.rotation_seed, qb.dim, qb.codes[:0], qb.rho[:0], qb.norm[:0])
        h, back = batch_from_bytes(batch_to_bytes(cfg, qb))
        assert h.count == n and h.rotation_seed == seed
        np.testing.assert_array_equal(back.codes, qb.codes)


class TestErrors:
    def test_bad_magic(self):
        cfg, qb = encoded()
        data = batch_to_bytes(cfg, qb)
        with pytest.raises(FormatError, match="magic"):
            batch_from_bytes(b"SQZ2" + data[4:])

    def test_bad_version(self):
        cfg, qb = encoded()
        data = bytearray(batch_to_bytes(cfg, qb))
        data[4] = 9
        with pytest.raises(FormatError, match="version"):
            batch_from_bytes(bytes(data))

    @pytest.mark.parametrize("cut", [10, FIXED_SIZE + 2, -1])
    def test_truncated(self, cut):
        cfg, qb = encoded()
        with pytest.raises(FormatError):
            batch_from_bytes(batch_to_bytes(cfg, qb)[:cut])

    def test_trailing_bytes(self):
        cfg, qb = encoded()
        with pytest.raises(FormatError):
            batch_from_bytes(batch_to_bytes(cfg, qb) + b"\0")

    def test_scheme_mismatch(self):
        cfg, qb = encoded(seed=1)
        h = parse_header(batch_to_bytes(cfg, qb))
        with pytest.raises(ConfigError, match="rotation_seed"):
            check_header(make_scheme("eden", 3, 30, seed=2), h)
        with pytest.raises(ConfigError, match="bits"):
            check_header(make_scheme("eden", 2, 30, seed=1), h)
        with pytest.raises(ConfigError, match="variant"):
            check_header(make_scheme("eden", 3, 30, variant="ub", seed=1), h)

    def test_codebook_mismatch(self):
        cfg = make_scheme("tq-mse", 2, 30, seed=1)
        other = make_scheme("tq-mse", 2, 30, seed=1, scalar_target="gaussian")
        assert header_for(cfg, 0).codebook_hash != header_for(other, 0).codebook_hash
        with pytest.raises(ConfigError, match="codebook_hash"):
            check_header(other, header_for(cfg, 0))
