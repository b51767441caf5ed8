import pytest
from hypothesis import given
from hypothesis import strategies as st

from sphereq.config import RunConfig, SchemeSpec, load_config
from sphereq.errors import ConfigError
from sphereq.quantizers import Family, Variant


class TestSchemeSpec:
    @pytest.mark.parametrize(
        "text,expect",
        [
            ("eden", (Family.EDEN, Variant.BSM, 1)),
            ("eden:ub", (Family.EDEN, Variant.UB, 1)),
            ("block:ub:p=3", (Family.BLOCK, Variant.UB, 3)),
            ("block:p=3:raw", (Family.BLOCK, Variant.RAW, 3)),
            (" tq-prod ", (Family.TQ_PROD, Variant.UB, 1)),
        ],
    )
    def test_parse(self, text, expect):
        s = SchemeSpec.parse(text)
        assert (s.family, s.variant, s.block_size) == expect

    @pytest.mark.parametrize("text", ["", "pq", "eden:raw", "eden:p=2", "block:p=x", "block:foo", "block:p=0"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            SchemeSpec.parse(text)

    def test_text_round_trip(self):
        for t in ("eden:bsm", "block:ub:p=3", "tq-mse:raw"):
            assert SchemeSpec.parse(t).text() == t


class TestRunConfig:
    def test_defaults(self):
        c = RunConfig()
        assert c.bits == (1, 2, 3, 4) and c.dim == 1024 and c.mse_trials == 10_000 and c.ip_trials == 100_000

    def test_text_round_trip(self):
        c = RunConfig().updated({"schemes": "eden:ub,block:bsm:p=3", "bits": "2,3", "eta": "0.25", "metrics": "mse,ip"})
        assert RunConfig.from_text(c.to_text()) == c
        assert c.schemes[1].block_size == 3 and c.eta == 0.25

    @given(
        st.lists(st.integers(1, 8), min_size=1, max_size=4),
        st.integers(2, 5000),
        st.integers(0, 2**63),
        st.floats(-0.99, 0.99),
    )
    def test_round_trip_property(self, bits, dim, seed, eta):
        c = RunConfig(bits=tuple(bits), dim=dim, seed=seed, eta=eta)
        back = RunConfig.from_text(c.to_text())
        assert back == c and back.digest() == c.digest()

    def test_digest_changes(self):
        assert RunConfig().digest() != RunConfig(seed=1).digest()
        assert RunConfig().digest() == RunConfig().digest()
        assert len(RunConfig().digest()) == 64

    def test_comments_and_blanks(self):
        c = RunConfig.from_text("# header\n\ndim = 64  # small\nseed=3\n")
        assert c.dim == 64 and c.seed == 3

    @pytest.mark.parametrize(
        "text",
        ["dim = 64\ndim = 65\n", "nonsense\n", "colour = red\n", "dim = big\n", "bits = 0\n", "bits = ,\n",
         "metrics = speed\n", "assign = fuzzy\n", "format = xml\n", "backend = gpu\n", "eta = 1.0\n", "dim = 1\n"],
    )
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            RunConfig.from_text(text)

    def test_updated_ignores_none(self):
        assert RunConfig().updated({"dim": None}) == RunConfig()

    def test_load(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("schemes = rabitq:ub\nbits = 2\n")
        c = load_config(str(path))
        assert c.schemes[0].family is Family.RABITQ and c.bits == (2,)
