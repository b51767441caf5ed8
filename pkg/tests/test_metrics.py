import csv
import io
import json
import math

import numpy as np
import pytest

from conftest import unit_rows
from sphereq import metrics
from sphereq.errors import ConfigError, DataError
from sphereq.metrics import (
    IdentityScheme,
    empirical_error_histogram,
    estimate_dip,
    estimate_dip_many,
    estimate_dmse,
    estimate_dmse_many,
    predicted_constants,
    recall_at_1_at_k,
    replay,
    reports_to_csv,
    reports_to_json,
    trial_seeds,
)
from sphereq.quantizers import dequantize, estimate_ip, make_scheme, quantize, with_rotation
from sphereq.rotation import build_rotation
from sphereq.seeding import derive_seed
from sphereq.theory import shannon_lower_bound

DETERMINISTIC = [
    ("eden", "bsm", 2, None),
    ("eden", "ub", 1, None),
    ("rabitq", "bsm", 2, None),
    ("rabitq", "ub", 3, None),
    ("tq-mse", "raw", 2, None),
    ("tq-mse", "ub", 2, None),
    ("block", "bsm", 2, 2),
    ("block", "ub", 1, 2),
]
DET_IDS = [f"{f}-{v}-b{b}" for f, v, b, _ in DETERMINISTIC]


def scheme(family, variant, bits, p, dim):
    return make_scheme(family, bits, dim, variant=variant, block_size=p)


class TestIdentity:
    def test_mse_zero(self):
        rep = estimate_dmse(IdentityScheme(64), n_trials=100)
        assert rep.mean == 0.0 and rep.stderr == 0.0 and rep.n_degenerate == 0

    def test_ip_zero(self):
        rep = estimate_dip(IdentityScheme(64), n_trials=100, eta=0.4)
        assert rep.mean == 0.0 and rep.ip_bias_mean == 0.0

    def test_full_method_zero(self):
        assert estimate_dmse(IdentityScheme(16), n_trials=100, method="full").mean == 0.0

    def test_predicted(self):
        assert predicted_constants(IdentityScheme(8), "mse") == {"model": 0.0, "reference": 0.0}


class TestMethods:
    @pytest.mark.parametrize("family,variant,bits,p", DETERMINISTIC, ids=DET_IDS)
    def test_frames_equal_full_mse(self, family, variant, bits, p):
        cfg = scheme(family, variant, bits, p, 24)
        a = estimate_dmse(cfg, n_trials=120, base_seed=5)
        b = estimate_dmse(cfg, n_trials=120, base_seed=5, method="full")
        assert a.mean == pytest.approx(b.mean, rel=1e-9)
        assert a.stderr == pytest.approx(b.stderr, rel=1e-6)

    @pytest.mark.parametrize("family,variant,bits,p", DETERMINISTIC, ids=DET_IDS)
    def test_frames_equal_full_ip(self, family, variant, bits, p):
        cfg = scheme(family, variant, bits, p, 24)
        a = estimate_dip(cfg, n_trials=120, base_seed=6, eta=0.3)
        b = estimate_dip(cfg, n_trials=120, base_seed=6, eta=0.3, method="full")
        assert a.mean == pytest.approx(b.mean, rel=1e-9)
        assert a.ip_bias_mean == pytest.approx(b.ip_bias_mean, rel=1e-7, abs=1e-12)

    @pytest.mark.parametrize("bits", [1, 3])
    @pytest.mark.parametrize("kind", ["mse", "ip"])
    def test_prod_sampler_matches_full(self, bits, kind):
        cfg = make_scheme("tq-prod", bits, 16)
        fn = estimate_dmse if kind == "mse" else estimate_dip
        a = fn(cfg, n_trials=3000, base_seed=1)
        b = fn(cfg, n_trials=3000, base_seed=2, method="full")
        assert abs(a.mean - b.mean) < 4 * math.hypot(a.stderr, b.stderr)

    def test_manual_loop(self):
        d, n = 16, 100
        cfg = make_scheme("eden", 2, d, variant="ub")
        x = np.zeros(d)
        x[0] = 1.0
        y = np.zeros(d)
        y[1] = 1.0
        mse, ip = [], []
        for s in trial_seeds(3, n):
            c = with_rotation(cfg, build_rotation(d, s))
            qv = quantize(c, x)
            mse.append(np.sum((x - dequantize(c, qv)) ** 2))
            ip.append(estimate_ip(c, qv, y) ** 2)
        for rep, vals in ((estimate_dmse(cfg, n, 3), mse), (estimate_dip(cfg, n, 3), ip)):
            assert rep.mean == pytest.approx(np.mean(vals), rel=1e-9)
            assert rep.stderr == pytest.approx(np.std(vals, ddof=1) / math.sqrt(n), rel=1e-6)

    def test_many_equals_single(self):
        cfgs = [make_scheme("eden", 2, 32), make_scheme("rabitq", 2, 32)]
        many = estimate_dmse_many(cfgs, 200, base_seed=4)
        for cfg, rep in zip(cfgs, many):
            assert rep.mean == estimate_dmse(cfg, 200, base_seed=4).mean
        ips = estimate_dip_many(cfgs, 200, base_seed=4, eta=0.1)
        assert ips[1].mean == estimate_dip(cfgs[1], 200, base_seed=4, eta=0.1).mean

    def test_chunking_does_not_change_result(self):
        cfg = make_scheme("eden", 3, 32)
        a = metrics._estimate_many([cfg], "mse", 700, 2, chunk=64)[0]
        b = metrics._estimate_many([cfg], "mse", 700, 2, chunk=500)[0]
        assert a.mean == b.mean


class TestValidation:
    def test_min_trials(self):
        with pytest.raises(ConfigError):
            estimate_dmse(make_scheme("eden", 1, 16), n_trials=99)

    @pytest.mark.parametrize("eta", [1.0, -1.5])
    def test_eta_range(self, eta):
        with pytest.raises(ConfigError):
            estimate_dip(make_scheme("eden", 1, 16), n_trials=100, eta=eta)

    def test_mixed_dimensions(self):
        with pytest.raises(ConfigError):
            estimate_dmse_many([make_scheme("eden", 1, 16), make_scheme("eden", 1, 18)], 100)

    def test_frames_need_haar(self):
        cfg = make_scheme("eden", 1, 16, backend="fast")
        with pytest.raises(ConfigError):
            estimate_dmse(cfg, 100)
        assert estimate_dmse(cfg, 100, method="full").method == "full"

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            estimate_dmse(make_scheme("eden", 1, 16), 100, method="fast")


class TestReport:
    def test_fields(self):
        cfg = make_scheme("eden", 2, 64, variant="ub")
        rep = estimate_dip(cfg, n_trials=300, base_seed=9)
        assert rep.scheme == cfg.tag and rep.d == 64 and rep.bits == 2 and rep.n_trials == 300
        assert rep.scale == 63 and rep.scaled_mean == rep.mean * 63
        assert rep.ip_mse_mean == rep.mean and rep.mse_mean is None
        assert rep.seeds["base"] == 9 and rep.seeds["count"] == 300
        assert rep.seeds["first"] == derive_seed(9, "rotation", 0)
        assert rep.seeds["last"] == derive_seed(9, "rotation", 299)
        e = predicted_constants(cfg, "ip")
        assert e["reference"] == 0.133
        assert e["model"] == pytest.approx(0.1174818478 / (1 - 0.1174818478), rel=1e-6)

    def test_prod_scaling(self):
        rep = estimate_dip(make_scheme("tq-prod", 2, 64), n_trials=100)
        assert rep.scale == 64
        assert rep.predicted["reference"] == 0.56

    def test_mse_prediction_has_bound(self):
        rep = estimate_dmse(make_scheme("eden", 1, 64), n_trials=100)
        assert rep.mse_mean == rep.mean and rep.ip_bias_mean is None
        assert rep.predicted["shannon_bound"] == shannon_lower_bound(64, 1)

    def test_replay_bit_for_bit(self):
        cfg = make_scheme("tq-prod", 2, 32)
        rep = estimate_dip(cfg, n_trials=250, base_seed=17, eta=0.2)
        again = replay(cfg, rep)
        assert again.to_dict() == rep.to_dict()

    def test_replay_detects_tampering(self):
        cfg = make_scheme("eden", 1, 16)
        rep = estimate_dmse(cfg, 100)
        rep.seeds["sha256"] = "0" * 64
        with pytest.raises(DataError):
            replay(cfg, rep)

    def test_json_and_csv_deterministic(self):
        def run():
            cfgs = [make_scheme("eden", 2, 32), make_scheme("block", 1, 32, block_size=2)]
            reps = estimate_dmse_many(cfgs, 150, base_seed=3)
            return reports_to_json(reps, {"note": "x"}), reports_to_csv(reps, {"note": "x"})

        (j1, c1), (j2, c2) = run(), run()
        assert j1 == j2 and c1 == c2
        doc = json.loads(j1)
        assert doc["report_version"] == 1 and doc["note"] == "x" and len(doc["rows"]) == 2
        lines = c1.splitlines()
        assert lines[0] == "# report_version=1"
        rows = list(csv.DictReader(io.StringIO("\n".join(l for l in lines if not l.startswith("#")))))
        assert [r["scheme"] for r in rows] == [r["scheme"] for r in doc["rows"]]
        assert float(rows[0]["mean"]) == doc["rows"][0]["mean"]


class TestStatistics:
    def test_rotation_invariance(self):
        d = 32
        cfg = make_scheme("eden", 2, d)
        x = unit_rows(np.random.default_rng(1), 1, d)[0]
        a = estimate_dmse(cfg, 1500, base_seed=1)
        b = estimate_dmse(cfg, 1500, base_seed=2, x=x)
        assert b.method == "full"
        assert abs(a.mean - b.mean) < 3 * math.hypot(a.stderr, b.stderr)

    @pytest.mark.parametrize("bits", [1, 2, 3])
    def test_above_shannon_bound(self, bits):
        d = 64
        cfgs = [make_scheme(f, bits, d) for f in ("eden", "rabitq", "tq-mse", "tq-prod")]
        cfgs.append(make_scheme("block", bits, d, block_size=2) if bits <= 2 else make_scheme("block", bits, d, block_size=1))
        for rep in estimate_dmse_many(cfgs, 500):
            assert rep.mean >= shannon_lower_bound(d, bits) - 3 * rep.stderr

    def test_eden_bsm_reference(self):
        rep = estimate_dmse(make_scheme("eden", 2, 1024), n_trials=10_000)
        assert rep.mean == pytest.approx(0.117, rel=0.03)

    def test_ub_unbiased_at_eta(self):
        cfgs = [make_scheme("eden", 2, 128, variant="ub"), make_scheme("tq-prod", 2, 128)]
        for rep in estimate_dip_many(cfgs, 20_000, base_seed=8, eta=0.3):
            assert abs(rep.ip_bias_mean) <= 3 * rep.ip_bias_stderr

    def test_bsm_is_biased(self):
        rep = estimate_dip(make_scheme("eden", 1, 128), n_trials=2000, eta=0.5)
        assert rep.ip_bias_mean < -10 * rep.ip_bias_stderr

    def test_ub_ip_prediction(self):
        # (d - 1) D_IP of a ratio quantizer is close to e / (1 - e) at moderate d.
        rep = estimate_dip(make_scheme("eden", 1, 256, variant="ub"), n_trials=20_000)
        assert rep.scaled_mean == pytest.approx(rep.predicted["model"], rel=0.05)


@pytest.fixture(scope="module")
def sets():
    rng = np.random.default_rng(0)
    return unit_rows(rng, 300, 32), unit_rows(rng, 40, 32)


class TestRecall:
    def test_identity_perfect(self, sets):
        db, q = sets
        res = recall_at_1_at_k(db, q, IdentityScheme(32), ks=(1, 5))
        assert res.recall == [1.0, 1.0] and res.n_queries == 40 and res.n_database == 300

    def test_full_candidate_set(self, sets):
        db, q = sets
        res = recall_at_1_at_k(db, q, make_scheme("eden", 1, 32, variant="ub"), ks=(1, 10, 300))
        assert res.at(300) == 1.0
        assert 0 <= res.at(1) <= res.at(10) <= 1.0

    def test_monotone_in_k(self, sets):
        db, q = sets
        res = recall_at_1_at_k(db, q, make_scheme("rabitq", 1, 32), ks=range(1, 40, 3))
        assert np.all(np.diff(res.recall) >= 0)
        assert res.ks == sorted(res.ks)

    def test_ties_resolve_to_lower_index(self):
        db = np.eye(4)[[0, 1, 1, 2]]
        res = recall_at_1_at_k(db, np.eye(4)[[1]], IdentityScheme(4), ks=(1,))
        assert res.at(1) == 1.0

    def test_errors(self, sets):
        db, q = sets
        cfg = IdentityScheme(32)
        with pytest.raises(DataError, match="empty"):
            recall_at_1_at_k(db, q[:0], cfg)
        with pytest.raises(DataError, match="vector 3"):
            bad = db.copy()
            bad[3] *= 2
            recall_at_1_at_k(bad, q, cfg)
        with pytest.raises(ConfigError):
            recall_at_1_at_k(db, q, cfg, ks=(0,))

    def test_to_dict(self, sets):
        db, q = sets
        d = recall_at_1_at_k(db, q, IdentityScheme(32), ks=(1,), dataset="syn").to_dict()
        assert d["dataset"] == "syn" and d["ks"] == [1]


class TestHistogram:
    def test_ub_centred(self):
        rng = np.random.default_rng(2)
        db, q = unit_rows(rng, 400, 64), unit_rows(rng, 100, 64)
        h = empirical_error_histogram(make_scheme("eden", 2, 64, variant="ub"), db, q)
        assert abs(h.mean) <= 3 * h.stderr
        assert sum(h.counts) == h.n == 40_000

    def test_raw_shrinks(self, sets):
        db, q = sets
        h = empirical_error_histogram(make_scheme("tq-mse", 1, 32, variant="raw"), db, q)
        assert h.mean_abs_estimate < h.mean_abs_truth

    def test_identity_centre_bin(self, sets):
        db, q = sets
        h = empirical_error_histogram(IdentityScheme(32), db, q, bins=20)
        assert len(h.counts) == 21
        assert h.counts[10] == h.n and sum(h.counts) == h.n
        assert h.edges[10] < 0 < h.edges[11]

    def test_fixed_halfwidth_clips(self, sets):
        db, q = sets
        h = empirical_error_histogram(make_scheme("eden", 1, 32), db, q, bins=5, halfwidth=1e-3)
        assert sum(h.counts) == h.n
        assert h.edges[0] == -1e-3 and h.edges[-1] == 1e-3


class TestOrdering:
    def test_block_beats_scalar_at_b2(self):
        # Block p=3 needs d divisible by 3; the extra two coordinates barely move D_MSE.
        p3 = estimate_dmse(make_scheme("block", 2, 1026, block_size=3), n_trials=2000)
        rest = estimate_dmse_many(
            [make_scheme("block", 2, 1024, block_size=2), make_scheme("eden", 2, 1024), make_scheme("rabitq", 2, 1024)],
            n_trials=2000,
        )
        chain = [p3] + rest
        for lo, hi in zip(chain, chain[1:]):
            assert hi.mean - lo.mean > 3 * math.hypot(lo.stderr, hi.stderr), (lo.scheme, hi.scheme)
