import numpy as np
import pytest

from ratebp.analysis import (
    CostProfile,
    assumption_metrics,
    centered_correlation,
    firing_stats,
    profile_costs,
    shuffle_eval,
)
from ratebp.network import ModelSpec, direct_encode, init_model, model_forward_bptt, permute_time
from ratebp.rate import rate_forward
from ratebp.tensor import RngState


def build(seed=0, **kwargs):
    defaults = dict(in_features=6, hidden=(8, 5), n_classes=3, T=4)
    defaults.update(kwargs)
    return init_model(ModelSpec(**defaults), RngState(seed).derive(1))


def centered_cosine(a, b):
    """Independent second route for the correlation: cosine after centering."""
    ac = (a - a.mean(axis=0)).reshape(-1)
    bc = (b - b.mean(axis=0)).reshape(-1)
    na, nb = np.linalg.norm(ac), np.linalg.norm(bc)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(ac, bc) / (na * nb))


class TestAssumptionMetrics:
    def test_t1_rejected(self):
        model = build(T=1)
        rng = RngState(1)
        x = rng.gen.uniform(0, 1, (4, 6))
        y = rng.gen.integers(0, 3, 4)
        with pytest.raises(ValueError, match="T"):
            assumption_metrics(model, x, y)

    def test_last_layer_cos_a1_is_one(self):
        # the spatial gradient into the top block is constant in t, so the
        # expectation factorizes exactly
        model = build(T=4)
        rng = RngState(2)
        x = rng.gen.uniform(0, 1, (6, 6))
        y = rng.gen.integers(0, 3, 6)
        report = assumption_metrics(model, x, y)
        assert report.layers[-1].cos_a1 > 1.0 - 1e-12

    def test_cosines_in_range(self):
        model = build(T=4, bn="tdbn")
        rng = RngState(3)
        x = rng.gen.uniform(0, 1, (6, 6))
        y = rng.gen.integers(0, 3, 6)
        report = assumption_metrics(model, x, y)
        for layer in report.layers:
            assert -1.0 <= layer.cos_a1 <= 1.0
            assert -1.0 <= layer.rho_corr <= 1.0
            assert -1.0 <= layer.cos_a2 <= 1.0
        assert -1.0 <= report.a3.median_cosine <= 1.0

    def test_report_dict_schema(self):
        model = build(T=2)
        rng = RngState(4)
        x = rng.gen.uniform(0, 1, (4, 6))
        y = rng.gen.integers(0, 3, 4)
        d = assumption_metrics(model, x, y).as_dict()
        assert len(d["layers"]) == 2
        assert {"cos_a1", "rho_corr", "cos_a2"} <= set(d["layers"][0])
        assert "per_key" in d["a3"]


class TestCenteredCorrelation:
    def test_toy_zero_covariance(self):
        # delta = (1, -1), kappa = (1, 1): covariance 0 -> correlation 0
        delta = np.array([[[1.0]], [[-1.0]]])
        kappa = np.array([[[1.0]], [[1.0]]])
        assert centered_correlation(delta, kappa) == 0.0

    def test_two_routes_agree(self):
        rng = RngState(5)
        for _ in range(20):
            a = rng.gen.standard_normal((6, 4, 3))
            b = rng.gen.standard_normal((6, 4, 3))
            assert abs(centered_correlation(a, b) - centered_cosine(a, b)) < 1e-12

    def test_perfect_correlation(self):
        rng = RngState(6)
        a = rng.gen.standard_normal((5, 3, 2))
        assert abs(centered_correlation(a, 2.0 * a + 3.0) - 1.0) < 1e-12


class TestShuffle:
    def test_permutation_preserves_counts_and_means(self):
        rng = RngState(7)
        train = (rng.gen.random((8, 6, 5)) > 0.6).astype(float)
        out = permute_time(train, RngState(11).gen)
        assert np.array_equal(out.sum(axis=0), train.sum(axis=0))
        assert np.array_equal(out.mean(axis=0), train.mean(axis=0))
        assert not np.array_equal(out, train)  # some series actually moved

    def test_constant_frames_unchanged_accuracy(self):
        # direct encoding repeats the same frame, so shuffling the input
        # permutes identical values
        model = build(T=4)
        rng = RngState(8)
        images = rng.gen.uniform(0, 1, (30, 6))
        labels = rng.gen.integers(0, 3, 30)
        plain, shuffled = shuffle_eval(model, images, labels, seed=5, batch_size=16)
        assert plain == shuffled

    def test_deeper_shuffle_runs_and_stays_in_range(self):
        model = build(T=4)
        rng = RngState(9)
        images = rng.gen.uniform(0, 1, (30, 6))
        labels = rng.gen.integers(0, 3, 30)
        plain, shuffled = shuffle_eval(model, images, labels, seed=5, batch_size=16, shuffle_deeper=True)
        assert 0.0 <= plain <= 1.0 and 0.0 <= shuffled <= 1.0

    def test_t1_rejected(self):
        model = build(T=1)
        with pytest.raises(ValueError):
            shuffle_eval(model, np.zeros((4, 6)), np.zeros(4, dtype=int), seed=0)


class TestFiringStats:
    def test_zero_input_zero_rates(self):
        model = build(T=4)
        stats = firing_stats(model, np.zeros((10, 6)))
        assert np.all(stats.per_layer_per_t == 0.0)
        assert np.all(stats.temporal_mean == 0.0)

    def test_rates_in_unit_interval(self):
        model = build(T=4, bn="tdbn")
        rng = RngState(10)
        stats = firing_stats(model, rng.gen.uniform(0, 1, (40, 6)), batch_size=16)
        assert np.all((0.0 <= stats.per_layer_per_t) & (stats.per_layer_per_t <= 1.0))

    def test_temporal_mean_matches_e_trace(self):
        model = build(T=4)
        rng = RngState(11)
        images = rng.gen.uniform(0, 1, (24, 6))
        stats = firing_stats(model, images, batch_size=24)
        _, rcache = rate_forward(model, direct_encode(images, 4), "rate_m")
        for li in range(len(model.blocks)):
            assert abs(stats.temporal_mean[li] - rcache.layers[li].e.mean()) < 1e-12

    def test_csv_schema(self):
        model = build(T=2)
        stats = firing_stats(model, np.zeros((4, 6)))
        text = stats.to_csv_text()
        assert text.startswith("# schema=rates-v1\nlayer,timestep,rate\n")
        assert len(text.strip().splitlines()) == 2 + 2 * 2  # header rows + L*T


class TestProfileCosts:
    def test_bookkeeping_and_row_count(self):
        model = build(T=1, in_features=8, hidden=(12, 12), n_classes=4)
        rng = RngState(12)
        x = rng.gen.uniform(0, 1, (6, 8))
        y = rng.gen.integers(0, 4, 6)
        prof = profile_costs(model, x, y, [1, 2, 4], ["rate_m", "bptt"], repeats=5)
        assert len(prof.rows) == 6
        rate_bytes = {r.T: r.cache_bytes for r in prof.rows if r.method == "rate_m"}
        bptt_bytes = {r.T: r.cache_bytes for r in prof.rows if r.method == "bptt"}
        assert len(set(rate_bytes.values())) == 1
        assert 0.9 * 4 <= bptt_bytes[4] / bptt_bytes[1] <= 1.1 * 4
        for r in prof.rows:
            assert r.backward_seconds >= 0.0 and r.trace_seconds >= 0.0

    def test_byte_accounting_matches_hand_formula(self):
        # BN-free BPTT cache: encoded + (u + s) per block + outputs, all f64
        model = build(T=3, in_features=8, hidden=(12, 5), n_classes=4)
        rng = RngState(13)
        x = rng.gen.uniform(0, 1, (6, 8))
        _, cache = model_forward_bptt(model, direct_encode(x, 3))
        expect = 8 * (3 * 6 * 8 + 2 * (3 * 6 * 12) + 2 * (3 * 6 * 5) + 3 * 6 * 4)
        assert cache.byte_size() == expect

    def test_rate_byte_accounting_matches_hand_formula(self):
        # input rate + (e + g) per block, all [B,F] f64
        model = build(T=3, in_features=8, hidden=(12, 5), n_classes=4)
        rng = RngState(14)
        x = rng.gen.uniform(0, 1, (6, 8))
        _, rcache = rate_forward(model, direct_encode(x, 3), "rate_m")
        expect = 8 * (6 * 8 + 2 * (6 * 12) + 2 * (6 * 5))
        assert rcache.byte_size() == expect

    def test_repeats_guard(self):
        model = build()
        with pytest.raises(ValueError):
            profile_costs(model, np.zeros((2, 6)), np.zeros(2, dtype=int), [1], ["bptt"], repeats=2)

    def test_csv_schema(self):
        rows = CostProfile(rows=[])
        assert rows.to_csv_text().startswith("# schema=profile-v1\n")
