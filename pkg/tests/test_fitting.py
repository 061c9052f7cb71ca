"""Fitting: component stats, hyper-Erlang fits, CDF distance, correlation."""

import math

import numpy as np
import pytest

from ctmcref import (
    DegenerateHoldingSample,
    FitConfig,
    HyperErlangPhd,
    InvalidModelError,
    ObservationSet,
    cdf_distance,
    correlation_matrix,
    estimate_component_stats,
    fit_holding_phd,
)
from ctmcref.fitting import ErlangBranch, _cluster_fit


class TestComponentStats:
    def test_constant_sample(self):
        stats = estimate_component_stats(ObservationSet("c", (1.0, 1.0, 1.0)))
        assert stats.rate == pytest.approx(1.0)
        assert stats.delay == pytest.approx(1.0)
        assert stats.holdings == (0.0, 0.0, 0.0)

    def test_arithmetic(self):
        stats = estimate_component_stats(ObservationSet("c", (0.05, 0.10, 0.15)))
        assert stats.rate == pytest.approx(10.0)
        assert stats.delay == pytest.approx(0.05)
        assert stats.holdings == pytest.approx((0.0, 0.05, 0.10))

    def test_empty_set_rejected(self):
        with pytest.raises(InvalidModelError, match="no observations"):
            ObservationSet("c", ())

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(InvalidModelError, match="non-positive"):
            ObservationSet("c", (0.5, -1.0))
        with pytest.raises(InvalidModelError, match="non-positive"):
            ObservationSet("c", (0.5, 0.0))


class TestHyperErlangViews:
    def phd(self) -> HyperErlangPhd:
        return HyperErlangPhd(
            (ErlangBranch(0.4, 2, 3.0), ErlangBranch(0.6, 1, 0.5))
        )

    def test_weights_must_sum_to_one(self):
        with pytest.raises(InvalidModelError, match="sum"):
            HyperErlangPhd((ErlangBranch(0.5, 1, 1.0), ErlangBranch(0.4, 1, 1.0)))

    def test_mean(self):
        assert self.phd().mean() == pytest.approx(0.4 * 2 / 3.0 + 0.6 / 0.5)

    def test_matrix_views(self):
        phd = self.phd()
        pi0 = phd.initial_vector()
        d0 = phd.generator_block()
        d1 = phd.exit_vector()
        np.testing.assert_allclose(pi0, [0.4, 0.0, 0.6])
        # branch chains are upper-bidiagonal; exits only from final phases
        np.testing.assert_allclose(d0, [[-3.0, 3.0, 0.0], [0.0, -3.0, 0.0], [0.0, 0.0, -0.5]])
        np.testing.assert_allclose(d1, -d0 @ np.ones(3))
        np.testing.assert_allclose(d1, [0.0, 3.0, 0.5])

    def test_cdf_mixture(self):
        phd = self.phd()
        xs = np.linspace(0.0, 10.0, 50)
        direct = 0.4 * (1 - np.exp(-3 * xs) * (1 + 3 * xs)) + 0.6 * (1 - np.exp(-0.5 * xs))
        np.testing.assert_allclose(phd.cdf(xs), direct, atol=1e-12)


class TestFitHoldingPhd:
    def test_exponential_beats_or_ties_moment_fit(self):
        rng = np.random.default_rng(8)
        sample = rng.exponential(0.5, size=10_000)
        cfg = FitConfig(min_clusters=1, max_clusters=6, max_phases=50, em_iterations=25)
        phd = fit_holding_phd(sample, cfg)
        moment = HyperErlangPhd((ErlangBranch(1.0, 1, 1.0 / sample.mean()),))
        assert cdf_distance(sample, phd) <= cdf_distance(sample, moment) + 1e-12
        assert phd.mean() == pytest.approx(sample.mean(), rel=0.02)

    def test_bimodal_erlang_mixture(self):
        rng = np.random.default_rng(3)
        a = rng.gamma(5, 1.0 / 5.0, size=5_000)  # Erlang-5, mean 1
        b = rng.gamma(5, 10.0 / 5.0, size=5_000)  # Erlang-5, mean 10
        sample = np.concatenate([a, b])
        cfg = FitConfig(min_clusters=1, max_clusters=8, max_phases=50, em_iterations=25)
        phd = fit_holding_phd(sample, cfg)
        assert len(phd.branches) >= 2
        assert cdf_distance(sample, phd) <= 0.02
        # against the generating CDF on a dense grid
        from ctmcref import erlang_cdf

        grid = np.linspace(1e-3, 25.0, 400)
        truth = 0.5 * erlang_cdf(5, 5.0, grid) + 0.5 * erlang_cdf(5, 0.5, grid)
        assert np.mean(np.abs(phd.cdf(grid) - truth)) <= 0.02
        assert np.max(np.abs(phd.cdf(grid) - truth)) <= 0.05

    def test_all_zero_holdings_signal(self):
        with pytest.raises(DegenerateHoldingSample):
            fit_holding_phd(np.zeros(20), FitConfig())

    def test_single_distinct_value_uses_max_phases(self):
        cfg = FitConfig(max_phases=40)
        phd = fit_holding_phd(np.full(50, 2.5), cfg)
        assert len(phd.branches) == 1
        assert phd.branches[0].phases == 40
        assert phd.mean() == pytest.approx(2.5)

    def test_determinism(self):
        rng = np.random.default_rng(17)
        sample = rng.gamma(2, 0.3, size=2_000)
        cfg = FitConfig(min_clusters=1, max_clusters=5, em_iterations=10)
        assert fit_holding_phd(sample, cfg) == fit_holding_phd(sample, cfg)

    def test_weights_and_bounds(self):
        rng = np.random.default_rng(21)
        sample = np.concatenate(
            [rng.exponential(1.0, 3_000), rng.gamma(8, 0.05, 3_000)]
        )
        cfg = FitConfig(min_clusters=2, max_clusters=6, max_phases=12, em_iterations=15)
        phd = fit_holding_phd(sample, cfg)
        assert sum(b.weight for b in phd.branches) == pytest.approx(1.0, abs=1e-12)
        assert all(1 <= b.phases <= 12 for b in phd.branches)
        assert all(b.rate > 0 for b in phd.branches)

    def test_returned_is_best_of_all_candidates(self):
        rng = np.random.default_rng(4)
        sample = np.sort(np.concatenate([rng.exponential(1.0, 2_000), rng.gamma(6, 2.0, 2_000)]))
        cfg = FitConfig(alpha=0.0, min_clusters=1, max_clusters=6, em_iterations=10)
        phd = fit_holding_phd(sample, cfg)
        candidates = [
            _cluster_fit(sample, c, cfg) for c in range(cfg.min_clusters, cfg.max_clusters + 1)
        ]
        best = min(cdf_distance(sample, cand) for cand in candidates)
        assert cdf_distance(sample, phd) == pytest.approx(best, abs=1e-15)

    def test_early_stopping_limits_candidates(self):
        # alpha so large that improvement never resets the counter: the loop
        # visits exactly min_clusters + max_steps candidates
        rng = np.random.default_rng(5)
        sample = rng.exponential(1.0, 500)
        calls = []
        import ctmcref.fitting as fitting

        original = fitting._cluster_fit

        def spy(xs, c, cfg):
            calls.append(c)
            return original(xs, c, cfg)

        fitting._cluster_fit = spy
        try:
            fit_holding_phd(
                sample,
                FitConfig(alpha=10.0, min_clusters=1, max_clusters=9, max_steps=2,
                          em_iterations=0),
            )
        finally:
            fitting._cluster_fit = original
        assert calls == [1, 2, 3]

    def test_mean_preserved_for_erlang_mixtures(self):
        rng = np.random.default_rng(30)
        for _ in range(3):
            ks = rng.integers(1, 6, size=2)
            means = rng.uniform(0.5, 5.0, size=2)
            parts = [rng.gamma(k, m / k, size=1_000) for k, m in zip(ks, means)]
            sample = np.concatenate(parts)
            cfg = FitConfig(min_clusters=1, max_clusters=6, max_phases=50, em_iterations=20)
            phd = fit_holding_phd(sample, cfg)
            assert phd.mean() == pytest.approx(sample.mean(), rel=0.02)


class TestCdfDistance:
    def test_midpoint_convention(self):
        phd = HyperErlangPhd((ErlangBranch(1.0, 1, 1.0),))
        assert cdf_distance([math.log(2.0)], phd) == pytest.approx(0.0, abs=1e-15)

    def test_constant_offset(self):
        # a distribution whose CDF sits exactly d above every midpoint
        sample = np.array([1.0, 2.0, 3.0])

        class Flat:
            def cdf(self, xs):
                return np.asarray([1.5 / 3, 2.5 / 3, 3.5 / 3]) + 0.0

        shifted = Flat()
        shifted_vals = np.asarray(shifted.cdf(sample)) + 0.0
        mids = (np.arange(1, 4) - 0.5) / 3
        assert np.allclose(shifted_vals - mids, 1.0 / 3)
        assert cdf_distance(sample, shifted) == pytest.approx(1.0 / 3, abs=1e-12)

    def test_uniform_sample_against_exponential_oracle(self):
        rng = np.random.default_rng(12)
        sample = np.sort(rng.uniform(0.0, 1.0, size=1_000))
        phd = HyperErlangPhd((ErlangBranch(1.0, 1, 1.0),))
        total = 0.0
        for i, x in enumerate(sample, start=1):
            total += abs((i - 0.5) / len(sample) - (1.0 - math.exp(-x)))
        assert cdf_distance(sample, phd) == pytest.approx(total / len(sample), abs=1e-12)


class TestCorrelation:
    def test_self_correlation_is_one(self):
        rng = np.random.default_rng(2)
        xs = rng.normal(size=500)
        out = correlation_matrix({"a": xs, "b": xs})
        assert out[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_constant_series_rejected(self):
        with pytest.raises(ValueError, match="zero variance"):
            correlation_matrix({"a": np.ones(10), "b": np.arange(10.0)})

    def test_independent_series_uncorrelated(self):
        rng = np.random.default_rng(77)
        a = rng.exponential(1.0, size=10_000)
        b = rng.exponential(1.0, size=10_000)
        r = correlation_matrix({"a": a, "b": b})[0, 1]
        assert abs(r) < 0.05
        # permutation oracle: the observed |r| is unexceptional under the
        # null of independence
        perm = np.empty(200)
        for i in range(200):
            perm[i] = abs(np.corrcoef(a, rng.permutation(b))[0, 1])
        p_value = float(np.mean(perm >= abs(r)))
        assert p_value > 0.01

    def test_diagonal_is_one(self):
        rng = np.random.default_rng(1)
        data = rng.normal(size=(3, 100))
        out = correlation_matrix(data)
        np.testing.assert_allclose(np.diag(out), 1.0)
