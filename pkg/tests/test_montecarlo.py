import math

import numpy as np
import pytest

from conftest import GUMBEL_SPEC, GUMBEL_THETA, NORMAL_SPEC, NORMAL_THETA, SP_SPEC, SP_THETA
from maxfactor.errors import ConfigError, DomainError
from maxfactor.factor_model import ModelSpec, ParamVector, implied_matrix
from maxfactor.montecarlo import (SizeConfig, StudyConfig, central_ranks, gen_panel, gen_sizes,
                                  interval_coverage, prediction_intervals, rrmse_study, stream)


class TestSizes:
    def test_degenerate_beta(self):
        cfg = SizeConfig(trials=[1000], a=[1e6], b=[1e6], n_periods=10 ** 4)
        m = gen_sizes(cfg, 3)
        assert abs(m.mean() - 500) < 5

    def test_deterministic(self):
        cfg = SizeConfig.default()
        assert np.array_equal(gen_sizes(cfg, 9, 2), gen_sizes(cfg, 9, 2))
        assert not np.array_equal(gen_sizes(cfg, 9, 2), gen_sizes(cfg, 9, 3))

    def test_default_means(self):
        m = gen_sizes(SizeConfig.default(n_periods=10 ** 4), 1)
        assert m[0].mean() == pytest.approx(1000, rel=0.1)
        assert m[1].mean() == pytest.approx(100, rel=0.1)

    def test_config_errors(self):
        with pytest.raises(ConfigError):
            SizeConfig([10, 20], [1], [1])
        with pytest.raises(ConfigError):
            SizeConfig([10.5], [1], [1])
        with pytest.raises(ConfigError):
            SizeConfig([10], [0], [1])


class TestPanels:
    def test_degenerate_mixture(self):
        spec = ModelSpec("2b", 2, ("a", "b"))
        theta = ParamVector([-1.0, -0.4], [1e-12, 1e-12], nu=[-0.8, -0.9])
        sizes = np.full((2, 2000), 500)
        p = gen_panel(spec, theta, sizes, 4)
        expect = np.exp(-np.exp(-np.array([-0.8, -0.4])))
        ratio = p.losses / p.exposures
        se = ratio.std(axis=1, ddof=1) / math.sqrt(2000)
        assert np.all(np.abs(ratio.mean(axis=1) - expect) < 3 * se)

    def test_pooled_marginals(self):
        pi, _ = implied_matrix(GUMBEL_SPEC, GUMBEL_THETA)
        p = gen_panel(GUMBEL_SPEC, GUMBEL_THETA, np.full((2, 10 ** 5), 1000), 6)
        assert np.allclose(p.losses.sum(axis=1) / p.exposures.sum(axis=1), pi, atol=1e-3)

    def test_joint_moments(self):
        # products of proportions across categories are unbiased for E[Q_r Q_s];
        # within a category the falling-factorial ratio is
        _, joint = implied_matrix(GUMBEL_SPEC, GUMBEL_THETA)
        n = 10 ** 5
        p = gen_panel(GUMBEL_SPEC, GUMBEL_THETA, np.full((2, n), 1000), 7)
        q = p.losses / p.exposures
        x = q[0] * q[1]
        assert abs(x.mean() - joint[0, 1]) < 3 * x.std(ddof=1) / math.sqrt(n)
        M, m = p.losses[1].astype(float), 1000.0
        y = M * (M - 1) / (m * (m - 1))
        assert abs(y.mean() - joint[1, 1]) < 3 * y.std(ddof=1) / math.sqrt(n)

    @pytest.mark.parametrize("spec, theta", [(GUMBEL_SPEC, GUMBEL_THETA),
                                             (NORMAL_SPEC, NORMAL_THETA)])
    def test_positive_association(self, spec, theta):
        n = 10 ** 4
        p = gen_panel(spec, theta, np.full((2, n), 1000), 8)
        q = p.losses / p.exposures
        rho = np.corrcoef(q)[0, 1]
        assert rho - 5 * (1 - rho ** 2) / math.sqrt(n - 3) > 0

    def test_label_equivariance(self):
        sizes = np.array([[900] * 5, [1500] * 5, [120] * 5])
        p = gen_panel(SP_SPEC, SP_THETA, sizes, 11)
        order = [1, 2, 0]
        spec = ModelSpec("2b", 3, tuple(SP_SPEC.labels[i] for i in order))
        q = gen_panel(spec, SP_THETA.permuted(order), sizes[order], 11)
        assert q == p.select(spec.labels)

    def test_same_seed_same_panel(self):
        sizes = np.full((3, 4), 100)
        assert gen_panel(SP_SPEC, SP_THETA, sizes, 1) == gen_panel(SP_SPEC, SP_THETA, sizes, 1)

    def test_bad_sizes(self):
        with pytest.raises(DomainError):
            gen_panel(SP_SPEC, SP_THETA, np.full((2, 4), 100), 1)

    def test_streams_are_keyed(self):
        a = stream(1, "x", 0, "BB").random(3)
        stream(1, "y", 0, "BB").random(3)
        assert np.array_equal(a, stream(1, "x", 0, "BB").random(3))
        assert not np.array_equal(a, stream(1, "x", 0, "B").random(3))


class TestIntervals:
    def test_ranks(self):
        assert central_ranks(5000, 0.90) == (251, 4750)
        assert central_ranks(5000, 0.9999) == (1, 5000)

    def test_retained_count(self):
        sizes = np.full((3, 4), 500)
        iv = prediction_intervals(SP_SPEC, SP_THETA, sizes, draws=5000, level=0.90, seed=2)
        assert iv.retained == 4500
        assert np.all(iv.lower <= iv.upper)

    def test_full_range_limit(self):
        sizes = np.full((3, 2), 50)
        iv = prediction_intervals(SP_SPEC, SP_THETA, sizes, draws=200, level=0.999, seed=2)
        assert (iv.rank_lower, iv.rank_upper) == (1, 200)

    def test_monotone_in_level(self):
        sizes = np.full((3, 3), 700)
        a = prediction_intervals(SP_SPEC, SP_THETA, sizes, 2000, 0.5, seed=4)
        b = prediction_intervals(SP_SPEC, SP_THETA, sizes, 2000, 0.9, seed=4)
        assert np.all(b.lower <= a.lower) and np.all(b.upper >= a.upper)

    def test_coverage(self):
        sizes = np.full((3, 10), 800)
        iv = prediction_intervals(SP_SPEC, SP_THETA, sizes, 5000, 0.90, seed=5)
        cover = np.mean([interval_coverage(iv, gen_panel(SP_SPEC, SP_THETA, sizes, 77, rep))
                         for rep in range(500)])
        # integer counts push coverage slightly above the nominal level
        assert 0.88 <= cover <= 0.97

    def test_domain(self):
        with pytest.raises(DomainError):
            central_ranks(5000, 1.0)
        with pytest.raises(DomainError):
            prediction_intervals(SP_SPEC, SP_THETA, np.full((3, 2), 10), draws=10)


class TestStudy:
    def test_config_from_mapping(self):
        values = {"family": "2b", "k": "2", "labels": "1,2",
                  "theta.mu.1": "-1.15", "theta.mu.2": "-0.55",
                  "theta.nu.1": "-1.30", "theta.nu.2": "-1.00",
                  "theta.sigma.1": "0.11", "theta.sigma.2": "0.15",
                  "size.trials.1": "2000", "size.trials.2": "200",
                  "size.a.1": "30", "size.a.2": "30", "size.b.1": "30", "size.b.2": "30",
                  "replications": "5", "methods": "prelim,weighted"}
        cfg = StudyConfig.from_mapping(values)
        assert cfg.replications == 5 and cfg.methods == ("prelim", "weighted")
        with pytest.raises(ConfigError):
            StudyConfig.from_mapping({k: v for k, v in values.items() if k != "size.a.2"})
        with pytest.raises(ConfigError):
            StudyConfig.from_mapping(dict(values, methods="bogus"))

    def test_weighted_beats_preliminary_on_joint(self):
        cfg = StudyConfig(GUMBEL_SPEC, GUMBEL_THETA, SizeConfig.default(), 1000)
        report = rrmse_study(cfg, seed=1)
        row = report.lookup("weighted", "pi_rs:1/2")
        assert row.delta_pct == 0.0 and row.failures == 0
        assert report.lookup("prelim", "pi_rs:1/2").delta_pct > 0

    def test_degenerate_truth(self):
        # without mixing variance only binomial noise remains
        theta = GUMBEL_THETA.replace(sigma=[1e-12, 1e-12])
        cfg = StudyConfig(GUMBEL_SPEC, theta, SizeConfig.default(), 200)
        report = rrmse_study(cfg, seed=2)
        for method in ("prelim", "weighted"):
            for label, mbar in (("1", 1000), ("2", 100)):
                pi = report.truth[f"pi_r:{label}"]
                scale = math.sqrt((1 - pi) / (pi * 19 * mbar))
                assert report.lookup(method, f"pi_r:{label}").rrmse < 2 * scale

    def test_study_deterministic(self):
        cfg = StudyConfig(GUMBEL_SPEC, GUMBEL_THETA, SizeConfig.default(), 20)
        assert rrmse_study(cfg, seed=3) == rrmse_study(cfg, seed=3)

    def test_mle_method_runs(self):
        cfg = StudyConfig(GUMBEL_SPEC.with_family("1b"), ParamVector([-1.15, -0.55], [0.11, 0.15]),
                          SizeConfig.default(), 2, ("prelim", "mle-1b"))
        report = rrmse_study(cfg, seed=4)
        assert report.lookup("mle-1b", "pi_r:1").failures == 0
