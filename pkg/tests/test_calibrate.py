import math

import numpy as np
import pytest

from conftest import SP_SPEC, SP_THETA
from maxfactor.calibrate import (MIXTURE_CRITICAL_VALUE, FitOptions, auto_nodes, boundary_lrt,
                                 fit_mle, information_criteria, standard_errors, starting_theta)
from maxfactor.errors import DomainError, UsageError
from maxfactor.factor_model import ModelSpec, ParamVector, implied_pi_r
from maxfactor.likelihood import log_likelihood
from maxfactor.montecarlo import gen_panel
from maxfactor.panel import Panel

ONE_B = ModelSpec("1b", 1, ("a",))
ONE_B_THETA = ParamVector([-1.18], [0.124])
FAST = FitOptions(nodes=64, restarts=0)


def one_b_panel(seed, m=500, n=19):
    return gen_panel(ONE_B, ONE_B_THETA, np.full((1, n), m), seed)


class TestCriteria:
    @pytest.mark.parametrize("neg_ll, p, aic", [(154.707, 6, 321.414), (153.138, 7, 320.276)])
    def test_aic(self, neg_ll, p, aic):
        assert information_criteria(-neg_ll, p, 19)[0] == pytest.approx(aic, abs=1e-9)

    def test_trivial(self):
        assert information_criteria(0.0, 1, 1) == (2.0, 0.0)

    def test_bic_formula(self):
        assert information_criteria(-10.0, 3, 19)[1] == pytest.approx(3 * math.log(19) + 20)

    def test_domain(self):
        with pytest.raises(DomainError):
            information_criteria(0.0, 0, 5)


class TestLRT:
    def test_rating_class_comparison(self):
        res = boundary_lrt(-154.517, -153.138)
        assert res.statistic == pytest.approx(2.758, abs=1e-9)
        assert res.reject_at_05

    def test_critical_value_edge(self):
        assert MIXTURE_CRITICAL_VALUE == pytest.approx(1.92, abs=1e-3)
        assert not boundary_lrt(0.0, 0.96).reject_at_05
        assert boundary_lrt(0.0, 0.97).reject_at_05

    def test_equal_fits(self):
        res = boundary_lrt(-12.0, -12.0)
        assert res.statistic == 0.0 and res.p_value == 0.5 and not res.reject_at_05

    def test_p_value_is_half_chi_square(self):
        from scipy import stats

        assert boundary_lrt(0.0, 1.5).p_value == pytest.approx(0.5 * stats.chi2.sf(3.0, 1))

    def test_not_nested(self):
        with pytest.raises(UsageError):
            boundary_lrt(-10.0, -11.0)


class TestStandardErrors:
    def test_quadratic(self):
        s = np.array([0.5, 2.0, 0.03])
        se, ok = standard_errors(lambda x: -0.5 * np.sum((x / s) ** 2), np.zeros(3))
        assert ok and np.allclose(se, s, atol=1e-4)

    def test_not_positive_definite(self):
        se, ok = standard_errors(lambda x: 0.5 * np.sum(x ** 2), np.zeros(2))
        assert not ok and np.all(np.isnan(se))


class TestFit:
    def test_auto_nodes(self):
        small = Panel(("a",), ("1",), [[500]], [[5]])
        large = Panel(("a",), ("1",), [[50000]], [[5]])
        assert auto_nodes(small) == 128 and auto_nodes(large) == 1024

    def test_starting_values_match_marginals(self):
        panel = one_b_panel(1)
        theta = starting_theta(ONE_B, panel)
        assert theta.sigma[0] == 0.1
        p = implied_pi_r(ONE_B, theta, 0)
        assert 0.01 < p < 0.2

    def test_information_consistency(self):
        fit = fit_mle(ONE_B, one_b_panel(2), FAST)
        aic, bic = information_criteria(fit.log_lik, fit.n_params, fit.n_periods)
        assert (fit.aic, fit.bic) == (aic, bic)
        assert fit.converged and fit.hessian_ok

    def test_optimum_is_local_maximum(self):
        panel = one_b_panel(3)
        fit = fit_mle(ONE_B, panel, FAST)
        from maxfactor.numerics import graded_rule

        rule = graded_rule(64)
        best = log_likelihood(ONE_B, fit.theta_hat, panel, rule)
        assert best == pytest.approx(fit.log_lik, abs=1e-9)
        for dmu, ds in ((0.01, 0), (-0.01, 0), (0, 0.01), (0, -0.01)):
            th = ParamVector(fit.theta_hat.mu + dmu, fit.theta_hat.sigma + ds)
            assert log_likelihood(ONE_B, th, panel, rule) < best

    def test_max_factor_on_one_factor_data(self):
        panel = one_b_panel(4)
        f1 = fit_mle(ONE_B, panel, FAST)
        f2 = fit_mle(ONE_B.with_family("2b"), panel, FAST)
        assert f2.theta_hat.nu[0] == -np.inf
        assert f2.boundary_report.tolist() == [True]
        assert math.isnan(f2.std_errors["nu.a"])
        assert abs(f2.log_lik - f1.log_lik) < 0.05
        assert f2.n_params == 2

    def test_nesting_inequality(self):
        panel = gen_panel(SP_SPEC, SP_THETA, np.tile([[900], [1500], [120]], (1, 19)), 5)
        opts = FitOptions(nodes=64, restarts=1)
        f1 = fit_mle(SP_SPEC.with_family("1b"), panel, opts)
        f2 = fit_mle(SP_SPEC, panel, opts)
        assert f2.log_lik >= f1.log_lik - 1e-6

    def test_relabeling(self):
        spec = ModelSpec("1b", 2, ("x", "y"))
        theta = ParamVector([-1.6, -0.6], [0.12, 0.17])
        panel = gen_panel(spec, theta, np.full((2, 19), 700), 6)
        a = fit_mle(spec, panel, FAST)
        swapped = ModelSpec("1b", 2, ("y", "x"))
        b = fit_mle(swapped, panel.select(("y", "x")), FAST)
        assert np.allclose(a.theta_hat.mu, b.theta_hat.mu[::-1], atol=1e-4)
        assert np.allclose(a.theta_hat.sigma, b.theta_hat.sigma[::-1], atol=1e-4)
        assert a.log_lik == pytest.approx(b.log_lik, abs=1e-6)

    def test_non_convergence_is_reported(self):
        fit = fit_mle(ONE_B, one_b_panel(7), FitOptions(nodes=64, restarts=0, max_iter=3))
        assert not fit.converged
        assert "optimizer-not-converged" in fit.flags

    def test_degenerate_category_flagged(self):
        spec = ModelSpec("1b", 2, ("x", "y"))
        panel = Panel(("x", "y"), tuple("123"), [[100] * 3, [200] * 3], [[0, 0, 0], [9, 20, 4]])
        fit = fit_mle(spec, panel, FAST)
        assert "no-losses:x" in fit.flags

    def test_layout_mismatch(self):
        with pytest.raises(UsageError):
            fit_mle(SP_SPEC, one_b_panel(1), FAST)

    def test_linear_two_factor_reduces(self):
        spec = ModelSpec("2a", 1, ("a",))
        truth = ParamVector([-1.6], [0.2])
        panel = gen_panel(spec.with_family("1a"), truth, np.full((1, 19), 500), 8)
        fit = fit_mle(spec, panel, FAST)
        one = fit_mle(spec.with_family("1a"), panel, FAST)
        assert fit.log_lik >= one.log_lik - 1e-6
        if fit.theta_hat.tau[0] == 0:
            assert fit.n_params == 2 and math.isnan(fit.std_errors["tau.a"])


@pytest.mark.slow
def test_standard_errors_shrink_with_periods():
    ratios = []
    for seed in range(6):
        short = fit_mle(ONE_B, one_b_panel(100 + seed, m=2000, n=50), FAST)
        long = fit_mle(ONE_B, one_b_panel(200 + seed, m=2000, n=100), FAST)
        ratios.append([long.std_errors[k] / short.std_errors[k] for k in ("mu.a", "sigma.a")])
    assert np.mean(ratios) == pytest.approx(1 / math.sqrt(2), rel=0.15)


@pytest.mark.slow
def test_boundary_test_size():
    rejections = 0
    for seed in range(100):
        panel = one_b_panel(1000 + seed)
        f1 = fit_mle(ONE_B, panel, FAST)
        f2 = fit_mle(ONE_B.with_family("2b"), panel, FAST)
        rejections += boundary_lrt(f1.log_lik, max(f2.log_lik, f1.log_lik)).reject_at_05
    assert rejections <= 10
