"""Exact marginal log-likelihood of a loss-count panel.

Given the latent factors of a period, loss counts are independent binomials.
The likelihood of a period is therefore an integral over the factors of a
product of binomial kernels; this module evaluates it by quadrature on the
unit interval after the substitution ``q = F(psi)``.

For the max-factor family the integral over each category factor splits at
``q_r = g_r(q_0)``: below it the global factor is the larger effect, above
it the category factor.  Per period this gives::

    I = int_0^1 prod_r [ g_r(q0) h_r(q0; mu_r) + int_{g_r(q0)}^1 h_r(q; nu_r) dq ] dq0

(``form="product"``), whose binomial expansion is the sum over all subsets
of categories (``form="powerset"``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import DomainError, UsageError
from .factor_model import (Family, ModelSpec, ParamVector, conditional_log_probs,
                           draw_latent, log_category_parts, log_integral)
from .numerics import Dist, QuadratureRule, default_rule
from .panel import Panel


@dataclass(frozen=True, eq=False)
class YearSlice:
    """Exposures ``m[r]`` and losses ``M[r]`` of one period."""

    m: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.int64).reshape(-1)
        M = np.array(self.M, dtype=np.int64).reshape(-1)
        if m.shape != M.shape:
            raise DomainError("m and M must have the same length")
        if np.any(M < 0) or np.any(M > m):
            raise DomainError("need 0 <= M <= m in every category")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "M", M)

    @classmethod
    def from_panel(cls, panel: Panel, j: int) -> "YearSlice":
        return cls(*panel.year(j))


def _require(spec, *families):
    if spec.family not in families:
        names = ", ".join(f.value for f in families)
        raise UsageError(f"operation needs family {names}, got {spec.family.value}")


def g_fn(theta: ParamVector, r: int, q):
    """Regime boundary ``g_r(q) = q ** exp((nu_r - mu_r) / sigma_r)``.

    The category factor of ``r`` dominates exactly when ``q_r > g_r(q_0)``.
    An absent factor (``nu_r = -inf``) gives ``g_r = 1`` on ``(0, 1]``: the
    global factor always wins and the inner integral vanishes.
    """
    if theta.nu is None:
        raise UsageError("g_fn applies to the max-factor family only")
    q_arr = np.asarray(q, dtype=float)
    if np.any((q_arr < 0) | (q_arr > 1)):
        raise DomainError("q must lie in [0, 1]")
    c = np.exp((theta.nu[r] - theta.mu[r]) / theta.sigma[r])
    with np.errstate(divide="ignore"):
        out = np.where(q_arr > 0, np.exp(c * np.log(q_arr)), 0.0)
    return float(out) if np.ndim(q) == 0 else out


def h_fn(theta: ParamVector, r: int, year: YearSlice, q, location: float):
    """Log binomial kernel ``M log F(x) + (m - M) log(1 - F(x))`` at
    ``x = location + sigma_r * F^{-1}(q)`` (Gumbel head)."""
    q_arr = np.asarray(q, dtype=float)
    if np.any((q_arr <= 0) | (q_arr >= 1)):
        raise DomainError("q must lie strictly inside (0, 1)")
    x = location + theta.sigma[r] * numerics.std_quantile(Dist.GUMBEL, q_arr)
    log_f, log_1mf = numerics.log_cdf_pair(Dist.GUMBEL, x)
    m, M = year.m[r], year.M[r]
    out = numerics.xlog(M, log_f) + numerics.xlog(m - M, log_1mf)
    return float(out) if np.ndim(q) == 0 else out


def _check_layout(spec, theta, k):
    theta.validate(spec)
    if k != spec.k:
        raise UsageError(f"data has {k} categories but the model has {spec.k}")


def _year_arrays(year: YearSlice):
    return year.m[:, None], year.M[:, None]


def year_term_one_factor(spec, theta, year: YearSlice, rule: QuadratureRule = None) -> float:
    """``log I_j`` for families 1a and 1b (binomial coefficients excluded)."""
    _require(spec, Family.ONE_FACTOR_PROBIT, Family.ONE_FACTOR_GUMBEL)
    _check_layout(spec, theta, year.m.size)
    rule = default_rule() if rule is None else rule
    A, B = log_category_parts(spec, theta, *_year_arrays(year), rule)
    return float(log_integral(A, B, rule)[0])


def year_term_linear_two_factor(spec, theta, year: YearSlice,
                                rule: QuadratureRule = None) -> float:
    """``log I_j`` for family 2a (binomial coefficients excluded)."""
    _require(spec, Family.LINEAR_TWO_FACTOR_PROBIT)
    _check_layout(spec, theta, year.m.size)
    rule = default_rule() if rule is None else rule
    A, B = log_category_parts(spec, theta, *_year_arrays(year), rule)
    return float(log_integral(A, B, rule)[0])


def _powerset_integral(A, B, rule):
    n, k, _ = A.shape
    terms = []
    for mask in itertools.product((False, True), repeat=k):
        pick = np.where(np.array(mask)[None, :, None], B, A)
        terms.append(numerics.log_sum_exp(pick.sum(axis=1) + rule.log_weights, axis=-1))
    return numerics.log_sum_exp(np.stack(terms, axis=-1), axis=-1)


def year_term_maxfactor(spec, theta, year: YearSlice, rule: QuadratureRule = None,
                        form: str = "product", inner: str = "cumulative") -> float:
    """``log I_j`` for family 2b (binomial coefficients excluded).

    ``form`` is ``"product"`` (cost linear in k) or ``"powerset"`` (sum over
    all 2^k subsets).  ``inner`` is passed to
    :func:`~maxfactor.factor_model.log_category_parts`.
    """
    _require(spec, Family.MAX_FACTOR_GUMBEL)
    _check_layout(spec, theta, year.m.size)
    rule = default_rule() if rule is None else rule
    A, B = log_category_parts(spec, theta, *_year_arrays(year), rule, inner=inner)
    return float(_combine(A, B, rule, form)[0])


def _combine(A, B, rule, form):
    if form == "product":
        return log_integral(A, B, rule)
    if form == "powerset":
        return _powerset_integral(A, B, rule)
    raise UsageError(f"unknown evaluation form {form!r}")


def year_log_terms(spec: ModelSpec, theta: ParamVector, panel: Panel,
                   rule: QuadratureRule = None, form: str = "product",
                   inner: str = "cumulative") -> np.ndarray:
    """``log I_j`` for every period, binomial coefficients excluded."""
    _check_layout(spec, theta, panel.k)
    rule = default_rule() if rule is None else rule
    A, B = log_category_parts(spec, theta, panel.exposures, panel.losses, rule, inner=inner)
    return _combine(A, B, rule, form)


def log_binomial_total(panel: Panel) -> float:
    """Sum of the log binomial coefficients over all cells, in panel order."""
    return float(np.sum(numerics.log_binom_coeff(panel.exposures, panel.losses)))


def log_likelihood(spec: ModelSpec, theta: ParamVector, panel: Panel,
                   rule: QuadratureRule = None, form: str = "product",
                   inner: str = "cumulative") -> float:
    """Marginal log-likelihood of ``panel`` under ``(spec, theta)``."""
    terms = year_log_terms(spec, theta, panel, rule, form, inner)
    total = log_binomial_total(panel)
    for t in terms:
        total += float(t)
    return total


@dataclass(frozen=True)
class MCLikelihood:
    """Monte Carlo estimates of ``log I_j`` per period.

    Binomial coefficients are excluded, as in :func:`year_log_terms`.
    ``std_errors`` are delta-method standard errors of ``log_terms``.
    """

    log_terms: np.ndarray
    std_errors: np.ndarray
    draws: int

    @property
    def estimates(self) -> np.ndarray:
        return np.exp(self.log_terms)


def mc_log_likelihood(spec: ModelSpec, theta: ParamVector, panel: Panel,
                      draws: int = 1_000_000, seed: int = 0,
                      chunk: int = 200_000) -> MCLikelihood:
    """Plain Monte Carlo estimate of each period's likelihood integral."""
    if draws < 1000:
        raise DomainError("need at least 1000 draws")
    _check_layout(spec, theta, panel.k)
    rng = np.random.default_rng(seed)
    m = panel.exposures.astype(float)
    M = panel.losses.astype(float)
    # Streaming sums of exp(v - shift) and its square, per period.
    logs = []
    for start in range(0, draws, chunk):
        size = min(chunk, draws - start)
        log_q, log_1mq = conditional_log_probs(spec, theta, draw_latent(spec, size, rng))
        v = (numerics.xlog(M.T[None], log_q[:, None, :])
             + numerics.xlog((m - M).T[None], log_1mq[:, None, :])).sum(axis=-1)
        logs.append(v)
    v = np.concatenate(logs, axis=0)                       # (draws, n)
    shift = v.max(axis=0)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = np.exp(v - shift)
    mean = e.mean(axis=0)
    sd = e.std(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_terms = np.log(mean) + shift
        se = sd / (np.sqrt(draws) * mean)
    return MCLikelihood(log_terms, se, int(draws))
