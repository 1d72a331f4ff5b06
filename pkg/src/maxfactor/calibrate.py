"""Maximum-likelihood fitting, standard errors and model comparison.

The optimizer works in unconstrained coordinates: ``mu_r``, ``log sigma_r``
and, for the two-factor families, ``d_r = (nu_r - mu_r) / sigma_r`` (2b) or
``log tau_r`` (2a).  Below a floor these specific coordinates mean "factor
absent" (``nu_r = -inf`` or ``tau_r = 0``).  After the search, factors at
the floor are frozen and the model is refit without them; a further factor
is dropped while doing so costs less than ``boundary_tol`` in log-likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .errors import DomainError, MaxFactorError, UsageError
from .factor_model import Family, ModelSpec, ParamVector, implied_pi_r
from .likelihood import log_likelihood
from .numerics import default_rule, graded_rule, legendre_rule
from .panel import Panel

NU_FLOOR = -25.0          # floor of (nu - mu) / sigma
LOG_TAU_FLOOR = -12.0
MIXTURE_CRITICAL_VALUE = 1.9207
PENALTY = 1e300
ROUND_ITER = 30            # simplex iterations per round, per coordinate


class FitError(MaxFactorError, ArithmeticError):
    """The optimizer failed to produce a usable fit."""


@dataclass(frozen=True)
class FitOptions:
    """Fitting controls.

    ``nodes=None`` picks the rule size from the largest exposure: the peak
    of a period's integrand narrows like ``1 / sqrt(m)``.  ``restarts`` is
    the number of jittered starts on top of the moment-matched start.
    """

    nodes: int = None
    rule: str = "graded"
    max_iter: int = 5000
    tol: float = 1e-8
    restarts: int = 3
    seed: int = 0
    boundary_tol: float = 1e-3
    reduce: bool = True
    inner: str = "cumulative"

    def rule_size(self, panel: Panel) -> int:
        return int(self.nodes) if self.nodes is not None else auto_nodes(panel)

    def make_rule(self, panel: Panel):
        n = self.rule_size(panel)
        if self.rule == "graded":
            return graded_rule(int(n))
        if self.rule == "legendre":
            return legendre_rule(int(n))
        raise UsageError(f"unknown rule kind {self.rule!r}")


def auto_nodes(panel: Panel) -> int:
    """Rule size resolving integrand peaks of width ``~ 1 / sqrt(max m)``."""
    need = 4.0 * math.sqrt(float(panel.exposures.max()))
    n = 128
    while n < need and n < 4096:
        n *= 2
    return n


@dataclass(frozen=True, eq=False)
class FitResult:
    spec: ModelSpec
    theta_hat: ParamVector
    std_errors: dict
    log_lik: float
    n_params: int
    aic: float
    bic: float
    converged: bool
    boundary_report: np.ndarray
    iterations: int
    simplex_size: float
    n_periods: int
    nodes: int
    hessian_ok: bool = True
    flags: tuple = ()
    starts: tuple = field(default=(), repr=False)

    @property
    def param_names(self):
        return list(self.std_errors)


# ---------------------------------------------------------------------------
# coordinates

class _Coords:
    """Map between optimizer vectors and parameters for a given set of
    active category factors."""

    def __init__(self, spec: ModelSpec, active):
        self.spec = spec
        self.active = np.asarray(active, dtype=bool)
        if not spec.family.two_factor:
            self.active = np.zeros(spec.k, dtype=bool)

    @property
    def size(self):
        return 2 * self.spec.k + int(self.active.sum())

    def to_theta(self, x) -> ParamVector:
        k = self.spec.k
        mu = np.asarray(x[:k], dtype=float)
        sigma = np.exp(np.asarray(x[k:2 * k], dtype=float))
        extra = np.asarray(x[2 * k:], dtype=float)
        fam = self.spec.family
        if fam is Family.MAX_FACTOR_GUMBEL:
            d = np.full(k, -np.inf)
            d[self.active] = extra
            with np.errstate(invalid="ignore"):
                nu = np.where(d < NU_FLOOR, -np.inf, mu + sigma * d)
            return ParamVector(mu, sigma, nu=nu)
        if fam is Family.LINEAR_TWO_FACTOR_PROBIT:
            lt = np.full(k, -np.inf)
            lt[self.active] = extra
            tau = np.where(lt < LOG_TAU_FLOOR, 0.0, np.exp(lt))
            return ParamVector(mu, sigma, tau=tau)
        return ParamVector(mu, sigma)

    def from_theta(self, theta: ParamVector) -> np.ndarray:
        parts = [theta.mu, np.log(theta.sigma)]
        fam = self.spec.family
        if fam is Family.MAX_FACTOR_GUMBEL:
            with np.errstate(invalid="ignore"):
                d = (theta.nu - theta.mu) / theta.sigma
            parts.append(np.maximum(d, NU_FLOOR)[self.active])
        elif fam is Family.LINEAR_TWO_FACTOR_PROBIT:
            with np.errstate(divide="ignore"):
                lt = np.log(theta.tau)
            parts.append(np.maximum(lt, LOG_TAU_FLOOR)[self.active])
        return np.concatenate(parts)

    def specific(self, x):
        """Specific coordinates of all categories, -inf where inactive."""
        out = np.full(self.spec.k, -np.inf)
        out[self.active] = np.asarray(x[2 * self.spec.k:])
        return out

    def floor(self):
        return NU_FLOOR if self.spec.family is Family.MAX_FACTOR_GUMBEL else LOG_TAU_FLOOR


def natural_names(spec: ModelSpec, active) -> list:
    """Names of free natural parameters, in the order used for the Hessian."""
    names = [f"mu.{label}" for label in spec.labels]
    names += [f"sigma.{label}" for label in spec.labels]
    p = spec.family.specific_param
    if p is not None:
        names += [f"{p}.{label}" for label, a in zip(spec.labels, active) if a]
    return names


def _natural_vector(spec, theta, active):
    parts = [theta.mu, theta.sigma]
    if spec.family is Family.MAX_FACTOR_GUMBEL:
        parts.append(theta.nu[active])
    elif spec.family is Family.LINEAR_TWO_FACTOR_PROBIT:
        parts.append(theta.tau[active])
    return np.concatenate(parts)


def _theta_from_natural(spec, template, active, v):
    k = spec.k
    mu, sigma, extra = v[:k], v[k:2 * k], v[2 * k:]
    if spec.family is Family.MAX_FACTOR_GUMBEL:
        nu = template.nu.copy()
        nu[active] = extra
        return ParamVector(mu, sigma, nu=nu)
    if spec.family is Family.LINEAR_TWO_FACTOR_PROBIT:
        tau = template.tau.copy()
        tau[active] = extra
        return ParamVector(mu, sigma, tau=tau)
    return ParamVector(mu, sigma)


# ---------------------------------------------------------------------------
# standard errors

def numerical_hessian(f, x, steps=None):
    """Central-difference Hessian of scalar ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    p = x.size
    h = 1e-4 * np.maximum(np.abs(x), 0.1) if steps is None else np.asarray(steps, float)
    H = np.empty((p, p))
    f0 = f(x)
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej)
                                 + f(x - ei - ej)) / (4.0 * h[i] * h[j])
    return H


def standard_errors(log_lik, x, steps=None):
    """Standard errors from the observed information of ``log_lik`` at ``x``.

    Returns ``(se, ok)``; ``se`` is all-NaN and ``ok`` False when the
    negative Hessian is not positive definite.
    """
    H = numerical_hessian(log_lik, x, steps)
    info = -0.5 * (H + H.T)
    try:
        np.linalg.cholesky(info)
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return np.full(len(x), np.nan), False
    diag = np.diag(cov)
    if not np.all(np.isfinite(diag)) or np.any(diag <= 0):
        return np.full(len(x), np.nan), False
    return np.sqrt(diag), True


def std_errors_from_hessian(spec, theta_hat, panel, rule=None, active=None):
    """Per-parameter standard errors at ``theta_hat``.

    Parameters at the boundary (absent factors) get no entry in the
    returned mapping's finite values: they are reported as NaN.
    """
    rule = default_rule() if rule is None else rule
    if active is None:
        active = ~theta_hat.absent if spec.family.two_factor else np.zeros(spec.k, bool)
    names = natural_names(spec, active)
    v0 = _natural_vector(spec, theta_hat, active)

    def ll(v):
        try:
            th = _theta_from_natural(spec, theta_hat, active, v).validate(spec)
        except DomainError:
            return -PENALTY
        return log_likelihood(spec, th, panel, rule)

    se, ok = standard_errors(ll, v0)
    out = dict(zip(names, se.tolist()))
    p = spec.family.specific_param
    if p is not None:
        for label, a in zip(spec.labels, active):
            if not a:
                out[f"{p}.{label}"] = float("nan")
    return out, ok


# ---------------------------------------------------------------------------
# model comparison

def information_criteria(log_lik: float, n_params: int, n_periods: int):
    """``(AIC, BIC)`` with ``BIC = p log(n) - 2 log L``, ``n`` = periods."""
    if n_params < 1 or n_periods < 1:
        raise DomainError("need n_params >= 1 and n_periods >= 1")
    aic = 2.0 * n_params - 2.0 * log_lik
    bic = n_params * math.log(n_periods) - 2.0 * log_lik
    return aic, bic


@dataclass(frozen=True)
class LRTResult:
    statistic: float
    p_value: float
    reject_at_05: bool
    critical_value: float = MIXTURE_CRITICAL_VALUE


def boundary_lrt(log_lik_sub: float, log_lik_full: float, tol: float = 1e-8,
                 critical_value: float = MIXTURE_CRITICAL_VALUE) -> LRTResult:
    """Likelihood-ratio test of one parameter on the boundary of its space.

    The null law is the equal mixture of a point mass at 0 and a chi-square
    with one degree of freedom, so ``p = P(chi2_1 > stat) / 2``.
    """
    if log_lik_full < log_lik_sub - tol:
        raise UsageError("full model fits worse than the submodel: models not nested")
    stat = max(2.0 * (log_lik_full - log_lik_sub), 0.0)
    p = 0.5 * float(stats.chi2.sf(stat, 1)) if stat > 0 else 0.5
    return LRTResult(stat, p, stat > critical_value, critical_value)


# ---------------------------------------------------------------------------
# fitting

def _start_pi(panel):
    from .nonparametric import weighted_estimates

    raw = panel.losses.sum(axis=1) / panel.exposures.sum(axis=1)
    try:
        est = weighted_estimates(panel).pi_r
    except MaxFactorError:
        est = raw
    est = np.where(np.isfinite(est) & (est > 0), est, raw)
    return np.clip(est, 1e-6, 1 - 1e-6)


def _match_mu(family, target, sigma, rule):
    """``mu`` whose implied marginal probability equals ``target``."""
    spec1 = ModelSpec(family, 1)

    def theta(mu):
        if family is Family.MAX_FACTOR_GUMBEL:
            return ParamVector([mu], [sigma], nu=[mu - 0.5])
        if family is Family.LINEAR_TWO_FACTOR_PROBIT:
            return ParamVector([mu], [sigma], tau=[0.1])
        return ParamVector([mu], [sigma])

    f = lambda mu: implied_pi_r(spec1, theta(mu), 0, rule) - target
    lo, hi = -10.0, 10.0
    if f(lo) > 0 or f(hi) < 0:
        return lo if f(lo) > 0 else hi
    return optimize.brentq(f, lo, hi, xtol=1e-10)


def starting_theta(spec: ModelSpec, panel: Panel) -> ParamVector:
    """Moment-matched start: ``sigma = 0.1`` and ``mu`` matching the
    weighted nonparametric ``pi_r``; ``nu = mu - 0.5`` or ``tau = 0.1``."""
    pis = _start_pi(panel)
    rule = graded_rule(64)
    sigma = np.full(spec.k, 0.1)
    mu = np.array([_match_mu(spec.family, p, 0.1, rule) for p in pis])
    if spec.family is Family.MAX_FACTOR_GUMBEL:
        return ParamVector(mu, sigma, nu=mu - 0.5)
    if spec.family is Family.LINEAR_TWO_FACTOR_PROBIT:
        return ParamVector(mu, sigma, tau=np.full(spec.k, 0.1))
    return ParamVector(mu, sigma)


def _objective(coords, panel, rule, options):
    def objective(x):
        try:
            theta = coords.to_theta(x)
            with np.errstate(all="ignore"):
                value = -log_likelihood(coords.spec, theta, panel, rule, inner=options.inner)
        except MaxFactorError:
            return PENALTY
        return value if np.isfinite(value) else PENALTY

    return objective


def _minimize(coords, panel, rule, x0, options, max_iter):
    objective = _objective(coords, panel, rule, options)
    res = optimize.minimize(objective, x0, method="Nelder-Mead",
                            options=dict(maxiter=max_iter, maxfev=4 * max_iter,
                                         xatol=options.tol, fatol=options.tol, adaptive=True))
    simplex = res.final_simplex[0]
    size = float(np.max(np.abs(simplex - simplex[0]))) if simplex.shape[0] > 1 else 0.0
    return res.x, -float(res.fun), bool(res.success), int(res.nit), size


def _without(coords, x, r):
    """Coordinates and vector with category factor ``r`` removed."""
    theta = coords.to_theta(x)
    trial = _Coords(coords.spec, coords.active & (np.arange(coords.spec.k) != r))
    return trial, trial.from_theta(theta)


def _negligible_factor(coords, panel, rule, x, ll, options):
    """Active factor whose removal costs least, if within ``boundary_tol``."""
    best = None
    for r in np.flatnonzero(coords.active):
        trial, xt = _without(coords, x, r)
        value = -_objective(trial, panel, rule, options)(xt)
        if value >= ll - options.boundary_tol and (best is None or value > best[2]):
            best = (trial, xt, value)
    return best


def _search_from(coords, panel, rule, x0, options, reduce):
    """Simplex search in rounds.  Between rounds a category factor whose
    removal is negligible is frozen at the boundary, which spares the
    simplex a slow crawl along a flat direction."""
    x, budget, total = np.asarray(x0, float), options.max_iter, 0
    capped = reduce
    while True:
        per_round = min(budget, ROUND_ITER * coords.size) if capped else budget
        x, ll, ok, nit, size = _minimize(coords, panel, rule, x, options, per_round)
        total += nit
        budget -= nit
        frozen = False
        while reduce:
            drop = _negligible_factor(coords, panel, rule, x, ll, options)
            if drop is None:
                break
            (coords, x, ll), frozen, ok = drop, True, False
        if budget > 0 and (frozen or (capped and not ok)):
            # once nothing is left to freeze, finish with one uncapped search
            capped = frozen
            continue
        return coords, x, ll, ok, total, size


def fit_mle(spec: ModelSpec, panel: Panel, options: FitOptions = None,
            start: ParamVector = None) -> FitResult:
    """Maximum-likelihood fit of ``spec`` to ``panel``."""
    options = FitOptions() if options is None else options
    if panel.k != spec.k:
        raise UsageError(f"panel has {panel.k} categories but the model has {spec.k}")
    rule = options.make_rule(panel)
    rng = np.random.default_rng(options.seed)
    theta0 = starting_theta(spec, panel) if start is None else start.validate(spec)
    active = np.ones(spec.k, bool) if spec.family.two_factor else np.zeros(spec.k, bool)
    if start is not None and spec.family.two_factor:
        active = ~theta0.absent
    coords0 = _Coords(spec, active)
    x0 = coords0.from_theta(theta0)
    starts = [x0] + [x0 + rng.normal(0.0, 0.2, x0.size) for _ in range(options.restarts)]
    reduce = spec.family.two_factor and options.reduce
    best, total_iter = None, 0
    for xs in starts:
        out = _search_from(coords0, panel, rule, xs, options, reduce)
        total_iter += out[4]
        # strict improvement keeps the lowest start index on ties
        if best is None or out[2] > best[2]:
            best = out
    coords, x, ll, ok, _, size = best
    flags = []

    if reduce:
        # a factor may still be removable once the others re-adjust
        while coords.active.any():
            r = int(np.argmin(np.where(coords.active, coords.specific(x), np.inf)))
            trial, xt = _without(coords, x, r)
            out = _search_from(trial, panel, rule, xt, options, reduce)
            total_iter += out[4]
            if out[2] >= ll - options.boundary_tol:
                coords, x, ll, ok, _, size = out
            else:
                break

    theta_hat = coords.to_theta(x).validate(spec)
    active = coords.active
    if not ok:
        flags.append("optimizer-not-converged")
    degenerate = [spec.labels[r] for r in range(spec.k) if not panel.losses[r].any()]
    if degenerate:
        flags.append("no-losses:" + ",".join(degenerate))
    n_params = 2 * spec.k + int(active.sum())
    aic, bic = information_criteria(ll, n_params, panel.n)
    try:
        se, hess_ok = std_errors_from_hessian(spec, theta_hat, panel, rule, active)
    except MaxFactorError:
        se, hess_ok = {n: float("nan") for n in natural_names(spec, active)}, False
    if not hess_ok:
        flags.append("hessian-not-positive-definite")
    boundary = (~active) if spec.family.two_factor else np.zeros(spec.k, bool)
    return FitResult(spec=spec, theta_hat=theta_hat, std_errors=se, log_lik=ll,
                     n_params=n_params, aic=aic, bic=bic, converged=ok,
                     boundary_report=boundary, iterations=total_iter, simplex_size=size,
                     n_periods=panel.n, nodes=options.rule_size(panel), hessian_ok=hess_ok,
                     flags=tuple(flags))
