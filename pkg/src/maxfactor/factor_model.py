"""Factor-model families, conditional loss probabilities and implied moments.

Four families are supported:

=====  =====================================================  ==============
code   conditional loss probability ``Q_r``                   latent factors
=====  =====================================================  ==============
1a     ``Phi(mu_r + sigma_r * psi)``                          1 Normal
2a     ``Phi(mu_r + tau_r * psi_r + sigma_r * psi_0)``        k+1 Normal
1b     ``F(mu_r + sigma_r * psi)``                            1 Gumbel
2b     ``F(max(nu_r + sigma_r * psi_r, mu_r + sigma_r * psi_0))``  k+1 Gumbel
=====  =====================================================  ==============

``F`` is the standard Gumbel distribution function.  Latent vectors are
laid out as ``(psi_0, psi_1, ..., psi_k)`` for the two-factor families.

All integrals over the latent factors are evaluated after the substitution
``q = F(psi)`` on the unit interval.  For the two-factor families the
integrand is first integrated over each category factor with the global
factor held fixed; categories are conditionally independent, so the
remaining one-dimensional integral is over a product of per-category
terms.  :func:`log_category_parts` returns those per-category terms and is
shared with the likelihood module.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import DomainError, UsageError
from .numerics import Dist, QuadratureRule, default_rule, legendre_rule

SEGMENT_NODES = 8
# inner intervals shorter than this are treated as empty
VANISHING_MEASURE = 1e-14


class Family(str, enum.Enum):
    ONE_FACTOR_PROBIT = "1a"
    LINEAR_TWO_FACTOR_PROBIT = "2a"
    ONE_FACTOR_GUMBEL = "1b"
    MAX_FACTOR_GUMBEL = "2b"

    @property
    def dist(self) -> Dist:
        if self in (Family.ONE_FACTOR_PROBIT, Family.LINEAR_TWO_FACTOR_PROBIT):
            return Dist.NORMAL
        return Dist.GUMBEL

    @property
    def two_factor(self) -> bool:
        return self in (Family.LINEAR_TWO_FACTOR_PROBIT, Family.MAX_FACTOR_GUMBEL)

    @property
    def specific_param(self):
        """Name of the category-specific parameter, or None."""
        return {Family.LINEAR_TWO_FACTOR_PROBIT: "tau",
                Family.MAX_FACTOR_GUMBEL: "nu"}.get(self)


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    k: int
    labels: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if int(self.k) < 1:
            raise DomainError("a model needs at least one category")
        object.__setattr__(self, "k", int(self.k))
        labels = self.labels
        if labels is None:
            labels = tuple(str(i + 1) for i in range(self.k))
        labels = tuple(str(x) for x in labels)
        if len(labels) != self.k or len(set(labels)) != self.k:
            raise DomainError(f"need {self.k} unique category labels, got {labels}")
        object.__setattr__(self, "labels", labels)

    @property
    def latent_dim(self) -> int:
        return self.k + 1 if self.family.two_factor else 1

    def with_family(self, family) -> "ModelSpec":
        return ModelSpec(Family(family), self.k, self.labels)


def _frozen_array(x, k, name):
    if x is None:
        return None
    a = np.array(x, dtype=float).reshape(-1)
    if a.size == 1 and k > 1:
        a = np.repeat(a, k)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Per-category parameters.

    ``tau`` is used by family 2a only and ``nu`` by family 2b only.
    ``tau[r] == 0`` and ``nu[r] == -inf`` mark an absent category factor.
    """

    mu: np.ndarray
    sigma: np.ndarray
    tau: np.ndarray = None
    nu: np.ndarray = None

    def __post_init__(self):
        k = np.size(self.mu)
        for name in ("mu", "sigma", "tau", "nu"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), k, name))

    @property
    def k(self) -> int:
        return self.mu.size

    def validate(self, spec: ModelSpec) -> "ParamVector":
        fam = spec.family
        if self.mu.size != spec.k or self.sigma.size != spec.k:
            raise UsageError(f"expected {spec.k} values of mu and sigma")
        if not np.all(np.isfinite(self.mu)):
            raise DomainError("mu must be finite")
        if not np.all((self.sigma > 0) & np.isfinite(self.sigma)):
            raise DomainError("sigma must be positive and finite")
        if fam is Family.LINEAR_TWO_FACTOR_PROBIT:
            if self.tau is None or self.tau.size != spec.k:
                raise UsageError(f"family 2a needs {spec.k} values of tau")
            if not np.all((self.tau >= 0) & np.isfinite(self.tau)):
                raise DomainError("tau must be finite and nonnegative")
        elif self.tau is not None:
            raise UsageError(f"family {fam.value} has no tau parameters")
        if fam is Family.MAX_FACTOR_GUMBEL:
            if self.nu is None or self.nu.size != spec.k:
                raise UsageError(f"family 2b needs {spec.k} values of nu")
            if np.any(np.isnan(self.nu)) or np.any(self.nu == np.inf):
                raise DomainError("nu must lie in [-inf, +inf)")
        elif self.nu is not None:
            raise UsageError(f"family {fam.value} has no nu parameters")
        return self

    @property
    def absent(self) -> np.ndarray:
        """Boolean mask of categories whose specific factor is absent."""
        if self.nu is not None:
            return self.nu == -np.inf
        if self.tau is not None:
            return self.tau == 0
        return np.ones(self.k, dtype=bool)

    def replace(self, **changes) -> "ParamVector":
        values = {n: getattr(self, n) for n in ("mu", "sigma", "tau", "nu")}
        values.update(changes)
        return ParamVector(**values)

    def permuted(self, order) -> "ParamVector":
        order = list(order)
        pick = lambda a: None if a is None else a[order]
        return ParamVector(self.mu[order], self.sigma[order], pick(self.tau), pick(self.nu))

    def to_dict(self, spec: ModelSpec) -> dict:
        out = {}
        for name in ("mu", "nu", "tau", "sigma"):
            values = getattr(self, name)
            if values is None:
                continue
            for label, v in zip(spec.labels, values):
                out[f"{name}.{label}"] = float(v)
        return out

    @classmethod
    def from_dict(cls, spec: ModelSpec, values: dict) -> "ParamVector":
        def pick(name, required):
            keys = [f"{name}.{label}" for label in spec.labels]
            if not required and not any(key in values for key in keys):
                return None
            missing = [key for key in keys if key not in values]
            if missing:
                raise UsageError(f"missing parameter(s): {', '.join(missing)}")
            return [float(values[key]) for key in keys]

        fam = spec.family
        theta = cls(mu=pick("mu", True), sigma=pick("sigma", True),
                    tau=pick("tau", fam is Family.LINEAR_TWO_FACTOR_PROBIT),
                    nu=pick("nu", fam is Family.MAX_FACTOR_GUMBEL))
        return theta.validate(spec)

    def __repr__(self):
        parts = [f"mu={self.mu.tolist()}", f"sigma={self.sigma.tolist()}"]
        if self.tau is not None:
            parts.append(f"tau={self.tau.tolist()}")
        if self.nu is not None:
            parts.append(f"nu={self.nu.tolist()}")
        return f"ParamVector({', '.join(parts)})"


# ---------------------------------------------------------------------------
# conditional loss probabilities

def _check_index(spec, r):
    if not 0 <= int(r) < spec.k:
        raise DomainError(f"category index {r} out of range for k={spec.k}")
    return int(r)


def latent_arguments(spec: ModelSpec, theta: ParamVector, psi) -> np.ndarray:
    """Arguments of the head distribution, shape ``psi.shape[:-1] + (k,)``.

    ``psi`` has trailing dimension equal to ``spec.latent_dim``.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.shape[-1:] != (spec.latent_dim,):
        raise DomainError(
            f"latent vector must have length {spec.latent_dim}, got {psi.shape[-1:]}")
    fam = spec.family
    glob = psi[..., :1]
    if not fam.two_factor:
        return theta.mu + theta.sigma * glob
    own = psi[..., 1:]
    if fam is Family.LINEAR_TWO_FACTOR_PROBIT:
        return theta.mu + theta.tau * own + theta.sigma * glob
    with np.errstate(invalid="ignore"):
        specific = np.where(np.isneginf(theta.nu), -np.inf, theta.nu + theta.sigma * own)
    return np.maximum(specific, theta.mu + theta.sigma * glob)


def conditional_loss_prob(spec: ModelSpec, theta: ParamVector, r: int, psi) -> float:
    """Conditional loss probability of category ``r`` given the latent vector."""
    r = _check_index(spec, r)
    psi = np.asarray(psi, dtype=float).reshape(-1)
    x = latent_arguments(spec, theta, psi)[r]
    if spec.family.dist is Dist.GUMBEL:
        return float(np.exp(-np.exp(-x)))
    return float(numerics.special.ndtr(x))


def conditional_log_probs(spec, theta, psi):
    """``(log Q, log(1 - Q))`` for every category, vectorized over ``psi``."""
    return numerics.log_cdf_pair(spec.family.dist, latent_arguments(spec, theta, psi))


def draw_latent(spec: ModelSpec, size, rng) -> np.ndarray:
    """Independent latent vectors, shape ``(size, latent_dim)``."""
    shape = (size, spec.latent_dim)
    if spec.family.dist is Dist.GUMBEL:
        return rng.gumbel(size=shape)
    return rng.standard_normal(shape)


def effective_gumbel_location(theta: ParamVector, r: int, spec: ModelSpec = None) -> float:
    """Location of the Gumbel law of ``max(nu_r + s Psi_r, mu_r + s Psi_0)``.

    The maximum of two independent Gumbel variables with common scale
    ``s`` is Gumbel with scale ``s`` and location
    ``s * log(exp(nu_r / s) + exp(mu_r / s))``.
    """
    if theta.nu is None or (spec is not None and spec.family is not Family.MAX_FACTOR_GUMBEL):
        raise UsageError("effective_gumbel_location applies to the max-factor family only")
    s = float(theta.sigma[r])
    if not s > 0:
        raise DomainError("sigma must be positive")
    return s * float(np.logaddexp(theta.nu[r] / s, theta.mu[r] / s))


# ---------------------------------------------------------------------------
# integration engine

def _binomial_log_kernel(log_q, log_1mq, m_r, M_r):
    """``M log Q + (m - M) log(1 - Q)`` broadcast to ``(n,) + log_q.shape``."""
    extra = (1,) * np.ndim(log_q)
    M_b = np.asarray(M_r, dtype=float).reshape((-1,) + extra)
    F_b = np.asarray(m_r, dtype=float).reshape((-1,) + extra) - M_b
    return numerics.xlog(M_b, log_q) + numerics.xlog(F_b, log_1mq)


def _gumbel_head(loc, scale, log_l):
    """log F and log(1-F) at ``loc - scale * log(L)`` where ``L = -log q``."""
    with np.errstate(over="ignore", invalid="ignore"):
        t = np.exp(scale * log_l - loc)
        return -t, np.log(-np.expm1(-t))


def _log_abs(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


@dataclass(frozen=True)
class _Outer:
    rule: QuadratureRule
    latent: np.ndarray
    log_l: np.ndarray = field(default=None)


def _outer(dist: Dist, rule: QuadratureRule) -> _Outer:
    latent = numerics.quantile_from_pair(dist, rule.nodes, rule.complements)
    log_l = None
    if dist is Dist.GUMBEL:
        log_l = np.log(numerics.gumbel_log_exponent(rule.nodes, rule.complements))
    return _Outer(rule, latent, log_l)


def _tail_nodes(lower, lower_c, rule):
    """Nodes (q, 1-q) and log weights of ``rule`` mapped to ``(lower, 1)``.

    ``lower`` has shape (N0,), the result has shape (N0, len(rule)).
    """
    q = lower[:, None] + lower_c[:, None] * rule.nodes[None, :]
    qc = lower_c[:, None] * rule.complements[None, :]
    logw = _log_abs(lower_c)[:, None] + rule.log_weights[None, :]
    return q, qc, logw


def _maxfactor_inner(theta, r, log_c, outer, m_r, M_r, inner_rule, inner):
    """``log int_{g(q0)}^1 h(q; nu_r) dq`` at every outer node, shape (n, N0)."""
    s = float(theta.sigma[r])
    nu = float(theta.nu[r])
    rule0 = outer.rule
    c_l0 = np.exp(log_c + outer.log_l)        # -log g(q0)
    g = np.exp(-c_l0)
    gc = -np.expm1(-c_l0)                      # 1 - g(q0)

    def kernel(q, qc):
        log_l = np.log(numerics.gumbel_log_exponent(q, qc))
        lq, l1q = _gumbel_head(nu, s, log_l)
        return _binomial_log_kernel(lq, l1q, m_r, M_r)

    if inner == "affine":
        q, qc, logw = _tail_nodes(g, gc, inner_rule)
        vals = kernel(q, qc) + logw
        return np.where(gc < VANISHING_MEASURE, -np.inf, numerics.log_sum_exp(vals, axis=-1))
    if inner != "cumulative":
        raise UsageError(f"unknown inner integration mode {inner!r}")

    # Partition (g_0, 1) at the breakpoints g_0 < g_1 < ... < g_{N0-1} < 1:
    # each inner integral is a tail sum of the segment integrals.
    seg_rule = legendre_rule(SEGMENT_NODES)
    lo, hi, hi_c = g[:-1], g[1:], gc[1:]
    width = np.where(hi <= 0.5, hi - lo, gc[:-1] - hi_c)
    width = np.maximum(width, 0.0)
    q = lo[:, None] + width[:, None] * seg_rule.nodes[None, :]
    qc = hi_c[:, None] + width[:, None] * seg_rule.complements[None, :]
    logw = _log_abs(width)[:, None] + seg_rule.log_weights[None, :]
    seg = numerics.log_sum_exp(kernel(q, qc) + logw, axis=-1)          # (n, N0-1)
    tq, tqc, tlogw = _tail_nodes(g[-1:], gc[-1:], inner_rule)
    tail = numerics.log_sum_exp(kernel(tq, tqc) + tlogw, axis=-1)        # (n, 1)
    pieces = np.concatenate([seg, tail], axis=-1)
    with np.errstate(invalid="ignore"):
        acc = np.logaddexp.accumulate(pieces[:, ::-1], axis=-1)[:, ::-1]
    return np.where(gc < VANISHING_MEASURE, -np.inf, acc)


def log_category_parts(spec: ModelSpec, theta: ParamVector, m, M,
                       rule: QuadratureRule, inner_rule: QuadratureRule = None,
                       inner: str = "cumulative"):
    """Per-category conditional terms at the outer (global-factor) nodes.

    ``m`` and ``M`` are (k, n) exposure and loss counts.  Returns ``(A, B)``
    of shape (n, k, N0), both in the log domain, such that the per-period
    integral is ``sum_i w_i prod_r (exp(A) + exp(B))[j, r, i]``.

    * one-factor families: ``A`` is the binomial kernel at the node and
      ``B = -inf``;
    * family 2a: ``A`` integrates the kernel over the category factor and
      ``B = -inf``;
    * family 2b: ``A = log g_r(q0) + log h_r(q0; mu_r)`` is the global
      regime and ``B = log int_{g_r(q0)}^1 h_r(q; nu_r) dq`` the specific
      regime.

    ``inner`` selects how the 2b inner integrals are computed: ``"affine"``
    maps ``inner_rule`` onto each interval ``(g_r(q0), 1)``; ``"cumulative"``
    (the default) splits ``(g_r(q_{0,1}), 1)`` at the breakpoints
    ``g_r(q0)`` and accumulates segment integrals, which is cheaper and
    resolves sharply peaked kernels better.
    """
    m = np.asarray(m)
    M = np.asarray(M)
    if m.ndim == 1:
        m, M = m[:, None], M[:, None]
    k, n = m.shape
    if k != spec.k:
        raise UsageError(f"data has {k} categories but the model has {spec.k}")
    inner_rule = rule if inner_rule is None else inner_rule
    fam = spec.family
    outer = _outer(fam.dist, rule)
    N0 = len(rule)
    A = np.empty((n, k, N0))
    B = np.full((n, k, N0), -np.inf)
    for r in range(k):
        mu, s = float(theta.mu[r]), float(theta.sigma[r])
        if fam.dist is Dist.GUMBEL:
            lq, l1q = _gumbel_head(mu, s, outer.log_l)
        if fam is Family.ONE_FACTOR_GUMBEL:
            A[:, r] = _binomial_log_kernel(lq, l1q, m[r], M[r])
        elif fam is Family.ONE_FACTOR_PROBIT:
            lq, l1q = numerics.log_cdf_pair(Dist.NORMAL, mu + s * outer.latent)
            A[:, r] = _binomial_log_kernel(lq, l1q, m[r], M[r])
        elif fam is Family.LINEAR_TWO_FACTOR_PROBIT:
            tau = float(theta.tau[r])
            base = mu + s * outer.latent
            if tau == 0.0:
                lq, l1q = numerics.log_cdf_pair(Dist.NORMAL, base)
                A[:, r] = _binomial_log_kernel(lq, l1q, m[r], M[r])
            else:
                z = numerics.quantile_from_pair(Dist.NORMAL, inner_rule.nodes,
                                                inner_rule.complements)
                lq, l1q = numerics.log_cdf_pair(Dist.NORMAL, base[:, None] + tau * z[None, :])
                vals = _binomial_log_kernel(lq, l1q, m[r], M[r]) + inner_rule.log_weights
                A[:, r] = numerics.log_sum_exp(vals, axis=-1)
        else:
            nu = float(theta.nu[r])
            kern = _binomial_log_kernel(lq, l1q, m[r], M[r])
            if nu == -np.inf:
                A[:, r] = kern
                continue
            log_c = (nu - mu) / s
            with np.errstate(over="ignore", divide="ignore"):
                log_g = -np.exp(log_c + outer.log_l)
                A[:, r] = log_g + kern
                B[:, r] = _maxfactor_inner(theta, r, log_c, outer, m[r], M[r], inner_rule,
                                           inner)
    return A, B


def log_integral(A, B, rule: QuadratureRule):
    """Combine :func:`log_category_parts` output into per-period log integrals."""
    with np.errstate(invalid="ignore"):
        terms = np.logaddexp(A, B).sum(axis=1)
    return numerics.log_sum_exp(terms + rule.log_weights, axis=-1)


def log_joint_moment(spec, theta, powers, rule=None, inner="cumulative"):
    """``log E[prod_r Q_r ** powers[r]]`` under the model."""
    rule = default_rule() if rule is None else rule
    p = np.asarray(powers, dtype=np.int64).reshape(spec.k)
    if np.any(p < 0):
        raise DomainError("powers must be nonnegative")
    A, B = log_category_parts(spec, theta, p, p, rule, inner=inner)
    return float(log_integral(A, B, rule)[0])


def _one_factor_moment(loc, scale, power, rule):
    outer = _outer(Dist.GUMBEL, rule)
    lq, _ = _gumbel_head(loc, scale, outer.log_l)
    return float(np.exp(numerics.log_sum_exp(power * lq + rule.log_weights)))


def implied_pi_r(spec: ModelSpec, theta: ParamVector, r: int, rule: QuadratureRule = None) -> float:
    """Model-implied marginal loss probability ``E[Q_r]``."""
    r = _check_index(spec, r)
    rule = default_rule() if rule is None else rule
    if spec.family is Family.MAX_FACTOR_GUMBEL:
        loc = effective_gumbel_location(theta, r)
        return _one_factor_moment(loc, float(theta.sigma[r]), 1, rule)
    powers = np.zeros(spec.k, dtype=np.int64)
    powers[r] = 1
    return float(np.exp(log_joint_moment(spec, theta, powers, rule)))


def implied_pi_rs(spec: ModelSpec, theta: ParamVector, r: int, s: int,
                  rule: QuadratureRule = None, diagonal: str = "shared") -> float:
    """Model-implied joint loss probability ``E[Q_r Q_s]``.

    For ``r == s`` and a two-factor family, ``diagonal`` selects the
    reading of ``pi_rr``: ``"shared"`` (default) is ``E[Q_r^2]``, two risks
    of category ``r`` sharing the category factor; ``"independent"`` is
    ``E[E[Q_r | psi_0]^2]``, two risks whose category factors are drawn
    independently.
    """
    r, s = _check_index(spec, r), _check_index(spec, s)
    rule = default_rule() if rule is None else rule
    if diagonal not in ("shared", "independent"):
        raise UsageError(f"unknown diagonal convention {diagonal!r}")
    if r == s and spec.family.two_factor and diagonal == "independent":
        unit = np.zeros(spec.k, dtype=np.int64)
        unit[r] = 1
        A, B = log_category_parts(spec, theta, unit, unit, rule)
        with np.errstate(invalid="ignore"):
            cond = np.logaddexp(A[0, r], B[0, r])
        return float(np.exp(numerics.log_sum_exp(2.0 * cond + rule.log_weights)))
    if r == s and spec.family is Family.MAX_FACTOR_GUMBEL:
        loc = effective_gumbel_location(theta, r)
        return _one_factor_moment(loc, float(theta.sigma[r]), 2, rule)
    powers = np.zeros(spec.k, dtype=np.int64)
    powers[r] += 1
    powers[s] += 1
    return float(np.exp(log_joint_moment(spec, theta, powers, rule)))


def implied_matrix(spec, theta, rule=None, diagonal="shared"):
    """``(pi, pi_rs)``: vector of marginals and symmetric joint matrix."""
    pi = np.array([implied_pi_r(spec, theta, r, rule) for r in range(spec.k)])
    joint = np.empty((spec.k, spec.k))
    for r in range(spec.k):
        for s in range(r, spec.k):
            joint[r, s] = joint[s, r] = implied_pi_rs(spec, theta, r, s, rule, diagonal)
    return pi, joint


def excess_probability(spec: ModelSpec, theta: ParamVector, r: int, t):
    """``P[Q_r > t]`` in closed form; ``t`` may be an array in (0, 1)."""
    r = _check_index(spec, r)
    t_arr = np.asarray(t, dtype=float)
    if not np.all((t_arr > 0) & (t_arr < 1)):
        raise DomainError("threshold must lie in (0, 1)")
    fam = spec.family
    mu, s = float(theta.mu[r]), float(theta.sigma[r])
    if fam is Family.ONE_FACTOR_PROBIT:
        out = numerics.special.ndtr(-(numerics.special.ndtri(t_arr) - mu) / s)
    elif fam is Family.LINEAR_TWO_FACTOR_PROBIT:
        scale = float(np.hypot(theta.tau[r], s))
        out = numerics.special.ndtr(-(numerics.special.ndtri(t_arr) - mu) / scale)
    else:
        loc = mu if fam is Family.ONE_FACTOR_GUMBEL else effective_gumbel_location(theta, r)
        z = (-np.log(-np.log(t_arr)) - loc) / s
        out = -np.expm1(-np.exp(-z))
    return float(out) if np.ndim(t) == 0 else out


def risk_ratio(pi_r: float, pi_s: float, pi_rs: float) -> float:
    """``P[loss_r | loss_s] / P[loss_r | no loss_s]``."""
    if not 0 < pi_s < 1:
        raise DomainError("pi_s must lie in (0, 1)")
    if not 0 <= pi_rs:
        raise DomainError("pi_rs must be nonnegative")
    if not pi_rs < pi_r < 1:
        raise DomainError("need pi_rs < pi_r < 1")
    return pi_rs * (1.0 - pi_s) / ((pi_r - pi_rs) * pi_s)
