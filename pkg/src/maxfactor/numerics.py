"""Distribution functions, quadrature rules and log-domain helpers.

Only the two latent laws used by the factor models are supported: the
standard Gumbel law ``F(x) = exp(-exp(-x))`` and the standard Normal law.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

from .errors import ConfigError, DomainError

MAX_RULE_SIZE = 4096
DEFAULT_NODES = 128


class Dist(str, enum.Enum):
    GUMBEL = "gumbel"
    NORMAL = "normal"


def _check_finite(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"argument must be finite, got {x!r}")
    return x


def _scalar_or_array(value, like):
    return float(value) if np.ndim(like) == 0 else value


def std_cdf(dist: Dist, x):
    """Standard distribution function of ``dist`` evaluated at ``x``."""
    dist = Dist(dist)
    xa = _check_finite(x)
    if dist is Dist.GUMBEL:
        out = np.exp(-np.exp(-xa))
    else:
        out = special.ndtr(xa)
    return _scalar_or_array(out, x)


def std_quantile(dist: Dist, p):
    """Inverse of :func:`std_cdf`; ``p`` must lie strictly inside (0, 1)."""
    dist = Dist(dist)
    pa = np.asarray(p, dtype=float)
    if not np.all((pa > 0.0) & (pa < 1.0)):
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")
    if dist is Dist.GUMBEL:
        out = -np.log(-np.log(pa))
    else:
        out = special.ndtri(pa)
    return _scalar_or_array(out, p)


def quantile_from_pair(dist: Dist, q, qc):
    """Latent quantile at ``q`` given also its complement ``qc = 1 - q``.

    Whichever of the two is smaller is used, so nodes crowding either end
    of the unit interval keep full relative precision.
    """
    q = np.asarray(q, dtype=float)
    qc = np.asarray(qc, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if dist is Dist.GUMBEL:
            return -np.log(gumbel_log_exponent(q, qc))
        low = q <= 0.5
        return np.where(low, special.ndtri(np.where(low, q, 0.5)),
                        -special.ndtri(np.where(low, 0.5, qc)))


def gumbel_log_exponent(q, qc):
    """``-log(q)`` computed from ``q`` and ``qc = 1 - q`` without cancellation."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(q <= 0.5, -np.log(np.where(q <= 0.5, q, 0.5)),
                        -np.log1p(-np.where(q <= 0.5, 0.5, qc)))


def log_cdf_pair(dist: Dist, x):
    """Return ``(log F(x), log(1 - F(x)))`` for finite or infinite ``x``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if dist is Dist.GUMBEL:
            t = np.exp(-x)
            return -t, np.log(-np.expm1(-t))
        return special.log_ndtr(x), special.log_ndtr(-x)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and weights on the open unit interval.

    ``complements`` holds ``1 - nodes`` computed to full precision, which
    the likelihood kernels use near the right endpoint.
    """

    nodes: np.ndarray
    weights: np.ndarray
    complements: np.ndarray

    def __post_init__(self):
        for name in ("nodes", "weights", "complements"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.nodes.shape == self.weights.shape == self.complements.shape):
            raise ConfigError("nodes, weights and complements must have equal length")
        if self.nodes.size == 0:
            raise ConfigError("a quadrature rule needs at least one node")
        if not (np.all(self.nodes > 0) and np.all(self.nodes < 1)):
            raise ConfigError("quadrature nodes must lie strictly inside (0, 1)")
        if self.nodes.size > 1 and not np.all(np.diff(self.nodes) > 0):
            raise ConfigError("quadrature nodes must be strictly increasing")
        if not np.all(self.weights > 0):
            raise ConfigError("quadrature weights must be positive")

    def __len__(self):
        return self.nodes.size

    @property
    def log_weights(self):
        return np.log(self.weights)

    def integrate(self, values):
        """Apply the rule to function values sampled at :attr:`nodes`."""
        return float(np.dot(self.weights, values))


@functools.lru_cache(maxsize=64)
def legendre_rule(n: int) -> QuadratureRule:
    """Gauss-Legendre rule of order ``n`` mapped affinely onto (0, 1)."""
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise ConfigError(f"rule size must be an integer, got {n!r}")
    if not 1 <= n <= MAX_RULE_SIZE:
        raise ConfigError(f"rule size must lie in [1, {MAX_RULE_SIZE}], got {n}")
    x, w = leggauss(int(n))
    # leggauss nodes are symmetric; taking complements from the mirrored
    # node avoids the rounding of 1 - q near q = 1.
    nodes = 0.5 * (1.0 + x)
    complements = 0.5 * (1.0 - x)
    return QuadratureRule(nodes=nodes, weights=0.5 * w, complements=complements)


def _theta_minus_sin(t):
    """``t - sin(t)`` without cancellation for small ``t``."""
    t = np.asarray(t, dtype=float)
    s = t * t
    series = t * s / 6.0 * (1 - s / 20.0 * (1 - s / 42.0 * (1 - s / 72.0 * (1 - s / 110.0))))
    return np.where(t < 0.5, series, t - np.sin(t))


@functools.lru_cache(maxsize=64)
def graded_rule(n: int) -> QuadratureRule:
    """Gauss-Legendre rule composed with the endpoint-grading map
    ``q = x - sin(2 pi x) / (2 pi)``.

    The map has a triple zero of ``q`` at ``x = 0`` (and of ``1 - q`` at
    ``x = 1``), so integrands with algebraic endpoint singularities such as
    ``(1 - q) ** 0.1`` become smooth.  Those arise from the substitution
    ``q = F(psi)`` whenever a loading is small.
    """
    base = legendre_rule(n)
    two_pi = 2.0 * np.pi
    # the map is symmetric about 1/2; each half is computed from its own end
    low = _theta_minus_sin(two_pi * base.nodes) / two_pi
    high = _theta_minus_sin(two_pi * base.complements) / two_pi
    left = base.nodes <= 0.5
    nodes = np.where(left, low, 1.0 - high)
    complements = np.where(left, 1.0 - low, high)
    weights = base.weights * 2.0 * np.sin(np.pi * base.nodes) ** 2
    # Large orders put nodes within rounding of an endpoint; their weight is
    # below 1e-16, so those symmetric pairs are dropped.
    keep = np.minimum(low, high) > np.finfo(float).eps
    # small orders do not integrate constants exactly; renormalize
    weights = weights[keep] / weights[keep].sum()
    return QuadratureRule(nodes=nodes[keep], weights=weights,
                          complements=complements[keep])


def default_rule(n: int = DEFAULT_NODES) -> QuadratureRule:
    """Rule used when none is given: :func:`graded_rule` of order ``n``."""
    return graded_rule(n)


def log_binom_coeff(m, M):
    """``log(m choose M)`` via log-gamma."""
    m_arr = np.asarray(m)
    M_arr = np.asarray(M)
    if np.any(M_arr < 0) or np.any(M_arr > m_arr):
        raise DomainError(f"need 0 <= M <= m, got m={m!r}, M={M!r}")
    out = (special.gammaln(m_arr + 1.0) - special.gammaln(M_arr + 1.0)
           - special.gammaln(m_arr - M_arr + 1.0))
    return _scalar_or_array(out, np.broadcast_arrays(m_arr, M_arr)[0])


def log_sum_exp(terms, axis=None):
    """Stable ``log(sum(exp(terms)))`` with a max shift.

    Entries may be ``-inf``.  An all ``-inf`` input returns ``-inf``.
    """
    a = np.asarray(terms, dtype=float)
    if a.size == 0:
        raise DomainError("log_sum_exp of an empty sequence")
    if axis is None:
        a = a.ravel()
        if a.size == 1:
            return float(a[0])
        axis = 0
    shift = np.max(a, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - shift), axis=axis, keepdims=True)) + shift
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out


def xlog(count, log_p):
    """``count * log_p`` with the convention ``0 * log(0) = 0``."""
    with np.errstate(invalid="ignore"):
        return np.where(count > 0, count * log_p, 0.0)

