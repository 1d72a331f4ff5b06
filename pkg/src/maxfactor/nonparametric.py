"""Nonparametric estimators of marginal and joint loss probabilities.

Preliminary estimators average falling-factorial ratios
``(M)_l / (m)_l`` over periods; they are unbiased for ``E[Q_r ** l]`` and
``E[Q_r ** l1 * Q_s ** l2]``.  Weighted estimators reweight the per-period
ratios by their inverse variances with a shrinkage term in the denominator,
which minimizes mean squared error when the variances are known.  The
variances are themselves estimated from preliminary estimators of orders up
to four.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, UsageError
from .panel import Panel


def falling_ratio(M, m, l):
    """``M (M-1) ... (M-l+1) / (m (m-1) ... (m-l+1))`` elementwise."""
    M = np.asarray(M, dtype=float)
    m = np.asarray(m, dtype=float)
    out = np.ones(np.broadcast(M, m).shape)
    for i in range(int(l)):
        out = out * (M - i) / (m - i)
    return out


def _check_order(panel, r, l):
    if int(l) < 1:
        raise DomainError("order must be at least 1")
    if l >= panel.exposures[r].min():
        raise DomainError(
            f"order {l} needs more than {l} exposures in every period of "
            f"category {panel.categories[r]!r}")


def prelim_intra(panel: Panel, r: int, l: int = 1) -> float:
    """Unbiased estimator of ``E[Q_r ** l]``."""
    _check_order(panel, r, l)
    return float(np.mean(falling_ratio(panel.losses[r], panel.exposures[r], l)))


def prelim_inter(panel: Panel, r: int, s: int, l1: int = 1, l2: int = 1) -> float:
    """Unbiased estimator of ``E[Q_r ** l1 * Q_s ** l2]`` for ``r != s``."""
    if r == s:
        raise UsageError("prelim_inter needs two different categories; use prelim_intra")
    _check_order(panel, r, l1)
    _check_order(panel, s, l2)
    a = falling_ratio(panel.losses[r], panel.exposures[r], l1)
    b = falling_ratio(panel.losses[s], panel.exposures[s], l2)
    return float(np.mean(a * b))


def fallback_intra(panel: Panel, r: int, l: int = 1) -> float:
    """Plug-in estimator ``mean((M / m) ** l)``; never below :func:`prelim_intra`."""
    if int(l) < 1:
        raise DomainError("order must be at least 1")
    return float(np.mean((panel.losses[r] / panel.exposures[r]) ** l))


def fallback_inter(panel: Panel, r: int, s: int, l1: int = 1, l2: int = 1) -> float:
    """Plug-in estimator ``mean((M_r / m_r) ** l1 * (M_s / m_s) ** l2)``."""
    qr = panel.losses[r] / panel.exposures[r]
    qs = panel.losses[s] / panel.exposures[s]
    return float(np.mean(qr ** l1 * qs ** l2))


@dataclass(frozen=True, eq=False)
class LossProbEstimates:
    """Estimated marginal and joint loss probabilities.

    ``pi_rs`` is symmetric with ``pi_rr`` on the diagonal; ``se_rs`` is laid
    out the same way.  ``fallback`` marks categories whose variance plug-ins
    were re-derived from plug-in moments, ``fallback_pairs`` the same for
    pairs.  ``degenerate`` marks categories without any loss.  ``degraded``
    lists targets that fell back to the preliminary estimator.
    """

    categories: tuple
    method: str
    pi_r: np.ndarray
    pi_rs: np.ndarray
    se_r: np.ndarray
    se_rs: np.ndarray
    fallback: np.ndarray = None
    fallback_pairs: np.ndarray = None
    degenerate: np.ndarray = None
    degraded: tuple = ()
    weights: dict = field(default=None, repr=False)

    @property
    def k(self):
        return len(self.categories)


def _sample_se(values):
    n = values.shape[-1]
    if n < 2:
        return np.full(values.shape[:-1], np.nan)
    return values.std(axis=-1, ddof=1) / np.sqrt(n)


def preliminary_estimates(panel: Panel) -> LossProbEstimates:
    """Preliminary estimators with standard errors from the spread over periods."""
    k = panel.k
    q = [falling_ratio(panel.losses[r], panel.exposures[r], 1) for r in range(k)]
    pi_r = np.array([x.mean() for x in q])
    se_r = np.array([_sample_se(x) for x in q])
    pi_rs = np.empty((k, k))
    se_rs = np.empty((k, k))
    for r in range(k):
        x = falling_ratio(panel.losses[r], panel.exposures[r], 2)
        pi_rs[r, r], se_rs[r, r] = x.mean(), _sample_se(x)
        for s in range(r + 1, k):
            x = q[r] * q[s]
            pi_rs[r, s] = pi_rs[s, r] = x.mean()
            se_rs[r, s] = se_rs[s, r] = _sample_se(x)
    return LossProbEstimates(panel.categories, "preliminary", pi_r, pi_rs, se_r, se_rs,
                             fallback=np.zeros(k, bool), fallback_pairs=np.zeros((k, k), bool),
                             degenerate=np.array([not np.any(panel.losses[r]) for r in range(k)]))


def _intra_moments(panel, r, use_fallback):
    """Estimates of ``E[Q_r ** l]`` for l = 1..4.

    Orders that are not estimable without bias (``l >= min m``) use the
    plug-in form; they only enter with zero coefficients in that case.
    """
    m_min = panel.exposures[r].min()
    out = []
    for l in range(1, 5):
        if l == 1 or (not use_fallback and l < m_min):
            out.append(float(np.mean(falling_ratio(panel.losses[r], panel.exposures[r], l))))
        else:
            out.append(fallback_intra(panel, r, l))
    return out


def _inter_moments(panel, r, s, use_fallback):
    """Estimates of ``E[Q_r ** a * Q_s ** b]`` for (a, b) in (1,1), (1,2), (2,1), (2,2)."""
    out = {}
    for a, b in ((1, 1), (1, 2), (2, 1), (2, 2)):
        ok = a < panel.exposures[r].min() and b < panel.exposures[s].min()
        if use_fallback or not ok:
            out[a, b] = fallback_inter(panel, r, s, a, b)
        else:
            out[a, b] = prelim_inter(panel, r, s, a, b)
    return out


def var_marginal(m, pi, pi_rr):
    """Variance of ``M / m``."""
    return pi / m + (1.0 - 1.0 / m) * pi_rr - pi ** 2


def var_intra_pair(m, pi_rr, pi3, pi4, corrected=True):
    """Variance of ``M (M-1) / (m (m-1))``.

    With ``corrected=False`` the bracket is multiplied by ``m (m-1)``
    instead of divided (uncorrected scaling, kept for comparison).
    """
    m = np.asarray(m, dtype=float)
    mm = m * (m - 1.0)
    bracket = (2.0 - mm * pi_rr) * pi_rr + 4.0 * (m - 2.0) * pi3 + (m - 2.0) * (m - 3.0) * pi4
    with np.errstate(divide="ignore", invalid="ignore"):
        return bracket / mm if corrected else mm * bracket


def var_inter_pair(m_r, m_s, pi_rs, pi12, pi21, pi22, corrected=True):
    """Variance of ``M_r M_s / (m_r m_s)``.

    The last term is ``(m_r - 1)(m_s - 1) pi22``; ``corrected=False`` uses
    the uncorrected variant ``1 - m_s - m_r + m_r m_s pi22``.
    """
    m_r = np.asarray(m_r, dtype=float)
    m_s = np.asarray(m_s, dtype=float)
    if corrected:
        last = (m_r - 1.0) * (m_s - 1.0) * pi22
    else:
        last = 1.0 - m_s - m_r + m_r * m_s * pi22
    bracket = ((1.0 - m_r * m_s * pi_rs) * pi_rs + (m_s - 1.0) * pi12
               + (m_r - 1.0) * pi21 + last)
    return bracket / (m_r * m_s)


def _weighted(values, variances, target):
    """Shrinkage-weighted average; returns (estimate, se, weights)."""
    if target <= 0:
        return 0.0, 0.0, np.zeros_like(values)
    inv = 1.0 / variances
    denom = target ** -2 + inv.sum()
    w = inv / denom
    return float(np.dot(w, values)), float(inv.sum() ** -0.5), w


def weighted_estimates(panel: Panel, use_corrected_scaling: bool = True,
                       target_denominators: bool = False) -> LossProbEstimates:
    """Minimum-MSE weighted estimators of ``pi_r``, ``pi_rr`` and ``pi_rs``.

    Weights are ``s_j^{-2} / (c^{-2} + sum_t s_t^{-2})`` with ``s_j^2`` the
    estimated variance of the period-``j`` ratio.  The shrinkage constant
    ``c`` is the preliminary ``pi_r`` for all three targets, or, with
    ``target_denominators=True``, the preliminary estimate of the target
    itself.  Standard errors are ``(sum_j s_j^{-2})^{-1/2}``.
    """
    k, n = panel.k, panel.n
    m = panel.exposures.astype(float)
    ratios1 = [falling_ratio(panel.losses[r], m[r], 1) for r in range(k)]
    pi_r = np.zeros(k)
    se_r = np.zeros(k)
    pi_rs = np.zeros((k, k))
    se_rs = np.zeros((k, k))
    fallback = np.zeros(k, bool)
    fallback_pairs = np.zeros((k, k), bool)
    degenerate = np.array([not np.any(panel.losses[r]) for r in range(k)])
    degraded = []
    weights = {}
    prelim = preliminary_estimates(panel)
    moments = []

    for r in range(k):
        mom = _intra_moments(panel, r, False)
        v1 = var_marginal(m[r], mom[0], mom[1])
        v2 = var_intra_pair(m[r], mom[1], mom[2], mom[3], use_corrected_scaling)
        if not degenerate[r] and (np.any(v1 <= 0) or np.any(v2 <= 0)):
            fallback[r] = True
            mom = _intra_moments(panel, r, True)
            v1 = var_marginal(m[r], mom[0], mom[1])
            v2 = var_intra_pair(m[r], mom[1], mom[2], mom[3], use_corrected_scaling)
        moments.append(mom)
        pi_hat = mom[0]
        ratios2 = falling_ratio(panel.losses[r], m[r], 2) if m[r].min() >= 2 else ratios1[r] ** 2
        for key, vals, var, tgt, slot in (
                ("r", ratios1[r], v1, pi_hat, None),
                ("rr", ratios2, v2, mom[1] if target_denominators else pi_hat, r)):
            if degenerate[r]:
                est, se, w = 0.0, 0.0, np.zeros(n)
            elif np.all(var > 0):
                est, se, w = _weighted(vals, var, tgt)
            else:
                degraded.append(f"pi_{key}:{panel.categories[r]}")
                est, w = float(vals.mean()), np.full(n, 1.0 / n)
                se = float(_sample_se(vals))
            if slot is None:
                pi_r[r], se_r[r] = est, se
                weights[(r,)] = w
            else:
                pi_rs[r, r], se_rs[r, r] = est, se
                weights[(r, r)] = w

    for r in range(k):
        for s in range(r + 1, k):
            vals = ratios1[r] * ratios1[s]
            pi_hat = moments[r][0]
            if degenerate[r] or degenerate[s]:
                est, se, w = 0.0, 0.0, np.zeros(n)
            else:
                mom = _inter_moments(panel, r, s, False)
                var = var_inter_pair(m[r], m[s], mom[1, 1], mom[1, 2], mom[2, 1], mom[2, 2],
                                     use_corrected_scaling)
                if np.any(var <= 0):
                    fallback_pairs[r, s] = fallback_pairs[s, r] = True
                    mom = _inter_moments(panel, r, s, True)
                    var = var_inter_pair(m[r], m[s], mom[1, 1], mom[1, 2], mom[2, 1],
                                         mom[2, 2], use_corrected_scaling)
                tgt = mom[1, 1] if target_denominators else pi_hat
                if np.all(var > 0):
                    est, se, w = _weighted(vals, var, tgt)
                else:
                    pair = f"{panel.categories[r]}/{panel.categories[s]}"
                    degraded.append(f"pi_rs:{pair}")
                    est, se = prelim.pi_rs[r, s], prelim.se_rs[r, s]
                    w = np.full(n, 1.0 / n)
            pi_rs[r, s] = pi_rs[s, r] = est
            se_rs[r, s] = se_rs[s, r] = se
            weights[(r, s)] = w

    return LossProbEstimates(panel.categories, "weighted", pi_r, pi_rs, se_r, se_rs,
                             fallback=fallback, fallback_pairs=fallback_pairs,
                             degenerate=degenerate, degraded=tuple(degraded),
                             weights=weights)
