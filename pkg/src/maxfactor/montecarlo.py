"""Panel simulation, prediction intervals and the estimator comparison study."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, MaxFactorError
from .factor_model import (Family, ModelSpec, ParamVector, conditional_log_probs,
                           implied_matrix)
from .numerics import Dist
from .panel import Panel

METHODS = ("prelim", "weighted", "mle-1a", "mle-2a", "mle-1b", "mle-2b")


def _key(x):
    if isinstance(x, (int, np.integer)):
        return int(x)
    return zlib.crc32(str(x).encode("utf-8"))


def stream(seed, purpose: str, *keys) -> np.random.Generator:
    """Independent generator keyed by seed, purpose and further keys.

    Category streams are keyed by label, so reordering categories permutes
    the simulated data instead of changing it.
    """
    return np.random.default_rng(np.random.SeedSequence([_key(seed), _key(purpose)]
                                                        + [_key(k) for k in keys]))


@dataclass(frozen=True, eq=False)
class SizeConfig:
    """Beta-binomial exposure model: ``m ~ Binomial(N_r, p)``, ``p ~ Beta(a_r, b_r)``."""

    trials: np.ndarray
    a: np.ndarray
    b: np.ndarray
    n_periods: int = 19

    def __post_init__(self):
        for name in ("trials", "a", "b"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.trials.size == self.a.size == self.b.size):
            raise ConfigError("size parameters need one value per category")
        if np.any(self.trials < 1) or np.any(self.trials != np.round(self.trials)):
            raise ConfigError("trial counts must be positive integers")
        if np.any(self.a <= 0) or np.any(self.b <= 0):
            raise ConfigError("beta shapes must be positive")
        if int(self.n_periods) < 1:
            raise ConfigError("need at least one period")
        object.__setattr__(self, "n_periods", int(self.n_periods))

    @property
    def k(self):
        return self.trials.size

    @classmethod
    def default(cls, n_periods: int = 19) -> "SizeConfig":
        return cls(trials=(2000, 200), a=(30, 30), b=(30, 30), n_periods=n_periods)


def gen_sizes(config: SizeConfig, seed, replication: int = 0, labels=None) -> np.ndarray:
    """Random exposure matrix of shape ``(k, n_periods)``, floored at 1."""
    labels = labels or [str(r + 1) for r in range(config.k)]
    out = np.empty((config.k, config.n_periods), dtype=np.int64)
    for r, label in enumerate(labels):
        rng = stream(seed, "sizes", replication, label)
        p = rng.beta(config.a[r], config.b[r], size=config.n_periods)
        out[r] = np.maximum(rng.binomial(int(config.trials[r]), p), 1)
    return out


def draw_latent_panel(spec: ModelSpec, n: int, seed, replication=0, purpose="latent",
                      draws: int = None) -> np.ndarray:
    """Latent vectors for ``n`` periods, shape ``(n, latent_dim)``, or
    ``(draws, n, latent_dim)`` when ``draws`` is given."""
    shape = (n,) if draws is None else (draws, n)

    def one(key):
        rng = stream(seed, purpose, replication, key)
        if spec.family.dist is Dist.GUMBEL:
            return rng.gumbel(size=shape)
        return rng.standard_normal(shape)

    cols = [one("global")]
    if spec.family.two_factor:
        cols += [one(label) for label in spec.labels]
    return np.stack(cols, axis=-1)


def _binomial_counts(spec, sizes, log_q, seed, replication, purpose):
    q = np.exp(log_q)
    out = np.empty(q.shape, dtype=np.int64)
    for r, label in enumerate(spec.labels):
        rng = stream(seed, purpose, replication, label)
        out[..., r] = rng.binomial(sizes[..., r], q[..., r])
    return out


def gen_panel(spec: ModelSpec, theta: ParamVector, sizes, seed, replication: int = 0,
              periods=None) -> Panel:
    """Simulate loss counts given exposures ``sizes`` of shape ``(k, n)``."""
    theta.validate(spec)
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.ndim != 2 or sizes.shape[0] != spec.k:
        raise DomainError(f"sizes must have shape ({spec.k}, n)")
    if np.any(sizes < 1):
        raise DomainError("sizes must be positive")
    n = sizes.shape[1]
    psi = draw_latent_panel(spec, n, seed, replication)
    log_q, _ = conditional_log_probs(spec, theta, psi)           # (n, k)
    counts = _binomial_counts(spec, sizes.T, log_q, seed, replication, "counts")
    periods = tuple(str(j + 1) for j in range(n)) if periods is None else tuple(periods)
    return Panel(spec.labels, periods, sizes, counts.T)


@dataclass(frozen=True, eq=False)
class PredictionIntervals:
    """Per-cell central prediction intervals of loss counts, shape ``(k, n)``."""

    lower: np.ndarray
    upper: np.ndarray
    rank_lower: int
    rank_upper: int
    draws: int
    level: float

    @property
    def retained(self) -> int:
        return self.rank_upper - self.rank_lower + 1


def central_ranks(draws: int, level: float):
    """1-based ranks ``(lo, hi)`` bounding the central ``level`` share of ``draws``."""
    if draws < 1:
        raise DomainError("draws must be positive")
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    # 5000 * (1 - 0.9) / 2 evaluates to 249.99999999999997 in floating point
    cut = math.floor(draws * (1.0 - level) / 2.0 + 1e-9)
    return cut + 1, draws - cut


def prediction_intervals(spec: ModelSpec, theta: ParamVector, sizes, draws: int = 5000,
                         level: float = 0.90, seed=0) -> PredictionIntervals:
    """Simulate ``draws`` panels with the given exposures and keep the
    central order statistics of every cell."""
    if draws < 100:
        raise DomainError("need at least 100 draws")
    theta.validate(spec)
    sizes = np.asarray(sizes, dtype=np.int64)
    lo, hi = central_ranks(draws, level)
    n = sizes.shape[1]
    psi = draw_latent_panel(spec, n, seed, 0, "predict-latent", draws=draws)
    log_q, _ = conditional_log_probs(spec, theta, psi)           # (draws, n, k)
    counts = _binomial_counts(spec, sizes.T[None], log_q, seed, 0, "predict-counts")
    counts.sort(axis=0)
    lower = counts[lo - 1].T.copy()
    upper = counts[hi - 1].T.copy()
    return PredictionIntervals(lower, upper, lo, hi, int(draws), float(level))


def interval_coverage(intervals: PredictionIntervals, panel: Panel) -> np.ndarray:
    """Boolean matrix: observed count inside its interval."""
    M = panel.losses
    return (M >= intervals.lower) & (M <= intervals.upper)


# ---------------------------------------------------------------------------
# estimator comparison study

@dataclass(frozen=True, eq=False)
class StudyConfig:
    spec: ModelSpec
    theta: ParamVector
    sizes: SizeConfig
    replications: int = 1000
    methods: tuple = ("prelim", "weighted")
    mle_nodes: int = 64
    mle_restarts: int = 1

    def __post_init__(self):
        self.theta.validate(self.spec)
        if self.sizes.k != self.spec.k:
            raise ConfigError("size configuration and model disagree on k")
        if int(self.replications) < 1:
            raise ConfigError("replications must be positive")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")

    @classmethod
    def from_mapping(cls, values: dict) -> "StudyConfig":
        """Build from the flat key-value study file (see :mod:`maxfactor.reports`)."""
        try:
            family = Family(values["family"])
            k = int(values["k"])
        except KeyError as exc:
            raise ConfigError(f"study config is missing key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        labels = values.get("labels")
        labels = tuple(x.strip() for x in labels.split(",")) if labels else None
        spec = ModelSpec(family, k, labels)
        params = {key[len("theta."):]: v for key, v in values.items() if key.startswith("theta.")}
        theta = ParamVector.from_dict(spec, params)

        def per_cat(name):
            keys = [f"size.{name}.{label}" for label in spec.labels]
            missing = [key for key in keys if key not in values]
            if missing:
                raise ConfigError(f"study config is missing {', '.join(missing)}")
            return [float(values[key]) for key in keys]

        sizes = SizeConfig(per_cat("trials"), per_cat("a"), per_cat("b"),
                           int(values.get("n_periods", 19)))
        methods = tuple(x.strip() for x in values.get("methods", "prelim,weighted").split(","))
        return cls(spec, theta, sizes, int(values.get("replications", 1000)), methods,
                   int(values.get("mle_nodes", 64)), int(values.get("mle_restarts", 1)))


@dataclass(frozen=True)
class StudyRow:
    method: str
    target: str
    rrmse: float
    delta_pct: float
    bias_sign: int
    failures: int


@dataclass(frozen=True)
class StudyReport:
    rows: tuple
    replications: int
    truth: dict = field(default_factory=dict)

    def lookup(self, method, target) -> StudyRow:
        for row in self.rows:
            if row.method == method and row.target == target:
                return row
        raise KeyError((method, target))


def _targets(spec):
    names = [f"pi_r:{label}" for label in spec.labels]
    pairs = [(r, s) for r in range(spec.k) for s in range(r + 1, spec.k)]
    names += [f"pi_rs:{spec.labels[r]}/{spec.labels[s]}" for r, s in pairs]
    return names, pairs


def _method_estimates(method, spec, panel, config):
    from . import calibrate, nonparametric

    if method == "prelim":
        est = nonparametric.preliminary_estimates(panel)
        return est.pi_r, est.pi_rs
    if method == "weighted":
        est = nonparametric.weighted_estimates(panel)
        return est.pi_r, est.pi_rs
    fam = Family(method.split("-", 1)[1])
    fit_spec = spec.with_family(fam)
    options = calibrate.FitOptions(nodes=config.mle_nodes, restarts=config.mle_restarts)
    fit = calibrate.fit_mle(fit_spec, panel, options)
    if not fit.converged:
        raise calibrate.FitError(f"{method} did not converge")
    return implied_matrix(fit_spec, fit.theta_hat)


def rrmse_study(config: StudyConfig, seed=0, progress=None) -> StudyReport:
    """Compare estimators of ``pi_r`` and ``pi_rs`` over simulated panels.

    Each replication draws exposures and a panel from the true model and
    runs every method.  A method that raises on a replication is counted
    as a failure and left out of that replication.
    """
    spec = config.spec
    names, pairs = _targets(spec)
    true_pi, true_joint = implied_matrix(spec, config.theta)
    truth = np.concatenate([true_pi, [true_joint[r, s] for r, s in pairs]])
    n_methods = len(config.methods)
    sq = np.zeros((n_methods, truth.size))
    err = np.zeros((n_methods, truth.size))
    ok = np.zeros(n_methods, dtype=np.int64)
    fails = np.zeros(n_methods, dtype=np.int64)
    for rep in range(int(config.replications)):
        sizes = gen_sizes(config.sizes, seed, rep, spec.labels)
        panel = gen_panel(spec, config.theta, sizes, seed, rep)
        for i, method in enumerate(config.methods):
            try:
                pi, joint = _method_estimates(method, spec, panel, config)
                est = np.concatenate([pi, [joint[r, s] for r, s in pairs]])
                if not np.all(np.isfinite(est)):
                    raise FloatingPointError("non-finite estimate")
            except (MaxFactorError, FloatingPointError, np.linalg.LinAlgError):
                fails[i] += 1
                continue
            d = est - truth
            sq[i] += d * d
            err[i] += d
            ok[i] += 1
        if progress is not None:
            progress(rep + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rrmse = np.sqrt(sq / ok[:, None]) / truth[None, :]
        bias = err / ok[:, None]
    rows = []
    for t, name in enumerate(names):
        col = rrmse[:, t]
        best = np.nanmin(col) if np.any(np.isfinite(col)) else np.nan
        for i, method in enumerate(config.methods):
            if not np.isfinite(col[i]):
                delta = float("nan")
            elif col[i] == best:
                delta = 0.0
            else:
                delta = 100.0 * (col[i] / best - 1.0)
            rows.append(StudyRow(method, name, float(col[i]), delta,
                                 int(np.sign(bias[i, t])) if np.isfinite(bias[i, t]) else 0,
                                 int(fails[i])))
    return StudyReport(tuple(rows), int(config.replications), dict(zip(names, truth.tolist())))
