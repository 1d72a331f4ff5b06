"""Command-line interface.

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure (the
report is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import sys

import numpy as np

from . import __version__
from .calibrate import FitOptions, fit_mle
from .errors import MaxFactorError, UsageError
from .factor_model import (Family, excess_probability, implied_matrix, risk_ratio)
from .montecarlo import (SizeConfig, StudyConfig, gen_panel, gen_sizes, interval_coverage,
                         prediction_intervals, rrmse_study)
from .nonparametric import preliminary_estimates, weighted_estimates
from .numerics import default_rule
from .panel import HEADER, parse_panel, serialize_panel
from .reports import (Report, fmt, params_from_mapping, params_from_text, parse_report,
                      read_kv, write_atomic)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read(path, flag):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"{flag}: cannot read {path!r}: {exc.strerror}") from None


def _provenance(args) -> dict:
    out = {"program": "maxfactor", "version": __version__, "command": args.command}
    for key in sorted(vars(args)):
        if key in ("command", "func"):
            continue
        out[key] = getattr(args, key)
    return out


def _write(path, text, flag="--out"):
    try:
        write_atomic(path, text)
    except OSError as exc:
        raise UsageError(f"{flag}: cannot write {path!r}: {exc.strerror}") from None


def _csv_text(provenance, header, rows) -> str:
    buf = io.StringIO()
    for key, value in provenance.items():
        buf.write(f"# {key}={fmt(value)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _load_panel(path, flag="--data"):
    return parse_panel(_read(path, flag))


def _load_fit(path):
    _, sections = parse_report(_read(path, "--fit"), path)
    if "model" not in sections or "params" not in sections:
        raise UsageError(f"--fit: {path!r} has no [model] and [params] sections")
    values = dict(sections["model"])
    values.update(sections["params"])
    return params_from_mapping(values, path)


# ---------------------------------------------------------------------------
# commands

def cmd_fit(args):
    panel = _load_panel(args.data)
    from .factor_model import ModelSpec

    spec = ModelSpec(Family(args.model), panel.k, panel.categories)
    options = FitOptions(nodes=args.nodes, restarts=args.starts, seed=args.seed)
    fit = fit_mle(spec, panel, options)
    report = Report("maxfactor fit report", _provenance(args))
    report.kv("model", {"family": spec.family.value, "k": spec.k,
                        "labels": ",".join(spec.labels)})
    report.kv("params", fit.theta_hat.to_dict(spec))
    report.kv("std_errors", fit.std_errors)
    report.kv("summary", {"log_lik": fit.log_lik, "n_params": fit.n_params, "aic": fit.aic,
                          "bic": fit.bic, "n_periods": fit.n_periods, "nodes": fit.nodes,
                          "converged": fit.converged, "iterations": fit.iterations,
                          "simplex_size": fit.simplex_size, "hessian_ok": fit.hessian_ok,
                          "flags": ";".join(fit.flags)})
    report.table("boundary", ["category", "factor_absent"],
                 [(label, bool(b)) for label, b in zip(spec.labels, fit.boundary_report)])
    _write(args.out, report.render())
    if not fit.converged:
        print(f"fit did not converge; diagnostic report written to {args.out}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_nonpar(args):
    panel = _load_panel(args.data)
    if args.weighted:
        est = weighted_estimates(panel, use_corrected_scaling=not args.paper_literal_scaling,
                                 target_denominators=args.target_denominators)
    else:
        est = preliminary_estimates(panel)
    labels = panel.categories
    rows = [("pi_r", labels[r], "", est.pi_r[r], est.se_r[r]) for r in range(panel.k)]
    rows += [("pi_rr", labels[r], labels[r], est.pi_rs[r, r], est.se_rs[r, r])
             for r in range(panel.k)]
    rows += [("pi_rs", labels[r], labels[s], est.pi_rs[r, s], est.se_rs[r, s])
             for r in range(panel.k) for s in range(r + 1, panel.k)]
    report = Report("maxfactor nonparametric report", _provenance(args))
    report.kv("summary", {"method": est.method, "n_periods": panel.n, "k": panel.k})
    report.table("estimates", ["quantity", "category", "other", "estimate", "std_error"], rows)
    pairs = [f"{labels[r]}/{labels[s]}" for r in range(panel.k) for s in range(r + 1, panel.k)
             if est.fallback_pairs[r, s]]
    report.kv("flags", {
        "fallback": ",".join(l for l, f in zip(labels, est.fallback) if f),
        "fallback_pairs": ",".join(pairs),
        "degenerate": ",".join(l for l, f in zip(labels, est.degenerate) if f),
        "degraded": ",".join(est.degraded)})
    _write(args.out, report.render())
    return EXIT_OK


def _matrix_rows(labels, matrix):
    return [[labels[r]] + list(matrix[r]) for r in range(len(labels))]


def cmd_implied(args):
    spec, theta = _load_fit(args.fit)
    rule = default_rule(args.nodes)
    pi, joint = implied_matrix(spec, theta, rule, diagonal=args.diagonal)
    rr = np.full_like(joint, np.nan)
    for r in range(spec.k):
        for s in range(spec.k):
            try:
                rr[r, s] = risk_ratio(pi[r], pi[s], joint[r, s])
            except MaxFactorError:
                pass
    labels = list(spec.labels)
    report = Report("maxfactor implied report", _provenance(args))
    report.kv("model", {"family": spec.family.value, "k": spec.k, "labels": ",".join(labels)})
    report.table("pi_r", ["category", "pi"], zip(labels, pi))
    report.table("pi_rs", ["category"] + labels, _matrix_rows(labels, joint))
    report.table("risk_ratio", ["category"] + labels, _matrix_rows(labels, rr))
    _write(args.out, report.render())
    return EXIT_OK


def cmd_predict(args):
    spec, theta = _load_fit(args.fit)
    panel = _load_panel(args.data)
    if set(panel.categories) != set(spec.labels):
        raise UsageError(f"--data: categories {panel.categories} do not match the fitted "
                         f"model's {spec.labels}")
    panel = panel.select(spec.labels)
    pi = prediction_intervals(spec, theta, panel.exposures, args.draws, args.level, args.seed)
    inside = interval_coverage(pi, panel)
    rows = []
    for j, period in enumerate(panel.periods):
        for r, label in enumerate(panel.categories):
            rows.append((period, label, panel.exposures[r, j], panel.losses[r, j],
                         pi.lower[r, j], pi.upper[r, j], bool(inside[r, j])))
    prov = _provenance(args)
    prov.update(rank_lower=pi.rank_lower, rank_upper=pi.rank_upper, retained=pi.retained)
    _write(args.out, _csv_text(prov, ["period", "category", "exposures", "observed",
                                      "lower", "upper", "inside"], rows))
    if args.plot:
        from .plotting import plot_intervals

        plot_intervals(args.plot, panel, pi)
    return EXIT_OK


def _load_sizes(path, spec, seed):
    text = _read(path, "--sizes")
    first = next((ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")), "")
    if tuple(x.strip() for x in first.split(",")) == HEADER:
        panel = parse_panel(text)
        if set(panel.categories) != set(spec.labels):
            raise UsageError(f"--sizes: categories {panel.categories} do not match the "
                             f"parameter file's {spec.labels}")
        panel = panel.select(spec.labels)
        return panel.exposures, panel.periods
    values = read_kv(text, path)

    def per_cat(name):
        keys = [f"size.{name}.{label}" for label in spec.labels]
        missing = [key for key in keys if key not in values]
        if missing:
            raise UsageError(f"--sizes: {path!r} is missing {', '.join(missing)}")
        return [float(values[key]) for key in keys]

    config = SizeConfig(per_cat("trials"), per_cat("a"), per_cat("b"),
                        int(values.get("n_periods", 19)))
    return gen_sizes(config, seed, 0, spec.labels), None


def cmd_simulate(args):
    spec, theta = params_from_text(_read(args.params, "--params"), args.params)
    if spec.family is not Family(args.model):
        raise UsageError(f"--model {args.model} does not match family "
                         f"{spec.family.value} in {args.params!r}")
    sizes, periods = _load_sizes(args.sizes, spec, args.seed)
    panel = gen_panel(spec, theta, sizes, args.seed, periods=periods)
    _write(args.out, serialize_panel(panel, {k: fmt(v) for k, v in _provenance(args).items()}))
    return EXIT_OK


def cmd_study(args):
    config = StudyConfig.from_mapping(read_kv(_read(args.config, "--config"), args.config))
    report = rrmse_study(config, args.seed)
    rows = [(r.method, r.target, r.rrmse, r.delta_pct, r.bias_sign, r.failures)
            for r in report.rows]
    prov = _provenance(args)
    prov["replications"] = report.replications
    _write(args.out, _csv_text(prov, ["method", "target", "rrmse", "delta_pct", "bias_sign",
                                      "failures"], rows))
    return EXIT_OK


def cmd_curves(args):
    spec, theta = _load_fit(args.fit)
    if args.grid < 2:
        raise UsageError("--grid must be at least 2")
    t = np.arange(1, args.grid + 1) / (args.grid + 1.0)
    curves = {label: excess_probability(spec, theta, r, t) for r, label in enumerate(spec.labels)}
    rows = [[t[i]] + [curves[label][i] for label in spec.labels] for i in range(t.size)]
    _write(args.out, _csv_text(_provenance(args), ["t"] + list(spec.labels), rows))
    if args.plot:
        from .plotting import plot_excess_curves

        plot_excess_curves(args.plot, t, curves)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="maxfactor", description="Factor models for dependent loss counts.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    models = [f.value for f in Family]

    s = sub.add_parser("fit", help="maximum-likelihood fit of a factor model")
    s.add_argument("--model", required=True, choices=models)
    s.add_argument("--data", required=True)
    s.add_argument("--nodes", type=int, default=None,
                   help="quadrature nodes (default: chosen from the largest exposure)")
    s.add_argument("--starts", type=int, default=3, help="jittered restarts")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("nonpar", help="nonparametric loss probability estimates")
    s.add_argument("--data", required=True)
    s.add_argument("--weighted", action="store_true")
    s.add_argument("--paper-literal-scaling", action="store_true",
                   help="use the uncorrected variance scalings")
    s.add_argument("--target-denominators", action="store_true",
                   help="shrink toward each target's own preliminary estimate")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_nonpar)

    s = sub.add_parser("implied", help="implied probabilities and risk ratios of a fit")
    s.add_argument("--fit", required=True)
    s.add_argument("--nodes", type=int, default=128)
    s.add_argument("--diagonal", choices=["shared", "independent"], default="shared")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_implied)

    s = sub.add_parser("predict", help="per-cell prediction intervals of loss counts")
    s.add_argument("--fit", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--draws", type=int, default=5000)
    s.add_argument("--level", type=float, default=0.90)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", default=None, help="also render a PNG to this path")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("simulate", help="simulate a panel")
    s.add_argument("--model", required=True, choices=models)
    s.add_argument("--params", required=True)
    s.add_argument("--sizes", required=True, help="panel CSV or size configuration")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("study", help="estimator comparison study")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_study)

    s = sub.add_parser("curves", help="excess-probability curves of a fit")
    s.add_argument("--fit", required=True)
    s.add_argument("--grid", type=int, default=200)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", default=None, help="also render a PNG to this path")
    s.set_defaults(func=cmd_curves)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except MaxFactorError as exc:
        code = EXIT_NUMERIC if isinstance(exc, ArithmeticError) else EXIT_INPUT
        print(f"maxfactor: error: {exc}", file=sys.stderr)
        return code
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"maxfactor: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run())
