"""``bdro`` command line: run benchmark experiments and write CSV/SVG results.

Settings come from (highest priority first) command-line flags, an optional
flat ``key = value`` config file given with ``--config``, the ``BDRO_SEED``
environment variable (seed only) and the experiment's defaults.

Exit codes: 0 success, 1 every solver failed in every replication,
2 configuration or data error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .calibration import InfeasibleCalibration, epsilon1, min_kl_ball
from .cost_models import ConfigurationError
from .distributions import RandomStream
from .evaluation import expand_methods, generate_data, sweep_frontier
from .experiments import EXPERIMENTS, get_experiment
from .posterior import DataError, as_data_matrix
from .solvers import SolverConfig, empirical_saa_solve, posterior_scenarios
from .svgplot import frontier_svg

log = logging.getLogger("bayesdro")

FRONTIER_COLUMNS = (
    "experiment", "method", "epsilon_label", "epsilon_mean", "epsilon_se", "solution_mean",
    "solution_se", "oos_mean", "oos_mean_se", "oos_variance", "solution_error",
    "solution_error_se", "k", "status",
)
RUN_METHODS = ("bdro", "bayes-avg", "saa", "true")
FRONTIER_METHODS = ("bdro", "kl-dro", "w1-dro", "w2-dro", "bayes-avg", "saa", "true")
DEFAULT_MODES = ("eps1", "eps2", "eps3")
DISPLAY = {"bayes-avg": "Bayesian avg", "saa": "empirical", "true": "true"}

# option name -> (converter, builtin default)
OPTIONS = {
    "experiment": (str, "newsvendor-1d-exact"),
    "n": (int, None),
    "k": (int, None),
    "seed": (int, None),
    "methods": (str, None),
    "epsilon_grid": (str, None),
    "w_grid": (str, None),
    "epsilon_mode": (str, None),
    "mc_l": (int, 100),
    "n_theta": (int, 100),
    "n_xi": (int, 100),
    "jobs": (int, 1),
    "out": (str, "results"),
    "svg": (str, None),
    "data": (str, None),
}


class UsageError(Exception):
    pass


# -- configuration -----------------------------------------------------------


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` comments; keys use ``-`` or ``_``."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise UsageError(f"cannot read config file: {err}") from None
    try:
        parser.read_string("[bdro]\n" + text)
    except configparser.Error as err:
        raise UsageError(f"bad config file {path}: {err}") from None
    out = {}
    for key, value in parser["bdro"].items():
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise UsageError(f"unknown config key {key!r} in {path}")
        out[key] = value
    return out


def resolve_settings(args) -> dict:
    file_values = read_config_file(args.config) if args.config else {}
    settings = {}
    for key, (conv, default) in OPTIONS.items():
        value = getattr(args, key, None)
        if value is None and key in file_values:
            value = file_values[key]
        if value is None and key == "seed" and os.environ.get("BDRO_SEED"):
            value = os.environ["BDRO_SEED"]
        if value is None:
            value = default
        try:
            settings[key] = None if value is None else conv(value)
        except ValueError:
            raise UsageError(f"invalid value for {key}: {value!r}") from None
    if settings["seed"] is None:
        settings["seed"] = 0
    if settings["seed"] < 0:
        raise UsageError("seed must be non-negative")
    for key in ("mc_l", "n_theta", "n_xi", "jobs"):
        if settings[key] < 1:
            raise UsageError(f"{key.replace('_', '-')} must be positive")
    return settings


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad number list: {text!r}") from None


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def build_plan(settings, frontier: bool):
    """Experiment config and method specs for ``run``/``frontier``."""
    exp = get_experiment(settings["experiment"])
    exp = exp.with_overrides(n=settings["n"], k=settings["k"])
    default_methods = FRONTIER_METHODS if frontier else RUN_METHODS
    methods = _names(settings["methods"]) if settings["methods"] else list(default_methods)
    if settings["epsilon_grid"] is not None:
        grid = _floats(settings["epsilon_grid"])
    else:
        grid = list(exp.epsilon_grid) if frontier else []
    if settings["w_grid"] is not None:
        w_grid = _floats(settings["w_grid"])
    else:
        w_grid = list(exp.wasserstein_grid) if frontier else None
    modes = _names(settings["epsilon_mode"]) if settings["epsilon_mode"] else list(DEFAULT_MODES)
    for m in modes:
        if m not in DEFAULT_MODES:
            raise UsageError(f"unknown epsilon mode {m!r}; expected eps1, eps2 or eps3")
    if any(e < 0 or not math.isfinite(e) for e in grid + (w_grid or [])):
        raise UsageError("ambiguity radii must be finite and non-negative")
    try:
        specs = expand_methods(methods, grid, modes, w_grid, settings["mc_l"])
    except ValueError as err:
        raise UsageError(str(err)) from None
    grid_needed = [m for m in methods if ":" not in m and m in ("bdro-relaxed", "kl-dro",
                                                                "w1-dro", "w2-dro")]
    if grid_needed and not [s for s in specs if s.method in grid_needed]:
        raise UsageError(f"methods {grid_needed} need --epsilon-grid")
    if not specs:
        raise UsageError("no methods selected")
    if exp.dim > 1 and any(s.method == "w1-dro" for s in specs) and exp.support is None:
        if np.any(exp.cost_model.h > exp.cost_model.b):
            raise UsageError("w1-dro on this multi-item model needs h <= b")
    return exp, specs


# -- output ------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    return "nan" if math.isnan(v) else f"{v:.10g}"


def _vec(a) -> str:
    return ";".join(_fmt(v) for v in np.atleast_1d(a))


def frontier_csv(exp_name, records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FRONTIER_COLUMNS)
    for r in records:
        w.writerow([exp_name, r.method, r.epsilon_label, _fmt(r.mean_epsilon), _fmt(r.se_eps),
                    _vec(r.mean_solution), _vec(r.se_solution), _fmt(r.mu_hat), _fmt(r.se_mu),
                    _fmt(r.v_hat), _fmt(r.mean_solution_error), _fmt(r.se_solution_error),
                    _fmt(r.k), r.status])
    return buf.getvalue()


def _column_name(r):
    if r.method == "bdro":
        return r.epsilon_label if r.epsilon_label.startswith("eps") else f"bdro {r.epsilon_label}"
    if r.method in DISPLAY:
        return DISPLAY[r.method]
    return f"{r.method} {r.epsilon_label}"


def _cell(value, se, digits=2):
    if value is None or not np.all(np.isfinite(value)):
        return "-"
    value = np.atleast_1d(value)
    se = np.broadcast_to(np.asarray(se, dtype=float), value.shape)
    parts = [f"{v:.{digits}f}({s:.{digits}f})" if np.isfinite(s) else f"{v:.{digits}f}"
             for v, s in zip(value, se)]
    return ";".join(parts)


def summary_csv(records, dim) -> str:
    """Table layout: one column per method, rows epsilon/solution/mean/variance."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["statistic"] + [_column_name(r) for r in records])
    calibrated = lambda r: r.method not in ("bayes-avg", "saa", "true")  # noqa: E731
    w.writerow(["epsilon value"] + [_cell(r.mean_epsilon, r.se_eps) if calibrated(r) else "-"
                                    for r in records])
    w.writerow(["solution"] + [_cell(r.mean_solution, r.se_solution) if r.method != "true"
                               else _cell(r.mean_solution, np.nan) for r in records])
    if dim > 1:
        w.writerow(["solution error"] + [_cell(r.mean_solution_error, r.se_solution_error)
                                         for r in records])
    w.writerow(["mean"] + [_cell(r.mu_hat, r.se_mu) if r.method != "true"
                           else _cell(r.mu_hat, np.nan) for r in records])
    w.writerow(["variance"] + [_cell(r.v_hat, np.nan) for r in records])
    return buf.getvalue()


def frontier_plot(exp, records) -> str:
    series = {}
    for r in records:
        label = DISPLAY.get(r.method, r.method)
        note = "" if r.epsilon_label == "-" else r.epsilon_label
        series.setdefault(label, []).append((r.v_hat, r.mu_hat, note))
    return frontier_svg(series, title=f"{exp.name}, N={exp.n}, K={exp.k}")


# -- commands ----------------------------------------------------------------


def cmd_run(settings, frontier=False) -> int:
    exp, specs = build_plan(settings, frontier)
    solver = {"n_theta": settings["n_theta"], "n_xi": settings["n_xi"]}
    records, _ = sweep_frontier(exp, specs, exp.k, settings["seed"], settings["jobs"], solver)
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "frontier.csv").write_text(frontier_csv(exp.name, records))
    (out / "summary.csv").write_text(summary_csv(records, exp.dim))
    if settings["svg"]:
        Path(settings["svg"]).write_text(frontier_plot(exp, records))
    sys.stdout.write(summary_csv(records, exp.dim))
    solved = [r for r in records if r.method != "true"]
    if solved and all(r.k == 0 for r in solved):
        log.error("every solver failed in every replication")
        return 1
    return 0


def _calibration_rows(exp, data, settings, stream_id):
    config = SolverConfig(n_theta=settings["n_theta"], n_xi=1, seed=settings["seed"],
                          stream_id=stream_id)
    post = exp.prior.update(data)
    scen = posterior_scenarios(exp.prior, data, config)
    x_hat = empirical_saa_solve(data, exp.cost_model, config).x_star
    stream = config.stream.child(2)
    eps1 = np.array([epsilon1(data, post, th) for th in scen.thetas])
    eps3 = np.empty(len(scen.thetas))
    infeasible = 0
    for i, th in enumerate(scen.thetas):
        try:
            eps3[i] = min_kl_ball(th, x_hat, post, exp.cost_model, settings["mc_l"],
                                  stream.child(i))
        except InfeasibleCalibration:
            infeasible += 1
            eps3[i] = eps1[i]
    return float(eps1.mean()), float(eps1.mean() / 2), float(eps3.mean()), infeasible


def cmd_calibrate(settings) -> int:
    exp = get_experiment(settings["experiment"]).with_overrides(n=settings["n"])
    if settings["data"]:
        try:
            data = [as_data_matrix(np.loadtxt(settings["data"], delimiter=",", ndmin=1), exp.dim)]
        except (OSError, ValueError) as err:
            raise UsageError(f"cannot read data file: {err}") from None
    else:
        k = settings["k"] or 20
        data = [generate_data(exp.cost_model.truth, exp.n, exp.contamination,
                              RandomStream(settings["seed"], j).child(0)) for j in range(k)]
    rows = [(j,) + _calibration_rows(exp, d, settings, j) for j, d in enumerate(data)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replication", "eps1", "eps2", "eps3", "eps3_fallbacks"])
    for row in rows:
        w.writerow([row[0]] + [_fmt(v) for v in row[1:4]] + [row[4]])
    arr = np.array([r[1:4] for r in rows])
    if len(rows) > 1:
        se = arr.std(axis=0, ddof=1) / math.sqrt(len(rows))
        w.writerow(["mean(se)"] + [f"{m:.4f}({s:.4f})" for m, s in zip(arr.mean(axis=0), se)]
                   + [sum(r[4] for r in rows)])
    sys.stdout.write(buf.getvalue())
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "calibration.csv").write_text(buf.getvalue())
    return 0


def cmd_list() -> int:
    for name, exp in EXPERIMENTS.items():
        print(f"{name:32s} N={exp.n:<4d} {exp.description}")
    return 0


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("--experiment", choices=sorted(EXPERIMENTS))
    common.add_argument("--n", type=int, help="data size N")
    common.add_argument("--k", type=int, help="number of replications K (>= 2)")
    common.add_argument("--seed", type=int, help="master seed (default: $BDRO_SEED or 0)")
    common.add_argument("--methods", help="comma list, e.g. bdro,saa,kl-dro or bdro:eps3")
    common.add_argument("--epsilon-grid", help="comma list of radii for grid methods")
    common.add_argument("--w-grid", help="comma list of Wasserstein radii")
    common.add_argument("--epsilon-mode", help="calibrated radii for bdro, e.g. eps1,eps3")
    common.add_argument("--mc-l", type=int, help="Monte Carlo sample size L for eps3")
    common.add_argument("--n-theta", type=int, help="posterior draws per solve")
    common.add_argument("--n-xi", type=int, help="scenarios per posterior draw")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--out", help="output directory")
    common.add_argument("--svg", help="write the frontier plot to this file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bdro", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="calibrated methods and benchmarks")
    sub.add_parser("frontier", parents=[common], help="run over the epsilon grid")
    cal = sub.add_parser("calibrate", parents=[common], help="eps1/eps2/eps3 without solving")
    cal.add_argument("--data", help="file of observations (comma separated, one per row)")
    sub.add_parser("list-experiments", help="show the experiment registry")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.command == "list-experiments":
        return cmd_list()
    try:
        settings = resolve_settings(args)
        if args.command == "calibrate":
            return cmd_calibrate(settings)
        return cmd_run(settings, frontier=args.command == "frontier")
    except (UsageError, ConfigurationError, DataError) as err:
        print(f"bdro: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
