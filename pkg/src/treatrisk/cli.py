"""Command-line front end: ``treatrisk estimate | bounds | simulate | generate``.

Exit codes: 0 success, 1 estimator failure, 2 bad input or configuration.
Reports are JSON/CSV only and are written atomically.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import re
import sys
import tempfile
from dataclasses import asdict, fields

import numpy as np

from .errors import InternalError, InvalidInput
from .inference import (
    estimate_cate_cvar, estimate_interquantile, estimate_level_difference,
    estimate_lower_bound_mixture, estimate_lower_bound_shift, estimate_lower_bound_variance,
    rearranged_estimates,
)
from .nuisance import NuisanceLearners, ObservationTable, fit_nuisances
from .regressors import RegressorSpec
from .simlab import DgpSpec, ExperimentConfig, coverage_experiment, generate

SCHEMA_VERSION = 1
DEFAULT_GRID = tuple(round(0.1 * k, 10) for k in range(1, 11))

# flag defaults; argparse itself uses None so that config-file values can be told apart
DEFAULTS = {
    "alpha_grid": list(DEFAULT_GRID),
    "folds": 5,
    "gamma": 0.9,
    "learner": "ols",
    "cate": "pseudo",
    "outcome": "marginal",
    "propensity": "0.5",
    "clip": 0.01,
    "variant": "upper",
    "alpha_hi": 1.0,
    "b": None,
    "rho": None,
    "seed": 0,
    "fold_mode": "shuffled",
    "input": None,
    "output": None,
    "no_rearrange": False,
    "reps": 100,
    "dgp": None,
    "experiment": None,
    "n": 2000,
}
COMMAND_KEYS = {
    "estimate": {"alpha_grid", "folds", "gamma", "learner", "cate", "outcome", "propensity",
                 "clip", "variant", "alpha_hi", "seed", "fold_mode", "input", "output",
                 "no_rearrange"},
    "bounds": {"alpha_grid", "folds", "gamma", "learner", "cate", "outcome", "propensity",
               "clip", "b", "rho", "seed", "fold_mode", "input", "output", "no_rearrange"},
    "simulate": {"reps", "seed", "output", "dgp", "experiment"},
    "generate": {"seed", "output", "dgp", "n"},
}


class ConfigError(Exception):
    pass


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser():
    parser = argparse.ArgumentParser(prog="treatrisk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, keys):
        p.add_argument("--config", help="JSON file with default values for any flag")
        if "input" in keys:
            p.add_argument("--input", help="CSV with columns x_1..x_d, a, y")
        p.add_argument("--output", help="output directory (file for generate)")
        p.add_argument("--seed", type=int)
        if "alpha_grid" in keys:
            p.add_argument("--alpha-grid", type=_float_list)
            p.add_argument("--folds", type=int)
            p.add_argument("--gamma", type=float)
            p.add_argument("--learner", help="ols, ridge:LAM, knn:K or stumps:T,D,R")
            p.add_argument("--cate", choices=["pseudo", "dr", "r"])
            p.add_argument("--outcome", choices=["marginal", "arms"])
            p.add_argument("--propensity", help="constant in (0,1) or 'fit'")
            p.add_argument("--clip", type=float)
            p.add_argument("--fold-mode", choices=["shuffled", "literal"])
            p.add_argument("--no-rearrange", action="store_true", default=None)

    est = sub.add_parser("estimate", help="CATE-CVaR curve over an alpha grid")
    common(est, COMMAND_KEYS["estimate"])
    est.add_argument("--variant", choices=["upper", "diff", "interquantile"])
    est.add_argument("--alpha-hi", type=float)

    bnd = sub.add_parser("bounds", help="upper and lower bound curves for ITE-CVaR")
    common(bnd, COMMAND_KEYS["bounds"])
    bnd.add_argument("--b", type=float, help="residual-heterogeneity bound")
    bnd.add_argument("--rho", type=_float_list, help="outcome correlations, e.g. --rho=-1,0,1")

    sim = sub.add_parser("simulate", help="Monte Carlo coverage experiment")
    common(sim, COMMAND_KEYS["simulate"])
    sim.add_argument("--reps", type=int)

    gen = sub.add_parser("generate", help="write a synthetic sample as CSV")
    common(gen, COMMAND_KEYS["generate"])
    gen.add_argument("--n", type=int)
    gen.add_argument("--dgp", help="DGP kind")
    return parser


def resolve_config(args):
    """Merge built-in defaults, the ``--config`` file and explicit flags, in that order."""
    keys = COMMAND_KEYS[args.command]
    cfg = {k: DEFAULTS[k] for k in keys}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - keys)
        if unknown:
            raise ConfigError(f"unrecognized config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if args.command == "generate" and isinstance(cfg.get("dgp"), str):
        cfg["dgp"] = {"kind": cfg["dgp"]}
    return cfg


def _check_grid(grid):
    grid = [float(a) for a in (grid if isinstance(grid, list) else _float_list(grid))]
    if not grid:
        raise ConfigError("alpha grid is empty")
    if any(not 0.0 < a <= 1.0 for a in grid):
        raise ConfigError("alpha grid values must lie in (0, 1]")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("alpha grid must be strictly increasing")
    return grid


def read_table(path):
    """Read an observation CSV; errors name the offending line."""
    if not path:
        raise ConfigError("--input is required")
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise ConfigError(f"cannot open {path}: {exc}")
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: no rows")
        header = [h.strip() for h in header]
        xcols = sorted((h for h in header if re.fullmatch(r"x_\d+", h)),
                       key=lambda h: int(h[2:]))
        for col in ("a", "y"):
            if col not in header:
                raise ConfigError(f"{path}: line 1: missing column {col!r}")
        extra = set(header) - set(xcols) - {"a", "y"}
        if extra:
            raise ConfigError(f"{path}: line 1: unexpected columns {sorted(extra)}")
        order = [header.index(c) for c in xcols + ["a", "y"]]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path}: line {lineno}: expected {len(header)} cells, "
                                  f"got {len(row)}")
            vals = []
            for j in order:
                cell = row[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise ConfigError(f"{path}: line {lineno}: column {header[j]!r}: "
                                      f"cannot parse {cell!r}")
                if not math.isfinite(v):
                    raise ConfigError(f"{path}: line {lineno}: column {header[j]!r}: "
                                      "value must be finite")
                vals.append(v)
            if vals[-2] not in (0.0, 1.0):
                raise ConfigError(f"{path}: line {lineno}: column 'a' must be 0 or 1")
            rows.append(vals)
    if not rows:
        raise ConfigError(f"{path}: no rows")
    arr = np.array(rows, dtype=float)
    return ObservationTable(arr[:, :-2], arr[:, -2], arr[:, -1])


def write_table(table, path):
    header = [f"x_{j + 1}" for j in range(table.d)] + ["a", "y"]
    rows = [[repr(float(v)) for v in table.x[i]] + [str(int(table.a[i])), repr(float(table.y[i]))]
            for i in range(table.n)]

    def dump(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)

    atomic_write(path, dump)


def atomic_write(path, writer):
    """Write via a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, obj):
    atomic_write(path, lambda fh: json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def make_learners(cfg):
    try:
        reg = RegressorSpec.parse(str(cfg["learner"]))
    except InvalidInput as exc:
        raise ConfigError(str(exc))
    prop = str(cfg["propensity"])
    if prop == "fit":
        propensity = "logistic"
    else:
        try:
            propensity = float(prop)
        except ValueError:
            raise ConfigError(f"--propensity must be a number in (0,1) or 'fit', got {prop!r}")
    return NuisanceLearners(propensity=propensity, cate=cfg["cate"], outcome=cfg["outcome"],
                            cate_regressor=reg, outcome_regressor=reg,
                            variance_regressor=reg, clip=float(cfg["clip"]))


def _curve(name, grid, run, rearrange):
    """Run ``run(alpha)`` across the grid; guard failures are recorded and skipped."""
    reports, alphas, skipped = [], [], []
    for alpha in grid:
        try:
            rep = run(alpha)
        except InvalidInput as exc:
            skipped.append({"variant": name, "alpha": alpha, "reason": str(exc)})
            continue
        if rep is None:
            continue
        reports.append(rep)
        alphas.append(alpha)
    values = [r.psi_hat for r in reports]
    if rearrange and reports:
        values = [float(v) for v in rearranged_estimates(alphas, reports)]
    rows = []
    for alpha, rep, v in zip(alphas, reports, values):
        rows.append({"variant": name, "alpha": alpha, "psi_hat": v, "psi_raw": rep.psi_hat,
                     "se": rep.se, "ci_lo": rep.ci[0], "ci_hi": rep.ci[1]})
    return rows, skipped


CURVE_FIELDS = ["variant", "alpha", "psi_hat", "psi_raw", "se", "ci_lo", "ci_hi"]


def _write_outputs(cfg, command, data, rows, skipped, extra=None):
    out = cfg["output"]
    if not out:
        raise ConfigError("--output is required")
    report = {
        "schema_version": SCHEMA_VERSION, "command": command, "config": cfg,
        "seed": cfg["seed"], "n": data.n, "d": data.d, "fingerprint": data.fingerprint(),
        "rearranged": not cfg["no_rearrange"], "results": rows, "skipped": skipped,
    }
    if extra:
        report.update(extra)
    _write_json(os.path.join(out, "report.json"), report)

    def dump(fh):
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    atomic_write(os.path.join(out, "curve.csv"), dump)


def cmd_estimate(cfg):
    grid = _check_grid(cfg["alpha_grid"])
    data = read_table(cfg["input"])
    nf = fit_nuisances(data, make_learners(cfg), int(cfg["folds"]), int(cfg["seed"]),
                       cfg["fold_mode"])
    kw = {"gamma": float(cfg["gamma"]), "nuisance": nf}
    variant = cfg["variant"]
    hi = float(cfg["alpha_hi"])
    if variant == "upper":
        def run(alpha):
            return estimate_cate_cvar(data, alpha, **kw)
    elif variant == "diff":
        def run(alpha):
            # reported as CVaR_alpha - CVaR_alpha_hi, nondecreasing in alpha
            if alpha > hi:
                raise InvalidInput(f"alpha exceeds alpha_hi={hi:g}")
            return estimate_level_difference(data, alpha, hi, **kw).negated()
    elif variant == "interquantile":
        def run(alpha):
            if alpha >= hi:
                raise InvalidInput(f"alpha must be below alpha_hi={hi:g}")
            return estimate_interquantile(data, alpha, hi, **kw)
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    rows, skipped = _curve(variant, grid, run, not cfg["no_rearrange"])
    _write_outputs(cfg, "estimate", data, rows, skipped, {"nuisance": nf.learners})
    return 0


def cmd_bounds(cfg):
    grid = _check_grid(cfg["alpha_grid"])
    b = cfg["b"]
    rhos = cfg["rho"]
    if rhos is not None and not isinstance(rhos, list):
        rhos = [float(rhos)]
    if b is None and not rhos:
        raise ConfigError("bounds needs --b and/or --rho")
    if b is not None and not (float(b) >= 0 and math.isfinite(float(b))):
        raise ConfigError("--b must be finite and nonnegative")
    if rhos and any(not -1.0 <= r <= 1.0 for r in rhos):
        raise ConfigError("--rho values must lie in [-1, 1]")
    data = read_table(cfg["input"])
    learners = make_learners(cfg)
    if rhos:
        learners = NuisanceLearners(**{**{f.name: getattr(learners, f.name)
                                          for f in fields(learners)}, "variance": "fit"})
    nf = fit_nuisances(data, learners, int(cfg["folds"]), int(cfg["seed"]), cfg["fold_mode"])
    kw = {"gamma": float(cfg["gamma"]), "nuisance": nf}
    rearrange = not cfg["no_rearrange"]
    rows, skipped = _curve("upper", grid, lambda a: estimate_cate_cvar(data, a, **kw), rearrange)
    if b is not None:
        b = float(b)
        for name, fn in (("lb_shift", estimate_lower_bound_shift),
                         ("lb_mixture", estimate_lower_bound_mixture)):
            r, s = _curve(f"{name}(b={b:g})", grid, lambda a, fn=fn: fn(data, a, b, **kw), rearrange)
            rows += r
            skipped += s
    for rho in rhos or []:
        r, s = _curve(f"lb_variance(rho={rho:g})", grid,
                      lambda a, rho=rho: estimate_lower_bound_variance(data, a, rho=rho, **kw),
                      rearrange)
        rows += r
        skipped += s
    _write_outputs(cfg, "bounds", data, rows, skipped, {"nuisance": nf.learners})
    return 0


def _dgp_from(cfg):
    raw = dict(cfg.get("dgp") or {})
    if "n" in cfg and "n" not in raw:
        raw["n"] = cfg["n"]
    raw.setdefault("seed", cfg["seed"])
    known = {f.name for f in fields(DgpSpec)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unrecognized DGP keys: {', '.join(unknown)}")
    if raw.get("coef") is not None:
        raw["coef"] = tuple(raw["coef"])
    try:
        return DgpSpec(**raw)
    except (InvalidInput, TypeError) as exc:
        raise ConfigError(f"invalid DGP: {exc}")


def cmd_simulate(cfg):
    spec = _dgp_from(cfg)
    raw = dict(cfg.get("experiment") or {})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unrecognized experiment keys: {', '.join(unknown)}")
    try:
        exp = ExperimentConfig(**raw)
    except (InvalidInput, TypeError) as exc:
        raise ConfigError(f"invalid experiment: {exc}")
    reps = int(cfg["reps"])
    if reps < 1:
        raise ConfigError("--reps must be positive")
    if not cfg["output"]:
        raise ConfigError("--output is required")
    summary = coverage_experiment(spec, exp, reps, int(cfg["seed"]))
    out = cfg["output"]

    def dump(fh):
        for rec in summary.records:
            fh.write(json.dumps(rec, sort_keys=True, default=_jsonable) + "\n")

    atomic_write(os.path.join(out, "replications.jsonl"), dump)
    body = {"schema_version": SCHEMA_VERSION, "command": "simulate", "config": cfg,
            "seed": cfg["seed"], "dgp": asdict(spec), "experiment": asdict(exp),
            **summary.to_dict()}
    _write_json(os.path.join(out, "summary.json"), body)
    return 0


def cmd_generate(cfg):
    spec = _dgp_from(cfg)
    if spec.kind == "bivariate_normal":
        raise ConfigError("bivariate_normal has no covariates and cannot be estimated on")
    if not cfg["output"]:
        raise ConfigError("--output is required")
    write_table(generate(spec).table, cfg["output"])
    return 0


COMMANDS = {"estimate": cmd_estimate, "bounds": cmd_bounds,
            "simulate": cmd_simulate, "generate": cmd_generate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, InvalidInput) as exc:
        print(f"treatrisk: error: {exc}", file=sys.stderr)
        return 2
    except (InternalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"treatrisk: estimator failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
