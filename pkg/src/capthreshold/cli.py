"""Command-line entry point: ``capthreshold <command> [options]``.

Parameters are resolved as flags > config file (flat ``key = value``) >
built-in defaults. Results go to stdout or ``--output`` as JSON or CSV;
errors are printed as ``{"error": code, "message": text}``.

Exit codes: 0 success, 1 verify failure, 2 usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time

import numpy as np

from . import __version__, analytic, backtest, bellman, sde
from .analytic import CostModel
from .errors import ConvergenceError, DomainError, ReliabilityError, ResolutionError
from .sde import OuParams

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
VERIFY_BUDGET_S = 300.0

SWEEP_COLUMNS = ["beta", "q_analytic", "q_fixed_point", "q_grid_search",
                 "q_naive", "q_brownian", "regime", "error"]

# name -> (type, default); None means "required" when listed in REQUIRED
PARAMS = {
    "epsilon": (float, None),
    "beta": (float, None),
    "gamma": (float, None),
    "maxpos": (float, 1.0),
    "seed": (int, 0),
    "steps": (int, 1_000_000),
    "paths": (int, 1),
    "horizon": (int, None),
    "grid_points": (int, 201),
    "pos_points": (int, 3),
    "method": (str, "analytic,fixed-point"),
    "beta_min": (float, None),
    "beta_max": (float, None),
    "points": (int, 12),
    "grid_search": (bool, False),
    "zero_start": (bool, False),
    "q": (str, None),
    "q_star": (float, None),
    "q_min": (float, None),
    "q_max": (float, None),
    "candidates": (int, 21),
    "rounds": (int, 6),
    "shrink": (float, 0.4),
    "mode": (str, "threshold"),
    "lam": (float, 1.0),
    "start": (float, None),
    "max_steps": (int, None),
    "every": (int, 1),
    "format": (str, None),
    "output": (str, None),
    "self_test_fault": (bool, False),
    "only": (str, None),
}

REQUIRED = {
    "solve": ("epsilon", "beta", "gamma"),
    "sweep": ("epsilon", "gamma", "beta_min", "beta_max"),
    "backtest": ("epsilon", "beta", "gamma"),
    "optimize": ("epsilon", "beta", "gamma"),
    "bellman": ("epsilon", "beta", "gamma"),
    "passage": ("epsilon", "beta", "gamma"),
    "verify": (),
}

DEFAULT_FORMAT = {"sweep": "csv"}


class UsageError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError("usage", message)


# ---------------------------------------------------------------------------
# argument parsing and config resolution
# ---------------------------------------------------------------------------


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _int(text: str) -> int:
    """Integers, also written as 1e7."""
    v = float(text)
    if not v.is_integer():
        raise ValueError(text)
    return int(v)


def _add(p, name, help_=None, **kw):
    typ = PARAMS[name][0]
    if typ is int:
        typ = _int
    if typ is bool:
        p.add_argument(_flag(name), dest=name, action="store_true", default=None, help=help_)
    else:
        p.add_argument(_flag(name), dest=name, type=typ, default=None, help=help_, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="capthreshold", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key=value file; flags take precedence")
        for k in ("seed", "format", "output"):
            _add(p, k)
        if name != "verify":
            for k in ("epsilon", "beta", "gamma", "maxpos"):
                _add(p, k)
        return p

    p = command("solve", "threshold by closed form, fixed point and/or Bellman")
    _add(p, "method", "comma list of analytic, fixed-point, bellman")
    for k in ("horizon", "grid_points", "pos_points"):
        _add(p, k)

    p = command("sweep", "log-spaced beta sweep at fixed epsilon, gamma")
    for k in ("beta_min", "beta_max", "points", "steps", "paths", "zero_start"):
        _add(p, k)
    _add(p, "grid_search", "add the simulated grid-search column")

    p = command("backtest", "compare thresholds on a shared path ensemble")
    _add(p, "q", "comma list of thresholds")
    for k in ("q_star", "steps", "paths", "zero_start"):
        _add(p, k)

    p = command("optimize", "iterated grid search of the threshold or half-band")
    for k in ("steps", "paths", "candidates", "rounds", "shrink", "q_min", "q_max",
              "lam", "zero_start"):
        _add(p, k)
    _add(p, "mode", choices=["threshold", "band"])

    p = command("bellman", "finite-horizon value iteration")
    for k in ("horizon", "grid_points", "pos_points", "every"):
        _add(p, k)

    p = command("passage", "Monte-Carlo first exit from (-q, q)")
    _add(p, "q", "barrier; default is the closed-form threshold")
    for k in ("start", "paths", "max_steps"):
        _add(p, k)

    p = command("verify", "run the built-in invariant suite")
    _add(p, "self_test_fault", "break one tolerance so exactly one check fails")
    _add(p, "only", "comma list of check names")
    return parser


def read_config(path: str) -> dict:
    out = {}
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as exc:
        raise UsageError("usage", f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError("usage", f"{path}:{n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in PARAMS:
            raise UsageError("usage", f"{path}:{n}: unknown key {key!r}")
        out[key] = _coerce(key, val)
    return out


def _coerce(key, val):
    typ = PARAMS[key][0]
    try:
        if typ is bool:
            if val.lower() in ("1", "true", "yes", "on"):
                return True
            if val.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(val)
        if typ is int:
            return _int(val)
        return typ(val)
    except ValueError as exc:
        raise UsageError("usage", f"bad value for {key}: {val!r}") from exc


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then config file, then explicit flags."""
    cfg = {k: d for k, (_, d) in PARAMS.items()}
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for k in PARAMS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    cmd = args.command
    for k in REQUIRED[cmd]:
        if cfg[k] is None:
            raise UsageError("missing parameter", f"{cmd} needs {_flag(k)}")
    if cfg["format"] is None:
        cfg["format"] = DEFAULT_FORMAT.get(cmd, "json")
    if cfg["format"] not in ("csv", "json"):
        raise UsageError("usage", "format must be csv or json")
    if cmd != "verify" and not (cfg["gamma"] > 0):
        raise DomainError("gamma must be > 0")
    return cfg


def _model(cfg) -> tuple[OuParams, CostModel]:
    return OuParams(cfg["epsilon"], cfg["beta"]), CostModel(cfg["gamma"], cfg["maxpos"])


def _ensemble(params, cfg, seed=None):
    start, burn = "stationary", 0
    if cfg["zero_start"]:
        start, burn = 0.0, sde.burn_in_steps(params)
    return backtest.Ensemble(params, cfg["steps"], cfg["paths"],
                             cfg["seed"] if seed is None else seed, start, burn)


def _floats(s: str) -> list[float]:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError("usage", f"expected comma-separated numbers, got {s!r}") from exc


# ---------------------------------------------------------------------------
# commands; each returns (payload, table) where table is (header, rows) or None
# ---------------------------------------------------------------------------


def cmd_solve(cfg):
    params, cost = _model(cfg)
    methods = [m.strip() for m in cfg["method"].split(",") if m.strip()]
    unknown = set(methods) - {"analytic", "fixed-point", "bellman"}
    if unknown or not methods:
        raise UsageError("usage", f"unknown method(s): {sorted(unknown)}")
    cont = analytic.threshold_continuum(params, cost)
    q_star, diag = {}, {}
    for m in methods:
        if m == "analytic":
            q_star[m], diag[m] = cont.q_star, cont.diagnostics
        elif m == "fixed-point":
            sol = bellman.stationary_g_solve(params, cost)
            q_star[m] = sol.q_star
            diag[m] = {"iterations": sol.iterations, "outer_iterations": sol.outer_iterations,
                       "residual": sol.residual, "n_nodes": sol.n_nodes}
        else:
            horizon = cfg["horizon"] or math.ceil(50.0 / params.epsilon)
            grid = bellman.GridSpec.for_params(params, cfg["grid_points"], cost=cost)
            sol = bellman.finite_horizon_solve(params, cost, horizon, grid, cfg["pos_points"],
                                               keep_grids=False)
            q_star[m] = float(sol.thresholds[0])
            diag[m] = {"horizon": horizon, "grid_spacing": sol.grid_spacing,
                       "bang_bang_violations": sol.bang_bang_violations}
    limits = analytic.threshold_limits(params, cost)
    payload = {
        "q_star": q_star,
        "eta": cont.eta,
        "regime": cont.regime.value,
        "limits": {k: v for k, v in limits.items() if k != "diagnostics"},
        "limit_diagnostics": limits["diagnostics"],
        "diagnostics": diag,
    }
    rows = [[m, q_star[m], cont.eta, cont.regime.value] for m in methods]
    return payload, (["method", "q_star", "eta", "regime"], rows)


def cmd_sweep(cfg):
    lo, hi, n = cfg["beta_min"], cfg["beta_max"], cfg["points"]
    if not (0 < lo <= hi) or n < 1:
        raise DomainError("need 0 < beta_min <= beta_max and points >= 1")
    betas = np.geomspace(lo, hi, n) if n > 1 else np.array([lo])
    gamma = cfg["gamma"]
    rows = []
    for i, b in enumerate(betas):
        row = {c: "" for c in SWEEP_COLUMNS}
        row["beta"] = float(b)
        errors = []
        try:
            params, cost = _model({**cfg, "beta": float(b)})
            lim = analytic.threshold_limits(params, cost)
            row["q_naive"], row["q_brownian"] = lim["naive"], lim["brownian"]
            cont = analytic.threshold_continuum(params, cost)
            row["q_analytic"], row["regime"] = cont.q_star, cont.regime.value
        except Exception as exc:
            errors.append(f"analytic: {exc}")
            params = None
        if params is not None:
            try:
                row["q_fixed_point"] = bellman.stationary_g_solve(params, cost).q_star
            except Exception as exc:
                errors.append(f"fixed-point: {type(exc).__name__}: {exc}")
            if cfg["grid_search"]:
                try:
                    # row i uses its own derived seed so rows are independent
                    ens = _ensemble(params, cfg, sde.derive_seed(cfg["seed"], i))
                    est, _ = backtest.grid_search(params, CostModel(gamma, cfg["maxpos"]),
                                                  ensemble=ens)
                    row["q_grid_search"] = est.q_star
                except Exception as exc:
                    errors.append(f"grid-search: {type(exc).__name__}: {exc}")
        row["error"] = "; ".join(errors)
        rows.append([row[c] for c in SWEEP_COLUMNS])
    payload = {"failed_rows": sum(1 for r in rows if r[-1])}
    return payload, (SWEEP_COLUMNS, rows)


def cmd_backtest(cfg):
    params, cost = _model(cfg)
    q_list = _floats(cfg["q"]) if cfg["q"] else [cost.gamma]
    ens = _ensemble(params, cfg)
    res = backtest.compare_strategies(params, cost, q_list, cfg["steps"], cfg["paths"],
                                      cfg["seed"], q_star=cfg["q_star"], ensemble=ens)
    header = ["label", "q", "gross_gain", "cost_paid", "net", "net_se", "n_trades"]
    rows = [[r.label, r.q, r.gross_gain, r.cost_paid, r.net, r.net_se, r.n_trades] for r in res]
    return {"strategies": [dict(zip(header, r)) for r in rows]}, (header, rows)


def cmd_optimize(cfg):
    params, cost = _model(cfg)
    rng = None
    if cfg["q_min"] is not None or cfg["q_max"] is not None:
        dlo, dhi = backtest.default_range(params, cost)
        rng = (cfg["q_min"] if cfg["q_min"] is not None else dlo,
               cfg["q_max"] if cfg["q_max"] is not None else dhi)
    search = backtest.SearchConfig(cfg["candidates"], cfg["rounds"], cfg["shrink"], rng)
    est, curve = backtest.grid_search(params, cost, search, mode=cfg["mode"], lam=cfg["lam"],
                                      ensemble=_ensemble(params, cfg))
    payload = est.as_dict()
    payload["mode"] = cfg["mode"]
    payload["reference"] = analytic.threshold_continuum(params, cost).q_star
    return payload, (["candidate", "mean_net"], [list(c) for c in curve])


def cmd_bellman(cfg):
    params, cost = _model(cfg)
    horizon = cfg["horizon"] or math.ceil(50.0 / params.epsilon)
    grid = bellman.GridSpec.for_params(params, cfg["grid_points"], cost=cost)
    sol = bellman.finite_horizon_solve(params, cost, horizon, grid, cfg["pos_points"],
                                       keep_grids=False)
    every = max(1, cfg["every"])
    idx = list(range(0, horizon, every))
    if idx[-1] != horizon - 1:
        idx.append(horizon - 1)
    payload = {
        "q0": float(sol.thresholds[0]),
        "q_last": float(sol.thresholds[-1]),
        "horizon": horizon,
        "grid_spacing": sol.grid_spacing,
        "bang_bang_violations": sol.bang_bang_violations,
        "worst_interior_gain": sol.worst_interior_gain,
    }
    return payload, (["t", "threshold"], [[t, float(sol.thresholds[t])] for t in idx])


def cmd_passage(cfg):
    params, cost = _model(cfg)
    q = float(cfg["q"]) if cfg["q"] else analytic.threshold_continuum(params, cost).q_star
    start = cfg["start"] if cfg["start"] is not None else q * (1.0 - 1e-3)
    paths = cfg["paths"] if cfg["paths"] > 1 else 10_000
    st = backtest.first_passage_mc(params, q, start, paths, cfg["seed"], cfg["max_steps"])
    payload = {
        "q": q, "start": start,
        "est_L": st.est_L, "se_L": st.se_L, "est_P": st.est_P, "se_P": st.se_P,
        "ratio": st.ratio, "se_ratio": st.se_ratio, "target": 2.0 * cost.gamma,
        "closed_L": analytic.expected_sum_closed(start, q, params),
        "closed_P": analytic.hitting_prob_closed(start, q, params),
        "n_paths": st.n_paths, "censored": st.censored, "mean_exit_time": st.mean_exit_time,
    }
    return payload, (list(payload), [list(payload.values())])


def cmd_verify(cfg):
    from .verify import run_suite

    only = [s.strip() for s in cfg["only"].split(",")] if cfg["only"] else None
    t0 = time.perf_counter()
    results = run_suite(fault=bool(cfg["self_test_fault"]), only=only)
    total = time.perf_counter() - t0
    failures = [r.name for r in results if not r.passed]
    payload = {
        "passed": not failures,
        "n_checks": len(results),
        "n_failed": len(failures),
        "failures": failures,
        "seconds": round(total, 3),
        "budget_warning": total > VERIFY_BUDGET_S,
        "checks": [r.as_dict() for r in results],
    }
    rows = [[r.name, r.passed, r.seconds] for r in results]
    return payload, (["check", "passed", "seconds"], rows)


COMMANDS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "backtest": cmd_backtest,
    "optimize": cmd_optimize,
    "bellman": cmd_bellman,
    "passage": cmd_passage,
    "verify": cmd_verify,
}


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def _json_safe(v):
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _metadata(cmd, cfg) -> dict:
    used = set(REQUIRED[cmd])
    params = {k: cfg[k] for k in PARAMS
              if cfg[k] is not None and k not in ("format", "output", "only", "seed")}
    return {"command": cmd, "seed": cfg["seed"], "version": __version__,
            "parameters": {k: params[k] for k in sorted(params) if k in used or
                           cfg[k] != PARAMS[k][1]}}


def render(cmd, cfg, payload, table) -> str:
    meta = _metadata(cmd, cfg)
    if cfg["format"] == "json":
        obj = dict(meta)
        obj.update(payload)
        if table is not None and cmd in ("sweep", "bellman", "optimize"):
            header, rows = table
            obj["rows"] = [dict(zip(header, r)) for r in rows]
        return json.dumps(_json_safe(obj), indent=2) + "\n"
    buf = io.StringIO()
    buf.write(f"# command={cmd}\n# seed={meta['seed']}\n# version={__version__}\n")
    for k, v in meta["parameters"].items():
        buf.write(f"# {k}={_cell(v)}\n")
    header, rows = table
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def _emit_error(code: str, message: str):
    sys.stdout.write(json.dumps({"error": code, "message": message}) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("usage", "a command is required: " + ", ".join(COMMANDS))
        cfg = resolve(args)
        payload, table = COMMANDS[args.command](cfg)
    except UsageError as exc:
        _emit_error(exc.code, str(exc))
        return EXIT_USAGE
    except DomainError as exc:
        _emit_error("domain", str(exc))
        return EXIT_USAGE
    except (ConvergenceError, ResolutionError, ReliabilityError) as exc:
        _emit_error(getattr(exc, "code", "convergence"), str(exc))
        return EXIT_NUMERIC
    text = render(args.command, cfg, payload, table)
    if cfg["output"]:
        with open(cfg["output"], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.command == "verify" and not payload["passed"]:
        return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
