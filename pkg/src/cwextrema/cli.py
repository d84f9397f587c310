"""Command-line interface.

Every command prints one JSON document (or writes CSV rows with ``--csv``)
holding the resolved configuration, the results and the tool version.
Exit codes: 0 ok, 2 invalid input, 3 verification failure, 4 numeric failure.

Config files hold ``key = value`` lines (``#`` starts a comment); keys are
the long option names with dashes or underscores, list values are separated
by spaces or commas.  Flags given on the command line win over the file.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import approx_p, asymptotic_formula
from .constants import BAND_METHODS, BandRegion, estimate_h_band, estimate_htilde, h_mu_T
from .errors import CwExtremaError, InvalidConfig, VerificationFailure
from .model import canonicalize, classify
from .parallel import default_seed
from .simulation import PathConfig, estimate_p_crude_many, estimate_p_tilted, slope_fit
from .variational import NumericOptions, minimize_closed_form, minimize_numeric, taylor_coefficients, taylor_fd, taylor_residuals

LIST_SEP = ","


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _clean(obj):
    """Recursively convert to JSON-safe builtins; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            out[key] = json.dumps(v)
        else:
            out[key] = v
    return out


def _params(args):
    return canonicalize(args.mu1, args.mu2, args.rho)


def _path_config(args) -> PathConfig:
    return PathConfig(
        dt=args.dt,
        horizon_mult=args.horizon_mult,
        bridge_correction=not args.no_bridge,
        seed=args.seed,
        workers=args.workers,
    )


# ---------------------------------------------------------------------------
# commands: each returns (result dict, csv rows, verification ok)
# ---------------------------------------------------------------------------


def cmd_regimes(args):
    params = _params(args)
    reg = classify(params, args.tol)
    res = {"rho_hat1": reg.rho_hat1, "rho_hat2": reg.rho_hat2, "regime": str(reg.tag), "params": params.as_dict()}
    return res, [_flatten(res)], True


def _location_gap(closed, numeric) -> float:
    gaps = []
    for tc, sc in closed.minimizers:
        gaps.append(min(math.hypot(tn - tc, sn - sc) / math.hypot(tc, sc) for tn, sn in numeric.minimizers))
    return max(gaps)


def cmd_minimize(args):
    params = _params(args)
    out, ok = {"params": params.as_dict()}, True
    closed = numeric = None
    if args.method in ("closed", "both"):
        closed = minimize_closed_form(params)
        out["closed"] = closed.as_dict()
    if args.method in ("numeric", "both"):
        numeric = minimize_numeric(params, NumericOptions(grid_size=args.grid_size))
        out["numeric"] = numeric.as_dict()
    if closed is not None and numeric is not None:
        value_gap = abs(closed.value - numeric.value) / closed.value
        disc = {"value_rel": value_gap}
        ok = value_gap <= args.value_tol
        # on the attainment curve only the value is comparable
        if closed.segment is None:
            disc["location_rel"] = _location_gap(closed, numeric)
            ok = ok and disc["location_rel"] <= args.location_tol
        out["discrepancy"] = disc
        out["agree"] = ok
    rows = []
    for key in ("closed", "numeric"):
        if key in out:
            sol = out[key]
            rows.append(
                {"method": key, "regime": sol["regime"], "region": sol["region"], "value": sol["value"], "minimizers": json.dumps(sol["minimizers"])}
            )
    return out, rows, ok


def cmd_asymptote(args):
    params = _params(args)
    formula = asymptotic_formula(params, args.htilde)
    res = {"params": params.as_dict(), **formula.as_dict()}
    rows = []
    values = []
    for u in args.u or []:
        v = approx_p(formula, u)
        entry = {"u": u}
        if isinstance(v, tuple):
            entry["value_lo"], entry["value_hi"] = v
        else:
            entry["value"] = v
        if formula.exactness.value != "exact-for-all-u":
            entry["note"] = "asymptotic only" if formula.exactness.value == "asymptotic-equivalence" else "two-sided bounds"
        values.append(entry)
        rows.append({"u": u, "rate": formula.rate, "power": formula.power, "value": entry.get("value"), "value_lo": entry.get("value_lo"), "value_hi": entry.get("value_hi")})
    if values:
        res["values"] = values
        if len(values) == 1:
            res.update({k: v for k, v in values[0].items() if k.startswith("value")})
    return res, rows or [_flatten({k: v for k, v in res.items() if k != "values"})], True


def cmd_taylor(args):
    params = _params(args)
    tc = taylor_coefficients(params)
    res = {"params": params.as_dict(), "case": tc.case, "point": list(tc.point), "coefficients": tc.coeffs}
    violations = tc.positivity_violations()
    res["sign_violations"] = violations
    ok = not violations
    if args.check_fd:
        fd = taylor_fd(params, args.fd_step, args.richardson)
        resid = taylor_residuals(tc, fd)
        res["finite_differences"] = fd
        res["fd_rel_residuals"] = resid
        ok = ok and max(resid.values()) <= args.fd_tol
    rows = [{"name": k, "value": v, "fd": res.get("finite_differences", {}).get(k), "rel_residual": res.get("fd_rel_residuals", {}).get(k)} for k, v in tc.coeffs.items()]
    return res, rows, ok


def cmd_constant(args):
    ok = True
    if args.kind == "hmu":
        if args.mu is None or args.T is None:
            raise InvalidConfig("hmu needs --mu and --T")
        T_vals = args.T
        vals = [h_mu_T(args.mu, T) for T in T_vals]
        res = {"kind": "hmu", "mu": args.mu, "values": [{"T": T, "h": v, "ratio": v / T} for T, v in zip(T_vals, vals)]}
        return res, [{"mu": args.mu, "T": T, "h": v, "ratio": v / T} for T, v in zip(T_vals, vals)], True
    params = _params(args)
    if args.kind == "hband":
        if args.T is None:
            raise InvalidConfig("hband needs --T")
        rows, ests = [], []
        for T in args.T:
            est = estimate_h_band(params, BandRegion(T, args.S, args.grid_step), args.n, args.seed, args.workers, args.band_method)
            ests.append(est.as_dict())
            rows.append({"T": T, "S": args.S, "grid_step": args.grid_step, "mean": est.mean, "stderr": est.stderr, "n": est.n, "seed": est.seed})
        return {"kind": "hband", "params": params.as_dict(), "estimates": ests}, rows, True
    T_list = args.T or [20.0, 40.0]
    est = estimate_htilde(params, T_list, args.S, args.n, args.seed, args.grid_step, args.workers, args.band_method)
    lower = est.extra["lower_bound"]
    margin = (est.mean - lower) / est.stderr if est.stderr > 0 else float("inf")
    ok = margin > 3.0 and math.isfinite(est.mean)
    res = {"kind": "htilde", "params": params.as_dict(), "estimate": est.as_dict(), "bound_check": {"lower": lower, "margin_stderr": margin, "pass": ok}}
    rows = [{"T": p["T"], "mean": p["mean"], "stderr": p["stderr"], "ratio": p["ratio"]} for p in est.extra["per_T"]]
    rows.append({"T": "slope", "mean": est.mean, "stderr": est.stderr, "ratio": None})
    return res, rows, ok


def cmd_simulate(args):
    params = _params(args)
    cfg = _path_config(args)
    if args.kind == "crude":
        ests = estimate_p_crude_many(params, args.u, cfg, args.n)
    else:
        ests = [estimate_p_tilted(params, u, cfg, args.n) for u in args.u]
    res = {"kind": args.kind, "params": params.as_dict(), "estimates": [e.as_dict() for e in ests]}
    rows = [{"u": e.extra["u"], "mean": e.mean, "stderr": e.stderr, "n": e.n, "method": e.method, "seed": e.seed} for e in ests]
    return res, rows, True


def cmd_slope(args):
    params = _params(args)
    cfg = _path_config(args)
    fit = slope_fit(params, args.u_grid, cfg, args.n, remove_power=args.remove_power)
    res = {"params": params.as_dict(), **fit.as_dict()}
    ok = res["rel_error"] <= args.tol
    res["within_tol"] = ok
    rows = [{"u": e.extra["u"], "mean": e.mean, "stderr": e.stderr} for e in fit.estimates]
    return res, rows, ok


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _float_list(text):
    return [float(x) for x in str(text).replace(LIST_SEP, " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value file with defaults for any option")
    common.add_argument("--csv", type=Path, help="write CSV rows to this path instead of JSON to stdout")
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default: $CWEXTREMA_SEED or 12345)")
    common.add_argument("--workers", type=int, default=1)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--mu1", type=float, default=None)
    model.add_argument("--mu2", type=float, default=None)
    model.add_argument("--rho", type=float, default=None)

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--n", type=int, default=100000)
    sim.add_argument("--dt", type=float, default=None, help="time step (default: 0.005 * u * smallest optimal time)")
    sim.add_argument("--horizon-mult", type=float, default=8.0)
    sim.add_argument("--no-bridge", action="store_true", help="disable the Brownian-bridge crossing correction")

    parser = argparse.ArgumentParser(prog="cwextrema", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("regimes", parents=[common, model], help="thresholds and regime tag")
    p.add_argument("--tol", type=float, default=0.0)
    p.set_defaults(func=cmd_regimes)

    p = sub.add_parser("minimize", parents=[common, model], help="outer minimiser of g")
    p.add_argument("--method", choices=["closed", "numeric", "both"], default="closed")
    p.add_argument("--grid-size", type=int, default=400)
    p.add_argument("--value-tol", type=float, default=1e-6)
    p.add_argument("--location-tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("asymptote", parents=[common, model], help="exact asymptotic formula")
    p.add_argument("--u", type=float, nargs="+")
    p.add_argument("--htilde", type=float, default=None, help="point value for the constant H~")
    p.set_defaults(func=cmd_asymptote)

    p = sub.add_parser("taylor", parents=[common, model], help="local expansion coefficients")
    p.add_argument("--check-fd", action="store_true")
    p.add_argument("--fd-step", type=float, default=1e-4, help="finite-difference step relative to the minimiser coordinates")
    p.add_argument("--fd-tol", type=float, default=1e-3)
    p.add_argument("--richardson", action="store_true")
    p.set_defaults(func=cmd_taylor)

    p = sub.add_parser("constant", parents=[common, model], help="Pickands-type constants")
    p.add_argument("kind", choices=["hmu", "hband", "htilde"])
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--T", type=float, nargs="+", default=None)
    p.add_argument("--S", type=float, default=5.0)
    p.add_argument("--grid-step", type=float, default=0.005)
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--band-method", choices=list(BAND_METHODS), default="mixture")
    p.set_defaults(func=cmd_constant)

    p = sub.add_parser("simulate", parents=[common, model, sim], help="Monte Carlo estimate of P(u)")
    p.add_argument("kind", choices=["crude", "tilt"])
    p.add_argument("--u", type=float, nargs="+", required=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("slope", parents=[common, model, sim], help="fit the log-rate from tilted estimates")
    p.add_argument("--u-grid", type=float, nargs="+", default=[0.5, 0.75, 1.0, 1.25, 1.5])
    p.add_argument("--tol", type=float, default=0.1)
    p.add_argument("--remove-power", action="store_true")
    p.set_defaults(func=cmd_slope)
    return parser


def read_config(path: Path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{path}:{lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, argv, args) -> argparse.Namespace:
    """Fill options not given on the command line from the config file."""
    values = read_config(args.config)
    subparser = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    actions = {a.dest: a for a in subparser._actions}  # noqa: SLF001
    given = {a.dest for a in subparser._actions for opt in a.option_strings if any(tok == opt or tok.startswith(opt + "=") for tok in argv)}  # noqa: SLF001
    for key, text in values.items():
        action = actions.get(key)
        if action is None:
            raise InvalidConfig(f"unknown config key {key!r}")
        if key in given:
            continue
        try:
            if action.nargs in ("+", "*"):
                val = [action.type(x) for x in text.replace(LIST_SEP, " ").split()]
            elif action.type is None and isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
                val = text.lower() in ("1", "true", "yes", "on")
            else:
                val = action.type(text) if action.type else text
        except ValueError as exc:
            raise InvalidConfig(f"bad value for {key}: {text!r}") from exc
        if action.choices is not None and val not in action.choices:
            raise InvalidConfig(f"{key} must be one of {list(action.choices)}")
        setattr(args, key, val)
    return args


def _resolve(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is not None:
        args = _apply_config(parser, argv, args)
    if args.seed is None:
        args.seed = default_seed()
    needs_model = args.command != "constant" or args.kind in ("hband", "htilde")
    if needs_model:
        missing = [k for k in ("mu1", "mu2", "rho") if getattr(args, k, None) is None]
        if missing:
            raise InvalidConfig(f"missing required parameters: {', '.join('--' + m for m in missing)}")
    if args.command == "simulate" and not args.u:
        raise InvalidConfig("simulate needs --u")
    return args


def _config_echo(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _resolve(parser, argv)
        result, rows, ok = args.func(args)
    except CwExtremaError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    doc = {"command": args.command, "version": __version__, "config": _config_echo(args), "result": result, "verified": ok}
    doc = _clean(doc)
    if args.csv is not None:
        config_cols = {f"config.{k}": json.dumps(v) if isinstance(v, list) else v for k, v in doc["config"].items()}
        rows = [_clean({**r, **config_cols}) for r in rows]
        header = list(rows[0].keys()) if rows else []
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=header)
            writer.writeheader()
            writer.writerows(rows)
    else:
        print(json.dumps(doc, indent=2))
    if not ok:
        err = VerificationFailure(f"{args.command}: verification failed")
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return err.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
