"""Command-line front end.

Exit status is 0 on success, 2 on invalid input and 1 when a numerical
routine fails.  Output goes to ``--out`` or stdout and is byte-identical for
identical arguments.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import varred
from .cubature import quantized_expectation, rate_study, richardson_romberg
from .distrib import parse_distribution
from .gridio import GridFileError, GridStore, format_grid, read_grid
from .quantizer import (
    OptimizeConfig,
    QuantizerGrid,
    distortion,
    local_behavior_table,
    optimize,
    stationarity_residual,
)

EXPERIMENTS_1D = {
    "call": varred.VanillaCall,
    "put-on-call": varred.PutOnCall,
    "exchange-spread": varred.ExchangeSpread,
}


class UsageError(ValueError):
    pass


def _f8(v) -> str:
    return "" if v is None else format(float(v), ".8g")


def parse_function(name: str):
    """Named test functions: one, identity, square, call:K, put:K, digital:K, abs-pow:a."""
    head, _, arg = name.partition(":")
    if head in ("one", "identity", "square") and arg:
        raise UsageError(f"function {head!r} takes no parameter")
    if head == "one":
        return lambda x: np.ones_like(np.asarray(x, dtype=float))
    if head == "identity":
        return lambda x: np.asarray(x, dtype=float)
    if head == "square":
        return lambda x: np.asarray(x, dtype=float) ** 2
    try:
        a = float(arg)
    except ValueError:
        raise UsageError(f"bad function spec {name!r}") from None
    if not math.isfinite(a):
        raise UsageError(f"bad function spec {name!r}")
    if head == "call":
        return lambda x: np.maximum(np.asarray(x, dtype=float) - a, 0.0)
    if head == "put":
        return lambda x: np.maximum(a - np.asarray(x, dtype=float), 0.0)
    if head == "digital":
        return lambda x: (np.asarray(x, dtype=float) > a).astype(float)
    if head == "abs-pow":
        if a <= 0:
            raise UsageError("abs-pow exponent must be positive")
        return lambda x: np.abs(np.asarray(x, dtype=float)) ** a
    raise UsageError(f"unknown function {name!r}")


def _levels(text):
    try:
        out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("levels must be positive integers")
    return out


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _store(args) -> GridStore:
    directory = os.environ.get("QC_GRID_STORE") or args.grid_store
    try:
        return GridStore(directory)
    except OSError as exc:
        raise GridFileError(f"unreadable grid store {directory}: {exc}") from None


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text, encoding="ascii", newline="\n")
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# --------------------------------------------------------------------------
# subcommands


def cmd_quantize(args):
    dist = parse_distribution(args.dist)
    config = OptimizeConfig(tol=args.tol, max_iter=args.max_iter)
    grid, report = optimize(dist, args.n, config)
    if not report.converged:
        raise ArithmeticError(
            f"optimizer did not converge: gradient {report.final_gradient_norm:.3g} after {report.iterations} iterations"
        )
    if args.format == "json":
        _emit(
            args,
            _json(
                {
                    "dist": dist.spec,
                    "N": grid.level,
                    "distortion": grid.distortion,
                    "points": grid.points.tolist(),
                    "weights": grid.weights.tolist(),
                    "iterations": report.iterations,
                }
            ),
        )
    else:
        _emit(args, format_grid(grid))


def cmd_inspect(args):
    try:
        grid = read_grid(args.grid)
    except OSError as exc:
        raise GridFileError(f"cannot read {args.grid}: {exc}") from None
    fresh = QuantizerGrid.from_points(grid.distribution, grid.points)
    info = {
        "dist": grid.distribution.spec,
        "N": grid.level,
        "distortion_stored": grid.distortion,
        "distortion_recomputed": distortion(grid).value,
        "max_weight_diff": float(np.max(np.abs(fresh.weights - grid.weights))),
        "stationarity_residual": stationarity_residual(fresh),
        "mean_error": float(abs(fresh.weights @ fresh.points - grid.distribution.mean)),
    }
    if args.format == "json":
        _emit(args, _json(info))
    else:
        _emit(args, "".join(f"{k},{v if isinstance(v, (int, str)) else format(v, '.17g')}\n" for k, v in info.items()))


def _study_output(args, study):
    if args.format == "json":
        body = study.summary()
        body["rows"] = [dict(zip(("N", "estimate", "error", "scaled_error"), r)) for r in study.rows()]
        return _json(body)
    return study.to_csv()


def _single_output(args, n, estimate, reference=None):
    err = None if reference is None else abs(reference - estimate)
    if args.format == "json":
        return _json({"N": n, "estimate": estimate, "reference": reference, "error": err})
    return f"N,estimate,error\n{n},{_f8(estimate)},{_f8(err)}\n"


def _one_d(args, dist, f, method):
    store = _store(args)
    if args.levels:
        if args.reference is None:
            raise UsageError("a rate study needs --reference")
        study = rate_study(dist, f, args.reference, args.levels, args.k, method=method, ratio=args.ratio, store=store)
        return _study_output(args, study)
    if args.n is None:
        raise UsageError("give --n or --levels")
    if method == "rr":
        est = richardson_romberg(dist, f, args.n, args.ratio, store)
    else:
        est = quantized_expectation(store.get(dist, args.n), f)
    return _single_output(args, args.n, est, args.reference)


def cmd_cubature(args):
    _emit(args, _one_d(args, parse_distribution(args.dist), parse_function(args.f), "cubature"))


def cmd_rr(args):
    _emit(args, _one_d(args, parse_distribution(args.dist), parse_function(args.f), "rr"))


def _experiment(args):
    cls = EXPERIMENTS_1D[args.experiment]
    overrides = {}
    for name in ("s0", "strike", "r", "sigma", "T", "T1", "T2", "K1", "K2", "rho"):
        v = getattr(args, name, None)
        if v is None:
            continue
        if cls is varred.ExchangeSpread and name in ("s0", "sigma"):
            overrides[name] = (v, v)
        elif name in cls.__dataclass_fields__:
            overrides[name] = v
        else:
            raise UsageError(f"--{name} does not apply to {args.experiment}")
    return cls(**overrides), bool(overrides)


def cmd_price(args):
    exp, overridden = _experiment(args)
    dist, f = exp.integrand(args.basis)
    if args.reference is None:
        if args.reference_source == "tabulated" and not overridden:
            args.reference = exp.tabulated_reference
        else:
            args.reference = exp.reference()
    _emit(args, _one_d(args, dist, f, args.method))


def _load_config(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


def _pick(flag, cfg, key, default):
    if flag is not None:
        return flag
    return cfg.get(key, default)


def _basket_from(args, cfg):
    m = cfg.get("model")
    p = cfg.get("payoff", {})
    if m is not None:
        try:
            model = varred.BSModel(m["s0"], m["r"], m["sigmas"], m["corr"], m["T"])
        except KeyError as exc:
            raise UsageError(f"config model lacks {exc}") from None
        option = varred.BasketOption(model, np.asarray(p["alphas"], dtype=float), float(p["K"]))
        return option, cfg.get("reference")
    d = _pick(args.d, cfg, "d", 2)
    kwargs = {}
    for name in ("rho", "r", "s0", "strike", "T"):
        v = getattr(args, name)
        if v is not None:
            kwargs[name] = v
    option = varred.BasketOption.standard(d, **kwargs)
    ref = None if kwargs else option.tabulated_references.get(d)
    return option, ref


def cmd_mc_cv(args):
    cfg = _load_config(args.config)
    option, ref = _basket_from(args, cfg)
    reference = _pick(args.reference, cfg, "reference", ref)
    M = _pick(args.samples, cfg, "M", 10_000)
    n = _pick(args.replications, cfg, "n", 128)
    seed = _pick(args.seed, cfg, "seed", 0)
    spec = None
    if not args.crude:
        sc = cfg.get("spec", {})
        spec = varred.CVSpec(
            basis=_pick(args.basis, sc, "basis", "lognormal"),
            grid_level=_pick(args.n, sc, "grid_level", 200),
            lambda_=_pick(args.lambda_, sc, "lambda", None),
            lambda_mode=_pick(args.lambda_mode, sc, "lambda_mode", "same"),
        )
    res = varred.run_experiment(option.model, option, spec, M, n, seed, reference, _store(args))
    _emit(args, res.to_json() + "\n" if args.format == "json" else res.to_csv())


def cmd_local_behavior(args):
    dist = parse_distribution(args.dist)
    grid = _store(args).get(dist, args.n)
    table = local_behavior_table(grid, tuple(args.window))
    c = dist.density_power_integral(1.0 / 3.0)
    x = table[:, 0]
    mass_target = c * dist.pdf(x) ** (2.0 / 3.0)
    local_target = c**3 / 12.0
    rows = np.column_stack([table, table[:, 1] / mass_target - 1.0, table[:, 2] / local_target - 1.0])
    if args.format == "json":
        keys = ("x", "N_p", "N3_local", "mass_rel_dev", "local_rel_dev")
        _emit(args, _json({"N": args.n, "dist": dist.spec, "rows": [dict(zip(keys, map(float, r))) for r in rows]}))
    else:
        out = ["x,N_p,N3_local,mass_rel_dev,local_rel_dev"]
        out += [",".join(_f8(v) for v in r) for r in rows]
        _emit(args, "\n".join(out) + "\n")


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--grid-store", default=None, help="directory caching grids; QC_GRID_STORE overrides")

    p = argparse.ArgumentParser(prog="optquant", description="Optimal quantization cubature and control variates.")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", parents=[common], help="build an optimal grid")
    q.add_argument("--dist", required=True)
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--tol", type=float, default=None)
    q.add_argument("--max-iter", type=int, default=200)
    q.set_defaults(func=cmd_quantize)

    i = sub.add_parser("inspect", parents=[common], help="validate a stored grid file")
    i.add_argument("--grid", required=True)
    i.set_defaults(func=cmd_inspect)

    def one_d(sp):
        sp.add_argument("--n", type=int, default=None)
        sp.add_argument("--levels", type=_levels, default=None, help="comma list for a rate study")
        sp.add_argument("--reference", type=float, default=None)
        sp.add_argument("--k", type=float, default=2.0, help="scaling exponent of the error column")
        sp.add_argument("--ratio", type=float, default=1.2)

    for name, func in (("cubature", cmd_cubature), ("rr", cmd_rr)):
        c = sub.add_parser(name, parents=[common], help=f"{name} of a named function")
        c.add_argument("--dist", required=True)
        c.add_argument("--f", required=True, help="one|identity|square|call:K|put:K|digital:K|abs-pow:a")
        one_d(c)
        c.set_defaults(func=func)

    pr = sub.add_parser("price", parents=[common], help="price a one-dimensional benchmark")
    pr.add_argument("--experiment", choices=sorted(EXPERIMENTS_1D), required=True)
    pr.add_argument("--basis", choices=("gaussian", "lognormal"), default="gaussian")
    pr.add_argument("--method", choices=("cubature", "rr"), default="cubature")
    pr.add_argument("--reference-source", choices=("tabulated", "computed"), default="tabulated")
    for name in ("s0", "strike", "r", "sigma", "T", "T1", "T2", "K1", "K2", "rho"):
        pr.add_argument(f"--{name}", type=float, default=None)
    one_d(pr)
    pr.set_defaults(func=cmd_price)

    mc = sub.add_parser("mc-cv", parents=[common], help="basket Monte Carlo with quantized control variates")
    mc.add_argument("--config", default=None, help="JSON experiment document")
    mc.add_argument("--d", type=int, default=None)
    mc.add_argument("--n", type=int, default=None, help="grid level per coordinate")
    mc.add_argument("--samples", "-M", type=int, default=None)
    mc.add_argument("--replications", type=int, default=None)
    mc.add_argument("--basis", choices=("gaussian", "lognormal"), default=None)
    mc.add_argument("--lambda", dest="lambda_", type=_floats, default=None)
    mc.add_argument("--lambda-mode", choices=("same", "pilot"), default=None)
    mc.add_argument("--crude", action="store_true")
    mc.add_argument("--reference", type=float, default=None)
    for name in ("rho", "r", "s0", "strike", "T"):
        mc.add_argument(f"--{name}", type=float, default=None)
    mc.set_defaults(func=cmd_mc_cv)

    lb = sub.add_parser("local-behavior", parents=[common], help="cell masses and local distortions")
    lb.add_argument("--dist", default="normal:0,1")
    lb.add_argument("--n", type=int, default=1000)
    lb.add_argument("--window", type=_floats, default=[-1.0, 1.0])
    lb.set_defaults(func=cmd_local_behavior)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, TypeError, OSError) as exc:
        # GridFileError and UsageError are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
