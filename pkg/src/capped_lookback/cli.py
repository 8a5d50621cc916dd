"""Command-line front end.

Exit codes: 0 success, 1 a verification check failed, 2 usage or invalid
input, 3 the value is infinite in the requested regime, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Optional

import numpy as np

from ._jsonio import decode_number, encode_number
from .boundary_ode import solve_capped, solve_uncapped
from .errors import InfiniteValue, LookbackError
from .excursion import max_diagonal_discrepancy
from .levy_model import classify_regime, laplace_exponent, model_from_dict
from .monte_carlo import (
    SimConfig,
    estimate_finiteness,
    perturbation_test,
    simulate_price,
    verify_exit_identities,
)
from .scale_fn import build_scale_context
from .value_fn import (
    build_value_function,
    export_value_surface,
    finiteness_report,
    region,
    value,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_INFINITE = 3
EXIT_NUMERICAL = 4

ARBITRAGE_TOL = 1e-9


class UsageError(Exception):
    pass


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _warn(msg: str) -> None:
    sys.stderr.write(f"warning: {msg}\n")


def _number(text: str) -> float:
    try:
        return decode_number(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _count(text: str) -> int:
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a count: {text!r}") from None
    if not (math.isfinite(val) and val == int(val)):
        raise argparse.ArgumentTypeError(f"not an integer count: {text!r}")
    return int(val)


def _grid(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(",")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be 'lo,hi,n', got {text!r}") from None


# -- run specification ---------------------------------------------------------


def _load_model(path: Optional[str]):
    if path is None:
        raise UsageError("--model is required")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read model file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"model file is not valid JSON: {exc}") from None
    return model_from_dict(data)


def _resolve(args, need_point: bool = False):
    """(model, q, K, eps, x, s) from direct flags or the financial block."""
    model = _load_model(args.model)
    fin = [args.r, args.alpha, args.S0, args.M0, args.C]
    q, eps, x, s = args.q, args.eps, args.x, args.s
    if any(v is not None for v in fin):
        if args.r is None or args.alpha is None:
            raise UsageError("the financial block needs both --r and --alpha")
        q = args.r + args.alpha
        if args.C is not None:
            eps = math.log(args.C)
        if args.S0 is not None:
            x = math.log(args.S0)
        if args.M0 is not None:
            s = math.log(args.M0)
        psi1 = float(laplace_exponent(model, 1.0))
        if abs(psi1 - args.r) > ARBITRAGE_TOL:
            _warn(f"psi(1) = {psi1:.12g} differs from r = {args.r:.12g}; the discounted asset is not a martingale")
    if q is None:
        raise UsageError("--q (or --r with --alpha) is required")
    if eps is None:
        raise UsageError("--eps (or --C) is required; use 'inf' for no cap")
    K = args.K
    if need_point and (x is None or s is None):
        raise UsageError("--x and --s (or --S0 and --M0) are required")
    return model, q, K, eps, x, s


def _sim_config(args, default_paths: int) -> SimConfig:
    seed = args.seed
    if seed is None:
        seed = int(np.random.SeedSequence().entropy) & 0xFFFFFFFFFFFFFFFF
        sys.stderr.write(f"seed: {seed}\n")
    paths = default_paths if args.paths is None else args.paths
    return SimConfig(
        n_paths=paths,
        dt=args.dt,
        horizon=args.horizon,
        seed=seed,
        threads=args.threads,
    )


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


# -- commands ----------------------------------------------------------------------


def cmd_classify(args) -> int:
    model, q, K, eps, _, _ = _resolve(args)
    _emit(classify_regime(model, q, K, eps).to_dict())
    return EXIT_OK


def cmd_boundary(args) -> int:
    model, q, K, eps, _, _ = _resolve(args)
    reg = classify_regime(model, q, K, eps)
    if reg.infinite:
        sys.stderr.write(f"value is infinite in regime {reg}: no stopping boundary exists\n")
        _emit({**reg.to_dict(), "value": "inf"})
        return EXIT_INFINITE
    out = _out_dir(args)
    meta_path = os.path.join(out, "boundary.json")
    if not reg.is_main:
        meta = {"regime": reg.to_dict(), "rule": "first passage of the maximum above eps" if math.isfinite(eps) else "never stop"}
        with open(meta_path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _emit({**reg.to_dict(), "metadata": meta_path})
        return EXIT_OK
    ctx = build_scale_context(model, q)
    bnd = solve_capped(ctx, K, eps) if math.isfinite(eps) else solve_uncapped(ctx, K)
    csv_path = os.path.join(out, "boundary.csv")
    bnd.write(csv_path, meta_path)
    _emit({**reg.to_dict(), "csv": csv_path, "metadata": meta_path, "nodes": int(bnd.g_nodes.size)})
    return EXIT_OK


def cmd_price(args) -> int:
    surface = args.x_grid is not None or args.s_grid is not None
    model, q, K, eps, x, s = _resolve(args, need_point=not surface)
    vf = build_value_function(model, q, K, eps)
    if surface:
        if args.x_grid is None or args.s_grid is None:
            raise UsageError("--x-grid and --s-grid go together")
        path = os.path.join(_out_dir(args), "value_surface.csv")
        rows = export_value_surface(vf, args.x_grid, args.s_grid, path)
        _emit({**vf.regime.to_dict(), "surface": path, "rows": rows})
        return EXIT_INFINITE if vf.infinite else EXIT_OK
    if x > s:
        raise UsageError(f"(x, s) = ({x}, {s}) is outside x <= s")
    out = {**vf.regime.to_dict(), "x": x, "s": s, "region": region(vf, x, s)}
    try:
        out["value"] = value(vf, x, s)
    except InfiniteValue:
        out["value"] = "inf"
        _emit(out)
        return EXIT_INFINITE
    out["p_tau_finite"] = finiteness_report(vf, x, s)
    _emit(out)
    return EXIT_OK


def _default_point(vf):
    """A diagonal point inside the continuation region for the verification suite."""
    b = vf.boundary
    log_K = vf.log_K
    if b is not None and b.capped:
        s = log_K + 0.5 * (b.s_end - log_K)
    else:
        s = log_K + 0.5
    return s, s


def cmd_verify(args) -> int:
    model, q, K, eps, x, s = _resolve(args)
    cfg = _sim_config(args, default_paths=100_000)
    vf = build_value_function(model, q, K, eps)
    if vf.infinite:
        sys.stderr.write(f"value is infinite in regime {vf.regime}\n")
        return EXIT_INFINITE
    if x is None or s is None:
        x, s = _default_point(vf)
    rows = []
    target = value(vf, x, s)
    boundary = vf.boundary if vf.regime.is_main else None
    if boundary is None and vf.regime.kind != "ZeroQCapped":
        raise UsageError(f"no simulable stopping rule in regime {vf.regime}")
    res = simulate_price(model, q, K, eps, boundary, x, s, cfg)
    rows.append(("price", res.mean, res.std_error, target, res.within(target)))
    if q > 0.0:
        ex = verify_exit_identities(model, q, x - 0.5, x + 0.5, x, cfg)
        for side in ("upper", "lower"):
            r = ex[side]
            rows.append((f"exit_{side}", r["mean"], r["std_error"], r["target"], r["pass"]))
    if vf.regime.is_main:
        pt = perturbation_test(model, q, K, eps, vf.boundary, x, s, args.delta, cfg)
        for side in ("up", "down"):
            r = pt[side]
            rows.append((f"bump_{side}", r["diff_mean"], r["diff_se"], 0.0, r["pass"]))
        fin = estimate_finiteness(model, q, K, vf.boundary, x, s, cfg)
        p_ref = finiteness_report(vf, x, s)["first_passage"]
        ok = abs(fin["p_tau_finite"] - p_ref) <= 3.0 * max(fin["std_error"], 1.0 / cfg.n_paths)
        rows.append(("finiteness", fin["p_tau_finite"], fin["std_error"], p_ref, ok))
    width = max(len(r[0]) for r in rows)
    for name, est, se, ref, ok in rows:
        print(f"{name:<{width}}  {est:.6f} +- {se:.6f}  target {ref:.6f}  {'PASS' if ok else 'FAIL'}")
    print(f"seed {cfg.seed}  paths {cfg.n_paths}")
    return EXIT_OK if all(r[4] for r in rows) else EXIT_CHECK_FAILED


def cmd_excursion_check(args) -> int:
    model, q, K, eps, _, _ = _resolve(args)
    vf = build_value_function(model, q, K, eps)
    if vf.infinite:
        sys.stderr.write(f"value is infinite in regime {vf.regime}\n")
        return EXIT_INFINITE
    if vf.excursion is None:
        raise UsageError(f"the excursion representation needs a main-case regime, got {vf.regime}")
    rel, s_grid, ex, cf = max_diagonal_discrepancy(vf.excursion)
    i = int(np.argmax(np.abs(ex - cf) / np.abs(ex)))
    _emit(
        {
            **vf.regime.to_dict(),
            "max_rel_discrepancy": rel,
            "at_s": float(s_grid[i]),
            "A": vf.A_const,
            "A_upper_bound": encode_number(math.exp(min(eps, vf.boundary.s_end if vf.boundary.capped else math.inf)) - K),
        }
    )
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model JSON file")
    common.add_argument("--q", type=_number, help="discount rate")
    common.add_argument("--K", type=_number, default=1.0, help="strike (default 1)")
    common.add_argument("--eps", type=_number, help="log cap; 'inf' for none")
    common.add_argument("--x", type=_number, help="log price")
    common.add_argument("--s", type=_number, help="log running maximum")
    fin = common.add_argument_group("financial parameters")
    fin.add_argument("--r", type=_number, help="interest rate; q = r + alpha")
    fin.add_argument("--alpha", type=_number, help="discount spread")
    fin.add_argument("--S0", type=_number, help="initial price; x = log S0")
    fin.add_argument("--M0", type=_number, help="initial maximum; s = log M0")
    fin.add_argument("--C", type=_number, help="cap; eps = log C")
    common.add_argument("--out", help="output directory (default .)")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--paths", type=_count, help="number of paths")
    sim.add_argument("--dt", type=_number, default=1e-4, help="time step (default 1e-4)")
    sim.add_argument("--horizon", type=_number, help="time truncation (default 12/q)")
    sim.add_argument("--seed", type=int, help="RNG seed (drawn from entropy when omitted)")
    sim.add_argument("--threads", type=int, help="cap on worker threads")

    p = argparse.ArgumentParser(prog="capped-lookback", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("classify", parents=[common], help="print the parameter regime").set_defaults(func=cmd_classify)
    sub.add_parser("boundary", parents=[common], help="solve and write the stopping boundary").set_defaults(
        func=cmd_boundary
    )
    pr = sub.add_parser("price", parents=[common], help="value at (x, s) or on a grid")
    pr.add_argument("--x-grid", type=_grid, help="'lo,hi,n' grid of x for a value surface")
    pr.add_argument("--s-grid", type=_grid, help="'lo,hi,n' grid of s for a value surface")
    pr.set_defaults(func=cmd_price)
    ve = sub.add_parser("verify", parents=[common, sim], help="Monte Carlo verification table")
    ve.add_argument("--delta", type=_number, default=0.1, help="boundary bump (default 0.1)")
    ve.set_defaults(func=cmd_verify)
    sub.add_parser("excursion-check", parents=[common], help="excursion vs closed-form diagonal").set_defaults(
        func=cmd_excursion_check
    )
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except InfiniteValue as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INFINITE
    except LookbackError as exc:
        if isinstance(exc, ValueError):
            sys.stderr.write(f"error: {exc}\n")
            return EXIT_USAGE
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except (RuntimeError, ArithmeticError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
