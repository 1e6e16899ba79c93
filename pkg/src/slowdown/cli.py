"""Command-line front end.

Every subcommand writes either a JSON payload
``{"schema_version", "params", "results"}`` or a CSV table with a header
row.  Floats are printed with 17 significant digits so that output is
reproducible bit for bit.  Exit codes: 0 success, 1 numerical failure,
2 invalid input.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
from typing import Any

import numpy as np

from .model import ErgodicityError, NumericalError, ParameterError, build_params
from .qed import QedParams, qed_convergence_table
from .sim_oracle import SimConfig, simulate, simulate_coupled
from .solver import (
    dimension_servers,
    joint_heatmap,
    marginal_total,
    performance_report,
    solve_stationary,
)
from .variants import (
    AbandonmentParams,
    FiniteBufferParams,
    find_modes,
    solve_abandonment,
    solve_finite_buffer,
)

SCHEMA_VERSION = 1

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flag value; the message names the flag."""


# --------------------------------------------------------------------------
# serialization


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON with '.17g' floats; non-finite floats become null."""
    obj = _plain(obj)
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return format_float(obj) if math.isfinite(obj) else "null"
    return json.dumps(obj)


def payload(params: dict, results: dict) -> str:
    return dumps({"schema_version": SCHEMA_VERSION, "params": params, "results": results}) + "\n"


def csv_text(header: list[str], rows) -> str:
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for row in rows:
        cells = [format_float(v) if isinstance(v, (float, np.floating)) else str(_plain(v)) for v in row]
        out.write(",".join(cells) + "\n")
    return out.getvalue()


# --------------------------------------------------------------------------
# argument handling


def _positive(flag: str, value, integer: bool = False):
    if value is None:
        return None
    if integer and value < 1:
        raise UsageError(f"{flag} must be a positive integer, got {value}")
    if not integer and not (math.isfinite(value) and value > 0):
        raise UsageError(f"{flag} must be positive and finite, got {value}")
    return value


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group(
        "model",
        "Give either rates (--mu-fast, --mu-slow) or loads (--rho-fast, --rho-slow). "
        "Loads are converted as mu = lambda / (servers * rho).",
    )
    g.add_argument("--servers", "-s", type=int, required=True, help="number of servers s")
    g.add_argument("--lambda", dest="lam", type=float, required=True, help="arrival rate")
    g.add_argument("--mu-fast", type=float, help="service rate of non-delayed customers")
    g.add_argument("--mu-slow", type=float, help="service rate of delayed customers")
    g.add_argument("--rho-fast", type=float, help="load lambda / (s mu_fast)")
    g.add_argument("--rho-slow", type=float, help="load lambda / (s mu_slow)")


def _model_params(args):
    s = _positive("--servers", args.servers, integer=True)
    lam = _positive("--lambda", args.lam)
    rates = (args.mu_fast, args.mu_slow)
    loads = (args.rho_fast, args.rho_slow)
    if any(v is not None for v in rates) and any(v is not None for v in loads):
        raise UsageError("--mu-fast/--mu-slow and --rho-fast/--rho-slow are mutually exclusive")
    if all(v is not None for v in loads):
        rf = _positive("--rho-fast", args.rho_fast)
        rs = _positive("--rho-slow", args.rho_slow)
        mu_fast, mu_slow = lam / (s * rf), lam / (s * rs)
    elif all(v is not None for v in rates):
        mu_fast = _positive("--mu-fast", args.mu_fast)
        mu_slow = _positive("--mu-slow", args.mu_slow)
    else:
        raise UsageError("give both --mu-fast and --mu-slow, or both --rho-fast and --rho-slow")
    if not mu_fast > mu_slow:
        flag = "--rho-fast/--rho-slow" if loads[0] is not None else "--mu-fast/--mu-slow"
        raise UsageError(f"{flag}: the fast rate must exceed the slow rate")
    return build_params(s, lam, mu_fast, mu_slow)


def _add_output_flags(p: argparse.ArgumentParser, default_format: str) -> None:
    p.add_argument("--format", choices=("json", "csv"), default=default_format)
    p.add_argument("--output", "-o", help="output file (default: stdout)")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _perf_rows(report: dict) -> tuple[list[str], list[list]]:
    return list(report), [list(report.values())]


def _finite_results(dist, i_max: int | None) -> tuple[dict, Any]:
    marg = marginal_total(dist, i_max)
    modes = find_modes(marg)
    results = {
        "p_wait": dist.delay_probability(),
        "mean_queue": dist.mean_queue(),
        "mean_system": dist.mean_queue() + dist.mean_busy_servers(),
        "modes": [{"i": i, "probability": p} for i, p in modes],
    }
    return results, marg


# --------------------------------------------------------------------------
# subcommands; each returns the output text, or (text, exit code)


def cmd_solve(args):
    params = _model_params(args)
    report = performance_report(solve_stationary(params)).as_dict()
    if args.format == "csv":
        return csv_text(*_perf_rows(report))
    return payload(params.as_dict(), report)


def cmd_marginal(args):
    params = _model_params(args)
    marg = marginal_total(solve_stationary(params), args.i_max)
    if args.format == "csv":
        return csv_text(["i", "probability"], enumerate(marg.probabilities))
    return payload(params.as_dict(), {"probabilities": marg.probabilities, "tail_mass": marg.tail_mass})


def cmd_heatmap(args):
    params = _model_params(args)
    grid = joint_heatmap(solve_stationary(params), args.i_max)
    rows = ((i, j, grid[i, j]) for i in range(grid.shape[0]) for j in range(min(i, params.s) + 1))
    if args.format == "csv":
        return csv_text(["i", "j", "probability"], rows)
    return payload(params.as_dict(), {"cells": [{"i": i, "j": j, "probability": p} for i, j, p in rows]})


def cmd_dimension(args):
    mu_fast = _positive("--mu-fast", args.mu_fast)
    mu_slow = _positive("--mu-slow", args.mu_slow)
    lam = _positive("--lambda", args.lam)
    if not 0 < args.target < 1:
        raise UsageError(f"--target must lie in (0, 1), got {args.target}")
    if not mu_fast > mu_slow:
        raise UsageError("--mu-fast must exceed --mu-slow")
    s_fast, s_slow = dimension_servers(mu_fast, mu_slow, lam, args.target)
    params = {"lambda": lam, "mu_fast": mu_fast, "mu_slow": mu_slow, "target": args.target}
    results = {"s_fast": s_fast, "s_slowdown": s_slow}
    if args.format == "csv":
        return csv_text(list(params) + list(results), [list(params.values()) + list(results.values())])
    return payload(params, results)


def _variant_output(args, params: dict, dist, i_max):
    results, marg = _finite_results(dist, i_max)
    if args.format == "csv":
        return csv_text(["i", "probability"], enumerate(marg.probabilities))
    results["probabilities"] = marg.probabilities
    results["tail_mass"] = marg.tail_mass
    return payload(params, results)


def cmd_finite_buffer(args):
    base = _model_params(args)
    if args.buffer < base.s:
        raise UsageError(f"--buffer must be at least --servers ({base.s}), got {args.buffer}")
    dist = solve_finite_buffer(FiniteBufferParams(base, args.buffer))
    return _variant_output(args, {**base.as_dict(), "buffer": args.buffer}, dist, args.buffer)


def cmd_abandon(args):
    base = _model_params(args)
    delta = _positive("--delta", args.delta)
    dist = solve_abandonment(AbandonmentParams(base, delta))
    return _variant_output(args, {**base.as_dict(), "delta": delta}, dist, args.i_max)


def cmd_qed(args):
    q = QedParams(_positive("--beta", args.beta), _positive("--gamma", args.gamma),
                  _positive("--mu-slow", args.mu_slow))
    for s in args.s:
        if not s > q.beta**2:
            raise UsageError(f"--s: every s must exceed beta^2 = {q.beta**2}, got {s}")
    rows = qed_convergence_table(q, args.s)
    header = ["s", "p_wait_fast", "p_wait_slowdown", "p_wait_slow", "lower", "upper"]
    table = [[getattr(r, h) for h in header] for r in rows]
    if args.format == "csv":
        return csv_text(header, table)
    params = {"beta": q.beta, "gamma": q.gamma, "mu_slow": q.mu_slow, "s": args.s}
    return payload(params, {"rows": [dict(zip(header, row)) for row in table]})


def _sim_model(args):
    base = _model_params(args)
    if args.buffer is not None and args.delta is not None:
        raise UsageError("--buffer and --delta are mutually exclusive")
    if args.buffer is not None:
        if args.buffer < base.s:
            raise UsageError(f"--buffer must be at least --servers ({base.s})")
        return base, FiniteBufferParams(base, args.buffer)
    if args.delta is not None:
        return base, AbandonmentParams(base, _positive("--delta", args.delta))
    if not base.is_stable:
        raise ErgodicityError("simulation of the infinite-buffer model needs rho_slow < 1")
    return base, base


def cmd_simulate(args):
    base, model = _sim_model(args)
    _positive("--horizon", args.horizon)
    config = SimConfig(model, horizon=args.horizon, seed=args.seed, warmup=args.warmup,
                       replications=_positive("--replications", args.replications, integer=True),
                       record_path=args.path_csv is not None)
    est = simulate(config)
    if args.path_csv is not None:
        est.sample_path.to_csv(args.path_csv)
    results = {
        "p_wait": est.p_wait_hat.value,
        "p_wait_half_width": est.p_wait_hat.half_width,
        "mean_system": est.mean_L_hat.value,
        "mean_system_half_width": est.mean_L_hat.half_width,
        "excursions": est.busy_period_stats.count,
        "excursion_mean_length": est.busy_period_stats.mean_length,
        "excursion_max_length": est.busy_period_stats.max_length,
    }
    params = {**base.as_dict(), "horizon": args.horizon, "warmup": config.effective_warmup,
              "seed": args.seed, "replications": args.replications}
    if args.format == "csv":
        return csv_text(list(results), [list(results.values())])
    return payload(params, results)


def cmd_couple(args):
    params = _model_params(args)
    config = SimConfig(params, horizon=1.0, seed=args.seed,
                       replications=_positive("--seeds", args.seeds, integer=True),
                       customers=_positive("--customers", args.customers, integer=True))
    rep = simulate_coupled(config)
    results = {
        "customers_checked": rep.customers_checked,
        "violations_WS_ge_W": rep.violations_WS_ge_W,
        "violations_W_ge_WF": rep.violations_W_ge_WF,
        "violations_XS_ge_X": rep.violations_XS_ge_X,
        "violations_X_ge_XF": rep.violations_X_ge_XF,
        "max_violation_magnitude": rep.max_violation_magnitude,
    }
    if args.format == "csv":
        return csv_text(list(results), [list(results.values())])
    return payload({**params.as_dict(), "seed": args.seed, "seeds": args.seeds}, results)


def cmd_validate(args):
    from .validation import run_tier

    def show(res):
        mark = "PASS" if res.passed else "FAIL"
        print(f"{mark}  {res.name:<34} {res.seconds:8.2f}s  {res.detail}", flush=True)

    results = run_tier(args.tier, show)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return None, (EXIT_OK if failed == 0 else EXIT_NUMERICAL)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slowdown",
        description="Many-server queue with threshold customer slowdown.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="delay probability, queue length and load")
    _add_model_flags(p)
    _add_output_flags(p, "json")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("marginal", help="P(L = i) for i = 0..i_max")
    _add_model_flags(p)
    p.add_argument("--i-max", type=int, help="last level (default: tail mass below 1e-10)")
    _add_output_flags(p, "csv")
    p.set_defaults(func=cmd_marginal)

    p = sub.add_parser("heatmap", help="joint distribution in long format (i, j, probability)")
    _add_model_flags(p)
    p.add_argument("--i-max", type=int, help="last level (default: tail mass below 1e-10)")
    _add_output_flags(p, "csv")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("dimension", help="minimal servers for a delay-probability target")
    p.add_argument("--mu-fast", type=float, required=True)
    p.add_argument("--mu-slow", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--target", type=float, required=True, help="required P(W > 0) (met with <=)")
    _add_output_flags(p, "json")
    p.set_defaults(func=cmd_dimension)

    p = sub.add_parser("finite-buffer", help="model with at most N customers")
    _add_model_flags(p)
    p.add_argument("--buffer", "-N", type=int, required=True, help="maximum number of customers N >= s")
    _add_output_flags(p, "json")
    p.set_defaults(func=cmd_finite_buffer)

    p = sub.add_parser("abandon", help="model where waiting customers abandon at rate delta")
    _add_model_flags(p)
    p.add_argument("--delta", type=float, required=True, help="abandonment rate per waiting customer")
    p.add_argument("--i-max", type=int, help="last level reported")
    _add_output_flags(p, "json")
    p.set_defaults(func=cmd_abandon)

    p = sub.add_parser("qed", help="delay probabilities under square-root scaling")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--mu-slow", type=float, default=1.0)
    p.add_argument("--s", type=_int_list, required=True, help="comma-separated server counts")
    _add_output_flags(p, "csv")
    p.set_defaults(func=cmd_qed)

    p = sub.add_parser("simulate", help="CTMC simulation with batch-means intervals")
    _add_model_flags(p)
    p.add_argument("--buffer", "-N", type=int, help="simulate the finite-buffer model")
    p.add_argument("--delta", type=float, help="simulate the abandonment model")
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--warmup", type=float, help="default: 10%% of the horizon")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--path-csv", help="write the sample path of replication 0 to this CSV file")
    _add_output_flags(p, "json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("couple", help="coupled slow/slowdown/fast simulation and dominance check")
    _add_model_flags(p)
    p.add_argument("--customers", type=int, default=100_000)
    p.add_argument("--seeds", type=int, default=10, help="number of independent replications")
    p.add_argument("--seed", type=int, default=0)
    _add_output_flags(p, "json")
    p.set_defaults(func=cmd_couple)

    p = sub.add_parser("validate", help="run the built-in invariant suite")
    p.add_argument("--tier", choices=("quick", "full"), default="quick")
    p.set_defaults(func=cmd_validate)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on bad flags
    try:
        out = args.func(args)
    except ErgodicityError as exc:
        print(f"slowdown {args.command}: error: {exc}; lower --lambda or raise --mu-slow "
              "(or lower --rho-slow)", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ParameterError) as exc:
        print(f"slowdown {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"slowdown {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    code = EXIT_OK
    if isinstance(out, tuple):
        out, code = out
    if out is not None:
        if getattr(args, "output", None):
            with open(args.output, "w", newline="") as fh:
                fh.write(out)
        else:
            sys.stdout.write(out)
    return code


def main() -> None:
    sys.exit(run_cli())
