"""``lfmc`` command-line front end.

Exit status: 0 on success, 1 when a verification fails, 2 on usage errors.
Every file written gets a ``<stem>.config.json`` sidecar echoing the parsed
command so the run can be reproduced. Relative output paths are resolved
against ``$LFMC_OUTPUT_DIR`` when it is set.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from lockfree_markov import __version__
from lockfree_markov.binsgame import BinsConfig, phase_stats, run_bins
from lockfree_markov.lifting import LiftingMap, verify_lifting
from lockfree_markov.markov import (
    Chain,
    ChainError,
    event_rate,
    is_ergodic,
    is_irreducible,
    period,
    stationary,
    validate,
)
from lockfree_markov.metrics import (
    TooFewSuccesses,
    crash_sweep,
    estimate_latencies,
    rate_curve,
    sweep,
)
from lockfree_markov.models import MODEL_BUILDERS, lifting_pair
from lockfree_markov.simulator import (
    SchedulerError,
    SchedulerSpec,
    ScuProgram,
    run_fai,
    run_parallel,
    run_scu,
    run_unbounded_lf_trace,
)

OUTPUT_DIR_ENV = "LFMC_OUTPUT_DIR"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    params: dict[str, Any]
    seed: int | None
    outputs: list[str] = field(default_factory=list)
    tool_version: str = __version__

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "params": self.params,
            "seed": self.seed,
            "outputs": self.outputs,
            "tool_version": self.tool_version,
        }


def _clean(x: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, NaN/inf to null."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def dumps(obj: Any) -> str:
    # float repr is the shortest string that round-trips, at most 17 digits
    return json.dumps(_clean(obj), indent=2, sort_keys=False) + "\n"


def fmt_number(x: Any, full: bool) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x) if full else f"{x:.6g}"


def csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]], full: bool) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt_number(v, full) for v in row])
    return buf.getvalue()


class Output:
    """Collects the files a command writes and emits their config sidecars."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.written: list[Path] = []

    @staticmethod
    def resolve(path: str) -> Path:
        p = Path(path)
        base = os.environ.get(OUTPUT_DIR_ENV)
        if base and not p.is_absolute():
            p = Path(base) / p
        return p

    def write(self, path: str | None, text: str) -> None:
        if path is None:
            sys.stdout.write(text)
            return
        p = self.resolve(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        self.config.outputs.append(path)
        self.written.append(p)

    def finish(self) -> None:
        if not self.written:
            return
        body = dumps(self.config.to_dict())
        for p in self.written:
            sidecar = p.with_name(p.name.rsplit(".", 1)[0] + ".config.json")
            sidecar.write_text(body)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _crash_map(text: str) -> dict[int, int]:
    out = {}
    try:
        for item in text.split(","):
            p, t = item.split(":")
            out[int(p)] = int(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected p:step pairs, got {text!r}")
    return out


def _scheduler_from(args) -> SchedulerSpec:
    crashes = args.crash or {}
    if args.weights is not None:
        return SchedulerSpec("weighted", tuple(args.weights), args.theta, crashes)
    return SchedulerSpec("uniform-with-crashes" if crashes else "uniform", None, args.theta, crashes)


# --- chain -----------------------------------------------------------------


def _build_chain(args) -> Chain:
    builder = MODEL_BUILDERS[args.model]
    if args.model.startswith("par"):
        if args.q is None:
            raise UsageError("parallel models need --q")
        return builder(args.n, args.q)
    return builder(args.n)


def cmd_chain_build(args, out: Output) -> int:
    chain = _build_chain(args)
    if args.out and args.out.endswith(".dot"):
        out.write(args.out, chain.to_dot())
    else:
        out.write(args.out, dumps(chain.to_dict()))
    return 0


def _solve_summary(chain: Chain) -> dict[str, Any]:
    report = validate(chain)
    summary: dict[str, Any] = {
        "name": chain.name,
        "states": chain.num_states,
        "edges": chain.num_edges,
        "valid": report.ok,
        "irreducible": is_irreducible(chain),
        "period": period(chain),
        "ergodic": is_ergodic(chain),
    }
    if summary["irreducible"]:
        pi = stationary(chain)
        summary["stationary"] = pi.probabilities
        if chain.event_mask.any():
            rate = event_rate(chain, pi)
            summary["mu"] = rate.mu
            summary["latency"] = rate.latency
    return summary


def cmd_chain_solve(args, out: Output) -> int:
    if args.input:
        with open(args.input) as fh:
            chain = Chain.from_dict(json.load(fh))
    elif args.model:
        chain = _build_chain(args)
    else:
        raise UsageError("chain solve needs --in FILE or --model/--n")
    summary = _solve_summary(chain)
    out.write(args.out, dumps(summary))
    return 0 if summary["valid"] else 1


# --- lifting ---------------------------------------------------------------


def cmd_lifting_verify(args, out: Output) -> int:
    fine, coarse, fmap = lifting_pair(args.model, args.n, args.q)
    if args.map:
        with open(args.map) as fh:
            fmap = LiftingMap.from_dict(json.load(fh))
    report = verify_lifting(fine, coarse, fmap, tol=args.tol)
    lines = [
        f"{'check':<20} {'residual':>12}  result",
        f"{'flow homomorphism':<20} {report.max_flow_residual:>12.3e}  {'pass' if report.flow_homomorphism_ok else 'FAIL'}",
        f"{'aggregation':<20} {report.max_aggregation_residual:>12.3e}  {'pass' if report.aggregation_ok else 'FAIL'}",
        f"{'fiber symmetry':<20} {report.max_fiber_spread:>12.3e}  {'pass' if report.fiber_symmetry_ok else 'FAIL'}",
        f"lifting {'pass' if report.ok else 'FAIL'}",
    ]
    print("\n".join(lines))
    if args.out:
        out.write(args.out, dumps(report.to_dict()))
    return 0 if report.ok else 1


# --- simulation ------------------------------------------------------------

STATS_COLUMNS = ["model", "n", "q", "s", "steps", "seed", "W_emp", "Wi_emp_min", "Wi_emp_max", "completion_rate"]


def cmd_sim_run(args, out: Output) -> int:
    sched = _scheduler_from(args)
    extra: dict[str, Any] = {}
    if args.model == "scu":
        trace = run_scu(ScuProgram(args.q, args.s), args.n, args.steps, args.seed, sched)
    elif args.model == "parallel":
        trace = run_parallel(args.n, args.q, args.steps, args.seed, sched)
    elif args.model == "fai":
        trace = run_fai(args.n, args.steps, args.seed, sched)
    else:
        trace, longest = run_unbounded_lf_trace(args.n, args.steps, args.seed, sched)
        winners = trace.success_process
        first = int(winners[0]) if len(winners) else -1
        extra["monopoly"] = {
            "first_winner": first,
            "total_successes": len(winners),
            "first_winner_successes": int(np.count_nonzero(winners == first)),
            "longest_losing_streak": longest.tolist(),
        }

    if args.out and args.out.endswith(".csv"):
        rep = estimate_latencies(trace)
        row = [args.model, args.n, trace.params["q"], trace.params["s"], args.steps, args.seed,
               rep.W, rep.Wi_min, rep.Wi_max, rep.completion_rate]
        out.write(args.out, csv_text(STATS_COLUMNS, [row], args.full_precision))
    else:
        data = trace.to_dict()
        data.update(extra)
        out.write(args.out, dumps(data))
    return 0


def cmd_bins_run(args, out: Output) -> int:
    config = BinsConfig(args.n, args.phases, args.seed, args.alpha, args.c)
    log = run_bins(config)
    rows = [[i, int(a), int(b), int(ell), int(r)] for i, (a, b, ell, r) in
            enumerate(zip(log.a_start, log.b_start, log.length, log.range))]
    out.write(args.out, csv_text(["phase_index", "a_start", "b_start", "length", "range"], rows, args.full_precision))
    if args.stats:
        out.write(args.stats, dumps(phase_stats(log, alpha=args.alpha).to_dict()))
    return 0


# --- sweeps ----------------------------------------------------------------

SWEEP_COLUMNS = ["n", "q", "s", "W", "W_over_sqrt_n", "completion_rate", "source"]


def cmd_sweep(args, out: Output) -> int:
    if args.mode != "exact" and args.seed is None:
        raise UsageError("--seed is required for sim and bins sweeps")
    budget = args.budget
    if budget is None:
        budget = 10**4 if args.mode == "bins" else 10**6
    result = sweep(args.model, args.n, args.q, args.s, args.mode, budget, args.seed or 0, args.time_limit)
    rows = [[r.n, r.q, r.s, r.W, r.W_over_sqrt_n, r.completion_rate, r.source] for r in result.rows]
    out.write(args.out, csv_text(SWEEP_COLUMNS, rows, args.full_precision))
    if result.gamma is not None:
        print(f"fitted exponent gamma = {result.gamma:.4f} ({result.fit_target} over n = {result.fit_n})", file=sys.stderr)
    for note in result.notes:
        print(f"note: {note}", file=sys.stderr)
    if args.fit:
        out.write(args.fit, dumps(result.to_dict()))
    if args.curve:
        curve = rate_curve(result.rows)
        lines = ["# n rate scaled_inv_sqrt_n inv_n"]
        lines += [" ".join(fmt_number(v, args.full_precision) for v in row) for row in curve]
        out.write(args.curve, "\n".join(lines) + "\n")
    return 0


def cmd_crash_sweep(args, out: Output) -> int:
    rows = []
    for k in args.k:
        r = crash_sweep(args.n, k, args.q, args.s, args.steps, args.seed, args.model)
        rows.append([r.n, k, r.q, r.s, r.W, r.W_over_sqrt_n, r.completion_rate, r.source])
    out.write(args.out, csv_text(["n", "k_correct", "q", "s", "W", "W_over_sqrt_n", "completion_rate", "source"],
                                 rows, args.full_precision))
    return 0


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfmc", description="Markov-chain and simulation toolkit for lock-free algorithm latency.")
    parser.add_argument("--version", action="version", version=f"lfmc {__version__}")
    sub = parser.add_subparsers(dest="group", required=True)

    def precision(p):
        p.add_argument("--full-precision", action="store_true", help="write CSV numbers with 17 significant digits")

    chain = sub.add_parser("chain", help="build or solve exact chains")
    chain_sub = chain.add_subparsers(dest="action", required=True)
    build = chain_sub.add_parser("build", help="build a model chain")
    build.add_argument("--model", required=True, choices=sorted(MODEL_BUILDERS))
    build.add_argument("--n", type=int, required=True)
    build.add_argument("--q", type=int)
    build.add_argument("--out", help="output .json or .dot (default: JSON on stdout)")
    build.set_defaults(func=cmd_chain_build)

    solve = chain_sub.add_parser("solve", help="stationary distribution and event rate")
    solve.add_argument("--in", dest="input", help="chain JSON file")
    solve.add_argument("--model", choices=sorted(MODEL_BUILDERS))
    solve.add_argument("--n", type=int)
    solve.add_argument("--q", type=int)
    solve.add_argument("--out")
    solve.set_defaults(func=cmd_chain_solve)

    lifting = sub.add_parser("lifting", help="lifting checks")
    lifting_sub = lifting.add_subparsers(dest="action", required=True)
    verify = lifting_sub.add_parser("verify", help="verify an individual-to-system lifting")
    verify.add_argument("--model", required=True, choices=["scu", "fai", "par"])
    verify.add_argument("--n", type=int, required=True)
    verify.add_argument("--q", type=int)
    verify.add_argument("--map", help="lifting map JSON to check instead of the built-in one")
    verify.add_argument("--tol", type=float, default=1e-9)
    verify.add_argument("--out", help="write the report as JSON")
    verify.set_defaults(func=cmd_lifting_verify)

    sim = sub.add_parser("sim", help="step-level simulation")
    sim_sub = sim.add_subparsers(dest="action", required=True)
    run = sim_sub.add_parser("run", help="simulate an algorithm")
    run.add_argument("--model", required=True, choices=["scu", "unbounded", "parallel", "fai"])
    run.add_argument("--n", type=int, required=True)
    run.add_argument("--q", type=int, default=0)
    run.add_argument("--s", type=int, default=1)
    run.add_argument("--steps", type=int, required=True)
    run.add_argument("--seed", type=int, required=True)
    run.add_argument("--weights", type=_float_list)
    run.add_argument("--theta", type=float)
    run.add_argument("--crash", type=_crash_map, help="p:step,...")
    run.add_argument("--out", help="trace .json or stats .csv (default: trace JSON on stdout)")
    precision(run)
    run.set_defaults(func=cmd_sim_run)

    bins = sub.add_parser("bins", help="balls-into-bins game")
    bins_sub = bins.add_subparsers(dest="action", required=True)
    brun = bins_sub.add_parser("run", help="simulate phases")
    brun.add_argument("--n", type=int, required=True)
    brun.add_argument("--phases", type=int, required=True)
    brun.add_argument("--seed", type=int, required=True)
    brun.add_argument("--alpha", type=float, default=4.0)
    brun.add_argument("--c", type=float, default=10.0)
    brun.add_argument("--out", help="phases CSV (default: stdout)")
    brun.add_argument("--stats", help="write range statistics as JSON")
    precision(brun)
    brun.set_defaults(func=cmd_bins_run)

    sw = sub.add_parser("sweep", help="latency over a range of n")
    sw.add_argument("--model", required=True, choices=["scu", "fai", "parallel"])
    sw.add_argument("--mode", default="exact", choices=["exact", "sim", "bins"])
    sw.add_argument("--n", type=_int_list, required=True, help="comma-separated, ascending")
    sw.add_argument("--q", type=int, default=0)
    sw.add_argument("--s", type=int, default=1)
    sw.add_argument("--budget", type=int, help="steps (sim) or phases (bins) per point")
    sw.add_argument("--seed", type=int)
    sw.add_argument("--time-limit", type=float, help="seconds before remaining points are skipped")
    sw.add_argument("--out", help="sweep CSV (default: stdout)")
    sw.add_argument("--fit", help="write rows and fit diagnostics as JSON")
    sw.add_argument("--curve", help="write a completion-rate curve for plotting")
    precision(sw)
    sw.set_defaults(func=cmd_sweep)

    cs = sub.add_parser("crash-sweep", help="latency with processes crashed at the start")
    cs.add_argument("--model", default="scu", choices=["scu", "fai", "parallel"])
    cs.add_argument("--n", type=int, required=True)
    cs.add_argument("--k", type=_int_list, required=True, help="numbers of correct processes")
    cs.add_argument("--q", type=int, default=0)
    cs.add_argument("--s", type=int, default=1)
    cs.add_argument("--steps", type=int, required=True)
    cs.add_argument("--seed", type=int, required=True)
    cs.add_argument("--out")
    precision(cs)
    cs.set_defaults(func=cmd_crash_sweep)
    return parser


_NOT_PARAMS = {"func", "group", "action"}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = " ".join(x for x in (args.group, getattr(args, "action", None)) if x)
    params = {k: v for k, v in vars(args).items() if k not in _NOT_PARAMS}
    config = RunConfig(command, params, params.get("seed"))
    out = Output(config)
    try:
        status = args.func(args, out)
    except (UsageError, SchedulerError, ChainError, ValueError) as exc:
        # includes TooFewSuccesses and cap violations
        if isinstance(exc, TooFewSuccesses):
            print(f"lfmc: {exc}", file=sys.stderr)
            return 1
        print(f"lfmc: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"lfmc: error: {exc}", file=sys.stderr)
        return 2
    out.finish()
    return status


if __name__ == "__main__":
    sys.exit(main())
