"""Command line interface.

Subcommands: analyze (all verdicts), riccati (one solve), finiteness,
openloop, simulate. Every run writes a single JSON report (stdout by
default, --out for a file); riccati and finiteness can additionally dump
the solution curve as CSV with --csv.

Exit codes: 0 when a report was produced, 2 on input errors (bad file,
bad flags, unsupported data), 3 when the requested solve itself reported
non-convexity (the report is still written in that case).

The environment variable SLQ_THREADS caps the BLAS thread pools; it must be
read before the numerical stack is imported, which is why the heavy imports
live inside main().
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _apply_thread_cap() -> None:
    cap = os.environ.get("SLQ_THREADS")
    if cap:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ.setdefault(var, cap)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slq",
        description="Stochastic linear-quadratic control: solvers and verdicts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser, ladder: bool = True) -> None:
        sp.add_argument("problem", help="problem JSON file")
        sp.add_argument("--grid-steps", type=int, default=None,
                        help="override the time grid step count")
        sp.add_argument("--tol", type=float, default=1e-6,
                        help="solver convergence tolerance")
        sp.add_argument("--out", default=None, help="write the JSON report here")
        if ladder:
            sp.add_argument("--eps-start", type=float, default=1.0,
                            help="first control-weight shift of the ladder")
            sp.add_argument("--eps-factor", type=float, default=0.5,
                            help="geometric ladder ratio")
            sp.add_argument("--eps-count", type=int, default=20,
                            help="number of ladder rungs")

    def queries(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--query-t", type=float, action="append", default=None,
                        help="initial time for a point query (repeatable)")
        sp.add_argument("--query-x", action="append", default=None,
                        help="comma-separated initial state (repeatable)")

    sp = sub.add_parser("analyze", help="every verdict on one problem")
    common(sp)
    queries(sp)
    sp.add_argument("--mc-check", action="store_true",
                    help="cross-check the synthesized feedback by simulation")
    sp.add_argument("--paths", type=int, default=100_000,
                    help="Monte Carlo path count for --mc-check")
    sp.add_argument("--seed", type=int, default=0,
                    help="Monte Carlo seed for --mc-check")

    sp = sub.add_parser("riccati", help="solve the Riccati equation once")
    common(sp, ladder=False)
    sp.add_argument("--epsilon", type=float, default=None,
                    help="solve with control weight shifted by this amount")
    sp.add_argument("--direct-d0", action="store_true",
                    help="plain integration (requires D = 0, R uniformly positive)")
    sp.add_argument("--csv", default=None, help="write the solution curve here")

    sp = sub.add_parser("finiteness", help="is the value bounded below?")
    common(sp)
    sp.add_argument("--csv", default=None,
                    help="write the extrapolated limit curve here (verdict yes)")

    sp = sub.add_parser("openloop", help="open-loop solvability at a point")
    common(sp)
    queries(sp)

    sp = sub.add_parser("simulate", help="Monte Carlo cost of a control")
    common(sp, ladder=False)
    queries(sp)
    sp.add_argument("--paths", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--refine", type=int, default=1,
                    help="integer grid refinement for the simulation")
    sp.add_argument("--control", choices=("optimal", "zero"), default="optimal",
                    help="simulate the synthesized optimal feedback or u = 0")
    return parser


def _parse_queries(args, p):
    import numpy as np

    ts = args.query_t or []
    xs = args.query_x or []
    if len(ts) != len(xs):
        raise ValueError("--query-t and --query-x must be given the same number of times")
    out = []
    for t, xtext in zip(ts, xs):
        x = np.asarray([float(tok) for tok in xtext.split(",")], dtype=float)
        if x.size != p.n:
            raise ValueError(f"query state has {x.size} entries, problem has n={p.n}")
        out.append((t, x.reshape(p.n, 1)))
    if not out:
        out.append((p.grid.t0, np.ones((p.n, 1))))
    return out


def _jsonable(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and (obj != obj or obj in (float("inf"), float("-inf"))):
        return str(obj)
    return obj


def _write_report(doc: dict, out: str | None) -> None:
    text = json.dumps(_jsonable(doc), indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _write_curve_csv(path: str, times, values) -> None:
    rows, cols = values.shape[1], values.shape[2]
    header = ["t"] + [f"P_{i}_{j}" for i in range(rows) for j in range(cols)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(len(times)):
            flat = values[k].reshape(-1)
            fh.write(",".join([repr(float(times[k]))]
                              + [repr(float(v)) for v in flat]) + "\n")


def _regularity_doc(report):
    if report is None:
        return None
    return {
        "classification": report.classification,
        "range_ok": report.range_ok,
        "psd_ok": report.psd_ok,
        "l2_ok": report.l2_ok,
        "strong_lambda": report.strong_lambda,
        "range_violation_fraction": report.range_violation_fraction,
        "l2_coarse": report.l2_coarse,
        "l2_refined": report.l2_refined,
        "note": report.l2_note,
    }


def _openloop_doc(t, x, res):
    import numpy as np

    doc = {
        "t": t,
        "x": np.ravel(x).tolist(),
        "verdict": res.verdict,
        "detail": res.detail,
        "norms": res.norms,
        "limit_norm": res.limit_norm,
    }
    if res.control_values is not None:
        doc["mean_control_first"] = res.control_values[0].reshape(-1).tolist()
    return doc


def main(argv: list[str] | None = None) -> int:
    _apply_thread_cap()
    args = _build_parser().parse_args(argv)

    import numpy as np

    from . import __version__
    from .errors import NewtonFailure, NotConvexAtEpsilon, SlqError
    from .lyapunov import lower_bound_N, solve_M0
    from .montecarlo import SimulationConfig, simulate_cost
    from .problem import load_problem, standard_conditions
    from .riccati import classify_regularity, direct_riccati_D0, epsilon_riccati, newton_riccati
    from .solvability import (
        LadderConfig,
        analyze,
        closed_loop_solve,
        finiteness,
        open_loop_check,
    )

    try:
        p = load_problem(args.problem, n_steps_override=args.grid_steps)
    except SlqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected reader failures are input errors too
        print(f"error: cannot load {args.problem}: {exc}", file=sys.stderr)
        return 2

    config_echo = {
        "problem_file": args.problem,
        "grid": {"t0": p.grid.t0, "T": p.grid.T, "n_steps": p.grid.n_steps},
        "dims": {"n": p.n, "m": p.m},
        "tol": args.tol,
    }
    ladder_config = None
    if hasattr(args, "eps_start"):
        ladder_config = LadderConfig(args.eps_start, args.eps_factor, args.eps_count)
        config_echo["ladder"] = {
            "eps_start": args.eps_start,
            "eps_factor": args.eps_factor,
            "eps_count": args.eps_count,
        }

    doc = {
        "command": args.command,
        "tool_version": __version__,
        "config": config_echo,
        "problem": p.to_json(),
    }
    exit_code = 0

    try:
        if args.command == "analyze":
            queries = _parse_queries(args, p)
            report = analyze(p, queries, ladder_config)
            fin = report.finiteness_result
            sc = standard_conditions(p)
            clean_sols = fin.ladder.clean_solutions()
            ladder_table = [
                {
                    "epsilon": sol.epsilon,
                    "P_t0_eigenvalues": np.linalg.eigvalsh(sol.P.values[0]).tolist(),
                    "gain_energy": energy,
                }
                for sol, energy in zip(clean_sols, report.gain_energy.energies)
            ]
            bounds: dict = {"times": p.grid.times().tolist(),
                            "M0": solve_M0(p).values.tolist()}
            if clean_sols:
                try:
                    bounds["N"] = lower_bound_N(
                        p, clean_sols[-1].P.values[0]
                    ).values.tolist()
                except SlqError as exc:
                    bounds["N_error"] = str(exc)
            doc["results"] = {
                "finite": report.finite,
                "finite_reason": fin.reason,
                "standard_conditions": {
                    "G_psd": sc.G_psd,
                    "R_uniform_delta": sc.R_uniform_delta,
                    "schur_complement_psd": sc.schur_complement_psd,
                    "holds": sc.holds,
                },
                "ladder_table": ladder_table,
                "bounds_curves": bounds,
                "ladder_levels": fin.evidence.get("levels", []),
                "closed_loop": {
                    "verdict": report.closed_loop,
                    "detail": report.closed_loop_result.detail,
                    "candidate_kind": report.closed_loop_result.candidate_kind,
                    "regularity": _regularity_doc(report.closed_loop_result.regularity),
                },
                "open_loop": [
                    _openloop_doc(t, x, r) for t, x, r in report.open_loop_results
                ],
                "necessary_condition_R_DM0D": {
                    "passed": report.necessary_condition_R_DM0D.passed,
                    "min_eigenvalue": report.necessary_condition_R_DM0D.min_eigenvalue,
                    "implies_closed_loop_solvable":
                        report.necessary_condition_R_DM0D.implies_closed_loop_solvable,
                },
                "gain_energy": {
                    "bounded": report.gain_energy.bounded,
                    "energies": report.gain_energy.energies,
                    "note": report.gain_energy.note,
                },
            }
            if args.mc_check and report.closed_loop == "solvable":
                t, x = queries[0]
                law = report.closed_loop_result.law
                est = simulate_cost(
                    p, law, t, x,
                    SimulationConfig(n_paths=args.paths, seed=args.seed),
                )
                doc["results"]["monte_carlo"] = {
                    "t": t,
                    "x": np.ravel(x).tolist(),
                    "mean_cost": est.mean,
                    "std_error": est.std_error,
                    "n_paths": est.n_paths,
                    "predicted_value": law.value(t, x),
                    "seed": args.seed,
                }

        elif args.command == "riccati":
            if args.epsilon is not None:
                sol = epsilon_riccati(p, args.epsilon, tol=args.tol)
            elif args.direct_d0:
                sol = direct_riccati_D0(p)
            else:
                sol = newton_riccati(p, tol=args.tol)
            results = {
                "kind": sol.kind,
                "epsilon": sol.epsilon,
                "iterations": sol.iterations,
                "residual": sol.residual,
                "lambda_estimate": sol.lambda_estimate,
                "monotonicity_margin": sol.monotonicity_margin,
                "blew_up": sol.blew_up,
                "blowup_time": sol.P.blowup_time,
                "P_at_start": sol.P.initial_value.tolist(),
            }
            if not sol.blew_up:
                results["regularity"] = _regularity_doc(classify_regularity(p, sol))
            doc["results"] = results
            if args.csv:
                _write_curve_csv(args.csv, sol.P.times, sol.P.values)

        elif args.command == "finiteness":
            fin = finiteness(p, ladder_config)
            doc["results"] = {
                "verdict": fin.verdict,
                "reason": fin.reason,
                "levels": fin.evidence.get("levels", []),
                "decrements": fin.evidence.get("decrements", []),
                "P_limit_at_start": (
                    fin.P_limit.initial_value.tolist() if fin.P_limit is not None else None
                ),
            }
            if args.csv and fin.P_limit is not None:
                _write_curve_csv(args.csv, fin.P_limit.times, fin.P_limit.values)

        elif args.command == "openloop":
            queries = _parse_queries(args, p)
            doc["results"] = [
                _openloop_doc(t, x, open_loop_check(p, t, x, ladder_config))
                for t, x in queries
            ]

        elif args.command == "simulate":
            queries = _parse_queries(args, p)
            t, x = queries[0]
            if args.control == "optimal":
                closed = closed_loop_solve(p)
                if closed.verdict != "solvable":
                    doc["results"] = {
                        "closed_loop_verdict": closed.verdict,
                        "detail": closed.detail,
                    }
                    _write_report(doc, args.out)
                    return 3
                control = closed.law
                reference = closed.law.value(t, x)
            else:
                control = None
                reference = None
            est = simulate_cost(
                p, control, t, x,
                SimulationConfig(n_paths=args.paths, seed=args.seed,
                                 grid_refine=args.refine),
            )
            doc["results"] = {
                "control": args.control,
                "t": t,
                "x": [float(v) for v in x.reshape(-1)],
                "mean_cost": est.mean,
                "std_error": est.std_error,
                "n_paths": est.n_paths,
                "predicted_value": reference,
                "seed": args.seed,
            }

    except (NewtonFailure, NotConvexAtEpsilon) as exc:
        doc["results"] = {"verdict": "not_convex", "detail": str(exc)}
        exit_code = 3
    except SlqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    _write_report(doc, args.out)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
