"""Command-line harness: generate instances, run solvers, compare algorithms.

Grammar::

    otibsn solve [flags]   run one algorithm, write trajectory CSV + summary JSON
    otibsn gen   [flags]   write a generated instance to CSV files
    otibsn bench [flags]   run several algorithms on one instance under a budget

Exit codes: 0 when the stopping tolerance was reached, 2 on an
iteration-cap (or budget) stop, 1 on any error.  ``--threads N`` pins the
numeric kernels' thread count (N=1 gives bitwise reproducibility across
runs); the ``OTIBSN_THREADS`` environment variable is the fallback.  Heavy
imports happen after the thread count is pinned.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

# (flag, type, default) mirroring the solver configuration one-to-one.
_CONFIG_FIELDS = (
    ("eta", float, 1e-4),
    ("mu0", float, 1e-4),
    ("mu_floor", float, 1e-11),
    ("inner_scale", str, "mindim"),
    ("warm_tol", float, 1e-3),
    ("kkt_tol", float, 1e-11),
    ("max_outer", int, 300),
    ("max_inner", int, 500),
    ("cg_rel_tol", float, 1e-10),
    ("cg_max_iters", int, 0),
    ("armijo_sigma", float, 1e-4),
    ("armijo_beta", float, 0.8),
    ("seed", int, 0),
)


def _pin_threads(argv: list[str]) -> None:
    threads = os.environ.get("OTIBSN_THREADS")
    for pos, token in enumerate(argv):
        if token == "--threads" and pos + 1 < len(argv):
            threads = argv[pos + 1]
        elif token.startswith("--threads="):
            threads = token.split("=", 1)[1]
    if threads is not None:
        for var in _THREAD_ENV_VARS:
            os.environ.setdefault(var, str(threads))


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for name, kind, _default in _CONFIG_FIELDS:
        flag = "--" + name.replace("_", "-")
        if name == "inner_scale":
            parser.add_argument(flag, choices=("mindim", "one"), default=None)
        else:
            parser.add_argument(flag, type=kind, default=None)
    parser.add_argument("--config", default=None, help="key=value file; flags take precedence")
    parser.add_argument("--threads", type=int, default=None)


def _add_instance_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--cost", choices=("uniform", "square", "spherical"), default=None)
    parser.add_argument("--size", type=int, nargs=2, metavar=("M", "N"), default=None)
    parser.add_argument("--cost-file", default=None)
    parser.add_argument("--a-file", default=None)
    parser.add_argument("--b-file", default=None)
    parser.add_argument("--images", nargs=2, metavar=("IMG1", "IMG2"), default=None)
    parser.add_argument(
        "--renormalize", action="store_true",
        help="rescale file-loaded marginals to sum to one instead of rejecting them",
    )


def _parse_config_file(path: str) -> dict:
    values = {}
    with open(path) as handle:
        for raw in handle:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: expected key=value, got {raw.strip()!r}")
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _resolve_config(args):
    from .core import InnerScale, SolverConfig

    file_values = _parse_config_file(args.config) if args.config else {}
    resolved = {}
    for name, kind, default in _CONFIG_FIELDS:
        cli_value = getattr(args, name)
        if cli_value is not None:
            resolved[name] = cli_value
        elif name in file_values:
            resolved[name] = kind(file_values[name])
        else:
            resolved[name] = default
    resolved["inner_scale"] = (
        InnerScale.MIN_DIM if resolved["inner_scale"] == "mindim" else InnerScale.ONE
    )
    if resolved["cg_max_iters"] == 0:
        resolved["cg_max_iters"] = None
    return SolverConfig(**resolved)


def _load_cost_csv(path: str):
    import numpy as np

    from .errors import LoadError

    rows = []
    try:
        with open(path) as handle:
            for raw in handle:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                rows.append([float(cell) for cell in line.split(",")])
    except OSError as exc:
        raise LoadError(f"{path}: {exc}") from exc
    except ValueError as exc:
        raise LoadError(f"{path}: malformed cost CSV") from exc
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise LoadError(f"{path}: cost CSV rows have inconsistent lengths")
    return np.array(rows, dtype=np.float64)


def _load_marginal_csv(path: str):
    import numpy as np

    from .errors import LoadError

    try:
        with open(path) as handle:
            values = [float(line.strip()) for line in handle if line.strip()]
    except OSError as exc:
        raise LoadError(f"{path}: {exc}") from exc
    except ValueError as exc:
        raise LoadError(f"{path}: malformed marginal CSV") from exc
    return np.array(values, dtype=np.float64)


def _build_instance(args, seed: int):
    from . import data
    from .core import OtProblem, normalize_cost, validate
    from .errors import LoadError

    if args.images is not None:
        problem = data.load_image_pair(args.images[0], args.images[1])
    elif args.cost_file is not None:
        if args.a_file is None or args.b_file is None:
            raise LoadError("--cost-file requires --a-file and --b-file")
        cost = normalize_cost(_load_cost_csv(args.cost_file))
        a = _load_marginal_csv(args.a_file)
        b = _load_marginal_csv(args.b_file)
        if args.renormalize:
            a = a / a.sum()
            b = b / b.sum()
        problem = OtProblem(cost=cost, source_marginal=a, target_marginal=b)
    elif args.cost is not None:
        if args.size is None:
            raise LoadError("--cost requires --size M N")
        m, n = args.size
        maker = {
            "uniform": data.gen_uniform,
            "square": data.gen_square,
            "spherical": data.gen_spherical,
        }[args.cost]
        problem = maker(m, n, seed)
    else:
        raise LoadError("no instance given: use --cost, --cost-file, or --images")
    validate(problem)
    return problem


def _oracle_value(problem):
    from .oracle import ORACLE_CELL_CAP, exact_small_lp

    m, n = problem.shape
    if m * n > ORACLE_CELL_CAP:
        return None
    _, value = exact_small_lp(problem)
    return value


def _run_algorithm(name, problem, config, optimal_value, clock, deadline=None, max_sweeps=None):
    """Returns (result_dict, converged) for one algorithm run."""
    import numpy as np

    from .bregman_outer import eot_single_solve, ibsink_solve, ibsn_solve
    from .sinkhorn import DEFAULT_SWEEP_CAP, sinkhorn_solve_eot

    m, n = problem.shape
    if name in ("ibsn", "ibsink"):
        solver = ibsn_solve if name == "ibsn" else ibsink_solve
        result = solver(
            problem, config, optimal_value=optimal_value, clock=clock,
            deadline_seconds=deadline,
        )
        last = result.trajectory.records[-1]
        converged = result.kkt < config.kkt_tol
        summary = {
            "algorithm": name, "m": m, "n": n, "eta": config.eta,
            "outer_iters": result.outer_iters, "inner_total": last.inner_total,
            "cg_total": last.cg_total, "wall_seconds": last.wall_seconds,
            "objective": result.objective, "kkt": result.kkt,
        }
        return summary, converged, result.trajectory
    if name == "eot-ibsn":
        result = eot_single_solve(problem, config, clock=clock)
        last = result.trajectory.records[-1]
        converged = last.grad_norm <= config.kkt_tol
        summary = {
            "algorithm": name, "m": m, "n": n, "eta": config.eta,
            "outer_iters": result.outer_iters, "inner_total": last.inner_total,
            "cg_total": last.cg_total, "wall_seconds": last.wall_seconds,
            "objective": result.objective, "kkt": result.kkt,
        }
        return summary, converged, result.trajectory
    if name == "sinkhorn":
        from .feasibility import kkt_residual, round_to_feasible
        from .trajectory import Trajectory, TrajectoryRecord

        t0 = clock()
        plan, state, sweeps = sinkhorn_solve_eot(
            problem, config.eta, config.kkt_tol,
            max_iters=max_sweeps or DEFAULT_SWEEP_CAP, deadline_seconds=deadline,
        )
        elapsed = clock() - t0
        err = float(np.linalg.norm(plan.dense().sum(axis=0) - problem.target_marginal))
        rounded = round_to_feasible(plan.dense(), problem.source_marginal, problem.target_marginal)
        objective = float((problem.cost * rounded.entries).sum())
        kkt = kkt_residual(
            rounded.entries, state.gamma, problem.cost,
            problem.source_marginal, problem.target_marginal,
        ).delta_kkt
        converged = err <= config.kkt_tol
        traj = Trajectory()
        traj.record(TrajectoryRecord(
            outer_k=0, inner_total=sweeps, cg_total=0, wall_seconds=elapsed,
            objective=objective, kkt=kkt, grad_norm=err,
            gap=None if optimal_value is None else abs(objective - optimal_value),
        ))
        summary = {
            "algorithm": name, "m": m, "n": n, "eta": config.eta,
            "outer_iters": 1, "inner_total": sweeps, "cg_total": 0,
            "wall_seconds": elapsed, "objective": objective, "kkt": kkt,
        }
        return summary, converged, traj
    raise ValueError(f"unknown algorithm {name!r}")


def cmd_solve(args) -> int:
    import time

    config = _resolve_config(args)
    problem = _build_instance(args, config.seed)
    clock = (lambda: 0.0) if args.timing == "off" else time.perf_counter
    optimal_value = _oracle_value(problem)
    summary, converged, traj = _run_algorithm(
        args.algo, problem, config, optimal_value, clock, max_sweeps=args.max_sweeps
    )
    if optimal_value is not None:
        summary["gap"] = abs(summary["objective"] - optimal_value)
    if args.out:
        traj.write_csv(args.out)
    summary_text = json.dumps(summary, indent=2)
    if args.summary:
        with open(args.summary, "w") as handle:
            handle.write(summary_text + "\n")
    else:
        print(summary_text)
    return 0 if converged else 2


def cmd_gen(args) -> int:
    from . import data

    maker = {
        "uniform": data.gen_uniform,
        "square": data.gen_square,
        "spherical": data.gen_spherical,
    }[args.cost]
    m, n = args.size
    problem = maker(m, n, args.seed)
    prefix = args.out_prefix
    with open(f"{prefix}_cost.csv", "w") as handle:
        handle.write(f"# {m} {n}\n")
        for row in problem.cost:
            handle.write(",".join(format(v, ".17g") for v in row) + "\n")
    for tag, marginal in (("a", problem.source_marginal), ("b", problem.target_marginal)):
        with open(f"{prefix}_{tag}.csv", "w") as handle:
            for v in marginal:
                handle.write(format(v, ".17g") + "\n")
    return 0


def cmd_bench(args) -> int:
    import time

    config = _resolve_config(args)
    problem = _build_instance(args, config.seed)
    optimal_value = _oracle_value(problem)
    algos = [token.strip() for token in args.algos.split(",") if token.strip()]
    os.makedirs(args.out_dir, exist_ok=True)

    rows = []
    any_ok = False
    for name in algos:
        try:
            summary, converged, traj = _run_algorithm(
                name, problem, config, optimal_value, time.perf_counter,
                deadline=args.budget, max_sweeps=args.max_sweeps,
            )
            if optimal_value is not None:
                summary["gap"] = abs(summary["objective"] - optimal_value)
            summary["status"] = "converged" if converged else "capped"
            traj.write_csv(os.path.join(args.out_dir, f"traj_{name.replace('-', '_')}.csv"))
            any_ok = True
        except Exception as exc:  # recorded per algorithm, run continues
            summary = {"algorithm": name, "status": f"failed: {exc}"}
        rows.append(summary)

    columns = (
        "algorithm", "m", "n", "eta", "outer_iters", "inner_total", "cg_total",
        "wall_seconds", "objective", "kkt", "gap", "status",
    )
    with open(os.path.join(args.out_dir, "summary.csv"), "w") as handle:
        handle.write(",".join(columns) + "\n")
        for row in rows:
            handle.write(",".join(str(row.get(col, "")) for col in columns) + "\n")
    return 0 if any_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otibsn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run one algorithm on one instance")
    solve.add_argument("--algo", choices=("ibsn", "ibsink", "sinkhorn", "eot-ibsn"), default="ibsn")
    _add_instance_flags(solve)
    _add_config_flags(solve)
    solve.add_argument("--out", default=None, help="trajectory CSV path")
    solve.add_argument("--summary", default=None, help="summary JSON path (default: stdout)")
    solve.add_argument("--timing", choices=("wall", "off"), default="wall",
                       help="'off' records zero wall time for reproducible output")
    solve.add_argument("--max-sweeps", type=int, default=None,
                       help="sweep cap for the sinkhorn algorithm")
    solve.set_defaults(func=cmd_solve)

    gen = sub.add_parser("gen", help="write a generated instance to CSV files")
    gen.add_argument("--cost", choices=("uniform", "square", "spherical"), required=True)
    gen.add_argument("--size", type=int, nargs=2, metavar=("M", "N"), required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-prefix", required=True)
    gen.add_argument("--threads", type=int, default=None)
    gen.set_defaults(func=cmd_gen)

    bench = sub.add_parser("bench", help="compare algorithms on one instance")
    bench.add_argument("--algos", default="ibsn,ibsink",
                       help="comma-separated subset of ibsn,ibsink,sinkhorn,eot-ibsn")
    _add_instance_flags(bench)
    _add_config_flags(bench)
    bench.add_argument("--budget", type=float, default=None, help="wall-clock budget per algorithm")
    bench.add_argument("--out-dir", required=True)
    bench.add_argument("--max-sweeps", type=int, default=None)
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _pin_threads(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except Exception as exc:
        print(f"otibsn: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
