"""Command-line front end.

Subcommands: validate | solve | evaluate | simulate | sweep.  Parameters
come from a key=value text file (fields m n N K mu r T, '#' comments) with
flag overrides; mu is accepted only as a rational string like 1/3.

Exit codes: 0 success, 2 validation error, 3 solver infeasible, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

from .design import (
    DesignFormatError,
    DesignValidationError,
    StorageDesign,
    load_design,
    parse_storage_fraction,
    save_design,
)
from .evaluation import (
    EXHAUSTIVE_LIMIT,
    ExhaustiveMode,
    SampledMode,
    evaluate,
    per_finisher_loads,
)
from .model import (
    ParameterError,
    SystemParameters,
    binomial,
    load_mds,
    min_multicast_size,
    scaled_parameters,
    sigma_map,
    sigma_reduce,
)
from .shuffle import best_strategy_trace, simulate_shuffle
from .solvers import InfeasibleStartError, SolverConfig, log_text, random_assign, solve

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_IO = 4

SWEEP_COLUMNS = (
    "swept", "load", "load_norm", "map_delay", "reduce_delay",
    "overall_delay", "delay_norm", "g_mean", "solver", "seed",
)

_PARAM_FIELDS = ("m", "n", "N", "K", "mu", "r", "T")


def _read_params_file(path: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in _PARAM_FIELDS or not value:
                raise ParameterError(f"{path}:{lineno}: expected '<field>=<value>', got {line!r}")
            fields[key] = value
    return fields


def _params_from_args(args) -> SystemParameters:
    fields: dict[str, object] = {}
    if args.params:
        fields.update(_read_params_file(args.params))
    for key in _PARAM_FIELDS:
        override = getattr(args, key, None)
        if override is not None:
            fields[key] = override
    if "mu" in fields and isinstance(fields["mu"], str):
        fields["mu"] = parse_storage_fraction(fields["mu"])
    missing = [key for key in _PARAM_FIELDS if key not in fields]
    if missing:
        raise ParameterError(f"missing parameters: {', '.join(missing)} (use --params or flags)")
    return SystemParameters.from_mapping(fields)


def _parse_mode(text: str, seed: int):
    if text == "exhaustive":
        return ExhaustiveMode()
    if text.startswith("sampled:"):
        return SampledMode(int(text.split(":", 1)[1]), seed)
    raise ParameterError(f"mode must be 'exhaustive' or 'sampled:N', got {text!r}")


def _solver_config(args) -> SolverConfig:
    threshold = None
    if getattr(args, "threshold", None):
        threshold = Fraction(args.threshold)
    return SolverConfig(
        kind=args.solver,
        seed=args.seed,
        threshold=threshold,
        decrement_count=getattr(args, "decrement", None),
        window=getattr(args, "window", 10),
        time_budget=getattr(args, "time_budget", None),
        max_iterations=getattr(args, "max_iterations", None),
    )


def cmd_validate(args) -> int:
    p = _params_from_args(args)
    lines = [f"{key}={value}" for key, value in p.as_mapping().items()]
    lines += [
        f"q={p.q}",
        f"muq={p.muq}",
        f"storage_rows={p.storage_rows}",
        f"num_batches={p.num_batches}",
        f"batch_size={p.batch_size}",
        f"rows_per_partition={p.rows_per_partition}",
        f"decode_threshold={p.decode_threshold}",
        f"min_multicast_size={min_multicast_size(p)}",
        f"load_mds={float(load_mds(p)):.12g} ({load_mds(p)})",
        f"sigma_map={sigma_map(p)}",
        f"sigma_reduce={float(sigma_reduce(p)):.12g}",
    ]
    print("\n".join(lines))
    return EXIT_OK


def cmd_solve(args) -> int:
    p = _params_from_args(args)
    config = _solver_config(args)
    result = solve(p, config)
    violations = result.matrix.violations()
    design_ok = not violations
    if design_ok:
        design = StorageDesign.from_assignment(result.matrix)
        save_design(design, args.out, fmt=args.format)
    log = dict(result.log)
    log["seed"] = config.seed
    log["valid"] = design_ok
    with open(args.out + ".log", "w") as handle:
        handle.write(log_text(log))
    if not design_ok:
        print("solver produced an invalid assignment:", file=sys.stderr)
        for violation in violations[:10]:
            print(f"  {violation}", file=sys.stderr)
        return EXIT_SOLVER
    summary = f"wrote {args.out} (solver={config.kind}, seed={config.seed}"
    if result.objective is not None:
        summary += f", load={float(result.objective):.12g}"
    print(summary + ")")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    design = load_design(args.design)
    mode = _parse_mode(args.mode, args.seed)
    report = evaluate(design, mode)
    sys.stdout.write(report.to_text())
    p = design.params
    show_per_q = args.per_q or (
        isinstance(mode, ExhaustiveMode) and binomial(p.num_servers, p.q) <= 128
    )
    if show_per_q:
        if not isinstance(mode, ExhaustiveMode):
            raise ParameterError("per-finisher breakdown requires exhaustive mode")
        for Q, load in per_finisher_loads(design, report.strategy).items():
            print(f"Q={','.join(map(str, Q))} load={float(load):.12g} ({load})")
    if args.out:
        with open(args.out, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(report.CSV_COLUMNS)
            writer.writerow(report.to_csv_row())
    return EXIT_OK


def cmd_simulate(args) -> int:
    design = load_design(args.design)
    finishers = tuple(int(s) for s in args.finishers.split(","))
    if args.strategy == "best":
        trace = best_strategy_trace(design, finishers)
    else:
        trace = simulate_shuffle(design, finishers, int(args.strategy))
    text = trace.to_text()
    if args.out:
        with open(args.out, "w") as handle:
            handle.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def _point_parameters(base: SystemParameters, variable: str, value: int) -> SystemParameters:
    if variable == "T":
        return base.with_partitions(value)
    return scaled_parameters(base, value)


def _sweep_point(work: tuple) -> list[str]:
    params, variable, value, config, mode = work
    result = solve(params, config)
    design = StorageDesign.from_assignment(result.matrix)
    report = evaluate(design, mode)
    return _sweep_row(value, report, config.kind, config.seed)


def _sweep_row(value: int, report, solver: str, seed: int) -> list[str]:
    return [
        str(value),
        f"{float(report.load):.12g}",
        f"{float(report.load_norm):.12g}",
        f"{report.map_delay:.12g}",
        f"{report.reduce_delay:.12g}",
        f"{report.overall_delay:.12g}",
        f"{report.delay_norm:.12g}",
        f"{float(report.g_dist.mean()):.12g}",
        solver,
        str(seed),
    ]


def _random_mean_row(params: SystemParameters, value: int, count: int, seed: int, mode) -> list[str]:
    loads, norms, maps, reduces, overalls, delay_norms, g_means = [], [], [], [], [], [], []
    for i in range(count):
        design = StorageDesign.from_assignment(random_assign(params, seed + i))
        report = evaluate(design, mode)
        loads.append(report.load)
        norms.append(report.load_norm)
        maps.append(report.map_delay)
        reduces.append(report.reduce_delay)
        overalls.append(report.overall_delay)
        delay_norms.append(report.delay_norm)
        g_means.append(float(report.g_dist.mean()))
    n = count
    return [
        str(value),
        f"{float(sum(loads) / n):.12g}",
        f"{float(sum(norms) / n):.12g}",
        f"{sum(maps) / n:.12g}",
        f"{sum(reduces) / n:.12g}",
        f"{sum(overalls) / n:.12g}",
        f"{sum(delay_norms) / n:.12g}",
        f"{sum(g_means) / n:.12g}",
        f"random-mean-{count}",
        str(seed),
    ]


def cmd_sweep(args) -> int:
    base = _params_from_args(args)
    values = [int(v) for v in args.values.split(",")]
    config = _solver_config(args)
    mode = _parse_mode(args.mode, args.seed)
    points = [(_point_parameters(base, args.variable, v), args.variable, v, config, mode) for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_point, points))
    else:
        rows = [_sweep_point(point) for point in points]
    if args.include_random:
        for params, _, value, _, _ in points:
            rows.append(_random_mean_row(params, value, args.include_random, args.seed, mode))
    with open(args.out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SWEEP_COLUMNS)
        writer.writerows(rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return EXIT_OK


def _add_param_flags(parser):
    parser.add_argument("--params", help="key=value parameter file")
    for key in ("m", "n", "N", "K", "r", "T"):
        parser.add_argument(f"--{key}", type=int, help=f"override {key}")
    parser.add_argument("--mu", help="override mu, as a rational like 1/3")


def _add_solver_flags(parser):
    parser.add_argument("--solver", default="hybrid",
                        choices=("heuristic", "branch_and_bound", "hybrid", "random", "exhaustive"))
    parser.add_argument("--threshold", help="hybrid stop threshold (load units, rational)")
    parser.add_argument("--decrement", type=int, help="hybrid elements un-assigned per iteration")
    parser.add_argument("--window", type=int, default=10, help="hybrid stop-rule window")
    parser.add_argument("--time-budget", type=float, dest="time_budget", help="seconds")
    parser.add_argument("--max-iterations", type=int, dest="max_iterations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bdcsim",
        description="Storage design and shuffle evaluation for block-diagonal coded multiplication",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check parameters and print derived quantities")
    _add_param_flags(p_validate)
    p_validate.set_defaults(func=cmd_validate)

    p_solve = sub.add_parser("solve", help="produce an assignment and write a design file")
    _add_param_flags(p_solve)
    _add_solver_flags(p_solve)
    p_solve.add_argument("--seed", type=int, default=0)
    p_solve.add_argument("--out", required=True)
    p_solve.add_argument("--format", choices=("text", "json"), default=None)
    p_solve.set_defaults(func=cmd_solve)

    p_eval = sub.add_parser("evaluate", help="report load, delays and g distribution of a design")
    p_eval.add_argument("--design", required=True)
    p_eval.add_argument("--mode", default="exhaustive", help="exhaustive or sampled:N")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--per-q", action="store_true", dest="per_q",
                        help="force the per-finisher-set breakdown")
    p_eval.add_argument("--out", help="also write a CSV record")
    p_eval.set_defaults(func=cmd_evaluate)

    p_sim = sub.add_parser("simulate", help="message-level shuffle trace for one finisher set")
    p_sim.add_argument("--design", required=True)
    p_sim.add_argument("--finishers", required=True, help="comma-separated server ids")
    p_sim.add_argument("--strategy", default="best",
                       help="'best' or an explicit multicast threshold")
    p_sim.add_argument("--out")
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="solve+evaluate a series of points into a CSV")
    _add_param_flags(p_sweep)
    _add_solver_flags(p_sweep)
    p_sweep.add_argument("--variable", choices=("T", "K"), default="T")
    p_sweep.add_argument("--values", required=True, help="comma-separated swept values")
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--mode", default="exhaustive")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--include-random", type=int, dest="include_random",
                         help="append a mean-of-N random assignments series")
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel sweep-point workers")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleStartError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except (ParameterError, DesignFormatError, DesignValidationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
