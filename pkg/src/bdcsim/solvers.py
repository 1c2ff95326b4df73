"""Assignment solvers.

Produces assignment matrices for a given parameter set: a deterministic
fill heuristic, an exact branch-and-bound search with an incremental
deficit cache, a hybrid loop that repeatedly un-assigns a random set of
elements and re-places them optimally, plus random and exhaustive
baselines used for benchmarking and as test oracles.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .design import AssignmentMatrix, StorageDesign, validate_assignment
from .evaluation import ExhaustiveMode, UnicastCache, load_bdc
from .model import SystemParameters, binomial, multicast_load

SOLVER_KINDS = ("heuristic", "branch_and_bound", "hybrid", "random", "exhaustive")


class InfeasibleStartError(ValueError):
    """A partial assignment already exceeds a row or column budget."""


@dataclass
class SolverConfig:
    """Knobs shared by the solver entry points.

    threshold        hybrid stop rule: halt once the average load improvement
                     per iteration over the last `window` iterations drops
                     below this; defaults to one unicast message's worth of
                     load, 1 / (m * N * C(K, q)).
    decrement_count  matrix elements un-assigned per hybrid iteration;
                     defaults to one batch's worth of rows.
    """

    kind: str = "hybrid"
    seed: int = 0
    threshold: Fraction | None = None
    decrement_count: int | None = None
    window: int = 10
    time_budget: float | None = None
    max_iterations: int | None = None

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {self.kind!r}; expected one of {SOLVER_KINDS}")
        if self.threshold is not None and self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.decrement_count is not None and self.decrement_count < 1:
            raise ValueError("decrement_count must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")


def heuristic_assign(p: SystemParameters) -> AssignmentMatrix:
    """Deterministic two-step fill.

    Every entry starts at gamma = floor(r / (num_batches * T)); the
    d = batch_size - gamma*T rows still missing from each batch are then
    dealt in a single pass, batch by batch, cycling through the partitions.
    The caller should validate the result: for pathological inputs the
    cyclic pass could leave a column short, in which case the matrix is
    returned as-is (flagged by validation) rather than repaired; the hybrid
    solver is the remedy.
    """
    B, T = p.num_batches, p.num_partitions
    gamma = p.coded_rows // (B * T)
    entries = np.full((B, T), gamma, dtype=np.int64)
    d = p.batch_size - gamma * T
    for a in range(d * B):
        entries[a // d, a % T] += 1
    return AssignmentMatrix(p, entries)


def random_assign(p: SystemParameters, seed: int = 0) -> AssignmentMatrix:
    """Seeded random valid assignment.

    Shuffles the multiset of partition tokens (r/T copies of each
    partition index) and deals batch_size tokens to each batch in turn.
    Since the token multiset carries exactly the per-partition totals,
    every deal satisfies both sum conditions.
    """
    rng = np.random.default_rng(seed)
    tokens = np.repeat(np.arange(p.num_partitions), p.rows_per_partition)
    rng.shuffle(tokens)
    deal = tokens.reshape(p.num_batches, p.batch_size)
    entries = np.zeros((p.num_batches, p.num_partitions), dtype=np.int64)
    for i in range(p.num_batches):
        entries[i] = np.bincount(deal[i], minlength=p.num_partitions)
    return AssignmentMatrix(p, entries)


class _SearchStop(Exception):
    pass


def _lower_bound(p: SystemParameters, cache: UnicastCache, free: list[tuple[int, int]]) -> Fraction:
    """Admissible lower bound on the final load of any completion.

    Each row placed into batch b can lower at most the pairs with a
    positive deficit indexed by b, each by one row (N/q values), so the
    aggregate deficit cannot drop by more than sum_b capacity_b * nnz_b.
    """
    scale = p.num_vectors // p.q
    denom = p.source_rows * p.num_vectors * len(cache.q_sets)
    best = None
    for s in cache.thresholds:
        nnz = cache.nonzero_counts(s, [b + 1 for b, _ in free])
        reduction = sum(cap * n for (_, cap), n in zip(free, nnz))
        agg = cache._agg[s]
        lb = multicast_load(p, s) + Fraction(scale * max(agg - reduction, 0), denom)
        if best is None or lb < best:
            best = lb
    return best


def _search(
    p: SystemParameters,
    entries: np.ndarray,
    row_free: np.ndarray,
    col_free: np.ndarray,
    cache: UnicastCache,
    incumbent_load: Fraction | None,
    prune: bool = True,
    node_limit: int | None = None,
    deadline: float | None = None,
):
    """DFS over all completions of a partial assignment.

    Branches batch by batch in index order; within a batch, rows are placed
    at nondecreasing partition indices so each completion multiset is
    enumerated once.  entries, row_free, col_free and cache are restored to
    their input state before returning.

    Returns (best_load, strategy, placements, nodes, prunes, completed)
    where placements lists 0-based (batch, partition) row placements of the
    best completion found that strictly beats the incumbent, or None.
    """
    B = p.num_batches
    T = p.num_partitions
    state = {"load": incumbent_load, "strategy": None, "placements": None}
    counters = {"nodes": 0, "prunes": 0}
    path: list[tuple[int, int]] = []

    def recurse(batch: int, min_partition: int):
        b = batch
        while b < B and row_free[b] == 0:
            b += 1
            min_partition = 0
        if b == B:
            load, strategy = cache.best_load()
            if state["load"] is None or load < state["load"]:
                state.update(load=load, strategy=strategy, placements=list(path))
            return
        for t in range(min_partition, T):
            if col_free[t] == 0:
                continue
            counters["nodes"] += 1
            if node_limit is not None and counters["nodes"] > node_limit:
                raise _SearchStop
            if deadline is not None and counters["nodes"] % 256 == 0 and time.monotonic() > deadline:
                raise _SearchStop
            row_free[b] -= 1
            col_free[t] -= 1
            cache.apply(b + 1, t + 1, 1)
            path.append((b, t))
            try:
                skip = False
                if prune and state["load"] is not None:
                    free = [(i, int(row_free[i])) for i in range(B) if row_free[i] > 0]
                    if _lower_bound(p, cache, free) >= state["load"]:
                        counters["prunes"] += 1
                        skip = True
                if not skip:
                    recurse(b, t)
            finally:
                path.pop()
                cache.undo()
                row_free[b] += 1
                col_free[t] += 1

    completed = True
    try:
        recurse(0, 0)
    except _SearchStop:
        completed = False
    return (
        state["load"],
        state["strategy"],
        state["placements"],
        counters["nodes"],
        counters["prunes"],
        completed,
    )


def _check_partial(p: SystemParameters, entries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if (entries < 0).any():
        raise InfeasibleStartError("partial assignment has negative entries")
    row_free = p.batch_size - entries.sum(axis=1)
    col_free = p.rows_per_partition - entries.sum(axis=0)
    if (row_free < 0).any():
        bad = int(np.nonzero(row_free < 0)[0][0]) + 1
        raise InfeasibleStartError(f"batch {bad} exceeds the batch size")
    if (col_free < 0).any():
        bad = int(np.nonzero(col_free < 0)[0][0]) + 1
        raise InfeasibleStartError(f"partition {bad} exceeds its row budget")
    return row_free, col_free


@dataclass
class SolverResult:
    """Matrix plus the run's log record."""

    matrix: AssignmentMatrix
    objective: Fraction | None
    strategy: int | None
    log: dict


def branch_and_bound_assign(
    p: SystemParameters,
    start: AssignmentMatrix | None = None,
    incumbent: AssignmentMatrix | None = None,
    cache: UnicastCache | None = None,
    prune: bool = True,
    node_limit: int | None = None,
    time_budget: float | None = None,
) -> SolverResult:
    """Exact minimum-load completion of a partial assignment.

    Explores batches in index order, branching over every partition with
    remaining column budget, and prunes subtrees whose lower bound cannot
    beat the incumbent.  With an empty start the heuristic solution seeds
    the incumbent, so the search only reports strictly better completions
    and otherwise returns the incumbent itself.
    """
    t0 = time.monotonic()
    entries = (
        np.zeros((p.num_batches, p.num_partitions), np.int64)
        if start is None
        else start.entries.copy()
    )
    row_free, col_free = _check_partial(p, entries)
    if incumbent is None and start is not None and not entries.any():
        incumbent = heuristic_assign(p)
        if not incumbent.is_valid:
            incumbent = None
    elif incumbent is None and start is None:
        incumbent = heuristic_assign(p)
        if not incumbent.is_valid:
            incumbent = None
    incumbent_load = None
    if incumbent is not None:
        incumbent_load, incumbent_strategy = _matrix_load(p, incumbent)
    if cache is None:
        cache = UnicastCache(p, entries=entries)
    load, strategy, placements, nodes, prunes, completed = _search(
        p,
        entries,
        row_free,
        col_free,
        cache,
        incumbent_load,
        prune=prune,
        node_limit=node_limit,
        deadline=None if time_budget is None else t0 + time_budget,
    )
    if placements is not None:
        for b, t in placements:
            entries[b, t] += 1
        matrix = AssignmentMatrix(p, entries)
    elif incumbent is not None:
        matrix, load, strategy = incumbent.copy(), incumbent_load, incumbent_strategy
    else:
        raise InfeasibleStartError("search found no completion and no incumbent was given")
    log = {
        "solver": "branch_and_bound",
        "nodes": nodes,
        "prunes": prunes,
        "pruning": prune,
        "complete": completed,
        "objective": str(load),
        "strategy": strategy,
        "wall_time": time.monotonic() - t0,
    }
    return SolverResult(matrix, load, strategy, log)


def _matrix_load(p: SystemParameters, matrix: AssignmentMatrix) -> tuple[Fraction, int]:
    result = load_bdc(StorageDesign.from_assignment(matrix), ExhaustiveMode())
    return result.load, result.strategy


def exhaustive_assign(p: SystemParameters, completion_limit: int = 500_000) -> SolverResult:
    """Global optimum by full enumeration; the test oracle for the search.

    Evaluates every valid matrix with the direct per-finisher-set load
    path (not the incremental cache), breaking objective ties toward the
    row-major lexicographically smallest matrix.
    """
    t0 = time.monotonic()
    B, T = p.num_batches, p.num_partitions
    entries = np.zeros((B, T), np.int64)
    row_free = np.full(B, p.batch_size, np.int64)
    col_free = np.full(T, p.rows_per_partition, np.int64)
    best: dict = {"load": None, "matrix": None, "strategy": None}
    counters = {"completions": 0}

    def recurse(batch: int, min_partition: int):
        b = batch
        while b < B and row_free[b] == 0:
            b += 1
            min_partition = 0
        if b == B:
            counters["completions"] += 1
            if counters["completions"] > completion_limit:
                raise ValueError(
                    f"instance exceeds the exhaustive enumeration ceiling of {completion_limit}"
                )
            matrix = AssignmentMatrix(p, entries.copy())
            load, strategy = _matrix_load(p, matrix)
            better = best["load"] is None or load < best["load"]
            tie = (
                best["load"] is not None
                and load == best["load"]
                and tuple(entries.ravel()) < tuple(best["matrix"].entries.ravel())
            )
            if better or tie:
                best.update(load=load, matrix=matrix, strategy=strategy)
            return
        for t in range(min_partition, T):
            if col_free[t] == 0:
                continue
            row_free[b] -= 1
            col_free[t] -= 1
            entries[b, t] += 1
            recurse(b, t)
            entries[b, t] -= 1
            row_free[b] += 1
            col_free[t] += 1

    recurse(0, 0)
    log = {
        "solver": "exhaustive",
        "completions": counters["completions"],
        "objective": str(best["load"]),
        "strategy": best["strategy"],
        "wall_time": time.monotonic() - t0,
    }
    return SolverResult(best["matrix"], best["load"], best["strategy"], log)


def default_threshold(p: SystemParameters) -> Fraction:
    """One unicast message's worth of load: the objective's quantum."""
    return Fraction(1, p.source_rows * p.num_vectors * binomial(p.num_servers, p.q))


def hybrid_assign(p: SystemParameters, config: SolverConfig | None = None) -> SolverResult:
    """Heuristic seed refined by repeated branch-and-bound re-placement.

    Each iteration decrements a seeded-random set of nonzero matrix
    elements by one and searches for the best re-placement of the freed
    rows; the previous placement is always a candidate, so the objective
    never increases.  Stops when the average improvement over the last
    `window` iterations drops below the threshold, or when the time or
    iteration budget runs out.
    """
    config = config or SolverConfig(kind="hybrid")
    t0 = time.monotonic()
    deadline = None if config.time_budget is None else t0 + config.time_budget
    rng = np.random.default_rng(config.seed)

    start = heuristic_assign(p)
    if not start.is_valid:
        # Unreachable for validated parameters (T divides r forces exact
        # column sums), but re-place the cyclic pass's rows if it happens.
        base = np.full(
            (p.num_batches, p.num_partitions),
            p.coded_rows // (p.num_batches * p.num_partitions),
            np.int64,
        )
        start = branch_and_bound_assign(p, start=AssignmentMatrix(p, base)).matrix

    entries = start.entries.copy()
    cache = UnicastCache(p, entries=entries)
    current, strategy = cache.best_load()
    history = [current]
    threshold = config.threshold if config.threshold is not None else default_threshold(p)
    dec = config.decrement_count if config.decrement_count is not None else p.batch_size
    T = p.num_partitions
    iterations = nodes = prunes = accepted = 0

    while True:
        if config.max_iterations is not None and iterations >= config.max_iterations:
            break
        if deadline is not None and time.monotonic() > deadline:
            break
        if len(history) > config.window:
            avg = (history[-config.window - 1] - history[-1]) / config.window
            if avg < threshold:
                break
        iterations += 1

        flat = np.flatnonzero(entries)
        chosen = rng.choice(flat, size=min(dec, flat.size), replace=False)
        row_free = np.zeros(p.num_batches, np.int64)
        col_free = np.zeros(T, np.int64)
        for cell in chosen:
            b, t = divmod(int(cell), T)
            entries[b, t] -= 1
            cache.apply(b + 1, t + 1, -1)
            row_free[b] += 1
            col_free[t] += 1

        load, strat, placements, n, pr, _ = _search(
            p, entries, row_free, col_free, cache, current, prune=True, deadline=deadline
        )
        nodes += n
        prunes += pr
        if placements is not None and load < current:
            for b, t in placements:
                entries[b, t] += 1
                cache.apply(b + 1, t + 1, 1)
            current, strategy = load, strat
            accepted += 1
        else:
            for cell in reversed(chosen):
                b, t = divmod(int(cell), T)
                entries[b, t] += 1
                cache.apply(b + 1, t + 1, 1)
        history.append(current)

    matrix = AssignmentMatrix(p, entries.copy())
    log = {
        "solver": "hybrid",
        "seed": config.seed,
        "iterations": iterations,
        "accepted": accepted,
        "nodes": nodes,
        "prunes": prunes,
        "objective": str(current),
        "strategy": strategy,
        "initial_objective": str(history[0]),
        "wall_time": time.monotonic() - t0,
    }
    result = SolverResult(matrix, current, strategy, log)
    result.history = history
    return result


def solve(p: SystemParameters, config: SolverConfig) -> SolverResult:
    """Dispatch on config.kind; every path is deterministic given the seed."""
    t0 = time.monotonic()
    if config.kind == "heuristic":
        matrix = heuristic_assign(p)
        log = {"solver": "heuristic", "valid": matrix.is_valid, "wall_time": time.monotonic() - t0}
        return SolverResult(matrix, None, None, log)
    if config.kind == "random":
        matrix = random_assign(p, config.seed)
        log = {"solver": "random", "seed": config.seed, "wall_time": time.monotonic() - t0}
        return SolverResult(matrix, None, None, log)
    if config.kind == "branch_and_bound":
        return branch_and_bound_assign(p, time_budget=config.time_budget)
    if config.kind == "exhaustive":
        return exhaustive_assign(p)
    return hybrid_assign(p, config)


def log_text(log: dict) -> str:
    """Render a solver log as one key=value per line."""
    rendered = []
    for key, value in log.items():
        if isinstance(value, float):
            value = f"{value:.6f}"
        rendered.append(f"{key}={value}")
    return "\n".join(rendered) + "\n"
