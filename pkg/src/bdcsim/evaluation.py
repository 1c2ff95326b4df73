"""Exact and sampled performance evaluation of a storage design.

Computes the unicast deficits left after the multicast rounds for each set
of finishing servers, the resulting communication load, the number of
servers needed before every partition is decodable, and the expected
delays.  Also provides the incremental deficit cache that makes the
branch-and-bound solver affordable: applying one assignment increment only
touches the tallies indexed by that batch.

Per-finisher-set tallies are independent, so exhaustive and sampled sweeps
may run in parallel; all aggregation is integer arithmetic, which keeps
results identical regardless of accumulation order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .design import StorageDesign, enumerate_batch_labels
from .model import (
    SystemParameters,
    binomial,
    load_mds,
    map_delay,
    multicast_load,
    overall_delay,
    reduce_delay,
    strategy_thresholds,
)

#: Largest number of enumerated subsets allowed before sampled mode is required.
EXHAUSTIVE_LIMIT = 100_000


@dataclass(frozen=True)
class ExhaustiveMode:
    """Average over every finisher set (and every subset size for g)."""

    def describe(self) -> str:
        return "exhaustive"


@dataclass(frozen=True)
class SampledMode:
    """Average over `count` uniformly sampled server permutations.

    Each permutation yields one finisher set (its first q servers) and one
    map-termination count.
    """

    count: int
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"sample count must be >= 1, got {self.count}")

    def describe(self) -> str:
        return f"sampled(count={self.count}, seed={self.seed})"


EvalMode = ExhaustiveMode | SampledMode


@dataclass(frozen=True)
class FinisherSet:
    """The first q servers to finish the map phase, optionally with the
    full finish order over all K servers."""

    servers: tuple[int, ...]
    order: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "servers", tuple(sorted(self.servers)))
        if len(set(self.servers)) != len(self.servers):
            raise ValueError("finisher set contains duplicate servers")
        if self.order is not None:
            object.__setattr__(self, "order", tuple(self.order))


@dataclass(frozen=True)
class UnicastTally:
    """Values each finisher still needs after all multicast rounds."""

    per_server: dict[int, int]

    @property
    def total(self) -> int:
        return sum(self.per_server.values())


@dataclass(frozen=True)
class GDistribution:
    """Probability mass of the map-termination count g over {q..K}."""

    pmf: dict[int, Fraction]

    def __post_init__(self):
        total = sum(self.pmf.values())
        if total != 1:
            raise ValueError(f"g distribution sums to {total}, expected 1")
        if any(w < 0 for w in self.pmf.values()):
            raise ValueError("g distribution has negative mass")

    @classmethod
    def point_mass(cls, g: int) -> "GDistribution":
        return cls({g: Fraction(1)})

    def mean(self) -> Fraction:
        return sum((Fraction(g) * w for g, w in self.pmf.items()), Fraction(0))

    def support(self) -> tuple[int, ...]:
        return tuple(sorted(g for g, w in self.pmf.items() if w > 0))


def _servers(finishers) -> tuple[int, ...]:
    if isinstance(finishers, FinisherSet):
        return finishers.servers
    return tuple(sorted(finishers))


def _contains_matrix(labels, num_servers: int) -> np.ndarray:
    """Boolean (K, B) matrix: server s+1 stores batch b."""
    contains = np.zeros((num_servers, len(labels)), dtype=bool)
    for b, label in enumerate(labels):
        for s in label:
            contains[s - 1, b] = True
    return contains


def _check_finishers(p: SystemParameters, Q: tuple[int, ...]):
    if len(Q) != p.q:
        raise ValueError(f"finisher set must have q={p.q} servers, got {len(Q)}")
    if not all(1 <= s <= p.num_servers for s in Q):
        raise ValueError(f"finisher set {Q} not within 1..{p.num_servers}")


def remaining_unicasts(design: StorageDesign, finishers, s: int) -> UnicastTally:
    """Unicast deficits per finisher under multicast threshold s.

    For server S, rows of a partition count toward its m/T requirement when
    they sit in a batch S stores, or in a batch S does not store whose label
    meets at least s finishers (those are delivered by the multicast
    rounds).  Deficits are clamped per partition: surplus rows of one
    partition never offset another's shortfall.  Counts are in values, i.e.
    rows times the N/q vectors each finisher is responsible for.
    """
    p = design.params
    Q = _servers(finishers)
    _check_finishers(p, Q)
    if not 1 <= s <= p.muq + 1:
        raise ValueError(f"multicast threshold {s} outside [1, {p.muq + 1}]")
    contains = _contains_matrix(design.labels, p.num_servers)
    qcount = contains[[S - 1 for S in Q]].sum(axis=0)
    entries = design.assignment.entries
    vectors_per_server = p.num_vectors // p.q
    per_server = {}
    for S in Q:
        useful = contains[S - 1] | (qcount >= s)
        coverage = useful @ entries
        deficit = int(np.maximum(p.decode_threshold - coverage, 0).sum())
        per_server[S] = deficit * vectors_per_server
    return UnicastTally(per_server)


def _all_finisher_sets(p: SystemParameters):
    if binomial(p.num_servers, p.q) > EXHAUSTIVE_LIMIT:
        raise ValueError(
            f"C({p.num_servers},{p.q}) finisher sets exceed the exhaustive "
            f"limit of {EXHAUSTIVE_LIMIT}; use SampledMode with a seed"
        )
    return itertools.combinations(range(1, p.num_servers + 1), p.q)


def _sampled_permutations(p: SystemParameters, mode: SampledMode) -> list[np.ndarray]:
    rng = np.random.default_rng(mode.seed)
    return [rng.permutation(p.num_servers) + 1 for _ in range(mode.count)]


def _deficit_totals(design: StorageDesign, q_sets, thresholds) -> tuple[dict[int, int], int]:
    """Row-deficit sums per threshold, accumulated over the given Q sets."""
    p = design.params
    contains = _contains_matrix(design.labels, p.num_servers)
    entries = design.assignment.entries
    dt = p.decode_threshold
    totals = {s: 0 for s in thresholds}
    count = 0
    for Q in q_sets:
        rows = contains[[S - 1 for S in Q]]
        qcount = rows.sum(axis=0)
        for s in thresholds:
            useful = rows | (qcount >= s)[None, :]
            coverage = useful.astype(np.int64) @ entries
            totals[s] += int(np.maximum(dt - coverage, 0).sum())
        count += 1
    return totals, count


@dataclass(frozen=True)
class LoadResult:
    """Communication load and the multicast threshold that achieved it."""

    load: Fraction
    strategy: int
    per_strategy: dict[int, Fraction]
    mode: str


def load_bdc(design: StorageDesign, mode: EvalMode = ExhaustiveMode()) -> LoadResult:
    """Communication load of a storage design.

    Evaluates, for each candidate multicast threshold, the multicast load
    plus the average unicast load over finisher sets, and returns the
    smaller.  Exhaustive mode averages over all C(K, q) sets; sampled mode
    over seeded uniform draws.
    """
    p = design.params
    if isinstance(mode, SampledMode):
        q_sets = [tuple(sorted(perm[: p.q])) for perm in _sampled_permutations(p, mode)]
    else:
        q_sets = _all_finisher_sets(p)
    thresholds = strategy_thresholds(p)
    totals, count = _deficit_totals(design, q_sets, thresholds)
    scale = p.num_vectors // p.q
    per_strategy = {
        s: multicast_load(p, s)
        + Fraction(scale * totals[s], p.source_rows * p.num_vectors * count)
        for s in thresholds
    }
    strategy = min(thresholds, key=lambda s: per_strategy[s])
    return LoadResult(per_strategy[strategy], strategy, per_strategy, mode.describe())


def per_finisher_loads(design: StorageDesign, threshold: int | None = None) -> dict[tuple, Fraction]:
    """Exhaustive per-finisher-set load breakdown at one threshold.

    Defaults to the threshold chosen by load_bdc on the global average.
    """
    p = design.params
    if threshold is None:
        threshold = load_bdc(design).strategy
    mc = multicast_load(p, threshold)
    result = {}
    for Q in _all_finisher_sets(p):
        tally = remaining_unicasts(design, Q, threshold)
        result[Q] = mc + Fraction(tally.total, p.source_rows * p.num_vectors)
    return result


def completion_count(design: StorageDesign, order) -> int:
    """Number of servers, in finish order, before every partition is
    decodable; never less than q."""
    p = design.params
    order = tuple(order)
    if sorted(order) != list(range(1, p.num_servers + 1)):
        raise ValueError(f"order {order} is not a permutation of 1..{p.num_servers}")
    contains = _contains_matrix(design.labels, p.num_servers)
    entries = design.assignment.entries
    owned = np.zeros(p.num_batches, dtype=bool)
    coverage = np.zeros(p.num_partitions, dtype=np.int64)
    for k, server in enumerate(order, start=1):
        new = contains[server - 1] & ~owned
        owned |= contains[server - 1]
        if new.any():
            coverage += entries[new].sum(axis=0)
        if k >= p.q and (coverage >= p.decode_threshold).all():
            return k
    raise AssertionError("unreachable: full coverage is guaranteed by Condition 2")


def decodable(design: StorageDesign, servers) -> bool:
    """True when the batches stored by `servers` cover every partition."""
    p = design.params
    contains = _contains_matrix(design.labels, p.num_servers)
    owned = contains[[s - 1 for s in servers]].any(axis=0)
    coverage = owned @ design.assignment.entries
    return bool((coverage >= p.decode_threshold).all())


def g_distribution(design: StorageDesign, mode: EvalMode = ExhaustiveMode()) -> GDistribution:
    """Distribution of the map-termination count g.

    Exhaustive mode uses P(g <= k) = (decodable k-subsets) / C(K, k): the
    first k servers of a uniform permutation are a uniform k-subset and
    decodability is monotone under adding servers.  Sampled mode draws
    permutations.
    """
    p = design.params
    if isinstance(mode, SampledMode):
        counts: dict[int, int] = {}
        for perm in _sampled_permutations(p, mode):
            g = completion_count(design, perm)
            counts[g] = counts.get(g, 0) + 1
        return GDistribution({g: Fraction(c, mode.count) for g, c in sorted(counts.items())})

    total_subsets = sum(binomial(p.num_servers, k) for k in range(p.q, p.num_servers + 1))
    if total_subsets > EXHAUSTIVE_LIMIT:
        raise ValueError(
            f"{total_subsets} subsets exceed the exhaustive limit of "
            f"{EXHAUSTIVE_LIMIT}; use SampledMode with a seed"
        )
    pmf: dict[int, Fraction] = {}
    cdf_prev = Fraction(0)
    for k in range(p.q, p.num_servers + 1):
        if cdf_prev == 1:
            break
        good = sum(
            1
            for subset in itertools.combinations(range(1, p.num_servers + 1), k)
            if decodable(design, subset)
        )
        cdf = Fraction(good, binomial(p.num_servers, k))
        if cdf > cdf_prev:
            pmf[k] = cdf - cdf_prev
        cdf_prev = cdf
    return GDistribution(pmf)


@dataclass(frozen=True)
class PerformanceReport:
    """Load and delay of one evaluated design, with normalized variants
    relative to the unpartitioned baseline (T=1, g=q)."""

    params: SystemParameters
    load: Fraction
    load_norm: Fraction
    strategy: int
    map_delay: float
    reduce_delay: float
    overall_delay: float
    delay_norm: float
    g_dist: GDistribution
    mode: str
    samples: int | None = None
    seed: int | None = None

    CSV_COLUMNS = (
        "m", "n", "N", "K", "mu", "r", "T",
        "load", "load_norm", "strategy",
        "map_delay", "reduce_delay", "overall_delay", "delay_norm",
        "g_mean", "mode", "samples", "seed",
    )

    def _values(self) -> dict[str, str]:
        fields = {k: str(v) for k, v in self.params.as_mapping().items()}
        fields.update(
            load=f"{float(self.load):.12g}",
            load_norm=f"{float(self.load_norm):.12g}",
            strategy=str(self.strategy),
            map_delay=f"{self.map_delay:.12g}",
            reduce_delay=f"{self.reduce_delay:.12g}",
            overall_delay=f"{self.overall_delay:.12g}",
            delay_norm=f"{self.delay_norm:.12g}",
            g_mean=f"{float(self.g_dist.mean()):.12g}",
            mode=self.mode,
            samples="" if self.samples is None else str(self.samples),
            seed="" if self.seed is None else str(self.seed),
        )
        return fields

    def to_text(self) -> str:
        lines = [f"{key}={value}" for key, value in self._values().items()]
        lines.insert(8, f"load_exact={self.load}")
        lines.insert(10, f"load_norm_exact={self.load_norm}")
        pmf = ",".join(f"{g}:{float(w):.12g}" for g, w in sorted(self.g_dist.pmf.items()))
        lines.append(f"g_pmf={pmf}")
        return "\n".join(lines) + "\n"

    def to_csv_row(self) -> list[str]:
        values = self._values()
        return [values[column] for column in self.CSV_COLUMNS]


def evaluate(design: StorageDesign, mode: EvalMode = ExhaustiveMode()) -> PerformanceReport:
    """Full performance report: load, g distribution, and delays.

    In sampled mode a single permutation stream drives both quantities:
    each permutation contributes its first q servers as the finisher set
    and its completion count to the g distribution.
    """
    p = design.params
    thresholds = strategy_thresholds(p)
    if isinstance(mode, SampledMode):
        perms = _sampled_permutations(p, mode)
        q_sets = [tuple(sorted(perm[: p.q])) for perm in perms]
        totals, count = _deficit_totals(design, q_sets, thresholds)
        scale = p.num_vectors // p.q
        per_strategy = {
            s: multicast_load(p, s)
            + Fraction(scale * totals[s], p.source_rows * p.num_vectors * count)
            for s in thresholds
        }
        strategy = min(thresholds, key=lambda s: per_strategy[s])
        load = per_strategy[strategy]
        counts: dict[int, int] = {}
        for perm in perms:
            g = completion_count(design, perm)
            counts[g] = counts.get(g, 0) + 1
        g_dist = GDistribution({g: Fraction(c, mode.count) for g, c in sorted(counts.items())})
        samples, seed = mode.count, mode.seed
    else:
        result = load_bdc(design, mode)
        load, strategy = result.load, result.strategy
        g_dist = g_distribution(design, mode)
        samples = seed = None

    d_map = map_delay(p, g_dist.pmf)
    d_reduce = reduce_delay(p)
    base = p.with_partitions(1)
    base_delay = map_delay(base, {p.q: 1}) + reduce_delay(base)
    d_total = overall_delay(d_map, d_reduce)
    return PerformanceReport(
        params=p,
        load=load,
        load_norm=load / load_mds(p),
        strategy=strategy,
        map_delay=d_map,
        reduce_delay=d_reduce,
        overall_delay=d_total,
        delay_norm=d_total / base_delay,
        g_dist=g_dist,
        mode=mode.describe(),
        samples=samples,
        seed=seed,
    )


class CacheUnderflowError(RuntimeError):
    """undo() was called with no apply() left to revert."""


class UnicastCache:
    """Incremental record of all per-(finisher set, server) deficit tallies.

    Holds, for every candidate multicast threshold, the per-partition
    coverage counts of every (Q, S) pair and their clamped deficit sums.
    A reverse index from batch to affected pairs makes apply/undo of a
    single matrix increment proportional to the pairs that batch serves.
    Strictly single-writer.
    """

    def __init__(
        self,
        params: SystemParameters,
        entries: np.ndarray | None = None,
        thresholds: tuple[int, ...] | None = None,
        q_sets=None,
    ):
        self.params = params
        labels = enumerate_batch_labels(params.num_servers, params.muq)
        contains = _contains_matrix(labels, params.num_servers)
        if q_sets is None:
            q_sets = list(_all_finisher_sets(params))
        else:
            q_sets = [tuple(sorted(Q)) for Q in q_sets]
        self.q_sets = q_sets
        self.thresholds = tuple(thresholds) if thresholds else strategy_thresholds(params)
        if entries is None:
            entries = np.zeros((params.num_batches, params.num_partitions), np.int64)
        entries = np.asarray(entries, dtype=np.int64)

        self._useful: dict[int, np.ndarray] = {}
        self._by_batch: dict[int, list[np.ndarray]] = {}
        self._cover: dict[int, np.ndarray] = {}
        self._defsum: dict[int, np.ndarray] = {}
        self._agg: dict[int, int] = {}
        dt = params.decode_threshold
        for s in self.thresholds:
            rows = []
            for Q in q_sets:
                qcount = contains[[S - 1 for S in Q]].sum(axis=0)
                for S in Q:
                    rows.append(contains[S - 1] | (qcount >= s))
            useful = np.array(rows)
            self._useful[s] = useful
            self._by_batch[s] = [np.nonzero(useful[:, b])[0] for b in range(useful.shape[1])]
            cover = useful.astype(np.int64) @ entries
            defsum = np.maximum(dt - cover, 0).sum(axis=1)
            self._cover[s] = cover
            self._defsum[s] = defsum
            self._agg[s] = int(defsum.sum())
        self._journal: list[tuple[int, int, int]] = []

    def apply(self, batch: int, partition: int, delta: int) -> dict[int, int]:
        """Add delta rows of `partition` to `batch` (1-based); returns the
        updated aggregates per threshold."""
        self._shift(batch - 1, partition - 1, delta)
        self._journal.append((batch - 1, partition - 1, delta))
        return dict(self._agg)

    def undo(self) -> dict[int, int]:
        """Revert the most recent apply()."""
        if not self._journal:
            raise CacheUnderflowError("undo without matching apply")
        b, t, delta = self._journal.pop()
        self._shift(b, t, -delta)
        return dict(self._agg)

    def _shift(self, b: int, t: int, delta: int):
        dt = self.params.decode_threshold
        for s in self.thresholds:
            idx = self._by_batch[s][b]
            cover = self._cover[s]
            old = cover[idx, t]
            new = old + delta
            cover[idx, t] = new
            change = np.maximum(dt - new, 0) - np.maximum(dt - old, 0)
            self._defsum[s][idx] += change
            self._agg[s] += int(change.sum())

    @property
    def depth(self) -> int:
        return len(self._journal)

    def objective(self, s: int) -> int:
        """Total unicast count over all finisher sets in scope, in values."""
        scale = self.params.num_vectors // self.params.q
        return scale * self._agg[s]

    def load(self, s: int) -> Fraction:
        p = self.params
        return multicast_load(p, s) + Fraction(
            self.objective(s), p.source_rows * p.num_vectors * len(self.q_sets)
        )

    def best_load(self) -> tuple[Fraction, int]:
        strategy = min(self.thresholds, key=self.load)
        return self.load(strategy), strategy

    def nonzero_counts(self, s: int, batches) -> list[int]:
        """Number of pairs with a positive deficit indexed by each batch
        (1-based); drives the branch-and-bound lower bound."""
        positive = self._defsum[s] > 0
        return [int(np.count_nonzero(positive[self._by_batch[s][b - 1]])) for b in batches]
