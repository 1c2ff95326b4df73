"""System parameters and closed-form load/delay expressions.

Models a cluster of K servers that jointly multiply N input vectors with an
m x n matrix whose rows are encoded into r coded rows by T independent MDS
codes (one per partition of m/T source rows).  Coded rows are grouped into
batches, each replicated on mu*q servers; the map phase ends once enough
servers finished, intermediate values are shuffled, and each of the first q
finishers decodes N/q output vectors.

All combinatorial quantities are computed with exact rational arithmetic
(``fractions.Fraction``); floats appear only in expected-delay results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping


class ParameterError(ValueError):
    """A candidate parameter tuple violates a system invariant."""


class NonIntegerQError(ParameterError):
    """r does not divide K*m, so the recovery threshold q is fractional."""


class StorageRangeError(ParameterError):
    """Storage fraction outside [1/K, 1]."""


class NonIntegerStorageError(ParameterError):
    """mu*q or mu*m is not an integer."""


class PartitionDivisionError(ParameterError):
    """The partition count T does not divide m or r."""


class BatchSizeError(ParameterError):
    """The number of batches does not divide the number of coded rows."""


class VectorCountError(ParameterError):
    """q does not divide the number of input vectors N."""


def binomial(n: int, k: int) -> int:
    """Exact binomial coefficient C(n, k); 0 when k < 0 or k > n.

    Python integers are unbounded, so there is no silent wraparound.
    """
    if n < 0:
        raise ValueError(f"binomial requires n >= 0, got n={n}")
    if k < 0 or k > n:
        return 0
    return math.comb(n, k)


def harmonic(n: int) -> Fraction:
    """n-th harmonic number as an exact rational; H(0) = 0."""
    if n < 0:
        raise ValueError(f"harmonic requires n >= 0, got {n}")
    return sum((Fraction(1, j) for j in range(1, n + 1)), Fraction(0))


def _as_fraction(value) -> Fraction:
    if isinstance(value, float):
        raise ParameterError(
            f"storage fraction must be exact (int, Fraction or 'p/q' string), got float {value!r}"
        )
    return Fraction(value)


@dataclass(frozen=True)
class SystemParameters:
    """Validated parameters of one distributed multiplication job.

    source_rows      m, rows of the source matrix
    num_columns      n, columns of the source matrix
    num_vectors      N, input vectors to multiply
    num_servers      K
    storage_fraction mu, fraction of source rows stored per server
    coded_rows       r, total rows after encoding
    num_partitions   T, independently coded row blocks
    """

    source_rows: int
    num_columns: int
    num_vectors: int
    num_servers: int
    storage_fraction: Fraction
    coded_rows: int
    num_partitions: int

    def __post_init__(self):
        object.__setattr__(self, "storage_fraction", _as_fraction(self.storage_fraction))
        m, n, N = self.source_rows, self.num_columns, self.num_vectors
        K, mu = self.num_servers, self.storage_fraction
        r, T = self.coded_rows, self.num_partitions
        for name, value in (
            ("source_rows", m),
            ("num_columns", n),
            ("num_vectors", N),
            ("num_servers", K),
            ("coded_rows", r),
            ("num_partitions", T),
        ):
            if not isinstance(value, int) or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value!r}")
        if r < m:
            raise ParameterError(f"coded_rows={r} must be at least source_rows={m}")
        if (K * m) % r != 0:
            raise NonIntegerQError(f"r={r} does not divide K*m={K * m}; q would be fractional")
        q = K * m // r
        if not Fraction(1, K) <= mu <= 1:
            raise StorageRangeError(f"storage fraction {mu} outside [1/{K}, 1]")
        if (mu * q).denominator != 1:
            raise NonIntegerStorageError(f"mu*q = {mu * q} is not an integer")
        if (mu * m).denominator != 1:
            raise NonIntegerStorageError(f"mu*m = {mu * m} is not an integer")
        if m % T != 0:
            raise PartitionDivisionError(f"T={T} does not divide m={m}")
        if r % T != 0:
            raise PartitionDivisionError(f"T={T} does not divide r={r}")
        num_batches = binomial(K, int(mu * q))
        if r % num_batches != 0:
            raise BatchSizeError(
                f"number of batches C({K},{int(mu * q)})={num_batches} does not divide r={r}"
            )
        if N % q != 0:
            raise VectorCountError(f"q={q} does not divide N={N}")

    @property
    def q(self) -> int:
        """Servers required to recover all outputs: K*m/r."""
        return self.num_servers * self.source_rows // self.coded_rows

    @property
    def muq(self) -> int:
        """Replication degree of each batch."""
        return int(self.storage_fraction * self.q)

    @property
    def storage_rows(self) -> int:
        """Coded rows stored per server: mu*m."""
        return int(self.storage_fraction * self.source_rows)

    @property
    def num_batches(self) -> int:
        return binomial(self.num_servers, self.muq)

    @property
    def batch_size(self) -> int:
        return self.coded_rows // self.num_batches

    @property
    def rows_per_partition(self) -> int:
        return self.coded_rows // self.num_partitions

    @property
    def decode_threshold(self) -> int:
        """Coded rows per partition needed to decode it: m/T."""
        return self.source_rows // self.num_partitions

    def with_partitions(self, num_partitions: int) -> "SystemParameters":
        return SystemParameters(
            source_rows=self.source_rows,
            num_columns=self.num_columns,
            num_vectors=self.num_vectors,
            num_servers=self.num_servers,
            storage_fraction=self.storage_fraction,
            coded_rows=self.coded_rows,
            num_partitions=num_partitions,
        )

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "SystemParameters":
        """Build from the short external field names m, n, N, K, mu, r, T."""
        required = ("m", "n", "N", "K", "mu", "r", "T")
        missing = [key for key in required if key not in mapping]
        if missing:
            raise ParameterError(f"missing parameter fields: {', '.join(missing)}")
        return cls(
            source_rows=int(mapping["m"]),
            num_columns=int(mapping["n"]),
            num_vectors=int(mapping["N"]),
            num_servers=int(mapping["K"]),
            storage_fraction=_as_fraction(mapping["mu"]),
            coded_rows=int(mapping["r"]),
            num_partitions=int(mapping["T"]),
        )

    def as_mapping(self) -> dict:
        return {
            "m": self.source_rows,
            "n": self.num_columns,
            "N": self.num_vectors,
            "K": self.num_servers,
            "mu": self.storage_fraction,
            "r": self.coded_rows,
            "T": self.num_partitions,
        }

    def __str__(self):
        mu = self.storage_fraction
        return (
            f"SystemParameters(m={self.source_rows}, n={self.num_columns}, "
            f"N={self.num_vectors}, K={self.num_servers}, mu={mu}, "
            f"r={self.coded_rows}, T={self.num_partitions}, q={self.q}, "
            f"batches={self.num_batches}x{self.batch_size})"
        )


def validate_parameters(raw: Mapping[str, object]) -> SystemParameters:
    """Validate a raw m/n/N/K/mu/r/T mapping into SystemParameters."""
    return SystemParameters.from_mapping(raw)


def scaled_parameters(base: SystemParameters, num_servers: int, search_limit: int = 10_000) -> SystemParameters:
    """Nearest feasible parameters for a different cluster size.

    Keeps the replication degree mu*q, the code rate m/r, and the source
    rows per partition m/T of `base` fixed, targets the same per-server
    storage mu*m, and picks the smallest feasible m at or above that
    target.  The number of vectors is set to q (normalized load and delay
    do not depend on it).
    """
    rate = Fraction(base.source_rows, base.coded_rows)
    q = rate * num_servers
    if q.denominator != 1:
        raise ParameterError(
            f"code rate {rate} does not give an integer q for K={num_servers}"
        )
    q = int(q)
    muq = base.muq
    if q < muq:
        raise ParameterError(f"K={num_servers} gives q={q} below the replication degree {muq}")
    mu = Fraction(muq, q)
    rows_per_part = base.source_rows // base.num_partitions
    target_m = -(-base.storage_rows * q // muq)  # ceil(storage_rows / mu)
    start = -(-target_m // rows_per_part) * rows_per_part
    for step in range(search_limit):
        m = start + step * rows_per_part
        r = Fraction(m) / rate
        if r.denominator != 1:
            continue
        try:
            return SystemParameters(
                source_rows=m,
                num_columns=base.num_columns,
                num_vectors=q,
                num_servers=num_servers,
                storage_fraction=mu,
                coded_rows=int(r),
                num_partitions=m // rows_per_part,
            )
        except ParameterError:
            continue
    raise ParameterError(f"no feasible scaling of {base} to K={num_servers} found")


@dataclass(frozen=True)
class DelayParameters:
    """Inputs of the straggler delay model.

    sigma is the operation count (multiplications/divisions) of the whole
    job, split evenly over server_count servers; wait_for is how many of
    them must finish.
    """

    sigma: object
    server_count: int
    wait_for: int

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 1 <= self.wait_for <= self.server_count:
            raise ValueError(
                f"wait_for must be in [1, {self.server_count}], got {self.wait_for}"
            )


def order_statistic_mean(p: DelayParameters) -> float:
    """Expected runtime of the wait_for-th fastest of server_count servers.

    Runtimes are i.i.d. shifted-exponential with shift/scale sigma; the
    g-th order statistic has mean sigma * (1 + H(K) - H(K - g)).
    """
    return float(_order_statistic_mean_exact(p.sigma, p.server_count, p.wait_for))


def _order_statistic_mean_exact(sigma, server_count: int, wait_for: int) -> Fraction:
    tail = harmonic(server_count) - harmonic(server_count - wait_for)
    return Fraction(sigma) * (1 + tail)


def alpha(j: int, p: SystemParameters) -> Fraction:
    """Fraction of intermediate values a finisher needs that are stored on
    exactly j other finishers.

    alpha_j = C(q-1, j) * C(K-q, mu*q - j) / ((q/K) * C(K, mu*q)); exact
    rational, 0 whenever a binomial argument is out of range.
    """
    K, q, muq = p.num_servers, p.q, p.muq
    numer = binomial(q - 1, j) * binomial(K - q, muq - j)
    return Fraction(numer * K, q * binomial(K, muq))


def min_multicast_size(p: SystemParameters) -> int:
    """Smallest multicast subset size s with sum_{l=s}^{mu*q} alpha_l <= 1 - mu.

    Clamped to >= 1; returns mu*q + 1 when even the last term exceeds the
    budget, encoding "no multicast rounds".
    """
    budget = 1 - p.storage_fraction
    for s in range(1, p.muq + 2):
        if sum(alpha(l, p) for l in range(s, p.muq + 1)) <= budget:
            return s
    raise AssertionError("unreachable: empty sum is always <= 1 - mu")


def multicast_load(p: SystemParameters, s: int) -> Fraction:
    """Load of the multicast rounds with subset sizes from mu*q down to s."""
    return sum((alpha(j, p) / j for j in range(s, p.muq + 1)), Fraction(0))


def strategy_thresholds(p: SystemParameters) -> tuple[int, ...]:
    """Candidate multicast thresholds: s_q, and s_q - 1 when it is >= 1."""
    s = min_multicast_size(p)
    return (s, s - 1) if s - 1 >= 1 else (s,)


def load_mds(p: SystemParameters) -> Fraction:
    """Communication load of the unpartitioned (T=1) scheme.

    Minimum of two shuffle strategies: multicast down to s_q and unicast
    the rest, or multicast one round further (only defined when
    s_q - 1 >= 1).
    """
    s = min_multicast_size(p)
    residual = 1 - p.storage_fraction - sum(
        (alpha(j, p) for j in range(s, p.muq + 1)), Fraction(0)
    )
    best = multicast_load(p, s) + residual
    if s - 1 >= 1:
        best = min(best, multicast_load(p, s - 1))
    return best


def sigma_map(p: SystemParameters) -> int:
    """Multiplications in the map phase over all servers: K * mu*m * n * N."""
    return p.num_servers * p.storage_rows * p.num_columns * p.num_vectors


def sigma_reduce(p: SystemParameters) -> Fraction:
    """Decoding multiplications in the reduce phase: r^2 * (1 - q/K) * N / T.

    Each of the T per-partition codes decodes at quadratic cost in its
    length r/T, with erasure fraction at most 1 - q/K, for N vectors.
    """
    K, q = p.num_servers, p.q
    return Fraction(p.coded_rows**2 * p.num_vectors, p.num_partitions) * Fraction(K - q, K)


def map_delay(p: SystemParameters, g_dist: Mapping[int, object]) -> float:
    """Expected map-phase delay per source row and vector.

    g_dist is a probability mass over the number of servers g that must
    finish before the shuffle can start; support must lie in {q, ..., K}.
    """
    total = sum(Fraction(w) for w in g_dist.values())
    if abs(total - 1) > Fraction(1, 10**12):
        raise ValueError(f"g distribution sums to {float(total)}, expected 1")
    sigma = Fraction(sigma_map(p), p.num_servers)
    mean = Fraction(0)
    for g, weight in g_dist.items():
        if not p.q <= g <= p.num_servers:
            raise ValueError(f"g={g} outside support [{p.q}, {p.num_servers}]")
        mean += Fraction(weight) * _order_statistic_mean_exact(sigma, p.num_servers, g)
    return float(mean / (p.source_rows * p.num_vectors))


def reduce_delay(p: SystemParameters) -> float:
    """Expected reduce-phase delay per source row and vector.

    All q responsible servers decode in parallel and all must finish.
    Zero when q = K (nothing was erased).
    """
    sigma = sigma_reduce(p)
    if sigma == 0:
        return 0.0
    mean = _order_statistic_mean_exact(Fraction(sigma, p.q), p.q, p.q)
    return float(mean / (p.source_rows * p.num_vectors))


def overall_delay(map_d: float, reduce_d: float) -> float:
    """Total computational delay: map plus reduce."""
    return map_d + reduce_d
