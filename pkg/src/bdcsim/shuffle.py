"""Discrete, message-level simulation of the shuffle phase.

Replays the coded shuffle for one concrete storage design and finisher
set: values needed by a finisher and known exclusively to a subset of the
others are split into segments, XORed together and multicast, then every
remaining per-partition deficit is unicast.  Values are simulated as
identities (partition, row index, vector index); no field arithmetic.

This path shares no counting code with the analytic evaluation, which
makes it the independent oracle for those formulas.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

from .design import StorageDesign, rows_of
from .evaluation import ExhaustiveMode, EvalMode, SampledMode, _sampled_permutations, _servers, remaining_unicasts
from .model import binomial, min_multicast_size, multicast_load

Value = tuple[int, int, int]  # (partition, row, vector)


@dataclass(frozen=True)
class MulticastMessage:
    """One coded transmission: the XOR of the segments associated with the
    sender inside `subset`, charged at the longest segment."""

    round_size: int
    subset: tuple[int, ...]
    sender: int
    units: int


@dataclass
class ServerLedger:
    """What one finisher holds, by provenance."""

    responsible: tuple[int, ...]
    local_rows: set[tuple[int, int]]
    multicast: set[Value] = field(default_factory=set)
    unicast: dict[tuple[int, int], int] = field(default_factory=dict)

    def held(self, partition: int, vector: int) -> int:
        local = sum(1 for (t, _) in self.local_rows if t == partition)
        received = sum(1 for (t, _, v) in self.multicast if t == partition and v == vector)
        return local + received

    def total(self, partition: int, vector: int) -> int:
        return self.held(partition, vector) + self.unicast.get((partition, vector), 0)


@dataclass
class ShuffleTrace:
    """Full record of one simulated shuffle."""

    finishers: tuple[int, ...]
    threshold: int
    messages: list[MulticastMessage]
    multicast_units: int
    unicast_units: int
    unicast_by_server: dict[int, int]
    ledgers: dict[int, ServerLedger]
    load: Fraction
    decode_threshold: int

    def verify(self) -> None:
        """Check that every finisher can decode every partition for each
        vector it is responsible for."""
        for server, ledger in self.ledgers.items():
            for vector in ledger.responsible:
                partitions = {t for (t, _) in ledger.local_rows}
                partitions |= {t for (t, _, _) in ledger.multicast}
                partitions |= {t for (t, _) in ledger.unicast}
                for t in sorted(partitions):
                    have = ledger.total(t, vector)
                    if have < self.decode_threshold:
                        raise AssertionError(
                            f"server {server} holds {have} < {self.decode_threshold} "
                            f"values of partition {t} for vector {vector}"
                        )

    def to_text(self) -> str:
        lines = [
            f"Q={','.join(map(str, self.finishers))} s={self.threshold}",
        ]
        for msg in self.messages:
            subset = ",".join(map(str, msg.subset))
            lines.append(
                f"multicast j={msg.round_size} S={subset} sender={msg.sender} units={msg.units}"
            )
        for server in self.finishers:
            lines.append(f"unicast server={server} units={self.unicast_by_server[server]}")
        lines.append(
            f"total multicast={self.multicast_units} unicast={self.unicast_units} load={self.load}"
        )
        return "\n".join(lines) + "\n"


def _responsibilities(Q: tuple[int, ...], num_vectors: int) -> dict[int, tuple[int, ...]]:
    """Deal vectors to finishers in sorted order, N/q contiguous each."""
    share = num_vectors // len(Q)
    return {
        S: tuple(range(i * share + 1, (i + 1) * share + 1)) for i, S in enumerate(sorted(Q))
    }


def _split_segments(values: list[Value], parts: int) -> list[list[Value]]:
    """Split evenly into `parts` segments, longer segments first."""
    size, extra = divmod(len(values), parts)
    segments = []
    offset = 0
    for i in range(parts):
        length = size + (1 if i < extra else 0)
        segments.append(values[offset : offset + length])
        offset += length
    return segments


def simulate_shuffle(design: StorageDesign, finishers, s: int) -> ShuffleTrace:
    """Simulate the shuffle for one finisher set at multicast threshold s.

    For each subset size j from mu*q down to s and every (j+1)-subset of
    finishers, the values each member needs that the other j know
    exclusively are split into j segments (sizes differing by at most one,
    dealt to the other members in increasing server order); every member
    then multicasts the XOR of the segments dealt to it, charged at its
    longest segment.  Whatever is still missing afterwards is unicast, one
    value per message.
    """
    p = design.params
    Q = _servers(finishers)
    if len(Q) != p.q or not all(1 <= S <= p.num_servers for S in Q):
        raise ValueError(f"finisher set must be q={p.q} servers within 1..{p.num_servers}")
    if not 1 <= s <= p.muq + 1:
        raise ValueError(f"multicast threshold {s} outside [1, {p.muq + 1}]")

    batch_rows = [
        [(t, row) for t, rows in rows_of(design, b) for row in rows]
        for b in range(1, p.num_batches + 1)
    ]
    label_in_q = [tuple(S for S in label if S in Q) for label in design.labels]
    responsible = _responsibilities(Q, p.num_vectors)
    ledgers = {
        S: ServerLedger(
            responsible=responsible[S],
            local_rows={
                (t, row)
                for b, label in enumerate(design.labels)
                if S in label
                for (t, row) in batch_rows[b]
            },
        )
        for S in Q
    }

    messages: list[MulticastMessage] = []
    multicast_units = 0
    for j in range(p.muq, s - 1, -1):
        for subset in itertools.combinations(Q, j + 1):
            # segment (receiver, helper) -> values, built per receiver
            dealt: dict[tuple[int, int], list[Value]] = {}
            for S in subset:
                exclusive = tuple(x for x in subset if x != S)
                needed = [
                    (t, row, v)
                    for b in range(p.num_batches)
                    if label_in_q[b] == exclusive
                    for (t, row) in batch_rows[b]
                    for v in responsible[S]
                ]
                for helper, segment in zip(exclusive, _split_segments(needed, j)):
                    dealt[(S, helper)] = segment
            for sender in subset:
                own = [dealt[(S, sender)] for S in subset if S != sender]
                units = max(len(segment) for segment in own)
                if units == 0:
                    continue
                multicast_units += units
                messages.append(MulticastMessage(j, subset, sender, units))
                for receiver in subset:
                    if receiver == sender:
                        continue
                    # cancellation: the receiver computed every other
                    # segment in this message locally
                    for other in subset:
                        if other in (receiver, sender):
                            continue
                        for (t, row, _) in dealt[(other, sender)]:
                            if (t, row) not in ledgers[receiver].local_rows:
                                raise AssertionError(
                                    f"server {receiver} cannot cancel row ({t},{row})"
                                )
                    ledgers[receiver].multicast.update(dealt[(receiver, sender)])

    unicast_by_server = {}
    unicast_units = 0
    for S in Q:
        ledger = ledgers[S]
        total = 0
        for v in responsible[S]:
            for t in range(1, p.num_partitions + 1):
                missing = p.decode_threshold - ledger.held(t, v)
                if missing > 0:
                    ledger.unicast[(t, v)] = missing
                    total += missing
        unicast_by_server[S] = total
        unicast_units += total

    trace = ShuffleTrace(
        finishers=Q,
        threshold=s,
        messages=messages,
        multicast_units=multicast_units,
        unicast_units=unicast_units,
        unicast_by_server=unicast_by_server,
        ledgers=ledgers,
        load=Fraction(multicast_units + unicast_units, p.source_rows * p.num_vectors),
        decode_threshold=p.decode_threshold,
    )
    trace.verify()
    return trace


def best_strategy_trace(design: StorageDesign, finishers) -> ShuffleTrace:
    """Run both shuffle strategies and keep the cheaper trace.

    Ties go to the shorter multicast schedule (threshold s_q)."""
    s = min_multicast_size(design.params)
    best = simulate_shuffle(design, finishers, s)
    if s - 1 >= 1:
        other = simulate_shuffle(design, finishers, s - 1)
        if other.load < best.load:
            best = other
    return best


def multicast_slack_bound(p, s: int) -> int:
    """Ceiling slack of the segment split: at most one extra unit per
    sender, (j+1) senders per subset, per multicast round."""
    return sum(
        binomial(p.q, j + 1) * (j + 1) for j in range(s, p.muq + 1)
    )


@dataclass(frozen=True)
class Discrepancy:
    finishers: tuple[int, ...]
    threshold: int
    unicast_sim: int
    unicast_analytic: int
    multicast_sim: int
    multicast_exact: Fraction
    slack_bound: int

    @property
    def unicast_ok(self) -> bool:
        return self.unicast_sim == self.unicast_analytic

    @property
    def multicast_ok(self) -> bool:
        excess = self.multicast_sim - self.multicast_exact
        return 0 <= excess <= self.slack_bound


@dataclass
class CrossValidationReport:
    """Per finisher set, simulator counts against the analytic formulas."""

    entries: list[Discrepancy]

    @property
    def unicast_exact(self) -> bool:
        return all(e.unicast_ok for e in self.entries)

    @property
    def multicast_within_slack(self) -> bool:
        return all(e.multicast_ok for e in self.entries)

    def flagged(self) -> list[Discrepancy]:
        return [e for e in self.entries if not (e.unicast_ok and e.multicast_ok)]


def cross_validate(design: StorageDesign, mode: EvalMode = ExhaustiveMode()) -> CrossValidationReport:
    """Compare the simulator against the analytic counts, per finisher set.

    Unicast units must match the deficit formula exactly at every
    threshold; multicast units must match m*N times the multicast load up
    to the documented segment-rounding slack.
    """
    p = design.params
    if isinstance(mode, SampledMode):
        q_sets = [tuple(sorted(perm[: p.q])) for perm in _sampled_permutations(p, mode)]
    else:
        q_sets = list(itertools.combinations(range(1, p.num_servers + 1), p.q))
    s_q = min_multicast_size(p)
    thresholds = (s_q, s_q - 1) if s_q - 1 >= 1 else (s_q,)
    mn = p.source_rows * p.num_vectors
    entries = []
    for Q in q_sets:
        for s in thresholds:
            trace = simulate_shuffle(design, Q, s)
            analytic = remaining_unicasts(design, Q, s)
            entries.append(
                Discrepancy(
                    finishers=Q,
                    threshold=s,
                    unicast_sim=trace.unicast_units,
                    unicast_analytic=analytic.total,
                    multicast_sim=trace.multicast_units,
                    multicast_exact=mn * multicast_load(p, s),
                    slack_bound=multicast_slack_bound(p, s),
                )
            )
    return CrossValidationReport(entries)
