"""Batch enumeration, the assignment matrix, and design persistence.

A storage design places the r coded rows into C(K, mu*q) batches, each
replicated on the mu*q servers named by its label.  The assignment matrix
holds the number of rows each batch takes from each partition; rows of a
partition are handed out sequentially as batches are scanned in label
order, so the concrete row identities are always derivable and never
stored.
"""

from __future__ import annotations

import io
import itertools
import json
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .model import ParameterError, SystemParameters

Label = tuple[int, ...]


class DesignFormatError(ValueError):
    """A design file cannot be parsed; message names line and field."""


class DesignValidationError(ValueError):
    """A parsed design violates an assignment or parameter invariant."""


def enumerate_batch_labels(num_servers: int, label_size: int) -> list[Label]:
    """All size-`label_size` server subsets of {1..num_servers}, in
    lexicographic order.  A batch's index is the position of its label here.
    """
    if not 1 <= label_size <= num_servers:
        raise ValueError(f"label size must be in [1, {num_servers}], got {label_size}")
    return list(itertools.combinations(range(1, num_servers + 1), label_size))


@dataclass(frozen=True)
class Violation:
    """One failed row or column sum: kind is 'row', 'column' or 'negative'."""

    kind: str
    index: int
    actual: int
    expected: int

    def __str__(self):
        if self.kind == "negative":
            return f"batch {self.index}: negative entry"
        noun = "batch" if self.kind == "row" else "partition"
        return f"{self.kind} sum for {noun} {self.index} is {self.actual}, expected {self.expected}"


@dataclass
class AssignmentMatrix:
    """Rows-per-partition-per-batch counts, shape (num_batches, T)."""

    params: SystemParameters
    entries: np.ndarray

    def __post_init__(self):
        expected = (self.params.num_batches, self.params.num_partitions)
        self.entries = np.asarray(self.entries, dtype=np.int64)
        if self.entries.shape != expected:
            raise DesignValidationError(
                f"assignment shape {self.entries.shape} does not match {expected}"
            )

    @classmethod
    def zeros(cls, params: SystemParameters) -> "AssignmentMatrix":
        return cls(params, np.zeros((params.num_batches, params.num_partitions), np.int64))

    def copy(self) -> "AssignmentMatrix":
        return AssignmentMatrix(self.params, self.entries.copy())

    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    def column_sums(self) -> np.ndarray:
        return self.entries.sum(axis=0)

    def violations(self) -> list[Violation]:
        return validate_assignment(self)

    @property
    def is_valid(self) -> bool:
        return not self.violations()

    def __eq__(self, other):
        return (
            isinstance(other, AssignmentMatrix)
            and self.params == other.params
            and np.array_equal(self.entries, other.entries)
        )


def validate_assignment(matrix: AssignmentMatrix) -> list[Violation]:
    """Check both row and column sum conditions; report every failure.

    Condition 1: every batch row sums to the batch size.
    Condition 2: every partition column sums to r/T.
    """
    p = matrix.params
    found = []
    for i in np.nonzero((matrix.entries < 0).any(axis=1))[0]:
        found.append(Violation("negative", int(i) + 1, 0, 0))
    for i, total in enumerate(matrix.row_sums(), start=1):
        if total != p.batch_size:
            found.append(Violation("row", i, int(total), p.batch_size))
    for j, total in enumerate(matrix.column_sums(), start=1):
        if total != p.rows_per_partition:
            found.append(Violation("column", j, int(total), p.rows_per_partition))
    return found


@dataclass(frozen=True)
class StorageDesign:
    """A validated pair of batch labels and assignment matrix."""

    params: SystemParameters
    labels: tuple[Label, ...]
    assignment: AssignmentMatrix = field(compare=False)

    def __post_init__(self):
        expected = tuple(enumerate_batch_labels(self.params.num_servers, self.params.muq))
        if self.labels != expected:
            raise DesignValidationError("labels are not the lexicographic batch order")

    @classmethod
    def from_assignment(cls, assignment: AssignmentMatrix, check: bool = True) -> "StorageDesign":
        if check:
            problems = validate_assignment(assignment)
            if problems:
                raise DesignValidationError(
                    "; ".join(str(v) for v in problems[:8])
                    + (f" (+{len(problems) - 8} more)" if len(problems) > 8 else "")
                )
        p = assignment.params
        labels = tuple(enumerate_batch_labels(p.num_servers, p.muq))
        return cls(p, labels, assignment)

    def __eq__(self, other):
        return (
            isinstance(other, StorageDesign)
            and self.params == other.params
            and self.assignment == other.assignment
        )


def rows_of(design: StorageDesign, batch: int) -> list[tuple[int, range]]:
    """Concrete coded-row identities stored in a batch.

    Rows of partition t are dealt out in index order as batches are scanned
    top to bottom, so batch i holds, for each partition with a positive
    entry, the contiguous 1-based row range after all earlier batches'
    shares.  Indices are 1-based; ranges are half-open.
    """
    entries = design.assignment.entries
    if not 1 <= batch <= entries.shape[0]:
        raise IndexError(f"batch index {batch} out of range 1..{entries.shape[0]}")
    offsets = entries[: batch - 1].sum(axis=0)
    row = entries[batch - 1]
    return [
        (t + 1, range(int(offsets[t]) + 1, int(offsets[t] + row[t]) + 1))
        for t in np.nonzero(row)[0]
    ]


_MU_PATTERN = re.compile(r"^\d+(/\d+)?$")


def parse_storage_fraction(text: str) -> Fraction:
    """Parse mu given as 'p/q' or an integer string; floats are rejected."""
    text = text.strip()
    if not _MU_PATTERN.match(text):
        raise ParameterError(f"storage fraction must be given as 'p/q', got {text!r}")
    return Fraction(text)


_HEADER_FIELDS = ("m", "n", "N", "K", "r", "T", "mu")


def _format_header(p: SystemParameters) -> str:
    values = p.as_mapping()
    return " ".join(f"{key}={values[key]}" for key in _HEADER_FIELDS)


def _parse_header(line: str, lineno: int) -> SystemParameters:
    fields = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep or key not in _HEADER_FIELDS:
            raise DesignFormatError(f"line {lineno}: bad header token {token!r}")
        fields[key] = value
    missing = [key for key in _HEADER_FIELDS if key not in fields]
    if missing:
        raise DesignFormatError(f"line {lineno}: header missing {', '.join(missing)}")
    try:
        fields["mu"] = parse_storage_fraction(fields["mu"])
        for key in ("m", "n", "N", "K", "r", "T"):
            fields[key] = int(fields[key])
        return SystemParameters.from_mapping(fields)
    except ParameterError as err:
        raise DesignValidationError(f"line {lineno}: {err}") from err
    except ValueError as err:
        raise DesignFormatError(f"line {lineno}: {err}") from err


def _design_to_text(design: StorageDesign) -> str:
    lines = [_format_header(design.params)]
    for i, label in enumerate(design.labels, start=1):
        servers = ",".join(str(s) for s in label)
        row = " ".join(str(int(v)) for v in design.assignment.entries[i - 1])
        lines.append(f"{i} {servers} {row}")
    return "\n".join(lines) + "\n"


def _design_from_text(text: str) -> StorageDesign:
    lines = [line for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if not lines:
        raise DesignFormatError("line 1: empty design file")
    params = _parse_header(lines[0], 1)
    labels = enumerate_batch_labels(params.num_servers, params.muq)
    if len(lines) - 1 != len(labels):
        raise DesignFormatError(
            f"expected {len(labels)} batch lines, found {len(lines) - 1}"
        )
    entries = np.zeros((len(labels), params.num_partitions), np.int64)
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 2 + params.num_partitions:
            raise DesignFormatError(
                f"line {lineno}: expected index, label and {params.num_partitions} counts"
            )
        try:
            index = int(parts[0])
            label = tuple(int(s) for s in parts[1].split(","))
            row = [int(v) for v in parts[2:]]
        except ValueError as err:
            raise DesignFormatError(f"line {lineno}: {err}") from err
        if not 1 <= index <= len(labels):
            raise DesignFormatError(f"line {lineno}: batch index {index} out of range")
        if label != labels[index - 1]:
            raise DesignFormatError(
                f"line {lineno}: label {parts[1]} does not match lexicographic "
                f"label {','.join(map(str, labels[index - 1]))} for batch {index}"
            )
        entries[index - 1] = row
    return StorageDesign.from_assignment(AssignmentMatrix(params, entries))


def _design_to_json(design: StorageDesign) -> str:
    p = design.params.as_mapping()
    doc = {
        "m": p["m"], "n": p["n"], "N": p["N"], "K": p["K"],
        "mu": str(p["mu"]), "r": p["r"], "T": p["T"],
        "labels": [list(label) for label in design.labels],
        "assignment": design.assignment.entries.tolist(),
    }
    return json.dumps(doc, indent=1)


def _design_from_json(text: str) -> StorageDesign:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise DesignFormatError(f"line {err.lineno}: {err.msg}") from err
    try:
        fields = {key: doc[key] for key in ("m", "n", "N", "K", "r", "T")}
        fields["mu"] = parse_storage_fraction(str(doc["mu"]))
        entries = doc["assignment"]
    except KeyError as err:
        raise DesignFormatError(f"missing field {err.args[0]!r}") from err
    try:
        params = SystemParameters.from_mapping(fields)
    except ParameterError as err:
        raise DesignValidationError(str(err)) from err
    matrix = AssignmentMatrix(params, np.asarray(entries, dtype=np.int64))
    design = StorageDesign.from_assignment(matrix)
    if "labels" in doc and [list(l) for l in design.labels] != doc["labels"]:
        raise DesignValidationError("labels field does not match lexicographic order")
    return design


def save_design(design: StorageDesign, target, fmt: str | None = None) -> None:
    """Write a design to a path or text file object.

    fmt is 'text' or 'json'; when omitted it is inferred from the file
    extension ('.json' selects JSON, anything else the line format).
    """
    if fmt is None:
        name = target if isinstance(target, (str, os.PathLike)) else getattr(target, "name", "")
        fmt = "json" if str(name).endswith(".json") else "text"
    if fmt not in ("text", "json"):
        raise ValueError(f"unknown design format {fmt!r}")
    payload = _design_to_json(design) if fmt == "json" else _design_to_text(design)
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w") as handle:
            handle.write(payload)
    else:
        target.write(payload)


def load_design(source) -> StorageDesign:
    """Read a design from a path, text file object, or string of content.

    The format is sniffed: JSON when the content starts with '{', the line
    format otherwise.  Raises DesignFormatError for unparsable input and
    DesignValidationError when the parsed design breaks an invariant.
    """
    if isinstance(source, (str, os.PathLike)) and not str(source).lstrip().startswith(("{", "m=")):
        with open(source) as handle:
            text = handle.read()
    elif isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
    if text.lstrip().startswith("{"):
        return _design_from_json(text)
    return _design_from_text(text)
