import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from bdcsim import AssignmentMatrix, StorageDesign, SystemParameters

DATA = Path(__file__).parent / "data"


def make_params(K: int, q: int, muq: int, T: int = 1, n: int = 1, scale: int = 1) -> SystemParameters:
    """Smallest valid parameter tuple with the given combinatorial shape.

    m = q * C(K, muq) * scale and r = K * C(K, muq) * scale satisfy every
    divisibility invariant for T = 1; T must divide both to be usable.
    """
    batches = math.comb(K, muq)
    return SystemParameters(
        source_rows=q * batches * scale,
        num_columns=n,
        num_vectors=q,
        num_servers=K,
        storage_fraction=Fraction(muq, q),
        coded_rows=K * batches * scale,
        num_partitions=T,
    )


def all_shapes(max_servers: int):
    """Every (K, q, muq) combinatorial shape with K <= max_servers."""
    for K in range(2, max_servers + 1):
        for q in range(1, K + 1):
            for muq in range(1, q + 1):
                yield K, q, muq


@pytest.fixture
def example1_params() -> SystemParameters:
    return SystemParameters(20, 4, 4, 6, Fraction(1, 2), 30, 5)


def block_design(params: SystemParameters) -> StorageDesign:
    """The walkthrough design: batches filled partition by partition in
    label order, batch_size rows each."""
    B, T = params.num_batches, params.num_partitions
    per_partition = B // T
    entries = np.zeros((B, T), np.int64)
    for b in range(B):
        entries[b, b // per_partition] = params.batch_size
    return StorageDesign.from_assignment(AssignmentMatrix(params, entries))


@pytest.fixture
def example1_design(example1_params) -> StorageDesign:
    return block_design(example1_params)


@pytest.fixture
def fig1_params() -> SystemParameters:
    return SystemParameters(6000, 6000, 6, 9, Fraction(1, 3), 9000, 1)


@pytest.fixture
def tiny_params() -> SystemParameters:
    # K=4, q=2, muq=1: 4 batches of 4 rows, 2 partitions
    return SystemParameters(8, 2, 2, 4, Fraction(1, 2), 16, 2)
