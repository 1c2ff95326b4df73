import itertools

import numpy as np
import pytest

from bdcsim import (
    CacheUnderflowError,
    StorageDesign,
    UnicastCache,
    heuristic_assign,
    load_bdc,
    multicast_load,
    random_assign,
    remaining_unicasts,
    strategy_thresholds,
)

from conftest import make_params


def fresh_objectives(p, entries):
    """From-scratch recomputation oracle."""
    return {s: UnicastCache(p, entries=entries.copy())._agg[s] for s in strategy_thresholds(p)}


class TestCacheConsistency:
    def test_build_matches_direct_counts(self, example1_design):
        p = example1_design.params
        cache = UnicastCache(p, entries=example1_design.assignment.entries)
        for s in cache.thresholds:
            direct = sum(
                remaining_unicasts(example1_design, Q, s).total
                for Q in itertools.combinations(range(1, 7), 4)
            )
            assert cache.objective(s) == direct

    def test_apply_then_undo_is_identity(self, example1_params):
        cache = UnicastCache(example1_params)
        snapshot = {s: (cache._cover[s].copy(), cache._defsum[s].copy(), cache._agg[s]) for s in cache.thresholds}
        cache.apply(3, 2, 1)
        cache.apply(3, 2, 1)
        cache.apply(7, 5, -1)
        cache.undo()
        cache.undo()
        cache.undo()
        for s in cache.thresholds:
            cover, defsum, agg = snapshot[s]
            assert np.array_equal(cache._cover[s], cover)
            assert np.array_equal(cache._defsum[s], defsum)
            assert cache._agg[s] == agg
        assert cache.depth == 0

    def test_undo_without_apply_raises(self, example1_params):
        cache = UnicastCache(example1_params)
        with pytest.raises(CacheUnderflowError):
            cache.undo()

    def test_random_apply_sequence_matches_recomputation(self, example1_params):
        p = example1_params
        rng = np.random.default_rng(11)
        entries = np.zeros((p.num_batches, p.num_partitions), np.int64)
        cache = UnicastCache(p, entries=entries)
        for step in range(100):
            b = int(rng.integers(1, p.num_batches + 1))
            t = int(rng.integers(1, p.num_partitions + 1))
            delta = 1 if entries[b - 1, t - 1] == 0 else int(rng.choice([-1, 1]))
            entries[b - 1, t - 1] += delta
            cache.apply(b, t, delta)
            if step % 10 == 0:
                fresh = fresh_objectives(p, entries)
                for s in cache.thresholds:
                    assert cache._agg[s] == fresh[s], step

    def test_heuristic_replay_matches_load_bdc(self, example1_params):
        p = example1_params
        matrix = heuristic_assign(p)
        cache = UnicastCache(p)
        for b in range(p.num_batches):
            for t in range(p.num_partitions):
                for _ in range(int(matrix.entries[b, t])):
                    cache.apply(b + 1, t + 1, 1)
        design = StorageDesign.from_assignment(matrix)
        result = load_bdc(design)
        load, strategy = cache.best_load()
        assert load == result.load
        assert strategy == result.strategy
        # per-strategy unicast components agree with the direct evaluation
        for s in cache.thresholds:
            unicast_component = result.per_strategy[s] - multicast_load(p, s)
            denominator = p.source_rows * p.num_vectors * len(cache.q_sets)
            assert unicast_component == type(unicast_component)(cache.objective(s), denominator)

    def test_restricted_scope(self, example1_design):
        p = example1_design.params
        scope = [(1, 2, 3, 4)]
        cache = UnicastCache(p, entries=example1_design.assignment.entries, q_sets=scope)
        for s in cache.thresholds:
            assert cache.objective(s) == remaining_unicasts(example1_design, (1, 2, 3, 4), s).total

    def test_nonzero_counts(self, example1_design):
        p = example1_design.params
        cache = UnicastCache(p, entries=example1_design.assignment.entries)
        s = cache.thresholds[0]
        counts = cache.nonzero_counts(s, range(1, p.num_batches + 1))
        positive = cache._defsum[s] > 0
        for b, count in enumerate(counts):
            assert count == int(np.count_nonzero(positive & cache._useful[s][:, b]))


class TestCacheAcrossShapes:
    def test_multiple_instances(self):
        for K, q, muq in [(4, 2, 1), (5, 3, 2), (6, 3, 1)]:
            p = make_params(K, q, muq)
            matrix = random_assign(p, seed=K)
            cache = UnicastCache(p, entries=matrix.entries)
            design = StorageDesign.from_assignment(matrix)
            for s in cache.thresholds:
                direct = sum(
                    remaining_unicasts(design, Q, s).total
                    for Q in itertools.combinations(range(1, K + 1), q)
                )
                assert cache.objective(s) == direct
