import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from bdcsim import (
    BatchSizeError,
    DelayParameters,
    NonIntegerQError,
    NonIntegerStorageError,
    ParameterError,
    PartitionDivisionError,
    StorageRangeError,
    SystemParameters,
    VectorCountError,
    alpha,
    binomial,
    harmonic,
    load_mds,
    map_delay,
    min_multicast_size,
    multicast_load,
    order_statistic_mean,
    overall_delay,
    reduce_delay,
    scaled_parameters,
    sigma_map,
    sigma_reduce,
    validate_parameters,
)

from conftest import all_shapes, make_params


class TestBinomial:
    def test_example_values(self):
        assert binomial(6, 2) == 15
        assert binomial(9, 2) == 36  # 9*8/2, direct multiplicative check
        assert binomial(9, 2) == 9 * 8 // 2

    def test_empty_choice(self):
        for n in (0, 1, 5, 100):
            assert binomial(n, 0) == 1

    def test_out_of_range_is_zero(self):
        assert binomial(5, 6) == 0
        assert binomial(5, -1) == 0

    def test_negative_n_raises(self):
        with pytest.raises(ValueError):
            binomial(-1, 0)

    @given(st.integers(0, 40), st.integers(0, 40))
    def test_matches_factorial_formula(self, n, k):
        expected = 0
        if 0 <= k <= n:
            expected = math.factorial(n) // (math.factorial(k) * math.factorial(n - k))
        assert binomial(n, k) == expected

    def test_large_values_exact(self):
        # well beyond 64-bit range; must stay exact
        assert binomial(200, 100) % 10**9 == binomial(200, 100) - (binomial(200, 100) // 10**9) * 10**9
        assert binomial(200, 100) > 2**127


class TestValidateParameters:
    def test_walkthrough_instance(self):
        p = validate_parameters({"m": 20, "n": 4, "N": 4, "K": 6, "mu": Fraction(1, 2), "r": 30, "T": 5})
        assert p.q == 4
        assert p.num_batches == 15
        assert p.batch_size == 2
        assert p.rows_per_partition == 6
        assert p.decode_threshold == 4
        assert p.storage_rows == 10

    def test_large_instance(self, fig1_params):
        assert fig1_params.q == 6
        assert fig1_params.num_batches == 36
        assert fig1_params.batch_size == 250

    @pytest.mark.parametrize(
        "fields,error",
        [
            ({"m": 20, "n": 4, "N": 4, "K": 6, "mu": Fraction(1, 2), "r": 29, "T": 1}, NonIntegerQError),
            ({"m": 20, "n": 4, "N": 4, "K": 6, "mu": Fraction(1, 8), "r": 30, "T": 1}, StorageRangeError),
            ({"m": 20, "n": 4, "N": 4, "K": 6, "mu": Fraction(2, 1), "r": 30, "T": 1}, StorageRangeError),
            ({"m": 20, "n": 4, "N": 4, "K": 6, "mu": Fraction(1, 3), "r": 30, "T": 1}, NonIntegerStorageError),
            ({"m": 9, "n": 4, "N": 2, "K": 6, "mu": Fraction(1, 2), "r": 27, "T": 1}, NonIntegerStorageError),
            ({"m": 20, "n": 4, "N": 4, "K": 6, "mu": Fraction(1, 2), "r": 30, "T": 7}, PartitionDivisionError),
            ({"m": 20, "n": 4, "N": 4, "K": 6, "mu": Fraction(1, 2), "r": 30, "T": 4}, PartitionDivisionError),
            ({"m": 20, "n": 4, "N": 5, "K": 6, "mu": Fraction(2, 5), "r": 24, "T": 1}, BatchSizeError),
            ({"m": 20, "n": 4, "N": 3, "K": 6, "mu": Fraction(1, 2), "r": 30, "T": 5}, VectorCountError),
        ],
    )
    def test_named_violations(self, fields, error):
        with pytest.raises(error):
            validate_parameters(fields)

    def test_positivity(self):
        with pytest.raises(ParameterError):
            validate_parameters({"m": 0, "n": 4, "N": 4, "K": 6, "mu": Fraction(1, 2), "r": 30, "T": 1})

    def test_float_mu_rejected(self):
        with pytest.raises(ParameterError):
            SystemParameters(20, 4, 4, 6, 0.5, 30, 5)

    def test_r_below_m_rejected(self):
        with pytest.raises(ParameterError):
            validate_parameters({"m": 40, "n": 4, "N": 4, "K": 6, "mu": Fraction(1, 2), "r": 30, "T": 1})


class TestOrderStatistic:
    def test_single_server(self):
        assert order_statistic_mean(DelayParameters(1, 1, 1)) == 2.0

    def test_six_of_six(self):
        # 1 + H(6) = 69/20 exactly
        assert order_statistic_mean(DelayParameters(1, 6, 6)) == 3.45

    @pytest.mark.parametrize("K", [2, 3, 4])
    def test_full_wait(self, K):
        expected = float(1 + harmonic(K))
        assert order_statistic_mean(DelayParameters(1, K, K)) == pytest.approx(expected, rel=1e-15)

    def test_monotone_in_wait_for(self):
        values = [order_statistic_mean(DelayParameters(7, 9, g)) for g in range(1, 10)]
        assert values == sorted(values)
        assert all(b > a for a, b in zip(values, values[1:]))

    @given(st.integers(1, 12), st.integers(1, 10**6))
    def test_linear_in_sigma(self, K, sigma):
        g = max(1, K // 2)
        one = order_statistic_mean(DelayParameters(1, K, g))
        assert order_statistic_mean(DelayParameters(sigma, K, g)) == pytest.approx(sigma * one, rel=1e-12)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            DelayParameters(0, 4, 2)
        with pytest.raises(ValueError):
            DelayParameters(1, 4, 5)


class TestAlpha:
    def test_walkthrough_values(self, example1_params):
        assert alpha(2, example1_params) == Fraction(3, 10)
        assert alpha(1, example1_params) == Fraction(6, 10)

    def test_beyond_replication_degree(self, example1_params):
        assert alpha(3, example1_params) == 0
        assert alpha(7, example1_params) == 0

    def test_vandermonde_identity(self):
        # sum_j alpha_j * (q/K) * C(K, muq) telescopes to C(K-1, muq)
        for K, q, muq in all_shapes(12):
            p = make_params(K, q, muq)
            total = sum(alpha(j, p) for j in range(0, muq + 1))
            lhs = total * Fraction(q, K) * binomial(K, muq)
            assert lhs == binomial(K - 1, muq), (K, q, muq)


def _oracle_load_mds(p):
    """Independent evaluation of the unpartitioned load: explicit partial
    sum scan for the threshold and direct evaluation of both strategies."""
    K, q, muq, mu = p.num_servers, p.q, p.muq, p.storage_fraction

    def a(j):
        if j < 0 or j > q - 1 or muq - j < 0 or muq - j > K - q:
            return Fraction(0)
        return Fraction(math.comb(q - 1, j) * math.comb(K - q, muq - j) * K, q * math.comb(K, muq))

    s = 1
    while sum(a(l) for l in range(s, muq + 1)) > 1 - mu:
        s += 1
    first = sum(a(j) / j for j in range(s, muq + 1)) + 1 - mu - sum(a(j) for j in range(s, muq + 1))
    options = [first]
    if s - 1 >= 1:
        options.append(sum(a(j) / j for j in range(s - 1, muq + 1)))
    return min(options)


class TestMulticastThresholdAndLoad:
    def test_walkthrough_threshold(self, example1_params):
        # alpha_2 = 0.3 <= 0.5 but alpha_1 + alpha_2 = 0.9 > 0.5
        assert min_multicast_size(example1_params) == 2

    def test_large_instance_threshold(self, fig1_params):
        budget = 1 - fig1_params.storage_fraction
        expected = next(
            s
            for s in range(1, fig1_params.muq + 2)
            if sum(alpha(l, fig1_params) for l in range(s, fig1_params.muq + 1)) <= budget
        )
        assert min_multicast_size(fig1_params) == expected == 2

    def test_full_storage_forces_empty_tail(self):
        # mu = 1: the budget is 0, so the threshold sits after the last
        # nonzero alpha
        p = make_params(4, 2, 2)
        assert p.storage_fraction == 1
        s = min_multicast_size(p)
        assert sum(alpha(l, p) for l in range(s, p.muq + 1)) == 0

    def test_walkthrough_load(self, example1_params):
        assert load_mds(example1_params) == Fraction(7, 20)

    def test_large_instance_load(self, fig1_params):
        assert load_mds(fig1_params) == Fraction(11, 24)
        assert load_mds(fig1_params) == _oracle_load_mds(fig1_params)

    def test_single_term_reduction(self):
        # when s_q = muq the first strategy is alpha/muq + 1 - mu - alpha
        for K, q, muq in all_shapes(8):
            p = make_params(K, q, muq)
            if min_multicast_size(p) != p.muq or p.muq < 2:
                continue
            expected = alpha(p.muq, p) / p.muq + 1 - p.storage_fraction - alpha(p.muq, p)
            assert load_mds(p) == min(expected, multicast_load(p, p.muq - 1))
            return
        pytest.skip("no shape with s_q = muq >= 2 found")

    def test_brute_force_equivalence(self):
        for K, q, muq in all_shapes(10):
            p = make_params(K, q, muq)
            assert load_mds(p) == _oracle_load_mds(p), (K, q, muq)


class TestSigmas:
    def test_map_large_instance(self, fig1_params):
        assert sigma_map(fig1_params) == 648_000_000

    def test_map_walkthrough(self, example1_params):
        assert sigma_map(example1_params) == 960

    def test_map_minimum_storage(self):
        # mu = 1/K: K * (m/K) * n * N = m*n*N
        p = SystemParameters(8, 3, 4, 4, Fraction(1, 4), 8, 1)
        assert sigma_map(p) == 8 * 3 * 4

    def test_reduce_large_instance(self, fig1_params):
        assert sigma_reduce(fig1_params) == 162_000_000
        assert sigma_reduce(fig1_params.with_partitions(50)) == 3_240_000

    def test_reduce_no_erasures(self):
        # q = K (r = m): nothing to decode
        p = SystemParameters(9, 2, 3, 3, Fraction(2, 3), 9, 3)
        assert p.q == 3
        assert sigma_reduce(p) == 0
        assert reduce_delay(p) == 0.0


class TestDelays:
    def test_map_delay_point_mass(self, fig1_params):
        assert map_delay(fig1_params, {6: 1}) == pytest.approx(3991.27, abs=0.01)

    def test_map_delay_degenerate(self):
        p = SystemParameters(4, 2, 2, 1, Fraction(1), 4, 1)
        assert map_delay(p, {1: 1}) == pytest.approx(2 * sigma_map(p) / (4 * 2), rel=1e-12)

    def test_map_delay_rejects_unnormalized(self, fig1_params):
        with pytest.raises(ValueError):
            map_delay(fig1_params, {6: 0.5})

    def test_map_delay_rejects_bad_support(self, fig1_params):
        with pytest.raises(ValueError):
            map_delay(fig1_params, {5: 1})

    def test_reduce_delay_values(self, fig1_params):
        assert reduce_delay(fig1_params) == 2587.5
        assert reduce_delay(fig1_params.with_partitions(50)) == 51.75

    def test_overall_delay(self, fig1_params):
        assert overall_delay(0.0, 3.5) == 3.5
        assert overall_delay(3.5, 0.0) == 3.5
        d = overall_delay(map_delay(fig1_params, {6: 1}), reduce_delay(fig1_params))
        assert d == pytest.approx(6578.77, abs=0.01)


class TestScaledParameters:
    def test_known_points(self, ):
        base = SystemParameters(4000, 10000, 4, 6, Fraction(1, 2), 6000, 400)
        grown = scaled_parameters(base, 9)
        assert (grown.source_rows, grown.coded_rows, grown.num_partitions) == (6000, 9000, 600)
        assert grown.muq == 2 and grown.storage_rows == 2000

        k12 = scaled_parameters(base, 12)
        assert k12.source_rows == 8140 and k12.batch_size == 185
        k15 = scaled_parameters(base, 15)
        assert k15.source_rows == 10010 and k15.batch_size == 143
        for p in (grown, k12, k15):
            assert p.muq == 2
            assert Fraction(p.source_rows, p.coded_rows) == Fraction(2, 3)
            assert p.decode_threshold == 10

    def test_infeasible_rate(self):
        base = SystemParameters(4000, 10000, 4, 6, Fraction(1, 2), 6000, 400)
        with pytest.raises(ParameterError):
            scaled_parameters(base, 7)  # q = 14/3
