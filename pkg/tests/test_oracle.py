import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln

from cfcond.errors import CapExceeded, DomainError
from cfcond.oracle import (
    Configuration,
    compound_from_rates,
    compute_a_V,
    conditional_marginal_pmf,
    enumerate_partitions,
    largest_cluster_cdf,
    largest_cluster_pmf_upper,
    local_limit_ratio,
    log_partition,
    log_prob_total,
    panjer_pmf,
    pi_exact,
    pi_via_poisson,
    tilted_rates,
)
from cfcond.pmf import Pmf
from cfcond.weights import Explicit, Geometric, PowerLaw, jump_pmf_Y

PARTITIONS = {1: 1, 2: 2, 3: 3, 4: 5, 5: 7, 10: 42, 12: 77, 20: 627}


def dense(*counts):
    return Configuration.from_dense(counts)


@pytest.mark.parametrize("M,count", sorted(PARTITIONS.items()))
def test_partition_counts(M, count):
    configs = enumerate_partitions(M)
    assert len(configs) == count
    assert len(set(configs)) == count
    assert all(c.mass == M for c in configs)


def test_partitions_small():
    assert set(enumerate_partitions(2)) == {dense(2, 0), dense(0, 1)}
    assert enumerate_partitions(1) == [dense(1)]


def test_enumeration_cap():
    with pytest.raises(CapExceeded):
        enumerate_partitions(41)


def test_configuration_basics():
    c = dense(3, 0, 1)
    assert (c.mass, c.n_clusters, c.largest) == (6, 4, 3)
    assert c.dense() == (3, 0, 1, 0, 0, 0)
    assert str(c) == "1:3 3:1"
    assert Configuration(()).largest == 0


def test_pi_exact_pair_M2(explicit_pair):
    m = pi_exact(explicit_pair, 1.0, 2)
    assert m.probs[dense(2, 0)] == pytest.approx(1 / 3, rel=1e-14)
    assert m.probs[dense(0, 1)] == pytest.approx(2 / 3, rel=1e-14)
    assert math.exp(m.log_Z) == pytest.approx(1.5, rel=1e-14)


def test_pi_exact_pair_M3(explicit_pair):
    m = pi_exact(explicit_pair, 1.0, 3)
    assert m.probs[dense(1, 1)] == pytest.approx(6 / 7, rel=1e-14)
    assert m.probs[dense(3, 0)] == pytest.approx(1 / 7, rel=1e-14)
    assert math.exp(m.log_Z) == pytest.approx(7 / 6, rel=1e-14)


@pytest.mark.parametrize("W", [Geometric(0.5), PowerLaw(3.5, 2.0)])
def test_pi_exact_single_state(W):
    assert pi_exact(W, 3.0, 1).probs == {dense(1): 1.0}


def test_pi_exact_bad_volume(power_law):
    with pytest.raises(DomainError):
        pi_exact(power_law, 0.0, 3)


@pytest.mark.parametrize("W,phi", [(Explicit((1.0, 1.0)), 1.0), (Explicit((1.0, 1.0)), 2.0),
                                   (Geometric(0.5), 1.0), (Geometric(0.5), 1.5),
                                   (PowerLaw(3.5, 2.0), 1.0), (PowerLaw(3.5, 2.0), 2.0)])
@pytest.mark.parametrize("V", [0.5, 1.0, 2.0])
def test_poisson_representation(W, phi, V):
    for M in (3, 7, 11):
        exact = pi_exact(W, V, M)
        other = pi_via_poisson(W, V, M, phi)
        for c, p in exact.probs.items():
            assert other[c] == pytest.approx(p, rel=1e-10)


@pytest.mark.parametrize("W", [Explicit((1.0, 1.0)), Geometric(0.5), PowerLaw(3.5, 2.0)])
@pytest.mark.parametrize("V", [0.5, 1.0, 2.0])
def test_partition_function_identity(W, V):
    for M in range(1, 13):
        lhs = pi_exact(W, V, M).log_Z - V * W.w
        rhs = log_prob_total(W, V, M, 1.0)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)
        assert log_partition(W, V, M) == pytest.approx(pi_exact(W, V, M).log_Z, rel=1e-10)


def test_panjer_degenerate_jump():
    pmf = panjer_pmf(1.0, Pmf(np.array([0.0, 1.0])), 3).pmf()
    np.testing.assert_allclose(pmf, math.exp(-1) * np.array([1, 1, 0.5, 1 / 6]), rtol=1e-14)


@pytest.mark.parametrize("lam", [0.1, 1.0, 3.7])
def test_panjer_two_point_jump(lam):
    pmf = panjer_pmf(lam, Pmf(np.array([0.0, 0.5, 0.5])), 2).pmf()
    assert pmf[2] == pytest.approx(math.exp(-lam) * (lam / 2 + lam**2 / 8), rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 20.0), st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6))
def test_panjer_matches_poisson_mixture(lam, weights):
    jump = np.concatenate([[0.0], weights])
    jump /= jump.sum()
    m_max = 25
    table = panjer_pmf(lam, Pmf(jump), m_max).pmf()
    direct = np.zeros(m_max + 1)
    power = np.zeros(m_max + 1)
    power[0] = 1.0
    for n in range(m_max + 1):
        direct += math.exp(n * math.log(lam) - lam - gammaln(n + 1)) * power
        power = np.convolve(power, jump)[:m_max + 1]
    np.testing.assert_allclose(table, direct, rtol=1e-10, atol=1e-300)


def test_panjer_large_intensity_no_underflow():
    # lambda = wV with V = 1000 would underflow exp(-lambda) in linear space
    W = Geometric(0.5)
    V = 1000.0
    M = 6000
    pmf = panjer_pmf(W.w * V, jump_pmf_Y(W, M), M)
    assert np.isfinite(pmf.log_at(M))
    assert pmf.log_at(M) < 0


def test_panjer_rejects_zero_jump():
    with pytest.raises(DomainError):
        panjer_pmf(1.0, Pmf(np.array([0.5, 0.5])), 3)


def test_compound_zero_rates():
    np.testing.assert_array_equal(compound_from_rates(np.zeros(4), 4).pmf(), [1, 0, 0, 0, 0])


def test_marginal_pair(explicit_pair):
    pmf = conditional_marginal_pmf(explicit_pair, 1.0, 2, 2).pmf()
    assert pmf[1] == pytest.approx(2 / 3, rel=1e-14)


@pytest.mark.parametrize("W", [Geometric(0.5), PowerLaw(3.5, 2.0), Explicit((1.0, 0.3, 2.0))])
@pytest.mark.parametrize("M", [6, 10])
def test_marginals_match_enumeration(W, M):
    exact = pi_exact(W, 1.3, M)
    for r in range(1, M + 1):
        pmf = conditional_marginal_pmf(W, 1.3, M, r).pmf()
        direct = np.zeros(M // r + 1)
        for c, p in exact.probs.items():
            direct[c.count(r)] += p
        np.testing.assert_allclose(pmf, direct, atol=1e-12)


def test_marginal_top_size_two_valued(power_law):
    M = 9
    exact = pi_exact(power_law, 2.0, M)
    pmf = conditional_marginal_pmf(power_law, 2.0, M, M).pmf()
    assert len(pmf) == 2
    assert pmf[1] == pytest.approx(exact.probs[Configuration(((M, 1),))], rel=1e-10)


def test_marginal_normalized_large(power_law):
    pmf = conditional_marginal_pmf(power_law, 500.0, 900, 1).pmf()
    assert pmf.sum() == pytest.approx(1.0, abs=1e-10)


def test_largest_cluster_laws_agree(power_law):
    M, V = 12, 1.5
    exact = pi_exact(power_law, V, M)
    direct = np.zeros(M + 1)
    for c, p in exact.probs.items():
        direct[c.largest] += p
    upper = largest_cluster_pmf_upper(power_law, V, M)
    np.testing.assert_allclose(upper[M // 2 + 1:], direct[M // 2 + 1:], rtol=1e-10)
    cdf = largest_cluster_cdf(power_law, V, M, np.arange(M + 1))
    np.testing.assert_allclose(cdf, np.cumsum(direct), atol=1e-12)


def test_local_limit_improves(power_law):
    base = power_law.rho_c
    r50 = local_limit_ratio(power_law, 50, [math.ceil(base * 50 + 0.6 * 50)])[0]
    r200 = local_limit_ratio(power_law, 200, [math.ceil(base * 200 + 0.6 * 200)])[0]
    assert 0 < r50 < math.inf
    assert abs(r200 - 1) < abs(r50 - 1)


def test_local_limit_below_critical(power_law):
    with pytest.raises(DomainError):
        local_limit_ratio(power_law, 100, [int(power_law.rho_c * 100) - 5])


def test_a_V_small_volume():
    W = PowerLaw(2.5, 2.0)
    assert 1 / 1.2 >= 1 - math.exp(-W.q)
    assert compute_a_V(W, 1.2) == 0


def test_a_V_tail_inversion():
    W = PowerLaw(2.5, 2.0)
    V = 1e4
    approx = (V / (W.b - 1)) ** (1 / (W.b - 1))
    assert compute_a_V(W, V) == pytest.approx(approx, rel=0.3)


def test_a_V_regime(power_law):
    with pytest.raises(DomainError):
        compute_a_V(power_law, 100)


def test_tilted_rates(power_law):
    np.testing.assert_allclose(tilted_rates(power_law, 3.0, 4, 2.0), 3.0 * np.arange(1, 5) ** -3.5)
