import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfcond.analysis import chi_square_gof
from cfcond.errors import AcceptanceTooLow, CapExceeded, DomainError, EmptyInput
from cfcond.oracle import Configuration, enumerate_partitions, pi_exact
from cfcond.pmf import Pmf
from cfcond.sampler import (
    ReplicaRng,
    RejectionSampler,
    SequentialSampler,
    SplitSampler,
    bulk,
    jumps_of,
    largest_particle,
    sample_compound,
    sample_pi_rejection,
    sample_pi_sequential,
    sample_pi_split,
)
from cfcond.weights import Explicit, Geometric, PowerLaw

SAMPLERS = [SequentialSampler, RejectionSampler, SplitSampler]


@pytest.mark.parametrize("x,expected", [([3, 1, 3, 2], [1, 3, 2]), ([5], []), ([1, 2, 3], [1, 2])])
def test_bulk_examples(x, expected):
    assert bulk(x) == expected


def test_bulk_empty():
    with pytest.raises(EmptyInput):
        bulk([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=30))
def test_bulk_removes_one_maximum(x):
    b = bulk(x)
    assert len(b) == len(x) - 1
    assert sum(b) + max(x) == sum(x)
    assert sorted(b + [max(x)]) == sorted(x)


@pytest.mark.parametrize("counts,expected", [((0, 1), 2), ((3, 0, 0), 1), ((), 0)])
def test_largest_particle(counts, expected):
    assert largest_particle(Configuration.from_dense(counts)) == expected


def test_jumps_of():
    assert jumps_of(Configuration.from_dense((2, 0, 1))) == [1, 1, 3]


@pytest.mark.parametrize("sampler", SAMPLERS)
def test_pair_weights_M2(sampler, explicit_pair):
    # the rejection proposal for weights without a finite phi_c uses the untilted jumps
    draws = sampler(explicit_pair, 1.0, 2).draw(ReplicaRng(5), 10**5)
    frac = np.mean([c == Configuration.from_dense((0, 1)) for c in draws])
    assert abs(frac - 2 / 3) < 0.01


@pytest.mark.parametrize("sampler", SAMPLERS)
def test_single_monomer(sampler, power_law):
    assert all(c == Configuration.from_dense((1,)) for c in sampler(power_law, 2.0, 1).draw(1, 50))


@pytest.mark.parametrize("sampler", SAMPLERS)
@pytest.mark.parametrize("W", [PowerLaw(3.5, 2.0), Geometric(0.5)])
def test_law_matches_enumeration(sampler, W):
    M, V, n = 7, 1.0, 40000
    configs = enumerate_partitions(M)
    exact = pi_exact(W, V, M)
    probs = np.array([exact.probs[c] for c in configs])
    index = {c: i for i, c in enumerate(configs)}
    counts = np.zeros(len(configs))
    for c in sampler(W, V, M).draw(ReplicaRng(17), n):
        counts[index[c]] += 1
    _, p = chi_square_gof(counts, probs)
    assert p > 1e-3
    assert 0.5 * np.abs(counts / n - probs).sum() < 0.02


@pytest.mark.parametrize("sampler", SAMPLERS)
def test_reproducible(sampler, power_law):
    s = sampler(power_law, 5.0, 12)
    assert s.draw(ReplicaRng(3, 2), 50) == s.draw(ReplicaRng(3, 2), 50)
    assert s.draw(ReplicaRng(3, 2), 50) != s.draw(ReplicaRng(3, 3), 50)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 60), st.floats(0.5, 40.0), st.integers(0, 2**31))
def test_mass_conserved(M, V, seed):
    W = PowerLaw(3.5, 2.0)
    for sampler in (SequentialSampler, SplitSampler):
        for c in sampler(W, V, M).draw(seed, 5):
            assert c.mass == M


def test_split_matches_sequential_condensed(power_law):
    V = 100.0
    M = math.ceil((power_law.rho_c + 1) * V)
    n = 4000
    a = SequentialSampler(power_law, V, M).draw(ReplicaRng(1, 0), n)
    b = SplitSampler(power_law, V, M).draw(ReplicaRng(1, 1), n)
    ka = np.array([c.largest for c in a])
    kb = np.array([c.largest for c in b])
    assert abs(ka.mean() - kb.mean()) < 4 * math.sqrt((ka.var() + kb.var()) / n)
    e1a = np.array([c.count(1) for c in a])
    e1b = np.array([c.count(1) for c in b])
    assert abs(e1a.mean() - e1b.mean()) < 4 * math.sqrt((e1a.var() + e1b.var()) / n)


def test_split_condensed_monomer_density(power_law):
    V = 200.0
    M = math.ceil((power_law.rho_c + 1) * V)
    draws = sample_pi_split(power_law, V, M, ReplicaRng(9), 300)
    eta1 = np.array([c.count(1) for c in draws]) / V
    K = np.array([c.largest for c in draws]) / V
    assert abs(eta1.mean() - 1.0) < 0.05
    assert abs(K.mean() - 1.0) < 0.1


def test_function_forms(power_law):
    assert isinstance(sample_pi_sequential(power_law, 2.0, 6, 1), Configuration)
    assert isinstance(sample_pi_rejection(power_law, 2.0, 6, 1), Configuration)
    assert len(sample_pi_split(power_law, 2.0, 6, 1, n=3)) == 3


def test_sequential_cap(power_law):
    with pytest.raises(CapExceeded):
        SequentialSampler(power_law, 10.0, 10**4, max_mass=100)


def test_rejection_acceptance_floor(power_law):
    with pytest.raises(AcceptanceTooLow):
        RejectionSampler(power_law, 1.0, 200)


@pytest.mark.parametrize("sampler", SAMPLERS)
def test_domain(sampler, power_law):
    with pytest.raises(DomainError):
        sampler(power_law, 1.0, 0)


def test_compound_small_intensity():
    draws = [sample_compound(1e-9, Pmf(np.array([0.0, 1.0])), np.random.default_rng(i))
             for i in range(100)]
    assert all(d == [] for d in draws)


def test_compound_totals_mean():
    jump = Pmf(np.array([0.0, 0.5, 0.25, 0.25]))
    totals = sample_compound(3.0, jump, ReplicaRng(4), size=20000)
    assert totals.mean() == pytest.approx(3.0 * 1.75, rel=0.03)
