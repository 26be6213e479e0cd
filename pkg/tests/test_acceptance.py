"""Acceptance criteria 1-15, each at its stated tolerance.

Every test appends one PASS/FAIL line to ``ACCEPTANCE``; the conftest
prints them at the end of the session.  Seeds are fixed up front.
"""

import math
import time

import numpy as np
import pytest

from cfcond.analysis import (
    ALPHA,
    ThresholdPolicy,
    assumption_diagnostics,
    bulk_equivalence_test,
    chi_square_homogeneity,
    condensation_experiment,
    empirical_rate_check,
    free_energy_check,
    gaussian_fluctuation_test,
    lln_test,
    local_limit_check,
    marginal_clt_test,
    stable_fluctuation_test,
    truncated_gaussian_test,
)
from cfcond.dynamics import (
    becker_doring_power,
    fragmentation_from_balance,
    gillespie_run,
    occupation_law,
    solve_cf_ode,
)
from cfcond.oracle import enumerate_partitions, pi_exact
from cfcond.rates import J_rho, equilibrium_density, mass, sup_convergence
from cfcond.sampler import ReplicaRng, RejectionSampler, SequentialSampler
from cfcond.verify import _law_counts, oracle_triangle
from cfcond.weights import Geometric, PowerLaw, power_series

ACCEPTANCE = []


def record(number: int, ok: bool, text: str) -> None:
    ACCEPTANCE.append((number, f"[{'PASS' if ok else 'FAIL'}] #{number:>2} {text}"))


@pytest.fixture(scope="module")
def pl():
    return PowerLaw(3.5, 2.0)


@pytest.fixture(scope="module")
def lln_setting(pl):
    """rho = rho_c + 1 at V = 200, shared by criteria 7 and 8."""
    V = 200.0
    M = math.ceil((pl.rho_c + 1) * V)
    t0 = time.perf_counter()
    res = condensation_experiment(pl, V, M, 10**4, seed=7)
    return res, time.perf_counter() - t0


def test_01_oracle_triangle():
    t0 = time.perf_counter()
    rep = oracle_triangle(12, (0.5, 1.0, 2.0), tol=1e-10)
    dt = time.perf_counter() - t0
    ok = rep.verdict == "pass" and dt < 5
    record(1, ok, f"oracle triangle: measure rel err {rep.details['measure_rel_err']:.2e}, "
                  f"Z vs Panjer {rep.details['partition_rel_err']:.2e} (tol 1e-10), {dt:.1f}s (< 5s)")
    assert rep.verdict == "pass"
    assert dt < 5


def test_02_sampler_exactness(pl):
    M, V, n = 8, 1.0, 10**6
    t0 = time.perf_counter()
    configs = enumerate_partitions(M)
    exact = pi_exact(pl, V, M)
    probs = np.array([exact.probs[c] for c in configs])
    seq = _law_counts(SequentialSampler(pl, V, M).draw_counts(ReplicaRng(2, 0), n), configs)
    rej = _law_counts(RejectionSampler(pl, V, M).draw_counts(ReplicaRng(2, 1), n), configs)
    dt = time.perf_counter() - t0
    tv_seq = 0.5 * float(np.abs(seq / n - probs).sum())
    tv_rej = 0.5 * float(np.abs(rej / n - probs).sum())
    _, p = chi_square_homogeneity(seq, rej)
    ok = tv_seq < 0.01 and tv_rej < 0.01 and p > 0.01 and dt < 60
    record(2, ok, f"sampler exactness: TV seq {tv_seq:.4f}, TV rej {tv_rej:.4f} (< 0.01), "
                  f"two-sample chi2 p {p:.3f} (> 0.01), {dt:.1f}s (< 60s)")
    assert tv_seq < 0.01 and tv_rej < 0.01
    assert p > 0.01
    assert dt < 60


def test_03_reversibility(pl):
    M, V = 6, 1.0
    kernel = fragmentation_from_balance(lambda i, j: 1.0, pl, M)
    exact = pi_exact(pl, V, M).probs
    tvs = {}
    events = {}
    t0 = time.perf_counter()
    for mode in ("falling", "literal"):
        trace = gillespie_run(kernel, [M], V, 2e5, ReplicaRng(3), same_size=mode)
        law = occupation_law(trace, burn_in=10.0)
        tvs[mode] = 0.5 * sum(abs(law.get(c, 0.0) - p) for c, p in exact.items())
        events[mode] = trace.n_events
    dt = time.perf_counter() - t0
    ok = (events["falling"] >= 10**6 and tvs["falling"] < 0.02 and tvs["literal"] >= 0.02
          and dt < 60)
    record(3, ok, f"Gillespie stationarity: TV {tvs['falling']:.4f} (< 0.02) over "
                  f"{events['falling']} events; literal eta^2 control TV {tvs['literal']:.4f} "
                  f"(must fail), {dt:.1f}s (< 60s)")
    assert events["falling"] >= 10**6
    assert tvs["falling"] < 0.02
    assert tvs["literal"] >= 0.02
    assert dt < 60


def test_04_free_energy():
    t0 = time.perf_counter()
    rep = free_energy_check(Geometric(0.5), 6.0, [50, 100, 200, 400], rel_tol=0.02)
    dt = time.perf_counter() - t0
    target = 6 * math.log(4 / 3) - 1
    ok = rep.verdict == "pass" and abs(rep.details["target"] - target) < 1e-12 and dt < 10
    record(4, ok, f"free energy: {rep.details['values'][-1]:.4f} vs {target:.4f}, "
                  f"rel err {rep.statistic:.4f} (< 0.02), {dt:.1f}s (< 10s)")
    assert abs(rep.details["target"] - target) < 1e-12
    assert rep.verdict == "pass"
    assert dt < 10


def test_05_marginal_rate(pl):
    rho = 0.8 * pl.rho_c
    c1 = float(equilibrium_density(pl, rho, 1)[0])
    t0 = time.perf_counter()
    reps = [empirical_rate_check(pl, rho, [f * c1], [50, 100, 200, 400]) for f in (0.8, 1.2)]
    dt = time.perf_counter() - t0
    ok = all(r.verdict == "pass" for r in reps) and dt < 10
    parts = ", ".join(
        f"l1={r.params['ell'][0]:.4f}: {r.details['values'][-1]:.4f} vs J {r.details['target']:.4f} "
        f"(rel {r.statistic:.3f}, extrapolated {r.details['extrapolated']:.4f})" for r in reps)
    record(5, ok, f"marginal rate at V=400 (c1={c1:.4f}, tol 5%): {parts}, {dt:.1f}s (< 10s)")
    for r in reps:
        assert r.statistic < 0.05
    assert dt < 10


def test_06_sup_identity(pl):
    rho = 0.8 * pl.rho_c
    t0 = time.perf_counter()
    c = equilibrium_density(pl, rho, 20000)
    r = np.arange(1, len(c) + 1)
    ell = c * (1 + 0.1 * r ** -2.0)
    ell *= mass(c) / mass(ell)
    seq, full = sup_convergence(pl, rho, ell, 64)
    direct = J_rho(pl, rho, ell)
    dt = time.perf_counter() - t0
    monotone = bool(np.all(np.diff(seq) >= -1e-12))
    gap = abs(seq[63] - full)
    ok = monotone and gap <= 1e-6 and dt < 5
    record(6, ok, f"sup identity: nondecreasing={monotone}, |J_64 - J| {gap:.2e} (<= 1e-6), "
                  f"J {full:.6f} (direct {direct:.6f}), {dt:.1f}s (< 5s)")
    assert monotone
    assert gap <= 1e-6
    assert dt < 5


def test_07_lln(pl, lln_setting):
    res, dt = lln_setting
    rho_c = power_series(2.5, 1.0).value
    assert abs(rho_c - pl.rho_c) < 1e-12
    sub = condensation_experiment(pl, res.V, res.M, 10**3, seed=7)
    rep = lln_test(pl, sub, tol=0.05)
    ok = rep.verdict == "pass" and dt < 120
    record(7, ok, f"condensation LLN: |mean(K - (M - rho_c V))|/V {rep.statistic:.4f} (< 0.05), "
                  f"sampling {dt:.1f}s for 10^4 draws (< 120s)")
    assert rep.statistic < 0.05
    assert dt < 120


def test_08_marginal_clt(pl, lln_setting):
    res, _ = lln_setting
    rep = marginal_clt_test(pl, res, seed=8)
    corr = rep.details["corr_12"]
    ok = rep.p_value > ALPHA and abs(corr) < 0.05
    record(8, ok, f"marginal CLT: KS p {rep.p_value:.3g} (> 0.01), |corr(eta1, eta2)| "
                  f"{abs(corr):.4f} (< 0.05), standardized mean {rep.details['mean']:.3f}")
    assert rep.p_value > ALPHA
    assert abs(corr) < 0.05


def test_09_gaussian_fluctuations():
    W = PowerLaw(4.5, 2.0)
    V = 500.0
    M = math.ceil((W.rho_c + 10) * V)
    res = condensation_experiment(W, V, M, 10**4, seed=9)
    rep = gaussian_fluctuation_test(W, res, seed=9)
    ok = rep.p_value > ALPHA
    record(9, ok, f"Gaussian fluctuations b=4.5: KS p {rep.p_value:.3g} (> 0.01), "
                  f"sample var {rep.details['sample_variance']:.3f} vs {rep.details['variance']:.3f}")
    assert rep.p_value > ALPHA


def test_10_stable_fluctuations():
    W = PowerLaw(2.5, 2.0)
    V = 1e4
    M = math.ceil((W.rho_c + 10) * V)
    res = condensation_experiment(W, V, M, 5000, seed=10)
    rep = stable_fluctuation_test(W, res, seed=10)
    growth = rep.details["growth_ratio"]
    target = rep.details["growth_target"]
    ok = rep.p_value > ALPHA and abs(growth / target - 1) <= 0.3
    record(10, ok, f"stable fluctuations b=2.5: two-sample KS p {rep.p_value:.3g} (> 0.01), "
                   f"a_4V/a_V {growth:.3f} vs {target:.3f} (within 30%)")
    assert rep.p_value > ALPHA
    assert abs(growth / target - 1) <= 0.3


def test_11_truncated_gaussian():
    W = PowerLaw(3.0, 2.0)
    V = 1e4
    M = math.ceil((W.rho_c + 10) * V)
    res = condensation_experiment(W, V, M, 10**4, seed=11)
    rep = truncated_gaussian_test(W, res, seed=11)
    tail = rep.details["V_tail_prob"]
    b2c2 = rep.details["B2_over_C2"]
    ok = rep.p_value > ALPHA and tail < 0.1 and b2c2 > 100
    record(11, ok, f"truncated Gaussian b=3: KS p {rep.p_value:.3g} (> 0.01), "
                   f"V P(X > C_V) {tail:.4f} (< 0.1), B_V^2/C_V^2 {b2c2:.4f} (> 100)")
    assert rep.p_value > ALPHA
    assert tail < 0.1
    assert b2c2 > 100


def test_12_local_limit(pl):
    policy = ThresholdPolicy()
    reps = [local_limit_check(pl, V, policy, width=50, band=0.1) for V in (100.0, 200.0)]
    ok = reps[0].verdict == "pass" and reps[1].statistic < reps[0].statistic
    record(12, ok, f"local limit (gamma={policy.gamma}): max |ratio - 1| {reps[0].statistic:.4f} "
                   f"at V=100 (< 0.1), {reps[1].statistic:.4f} at V=200 (smaller)")
    assert reps[0].verdict == "pass"
    assert reps[1].statistic < reps[0].statistic


def test_13_bulk_equivalence(pl):
    V = 200.0
    M = math.ceil((pl.rho_c + 1) * V)
    res = condensation_experiment(pl, V, M, 450, seed=13)
    rep = bulk_equivalence_test(pl, res, tol=0.02)
    pooled = rep.details["pooled_sizes"]
    ok = rep.verdict == "pass" and pooled >= 10**5
    record(13, ok, f"bulk equivalence: TV {rep.statistic:.4f} (< 0.02) over {pooled} pooled sizes")
    assert pooled >= 10**5
    assert rep.statistic < 0.02


def test_14_hydrodynamics(pl):
    kernel = becker_doring_power(3.5, 3000)
    V = 1000.0
    M = math.ceil((pl.rho_c + 0.5) * V)
    trace = gillespie_run(kernel, [M], V, 5.0, ReplicaRng(14))
    eta = trace.counts_at([5.0])[0, 1:21] / V
    sol = solve_cf_ode(kernel, [M / V], 200, 5.0, 0.01, save_dt=1.0)
    short = float(np.max(np.abs(eta - sol.profiles[-1, :20])))

    R = 2000
    long_sol = solve_cf_ode(becker_doring_power(3.5, R + 1), [pl.rho_c + 0.5], R, 4e4, 0.1,
                            save_dt=4e4)
    critical = equilibrium_density(pl, pl.rho_c, 20)
    late = float(np.max(np.abs(long_sol.profiles[-1, :20] - critical)))
    ok = short < 0.05 and late < 0.01
    record(14, ok, f"hydrodynamics: sup_r<=20 |eta_r/V - c_r| at t=5 {short:.4f} (< 0.05); "
                   f"|c_r(4e4) - c_r^rho_c| {late:.4f} (< 0.01, R_trunc={R})")
    assert short < 0.05
    assert late < 0.01


def test_15_subexponential(pl):
    rep = assumption_diagnostics(pl, m_max=2000, tol=0.05)
    ctrl = assumption_diagnostics(Geometric(0.5), m_max=2000, tol=0.05)
    ratio = rep.details["subexponential_ratio"]
    ok = rep.verdict == "pass" and ctrl.verdict == "fail"
    record(15, ok, f"subexponential: b=3.5 ratio {ratio:.4f} at m=2000 (in (0.95, 1.05)); "
                   f"geometric control ratio {ctrl.details['subexponential_ratio']:.1f} flagged")
    assert 0.95 < ratio < 1.05
    assert ctrl.verdict == "fail"
