"""Oracle-equivalence suite behind ``cfcond verify``."""

from __future__ import annotations

import math
import time

import numpy as np
from scipy.special import gammaln

from .analysis import Report, chi_square_gof
from .dynamics import fragmentation_from_balance, gillespie_run, occupation_law
from .oracle import (
    conditional_marginal_pmf,
    enumerate_partitions,
    log_prob_total,
    panjer_pmf,
    pi_exact,
    pi_via_poisson,
)
from .pmf import Pmf
from .sampler import ReplicaRng, RejectionSampler, SequentialSampler
from .weights import Explicit, Geometric, PowerLaw, WeightSequence

PARTITION_COUNTS = (1, 1, 2, 3, 5, 7, 11, 15, 22, 30, 42, 56, 77)


def standard_families() -> dict:
    return {
        "explicit(1,1)": Explicit((1.0, 1.0)),
        "geometric(1/2)": Geometric(0.5),
        "power_law(3.5,2)": PowerLaw(3.5, 2.0),
    }


def x_route_tilt(W: WeightSequence) -> float:
    """Tilt for the jump representation with intensity ``V sum Q_r phi^r``.

    ``phi_c`` when ``q`` is finite; an interior point when it diverges
    (geometric weights), and ``2`` when there is no finite ``phi_c``.
    """
    if W.oracle_only:
        return 2.0
    if math.isfinite(W.q):
        return W.phi_c
    return 0.75 * W.phi_c


def _max_rel(a: dict, b: dict) -> float:
    worst = 0.0
    for c, p in a.items():
        q = b[c]
        if p == 0 and q == 0:
            continue
        worst = max(worst, abs(p - q) / max(abs(p), abs(q)))
    return worst


def oracle_triangle(M_max: int = 12, volumes=(0.5, 1.0, 2.0), tol: float = 1e-10) -> Report:
    worst = 0.0
    worst_z = 0.0
    t0 = time.perf_counter()
    for name, W in standard_families().items():
        for V in volumes:
            for M in range(1, M_max + 1):
                configs = enumerate_partitions(M)
                exact = pi_exact(W, V, M)
                y_route = pi_via_poisson(W, V, M, 1.0, configs)
                x_route = pi_via_poisson(W, V, M, x_route_tilt(W), configs)
                worst = max(worst, _max_rel(exact.probs, y_route), _max_rel(exact.probs, x_route))
                lhs = exact.log_Z - V * W.w
                rhs = log_prob_total(W, V, M, 1.0)
                worst_z = max(worst_z, abs(math.expm1(lhs - rhs)))
    stat = max(worst, worst_z)
    return Report("oracle_triangle", {"M_max": M_max, "volumes": list(volumes), "tol": tol},
                  stat, None, "pass" if stat <= tol else "fail",
                  {"measure_rel_err": worst, "partition_rel_err": worst_z,
                   "seconds": time.perf_counter() - t0})


def partition_counts(M_max: int = 12) -> Report:
    bad = [M for M in range(1, M_max + 1) if len(enumerate_partitions(M)) != PARTITION_COUNTS[M]]
    return Report("partition_counts", {"M_max": M_max}, float(len(bad)), None,
                  "pass" if not bad else "fail", {"mismatched": bad})


def panjer_vs_convolution(m_max: int = 30, tol: float = 1e-10) -> Report:
    rng = np.random.default_rng(11)
    worst = 0.0
    for lam in (0.3, 2.0, 7.5):
        jump = np.zeros(m_max + 1)
        jump[1:6] = rng.random(5)
        jump /= jump.sum()
        table = panjer_pmf(lam, Pmf(jump), m_max).pmf()
        direct = np.zeros(m_max + 1)
        power = np.zeros(m_max + 1)
        power[0] = 1.0
        for n in range(0, m_max + 1):
            direct += math.exp(n * math.log(lam) - lam - gammaln(n + 1)) * power
            power = np.convolve(power, jump)[:m_max + 1]
        worst = max(worst, float(np.max(np.abs(table - direct) / np.maximum(direct, 1e-300))))
    return Report("panjer_vs_convolution", {"m_max": m_max, "tol": tol}, worst, None,
                  "pass" if worst <= tol else "fail")


def marginals_vs_enumeration(M: int = 10, tol: float = 1e-10) -> Report:
    worst = 0.0
    for W in standard_families().values():
        exact = pi_exact(W, 1.0, M)
        for r in range(1, M + 1):
            pmf = conditional_marginal_pmf(W, 1.0, M, r).pmf()
            direct = np.zeros(M // r + 1)
            for c, p in exact.probs.items():
                direct[c.count(r)] += p
            worst = max(worst, float(np.max(np.abs(pmf[:len(direct)] - direct))))
    return Report("marginals_vs_enumeration", {"M": M, "tol": tol}, worst, None,
                  "pass" if worst <= tol else "fail")


def _law_counts(draws: np.ndarray, configs: list) -> np.ndarray:
    index = {c.dense(): i for i, c in enumerate(configs)}
    out = np.zeros(len(configs))
    keys, counts = np.unique(draws, axis=0, return_counts=True)
    for k, n in zip(keys, counts):
        out[index[tuple(int(v) for v in k)]] += n
    return out


def sampler_exactness(M: int = 8, n: int = 10**5, seed: int = 1) -> Report:
    W = PowerLaw(3.5, 2.0)
    V = 1.0
    configs = enumerate_partitions(M)
    exact = pi_exact(W, V, M)
    probs = np.array([exact.probs[c] for c in configs])
    seq = _law_counts(SequentialSampler(W, V, M).draw_counts(ReplicaRng(seed, 0), n), configs)
    rej = _law_counts(RejectionSampler(W, V, M).draw_counts(ReplicaRng(seed, 1), n), configs)
    _, p_seq = chi_square_gof(seq, probs)
    _, p_rej = chi_square_gof(rej, probs)
    tv_seq = 0.5 * float(np.abs(seq / n - probs).sum())
    tv_rej = 0.5 * float(np.abs(rej / n - probs).sum())
    p = min(p_seq, p_rej)
    return Report("sampler_exactness", {"M": M, "V": V, "n": n, "seed": seed},
                  max(tv_seq, tv_rej), p, "pass" if p > 0.01 and max(tv_seq, tv_rej) < 0.01 else "fail",
                  {"tv_sequential": tv_seq, "tv_rejection": tv_rej,
                   "p_sequential": p_seq, "p_rejection": p_rej})


def gillespie_stationarity(M: int = 4, t_end: float = 2e4, seed: int = 3) -> Report:
    W = PowerLaw(3.5, 2.0)
    kernel = fragmentation_from_balance(lambda i, j: 1.0, W, M)
    trace = gillespie_run(kernel, [M], 1.0, t_end, ReplicaRng(seed))
    law = occupation_law(trace, burn_in=10.0)
    exact = pi_exact(W, 1.0, M).probs
    tv = 0.5 * sum(abs(law.get(c, 0.0) - p) for c, p in exact.items())
    return Report("gillespie_stationarity", {"M": M, "t_end": t_end, "seed": seed}, tv, None,
                  "pass" if tv < 0.02 else "fail", {"events": trace.n_events})


def run_suite(quick: bool = False) -> list:
    if quick:
        return [
            partition_counts(8),
            oracle_triangle(8),
            panjer_vs_convolution(20),
            marginals_vs_enumeration(8),
            sampler_exactness(6, 10**5, seed=3),
            gillespie_stationarity(4, 5e3),
        ]
    return [
        partition_counts(12),
        oracle_triangle(12),
        panjer_vs_convolution(30),
        marginals_vs_enumeration(12),
        sampler_exactness(8, 10**5),
        gillespie_stationarity(6, 1e5),
    ]
