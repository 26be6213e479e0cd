"""Exact oracles for the invariant measure and compound Poisson sums.

The invariant measure on configurations of total mass ``M`` is

    pi(eta) = Z^{-1} prod_i (V Q_i)^{eta_i} / eta_i!

and it coincides with independent Poisson counts conditioned on their
total mass.  This module provides three independent ways of evaluating
it: brute-force enumeration of partitions, the conditioned-Poisson
formula with untilted jumps and the same formula with tilted jumps.
Normalising constants come from the Panjer recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numba
import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import CapExceeded, DomainError, NumericalDegeneracy
from .pmf import Pmf
from .weights import WeightSequence, jump_pmf, phi_of_rho

ENUMERATION_CAP = 40


@dataclass(frozen=True)
class Configuration:
    """Cluster counts stored sparsely as sorted ``(size, count)`` pairs."""

    pairs: tuple

    def __post_init__(self):
        pairs = tuple(sorted((int(r), int(c)) for r, c in self.pairs if c))
        if any(r < 1 or c < 0 for r, c in pairs):
            raise DomainError("sizes must be positive and counts non-negative")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def from_dense(cls, counts) -> "Configuration":
        """Build from ``(eta_1, eta_2, ...)``."""
        return cls(tuple((r + 1, c) for r, c in enumerate(counts) if c))

    @classmethod
    def from_counts(cls, counts: dict) -> "Configuration":
        return cls(tuple(counts.items()))

    @property
    def mass(self) -> int:
        return sum(r * c for r, c in self.pairs)

    @property
    def n_clusters(self) -> int:
        return sum(c for _, c in self.pairs)

    @property
    def largest(self) -> int:
        return self.pairs[-1][0] if self.pairs else 0

    def count(self, r: int) -> int:
        for s, c in self.pairs:
            if s == r:
                return c
        return 0

    def dense(self, length: int | None = None) -> tuple:
        """``(eta_1, ..., eta_L)`` with ``L`` defaulting to the mass."""
        n = self.mass if length is None else length
        out = [0] * n
        for r, c in self.pairs:
            if r <= n:
                out[r - 1] = c
        return tuple(out)

    def as_dict(self) -> dict:
        return dict(self.pairs)

    def __str__(self):
        return " ".join(f"{r}:{c}" for r, c in self.pairs)


def _partitions(m: int, max_part: int) -> Iterator[list]:
    """Partitions of ``m`` into parts at most ``max_part``, as part lists."""
    if m == 0:
        yield []
        return
    for part in range(min(m, max_part), 0, -1):
        for rest in _partitions(m - part, part):
            yield [part] + rest


def enumerate_partitions(M: int, cap: int = ENUMERATION_CAP) -> list:
    """All configurations of total mass ``M`` (integer partitions)."""
    if M < 0:
        raise DomainError("mass must be non-negative")
    if M > cap:
        raise CapExceeded(f"enumeration of M={M} exceeds cap {cap}")
    out = []
    for parts in _partitions(M, M):
        counts = [0] * M
        for p in parts:
            counts[p - 1] += 1
        out.append(Configuration.from_dense(counts))
    return out


def log_weight_of(config: Configuration, log_vq: np.ndarray) -> float:
    """``sum_i eta_i log(V Q_i) - log eta_i!`` with ``log_vq[i-1] = log(V Q_i)``."""
    total = 0.0
    for r, c in config.pairs:
        lv = log_vq[r - 1]
        if lv == -np.inf:
            return -np.inf
        total += c * lv - math.lgamma(c + 1)
    return total


class ExactMeasure(NamedTuple):
    probs: dict
    log_Z: float

    @property
    def Z(self) -> float:
        return math.exp(self.log_Z)


def pi_exact(W: WeightSequence, V: float, M: int, cap: int = ENUMERATION_CAP) -> ExactMeasure:
    """Invariant measure by enumerating every partition of ``M``."""
    if V <= 0:
        raise DomainError("volume must be positive")
    configs = enumerate_partitions(M, cap)
    if M == 0:
        return ExactMeasure({configs[0]: 1.0}, 0.0)
    log_vq = math.log(V) + W.log_weight(np.arange(1, M + 1))
    logw = np.array([log_weight_of(c, log_vq) for c in configs])
    log_Z = float(logsumexp(logw))
    if log_Z == -np.inf:
        raise NumericalDegeneracy("no configuration has positive weight")
    probs = np.exp(logw - log_Z)
    return ExactMeasure({c: float(p) for c, p in zip(configs, probs)}, log_Z)


@numba.njit(cache=True)
def _panjer_kernel(lam, kf, m_max):
    """Unnormalised Panjer recursion, rescaled to avoid overflow.

    Returns the table and the log of the factor it must be multiplied by.
    """
    p = np.zeros(m_max + 1)
    p[0] = 1.0
    log_scale = -lam
    kmax_all = len(kf) - 1
    big = 2.0**500
    for m in range(1, m_max + 1):
        kmax = min(m, kmax_all)
        s = 0.0
        for k in range(1, kmax + 1):
            s += kf[k] * p[m - k]
        p[m] = lam * s / m
        if p[m] > big:
            # shift the common scale; tiny early entries may underflow
            mx = p[m]
            for i in range(m + 1):
                p[i] /= mx
            log_scale += math.log(mx)
    return p, log_scale


def panjer_pmf(lam: float, jump: Pmf, m_max: int) -> Pmf:
    """Pmf of ``sum_{i <= N} J_i`` with ``N ~ Poisson(lam)``, on ``0..m_max``.

    ``jump.probs[k]`` is ``P(J = k)`` and ``jump.tail_mass`` is
    ``P(J > len(probs) - 1)``; jumps in the tail never contribute to
    masses covered by the table.  If the two do not add up to one the
    jump law is renormalised.
    """
    if lam < 0:
        raise DomainError("Poisson intensity must be non-negative")
    f = np.asarray(jump.probs, dtype=float)
    if len(f) and f[0] != 0:
        raise DomainError("jump law must not charge zero")
    total = f.sum() + jump.tail_mass
    if total <= 0:
        raise DomainError("jump law has no mass")
    if abs(total - 1.0) > 1e-12:
        f = f / total
    kf = np.arange(len(f)) * f
    p, log_scale = _panjer_kernel(float(lam), kf, int(m_max))
    return Pmf(p, log_scale=log_scale)


def _rates_pmf(rates: np.ndarray) -> tuple:
    """Split a rate vector ``rates[r-1]`` into total intensity and jump law."""
    lam = float(rates.sum())
    probs = np.zeros(len(rates) + 1)
    if lam > 0:
        probs[1:] = rates / lam
    return lam, Pmf(probs)


def compound_from_rates(rates: np.ndarray, m_max: int) -> Pmf:
    """Law of ``sum_r r L_r`` with independent ``L_r ~ Poisson(rates[r-1])``.

    Sizes beyond ``len(rates)`` are ignored; this is exact on
    ``0..m_max`` provided ``len(rates) >= m_max``.
    """
    lam, jump = _rates_pmf(np.asarray(rates, dtype=float))
    if lam == 0:
        p = np.zeros(m_max + 1)
        p[0] = 1.0
        return Pmf(p)
    return panjer_pmf(lam, jump, m_max)


def default_tilt(W: WeightSequence, V: float, M: int) -> float:
    """Tilt that centres the unconditioned mass near ``M``.

    The conditioned law does not depend on the tilt, but tilting at the
    saddle point keeps every table within floating point range.
    """
    return phi_of_rho(W, M / V)


def tilted_rates(W: WeightSequence, V: float, n: int, phi: float) -> np.ndarray:
    """``V Q_r phi^r`` for ``r = 1..n``."""
    return V * W.tilted(phi, n)


def log_prob_total(W: WeightSequence, V: float, M: int, phi: float = 1.0) -> float:
    """``log P(sum_r r L_r = M)`` for ``L_r ~ Poisson(V Q_r phi^r)``.

    Computed through the saddle-point tilt and converted back, so the
    result stays accurate when the probability underflows.
    """
    if M == 0:
        return -V * W.moment(0, phi).value
    tilt = default_tilt(W, V, M)
    rates = tilted_rates(W, V, M, tilt)
    # sizes above M must be absent
    log_p = compound_from_rates(rates, M).log_at(M) - V * W.moment(0, tilt, M + 1).value
    # change of measure between tilts ``tilt`` and ``phi``
    shift = M * (math.log(phi) - math.log(tilt)) if phi > 0 else -math.inf
    shift += V * (W.moment(0, tilt).value - W.moment(0, phi).value)
    return log_p + shift


def log_partition(W: WeightSequence, V: float, M: int) -> float:
    """``log Z^{V,M}`` via ``Z e^{-wV} = P(sum_{N(wV)} Y = M)``."""
    return log_prob_total(W, V, M, 1.0) + V * W.w


def pi_via_poisson(W: WeightSequence, V: float, M: int, phi: float = 1.0,
                   configs: list | None = None) -> dict:
    """Invariant measure as Poisson counts conditioned on total mass.

    With ``phi = 1`` the counts have means ``V Q_r``; any other ``phi``
    uses the tilted means ``V Q_r phi^r`` (``phi = phi_c`` is the
    critically tilted representation).  The normaliser comes from the
    Panjer recursion, not from summing over configurations.
    """
    if configs is None:
        configs = enumerate_partitions(M)
    rates = tilted_rates(W, V, M, phi)
    with np.errstate(divide="ignore"):
        log_rates = np.log(rates)
    total = V * W.moment(0, phi).value
    # jumps above M are in the tail and never reach the table
    probs = np.concatenate(([0.0], rates / total))
    jump = Pmf(probs, tail_mass=max(0.0, 1.0 - probs.sum()))
    log_den = panjer_pmf(total, jump, M).log_at(M)
    if log_den == -np.inf:
        raise NumericalDegeneracy("P(total mass = M) underflowed")
    return {c: math.exp(-total + log_weight_of(c, log_rates) - log_den) for c in configs}


def conditional_marginal_pmf(W: WeightSequence, V: float, M: int, r: int,
                             phi: float | None = None) -> Pmf:
    """Exact law of ``eta_r`` under the invariant measure with mass ``M``.

    ``P(eta_r = k) = P(L_r = k) P(S_{!=r} = M - r k) / P(S = M)``.
    """
    if not 1 <= r <= M:
        raise DomainError(f"size {r} outside 1..{M}")
    phi = default_tilt(W, V, M) if phi is None else phi
    rates = tilted_rates(W, V, M, phi)
    others = rates.copy()
    others[r - 1] = 0.0
    rest = compound_from_rates(others, M).log_pmf()
    k = np.arange(M // r + 1)
    lam = rates[r - 1]
    log_pk = k * math.log(lam) - lam - gammaln(k + 1) if lam > 0 else np.where(k == 0, 0.0, -np.inf)
    log_terms = log_pk + rest[M - r * k]
    log_norm = logsumexp(log_terms)
    if log_norm == -np.inf:
        raise NumericalDegeneracy("conditional marginal has zero normaliser")
    return Pmf(np.exp(log_terms - log_norm))


def largest_cluster_cdf(W: WeightSequence, V: float, M: int, k_values,
                        phi: float | None = None) -> np.ndarray:
    """Exact ``P(K <= k)`` for the largest cluster ``K`` under the invariant measure.

    ``P(K <= k) = P(S_{<=k} = M) P(L_r = 0, r > k) / P(S = M)``, one
    Panjer pass per ``k``.
    """
    phi = default_tilt(W, V, M) if phi is None else phi
    rates = tilted_rates(W, V, M, phi)
    log_den = compound_from_rates(rates, M).log_at(M)
    out = []
    for k in np.atleast_1d(k_values):
        k = int(k)
        if k >= M:
            out.append(1.0)
            continue
        if k <= 0:
            out.append(0.0)
            continue
        sub = rates.copy()
        sub[k:] = 0.0
        log_none_above = -float(rates[k:].sum())
        out.append(math.exp(compound_from_rates(sub, M).log_at(M) + log_none_above - log_den))
    return np.array(out)


def largest_cluster_pmf_upper(W: WeightSequence, V: float, M: int,
                              phi: float | None = None) -> np.ndarray:
    """Exact ``P(K = k)`` for ``k > M/2`` from a single Panjer table.

    Returns an array indexed by ``k`` (entries with ``k <= M/2`` are zero).
    A cluster larger than ``M/2`` is unique, which gives
    ``P(K = k) = lambda_k P(S = M - k) / P(S = M)``.
    """
    phi = default_tilt(W, V, M) if phi is None else phi
    rates = tilted_rates(W, V, M, phi)
    logp = compound_from_rates(rates, M).log_pmf()
    out = np.zeros(M + 1)
    k = np.arange(M // 2 + 1, M + 1)
    with np.errstate(divide="ignore"):
        out[k] = np.exp(np.log(rates[k - 1]) + logp[M - k] - logp[M])
    return out


def local_limit_ratio(W: WeightSequence, V: float, m_values) -> np.ndarray:
    """``P(sum_{N(qV)} X = m) / (qV P(X = ceil(m - rho_c V)))`` for each ``m``."""
    m_values = np.atleast_1d(np.asarray(m_values, dtype=np.int64))
    m_max = int(m_values.max())
    x = jump_pmf(W, W.phi_c, m_max)
    table = panjer_pmf(W.q * V, x, m_max)
    logx = x.log_pmf() + math.log(W.q * V)
    out = []
    for m in m_values:
        idx = math.ceil(m - W.rho_c * V)
        if idx < 1:
            raise DomainError(f"m={m} is not above rho_c V")
        out.append(math.exp(table.log_at(int(m)) - logx[idx]))
    return np.array(out)


def compute_a_V(W: WeightSequence, V: float) -> int:
    """Smallest ``x`` with ``P(sum_{N(q)} X > x) <= 1/V``.

    Defined for power laws with ``2 < b < 3`` (stable index ``b - 1``).
    """
    b = getattr(W, "b", None)
    if b is None or not 2 < b < 3:
        raise DomainError("a_V is defined for power-law weights with 2 < b < 3")
    if V <= 1:
        raise DomainError("a_V needs V > 1")
    m_max = 1024
    while True:
        x = jump_pmf(W, W.phi_c, m_max)
        p = panjer_pmf(W.q, x, m_max).pmf()
        survival = 1.0 - np.cumsum(p)
        hit = np.nonzero(survival <= 1.0 / V)[0]
        if len(hit):
            return int(hit[0])
        m_max *= 4
        if m_max > 1 << 26:
            raise DomainError("a_V beyond supported range")
