"""Exact samplers for the invariant measure and compound Poisson sums.

Three exact samplers are provided for the invariant measure on
configurations of mass ``M``:

* ``SequentialSampler`` draws ``eta_1, eta_2, ...`` one size at a time
  from backward tables of the remaining mass (memory ``O(M^2)``);
* ``RejectionSampler`` draws unconditioned compound Poisson sums and
  keeps those that hit ``M``;
* ``SplitSampler`` separates the few clusters above ``m/4`` from the
  rest and scales to masses where the tables of the first sampler no
  longer fit in memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import gammaln

from .errors import AcceptanceTooLow, CapExceeded, DomainError, EmptyInput, NumericalDegeneracy
from .oracle import (
    Configuration,
    compound_from_rates,
    default_tilt,
    log_prob_total,
    tilted_rates,
)
from .pmf import Pmf
from .weights import WeightSequence

SEQUENTIAL_MAX_MASS = 4000
REJECTION_MIN_ACCEPTANCE = 1e-6


@dataclass(frozen=True)
class ReplicaRng:
    """Reproducible random stream ``stream_id`` derived from ``seed``."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def spawn(self, stream_id: int) -> "ReplicaRng":
        return ReplicaRng(self.seed, stream_id)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, ReplicaRng):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _numba_seed(gen: np.random.Generator) -> int:
    return int(gen.integers(0, 2**32 - 1))


@numba.njit(cache=True)
def _seed_numba(seed):
    np.random.seed(seed)


def sample_compound(lam: float, jump: Pmf, rng, size: int | None = None):
    """Draw ``sum_{i <= N} J_i`` with ``N ~ Poisson(lam)``.

    Returns the list of jumps for a single draw, or an array of totals
    when ``size`` is given.  Jumps falling in the tail of ``jump`` are
    reported as ``m_max + 1``.
    """
    gen = _as_generator(rng)
    probs = np.asarray(jump.probs, dtype=float)
    cdf = np.cumsum(probs)
    total = cdf[-1] + jump.tail_mass
    cdf = cdf / total

    def draw_jumps(k):
        u = gen.random(k)
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(probs))

    if size is None:
        return [int(j) for j in draw_jumps(gen.poisson(lam))]
    counts = gen.poisson(lam, size)
    jumps = draw_jumps(int(counts.sum()))
    owner = np.repeat(np.arange(size), counts)
    return np.bincount(owner, weights=jumps, minlength=size).astype(np.int64)


# ---------------------------------------------------------------------------
# sequential sampler


@numba.njit(cache=True)
def _log_poisson_row(lam, kmax):
    out = np.empty(kmax + 1)
    if lam <= 0.0:
        out[:] = -np.inf
        out[0] = 0.0
        return out
    ll = math.log(lam)
    for k in range(kmax + 1):
        out[k] = k * ll - lam - math.lgamma(k + 1.0)
    return out


@numba.njit(cache=True)
def _backward_tables(rates, M):
    """``T[r, m] = log P(sum_{s >= r} s L_s = m)`` for ``r = 1..M+1``."""
    T = np.full((M + 2, M + 1), -np.inf)
    T[M + 1, 0] = 0.0
    for r in range(M, 0, -1):
        lp = _log_poisson_row(rates[r - 1], M // r)
        for m in range(M + 1):
            kmax = m // r
            best = -np.inf
            for k in range(kmax + 1):
                v = lp[k] + T[r + 1, m - r * k]
                if v > best:
                    best = v
            if best == -np.inf:
                continue
            acc = 0.0
            for k in range(kmax + 1):
                v = lp[k] + T[r + 1, m - r * k]
                if v > -np.inf:
                    acc += math.exp(v - best)
            T[r, m] = best + math.log(acc)
    return T


@numba.njit(cache=True)
def _sequential_draw(T, rates, M, n, seed):
    np.random.seed(seed)
    out = np.zeros((n, M), dtype=np.int32)
    log_rates = np.empty(M)
    for r in range(M):
        log_rates[r] = math.log(rates[r]) if rates[r] > 0 else -np.inf
    for i in range(n):
        m = M
        r = 1
        while m > 0:
            target = T[r, m]
            u = np.random.random()
            acc = 0.0
            lam = rates[r - 1]
            chosen = -1
            last_ok = -1
            for k in range(m // r + 1):
                if k > 0 and lam <= 0.0:
                    break
                lp = k * log_rates[r - 1] - lam - math.lgamma(k + 1.0) if k > 0 else -lam
                v = lp + T[r + 1, m - r * k] - target
                if v == -np.inf:
                    continue
                last_ok = k
                acc += math.exp(v)
                if acc >= u:
                    chosen = k
                    break
            if chosen < 0:
                chosen = last_ok
            out[i, r - 1] = chosen
            m -= r * chosen
            r += 1
    return out


class SequentialSampler:
    """Exact sampler drawing cluster counts size by size.

    ``P(eta_r = k | remaining mass m) = P(L_r = k) G_{r+1}(m - r k) / G_r(m)``
    with ``G_r`` the law of ``sum_{s >= r} s L_s`` for independent
    Poisson counts.  Tables take ``O(M^2 log M)`` time and ``O(M^2)``
    memory; draws cost ``O(M)`` each.
    """

    def __init__(self, W: WeightSequence, V: float, M: int, phi: float | None = None,
                 max_mass: int = SEQUENTIAL_MAX_MASS):
        if M < 1:
            raise DomainError("mass must be positive")
        if M > max_mass:
            raise CapExceeded(f"sequential tables for M={M} exceed max_mass={max_mass}")
        if V <= 0:
            raise DomainError("volume must be positive")
        self.M = int(M)
        phi = default_tilt(W, V, M) if phi is None else phi
        self.rates = tilted_rates(W, V, self.M, phi)
        self.tables = _backward_tables(self.rates, self.M)
        if self.tables[1, self.M] == -np.inf:
            raise NumericalDegeneracy(f"mass {M} has zero probability")

    def draw_counts(self, rng, n: int) -> np.ndarray:
        """``n`` draws as an ``(n, M)`` array of counts ``eta_1..eta_M``."""
        gen = _as_generator(rng)
        return _sequential_draw(self.tables, self.rates, self.M, int(n), _numba_seed(gen))

    def draw(self, rng, n: int = 1) -> list:
        return [Configuration.from_dense(row) for row in self.draw_counts(rng, n)]


def sample_pi_sequential(W: WeightSequence, V: float, M: int, rng, n: int | None = None):
    """Exact draw(s) from the invariant measure with mass ``M``."""
    sampler = SequentialSampler(W, V, M)
    out = sampler.draw(rng, 1 if n is None else n)
    return out[0] if n is None else out


# ---------------------------------------------------------------------------
# rejection sampler


def rejection_tilt(W: WeightSequence) -> float:
    """Tilt used by the rejection sampler: ``phi_c`` when ``q`` is finite."""
    if not W.oracle_only and math.isfinite(W.q):
        return W.phi_c
    return 1.0


class RejectionSampler:
    """Propose compound Poisson sums and keep those of total mass ``M``.

    With the default tilt ``phi_c`` the proposal has ``N ~ Poisson(qV)``
    jumps distributed as ``X``; weights with infinite ``q`` fall back to
    the untilted jumps ``Y`` with intensity ``wV``.
    """

    def __init__(self, W: WeightSequence, V: float, M: int, phi: float | None = None,
                 min_acceptance: float = REJECTION_MIN_ACCEPTANCE):
        if M < 1:
            raise DomainError("mass must be positive")
        self.M = int(M)
        self.phi = rejection_tilt(W) if phi is None else phi
        self.acceptance = math.exp(log_prob_total(W, V, self.M, self.phi))
        if self.acceptance < min_acceptance:
            raise AcceptanceTooLow(
                f"P(total = {M}) = {self.acceptance:.3g} is below {min_acceptance:g}")
        rates = tilted_rates(W, V, self.M, self.phi)
        self.intensity = V * W.moment(0, self.phi).value
        probs = np.concatenate(([0.0], rates)) / self.intensity
        self.cdf = np.cumsum(probs)

    def draw_counts(self, rng, n: int) -> np.ndarray:
        gen = _as_generator(rng)
        # Proposals that cannot reach M are skipped exactly: by Poisson
        # thinning, "no jump above M" leaves Poisson(lam P(X <= M)) jumps from
        # X given X <= M, and a count of zero never reaches M >= 1.
        inside = self.cdf[-1]
        lam = self.intensity * inside
        k = np.arange(1, self.M + 1)
        count_pmf = np.exp(k * math.log(lam) - lam - gammaln(k + 1))
        count_cdf = np.cumsum(count_pmf) / count_pmf.sum()
        out = np.zeros((int(n), self.M), dtype=np.int32)
        got = 0
        while got < n:
            u = gen.random(_UNIFORM_BUFFER)
            got = _rejection_fill(self.cdf / inside, count_cdf, u, out, got)
        return out

    def draw(self, rng, n: int = 1) -> list:
        return [Configuration.from_dense(row) for row in self.draw_counts(rng, n)]


_UNIFORM_BUFFER = 1 << 22


@numba.njit(cache=True)
def _rejection_fill(cdf, count_cdf, u, out, got):
    """Accept-reject loop over proposals with ``1..M`` jumps, each in ``1..M``.

    ``count_cdf[k - 1]`` is the cdf of the jump count at ``k`` and ``cdf[j]``
    the cdf of a jump at ``j``.  Uniforms come from ``u``; a proposal is
    started only while ``M + 1`` of them remain, so whether it runs does
    not depend on its outcome.  Returns the number of filled rows.
    """
    n, M = out.shape
    jumps = np.empty(M, dtype=np.int64)
    pos = 0
    while got < n and pos + M + 1 <= len(u):
        k = 1
        while k < M and u[pos] >= count_cdf[k - 1]:
            k += 1
        pos += 1
        total = 0
        for i in range(k):
            j = 1
            while j < M and u[pos] >= cdf[j]:
                j += 1
            pos += 1
            total += j
            if total > M:
                break
            jumps[i] = j
        if total != M:
            continue
        for i in range(k):
            out[got, jumps[i] - 1] += 1
        got += 1
    return got


def sample_pi_rejection(W: WeightSequence, V: float, M: int, rng, n: int | None = None):
    """Exact draw(s) from the invariant measure by rejection."""
    sampler = RejectionSampler(W, V, M)
    out = sampler.draw(rng, 1 if n is None else n)
    return out[0] if n is None else out


# ---------------------------------------------------------------------------
# split sampler for large masses


@numba.njit(cache=True)
def _pdc_draw(rates, cap, m, small, large_cdf, large_total, seed, max_tries):
    """Draw counts for sizes ``1..cap`` conditioned on total mass ``m``.

    Counts of sizes ``2..cap`` are proposed unconditioned; the count of
    size one is then forced, and accepted with probability
    ``P(L_1 = eta_1) / max_k P(L_1 = k)``.  Returns the counts array and
    the number of proposals used (negative if ``max_tries`` ran out).
    """
    np.random.seed(seed)
    lam1 = rates[0]
    mode = math.floor(lam1)
    log_mode = mode * math.log(lam1) - lam1 - math.lgamma(mode + 1.0) if lam1 > 0 else 0.0
    counts = np.zeros(cap + 1, dtype=np.int64)
    for attempt in range(1, max_tries + 1):
        for r in range(cap + 1):
            counts[r] = 0
        mass = 0
        for r in range(2, small + 1):
            lam = rates[r - 1]
            if lam > 0:
                k = np.random.poisson(lam)
                counts[r] = k
                mass += r * k
        if large_total > 0 and mass <= m:
            n_large = np.random.poisson(large_total)
            for _ in range(n_large):
                u = np.random.random()
                lo = 0
                hi = len(large_cdf) - 1
                while lo < hi:
                    mid = (lo + hi) // 2
                    if large_cdf[mid] < u:
                        lo = mid + 1
                    else:
                        hi = mid
                size = small + 1 + lo
                counts[size] += 1
                mass += size
        n1 = m - mass
        if n1 < 0:
            continue
        if lam1 > 0:
            lp = n1 * math.log(lam1) - lam1 - math.lgamma(n1 + 1.0)
        else:
            lp = 0.0 if n1 == 0 else -np.inf
        if np.random.random() < math.exp(lp - log_mode):
            counts[1] = n1
            return counts, attempt
    return counts, -max_tries


@numba.njit(cache=True)
def _convolve_from(a, a_lo, b, b_lo, n_max):
    """``out[n] = sum_i a[i] b[n - i]`` for ``n <= n_max``, given ``a[i] = 0``
    below ``a_lo`` and ``b[i] = 0`` below ``b_lo``."""
    out = np.zeros(n_max + 1)
    for n in range(a_lo + b_lo, n_max + 1):
        acc = 0.0
        for i in range(a_lo, n - b_lo + 1):
            acc += a[i] * b[n - i]
        out[n] = acc
    return out


class _Level:
    """Split of conditioned draws (sizes ``<= cap``, mass ``m <= m_max``) at threshold ``h``.

    Clusters above ``h`` ("large") number at most ``m // (h + 1)``.
    The law of their total mass ``n`` is proportional to
    ``G_large(n) G_small(m - n)`` where ``G_large`` is the compound
    Poisson law of the large sizes (expanded as ``sum_J g^{*J} / J!``)
    and ``G_small`` the Panjer table of the small sizes.
    """

    def __init__(self, rates: np.ndarray, cap: int, m_max: int, h: int):
        self.cap, self.m_max, self.h = cap, m_max, h
        g = np.zeros(m_max + 1)
        g[h + 1:min(cap, m_max) + 1] = rates[h:min(cap, m_max)]
        self.g = g
        self.j_max = m_max // (h + 1)
        powers = [np.zeros(m_max + 1), g]
        powers[0][0] = 1.0
        for J in range(2, self.j_max + 1):
            powers.append(_convolve_from(powers[-1], (J - 1) * (h + 1), g, h + 1, m_max))
        self.powers = powers
        large = sum(p / math.factorial(J) for J, p in enumerate(powers))
        with np.errstate(divide="ignore"):
            self.large_log = np.log(large)
        small = compound_from_rates(rates[:h], m_max) if h > 0 else Pmf(np.eye(1, m_max + 1)[0])
        self.small_log = small.log_pmf()
        self._cdfs: dict = {}

    def _cdf(self, m: int) -> np.ndarray:
        cdf = self._cdfs.get(m)
        if cdf is None:
            logw = self.large_log[:m + 1] + self.small_log[m - np.arange(m + 1)]
            top = logw.max()
            if top == -np.inf:
                raise NumericalDegeneracy(f"mass {m} unreachable with sizes <= {self.cap}")
            w = np.exp(logw - top)
            cdf = np.cumsum(w) / w.sum()
            if len(self._cdfs) > 64:
                self._cdfs.clear()
            self._cdfs[m] = cdf
        return cdf

    def draw_large(self, gen: np.random.Generator, m: int | None = None) -> tuple:
        m = self.m_max if m is None else m
        n = int(np.searchsorted(self._cdf(m), gen.random(), side="right"))
        n = min(n, m)
        if n == 0:
            return 0, []
        j_top = n // (self.h + 1)
        weights = np.array([self.powers[J][n] / math.factorial(J) for J in range(1, j_top + 1)])
        J = 1 + int(np.searchsorted(np.cumsum(weights) / weights.sum(), gen.random(), side="right"))
        J = min(J, j_top)
        sizes = []
        rest = n
        for left in range(J - 1, -1, -1):
            s = np.arange(rest + 1)
            w = self.g[s] * self.powers[left][rest - s]
            cdf = np.cumsum(w)
            pick = int(np.searchsorted(cdf / cdf[-1], gen.random(), side="right"))
            pick = min(pick, rest)
            sizes.append(pick)
            rest -= pick
        return n, sizes


class SplitSampler:
    """Exact sampler for large masses, built for condensed regimes.

    The clusters above ``m / 4`` (at most three) are drawn first from
    their exact joint law; the remaining clusters are drawn by proposing
    sizes ``>= 2`` unconditioned and fixing the monomer count, recursing
    on a further split when that acceptance would be poor.  Memory and
    setup time are ``O(M^2)`` operations but only ``O(M)`` storage per
    level, so masses of order ``10^5`` are practical.
    """

    def __init__(self, W: WeightSequence, V: float, M: int, phi: float | None = None,
                 min_pdc_acceptance: float = 1e-4, small_sizes: int = 256):
        if M < 1:
            raise DomainError("mass must be positive")
        self.M = int(M)
        phi = default_tilt(W, V, M) if phi is None else phi
        self.rates = tilted_rates(W, V, self.M, phi)
        self.min_pdc_acceptance = min_pdc_acceptance
        self.small_sizes = small_sizes
        self._levels: dict = {}
        self._large_cdfs: dict = {}
        lam1 = self.rates[0]
        mode = math.floor(lam1)
        self._log_mode = float(mode * math.log(lam1) - lam1 - gammaln(mode + 1)) if lam1 > 0 else 0.0
        self.top = self._level(self.M, self.M)

    def _level(self, cap: int, m: int) -> _Level | None:
        """Level for sizes ``<= cap``, reused for every mass up to its ``m_max``."""
        level = self._levels.get(cap, False)
        if level is False or (level is not None and m > level.m_max):
            m_max = m if level is False or level is None else max(m, int(1.1 * level.m_max))
            m_max = min(m_max, self.M)
            h = min(m_max // 4, cap - 1)
            level = None if m_max // (h + 1) > 8 else _Level(self.rates, cap, m_max, h)
            self._levels[cap] = level
        return level

    def _large_cdf(self, cap: int) -> tuple:
        small = min(cap, self.small_sizes)
        if cap not in self._large_cdfs:
            tail = self.rates[small:cap]
            total = float(tail.sum())
            cdf = np.cumsum(tail) / total if total > 0 else np.ones(1)
            self._large_cdfs[cap] = (small, cdf, total)
        return self._large_cdfs[cap]

    def _pdc(self, cap: int, m: int, gen: np.random.Generator, acceptance: float) -> np.ndarray:
        small, cdf, total = self._large_cdf(cap)
        tries = int(min(1e9, max(1e4, 200 / max(acceptance, 1e-300))))
        counts, used = _pdc_draw(self.rates, cap, m, small, cdf, total, _numba_seed(gen), tries)
        if used < 0:
            raise NumericalDegeneracy(f"no acceptance after {tries} proposals at mass {m}")
        return counts

    def _draw_into(self, cap: int, m: int, gen: np.random.Generator, small_log: np.ndarray | None,
                   out: dict) -> None:
        if m == 0:
            return
        if small_log is not None:
            acceptance = math.exp(small_log[m] - self._log_mode)
            if acceptance >= self.min_pdc_acceptance or min(cap, m) == 1:
                counts = self._pdc(cap, m, gen, acceptance)
                for r in np.nonzero(counts)[0]:
                    out[int(r)] = out.get(int(r), 0) + int(counts[r])
                return
        level = self._level(cap, m)
        if level is None or (small_log is not None and 2 * level.h > cap):
            # a further split would barely lower the cap: propose directly
            acceptance = 0.0 if small_log is None else math.exp(small_log[m] - self._log_mode)
            counts = self._pdc(cap, m, gen, acceptance)
            for r in np.nonzero(counts)[0]:
                out[int(r)] = out.get(int(r), 0) + int(counts[r])
            return
        n, sizes = level.draw_large(gen, m)
        for s in sizes:
            out[s] = out.get(s, 0) + 1
        self._draw_into(level.h, m - n, gen, level.small_log, out)

    def draw(self, rng, n: int = 1) -> list:
        gen = _as_generator(rng)
        result = []
        for _ in range(n):
            out: dict = {}
            self._draw_into(self.M, self.M, gen, None, out)
            result.append(Configuration.from_counts(out))
        return result


def sample_pi_split(W: WeightSequence, V: float, M: int, rng, n: int | None = None):
    """Exact draw(s) from the invariant measure via the large/small split."""
    sampler = SplitSampler(W, V, M)
    out = sampler.draw(rng, 1 if n is None else n)
    return out[0] if n is None else out


def bulk(x) -> list:
    """``x`` with its first maximal element removed, order otherwise kept."""
    x = list(x)
    if not x:
        raise EmptyInput("bulk of an empty jump list")
    k = max(range(len(x)), key=lambda i: (x[i], -i))
    return x[:k] + x[k + 1:]


def largest_particle(config: Configuration) -> int:
    """Largest occupied size, ``0`` for the empty configuration."""
    return config.largest


def jumps_of(config: Configuration) -> list:
    """Cluster sizes of ``config`` as a jump list in increasing order."""
    out = []
    for r, c in config.pairs:
        out.extend([r] * c)
    return out
