"""Stochastic coagulation-fragmentation dynamics and the mean-field equation.

Rates of the particle system with volume ``V`` in configuration ``eta``:

* clusters of sizes ``i < j`` merge at rate ``a(i, j) eta_i eta_j / V``;
* two clusters of size ``i`` merge at rate ``a(i, i) eta_i (eta_i - 1) / V``
  (``same_size="literal"`` uses ``eta_i**2 / V`` instead, kept as a
  negative control because it breaks reversibility);
* a cluster of size ``i + j`` splits into ``{i, j}`` at rate
  ``b(i, j) eta_{i+j}``, one rate per unordered pair ``i <= j``.

Kernels are stored as dense tables ``a[i, j]``, ``b[i, j]`` for
``1 <= i, j <= n_max``; row and column 0 are unused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from .errors import CapExceeded, DomainError, StepSizeRejected
from .oracle import Configuration
from .sampler import _as_generator, _numba_seed, _seed_numba
from .weights import Explicit, WeightSequence

LAW_MAX_MASS = 15
_CHUNK_EVENTS = 1 << 20

COAG = 1
FRAG = -1


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True, eq=False)
class Kernel:
    """Coagulation table ``a`` and fragmentation table ``b``.

    For Becker-Doring kernels ``a_r[r]`` is the rate of ``r + 1 -> r+1``
    and ``b_r[r]`` the rate of ``r -> (r-1) + 1``; the dense tables hold
    the same numbers in row/column 1.
    """

    a: np.ndarray
    b: np.ndarray
    kind: str = "general"
    a_r: np.ndarray | None = None
    b_r: np.ndarray | None = None
    reversible: bool = False

    def __post_init__(self):
        for name in ("a", "b"):
            t = getattr(self, name)
            if t.ndim != 2 or t.shape[0] != t.shape[1]:
                raise DomainError(f"{name} must be a square table")
            if np.any(t < 0) or not np.all(np.isfinite(t)):
                raise DomainError(f"{name} must be finite and non-negative")
            if not np.array_equal(t, t.T):
                raise DomainError(f"{name} must be symmetric")

    @property
    def n_max(self) -> int:
        return self.a.shape[0] - 1

    @property
    def is_becker_doring(self) -> bool:
        return self.kind == "becker_doring"


def _table(fn, n: int) -> np.ndarray:
    if callable(fn):
        t = np.zeros((n + 1, n + 1))
        for i in range(1, n + 1):
            for j in range(i, n + 1):
                t[i, j] = t[j, i] = fn(i, j)
        return t
    t = np.asarray(fn, dtype=float)
    if t.shape != (n + 1, n + 1):
        raise DomainError(f"rate table must have shape {(n + 1, n + 1)}")
    return t


def general_kernel(a, b, n_max: int) -> Kernel:
    """Kernel from callables ``(i, j) -> rate`` or ready tables."""
    return Kernel(_table(a, n_max), _table(b, n_max))


def constant_kernel(n_max: int, a: float = 1.0, b: float = 1.0) -> Kernel:
    t_a = np.full((n_max + 1, n_max + 1), float(a))
    t_b = np.full((n_max + 1, n_max + 1), float(b))
    t_a[0, :] = t_a[:, 0] = t_b[0, :] = t_b[:, 0] = 0.0
    return Kernel(t_a, t_b)


def becker_doring(a_r, b_r) -> Kernel:
    """Monomer-only kernel; ``a_r`` lists ``a_1..a_{n-1}``, ``b_r`` lists ``b_2..b_n``."""
    a_r = np.asarray(a_r, dtype=float)
    b_r = np.asarray(b_r, dtype=float)
    if a_r.shape != b_r.shape or a_r.ndim != 1:
        raise DomainError("a_r and b_r must be one-dimensional with equal length")
    n = len(a_r) + 1
    A = np.zeros(n + 1)
    B = np.zeros(n + 1)
    A[1:n] = a_r
    B[2:n + 1] = b_r
    t_a = np.zeros((n + 1, n + 1))
    t_b = np.zeros((n + 1, n + 1))
    t_a[1, 1:n] = A[1:n]
    t_a[1:n, 1] = A[1:n]
    t_b[1, 1:n] = B[2:n + 1]
    t_b[1:n, 1] = B[2:n + 1]
    return Kernel(t_a, t_b, kind="becker_doring", a_r=A, b_r=B)


def becker_doring_power(b: float, n_max: int) -> Kernel:
    """Bounded kernel ``a_r = 1``, ``b_{r+1} = (1 + 1/r)^b``, reversible for ``Q_r ∝ r^{-b}``."""
    r = np.arange(1, n_max, dtype=float)
    k = becker_doring(np.ones(n_max - 1), (1.0 + 1.0 / r) ** b)
    return Kernel(k.a, k.b, k.kind, k.a_r, k.b_r, reversible=True)


def becker_doring_weights(kernel: Kernel) -> Explicit:
    """Weights with ``Q_1 = 1`` and ``Q_{r+1} / Q_r = a_r / b_{r+1}``."""
    if not kernel.is_becker_doring:
        raise DomainError("kernel is not of Becker-Doring type")
    n = kernel.n_max
    a_r, b_r = kernel.a_r[1:n], kernel.b_r[2:n + 1]
    if np.any(a_r <= 0) or np.any(b_r <= 0):
        raise DomainError("Becker-Doring rates must be positive to define weights")
    logQ = np.concatenate([[0.0], np.cumsum(np.log(a_r) - np.log(b_r))])
    return Explicit(tuple(np.exp(logQ)))


def fragmentation_from_balance(a, W: WeightSequence, n_max: int) -> Kernel:
    """Kernel with ``b(i, j) = a(i, j) Q_i Q_j / Q_{i+j}``.

    ``a`` is a callable, a dense table, or a Becker-Doring ``Kernel`` whose
    coagulation rates are kept (the result is then Becker-Doring too).
    Sizes with ``Q_r = 0`` are allowed provided nothing merges into them.
    """
    with np.errstate(divide="ignore"):
        logQ = np.concatenate([[-np.inf], np.asarray(W.log_weight(np.arange(1, n_max + 1)), float)])
    if np.any(np.isnan(logQ)) or np.any(logQ == np.inf):
        raise DomainError("weights must be finite")
    if isinstance(a, Kernel) and a.is_becker_doring:
        n = min(a.n_max, n_max)
        a_r = a.a_r[1:n].copy()
        r = np.arange(1, n)
        b_next = _balanced_rates(a_r, logQ[1] + logQ[r], logQ[r + 1])
        k = becker_doring(a_r, b_next)
        return Kernel(k.a, k.b, k.kind, k.a_r, k.b_r, reversible=True)
    t_a = a.a[: n_max + 1, : n_max + 1] if isinstance(a, Kernel) else _table(a, n_max)
    i = np.arange(n_max + 1)
    s = i[:, None] + i[None, :]
    inside = (s <= n_max) & (i[:, None] > 0) & (i[None, :] > 0)
    ii, jj = np.nonzero(inside)
    t_b = np.zeros_like(t_a)
    t_b[ii, jj] = _balanced_rates(t_a[ii, jj], logQ[ii] + logQ[jj], logQ[ii + jj])
    return Kernel(t_a, t_b, reversible=True)


def _balanced_rates(a, log_pair, log_merged) -> np.ndarray:
    """``a exp(log_pair - log_merged)`` with ``0`` where the pair has zero weight."""
    if np.any((log_merged == -np.inf) & (a > 0)):
        raise DomainError("coagulation into a size with zero weight cannot be balanced")
    out = np.zeros(len(a))
    ok = (log_pair > -np.inf) & (log_merged > -np.inf)
    out[ok] = a[ok] * np.exp(log_pair[ok] - log_merged[ok])
    return out


def mean_field_kernel(kernel: Kernel) -> Kernel:
    """Kernel whose mean-field equation matches the particle system.

    Equal-size merges remove two clusters and equal-size splits create
    two, so the equation's ``1/2`` factors need the diagonal doubled.
    """
    d = np.eye(kernel.n_max + 1)
    return Kernel(kernel.a * (1 + d), kernel.b * (1 + d), kernel.kind, kernel.a_r,
                  kernel.b_r, kernel.reversible)


def is_detailed_balanced(kernel: Kernel, W: WeightSequence, rtol: float = 1e-12) -> bool:
    """Whether ``a(i, j) Q_i Q_j = Q_{i+j} b(i, j)`` on all pairs with ``i + j <= n_max``."""
    n = kernel.n_max
    logQ = np.concatenate([[np.nan], np.asarray(W.log_weight(np.arange(1, n + 1)), float)])
    for i in range(1, n + 1):
        for j in range(i, n + 1 - i):
            lhs = kernel.a[i, j] * math.exp(logQ[i] + logQ[j] - logQ[i + j])
            if not math.isclose(lhs, kernel.b[i, j], rel_tol=rtol, abs_tol=1e-300):
                return False
    return True


# ---------------------------------------------------------------------------
# Fenwick tree


@numba.njit(cache=True)
def _fw_add(tree, i, delta):
    n = len(tree) - 1
    while i <= n:
        tree[i] += delta
        i += i & (-i)


@numba.njit(cache=True)
def _fw_build(values):
    n = len(values) - 1
    tree = np.zeros(n + 1)
    for i in range(1, n + 1):
        _fw_add(tree, i, values[i])
    return tree


@numba.njit(cache=True)
def _fw_find(tree, u):
    """Smallest index whose prefix sum exceeds ``u``."""
    n = len(tree) - 1
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= u:
            pos = nxt
            u -= tree[nxt]
        step //= 2
    return min(pos + 1, n)


@numba.njit(cache=True)
def _fw_total(tree):
    n = len(tree) - 1
    s = 0.0
    i = n
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


# ---------------------------------------------------------------------------
# event loops


@numba.njit(cache=True)
def _general_run(eta, a, b, V, t, t_end, literal, times, ev_i, ev_j, ev_k):
    n = len(eta) - 1
    cap = len(times)
    occ = np.empty(n, dtype=np.int64)
    m_rates = n * n + n * n // 2 + 4
    rates = np.empty(m_rates)
    ri = np.empty(m_rates, dtype=np.int64)
    rj = np.empty(m_rates, dtype=np.int64)
    rk = np.empty(m_rates, dtype=np.int8)
    count = 0
    while count < cap:
        k_occ = 0
        for r in range(1, n + 1):
            if eta[r] > 0:
                occ[k_occ] = r
                k_occ += 1
        m = 0
        total = 0.0
        for p in range(k_occ):
            i = occ[p]
            for q in range(p, k_occ):
                j = occ[q]
                if i == j:
                    if eta[i] < 2:
                        continue
                    pairs = eta[i] * eta[i] if literal else eta[i] * (eta[i] - 1)
                else:
                    pairs = eta[i] * eta[j]
                rate = a[i, j] * pairs / V
                if rate > 0.0:
                    rates[m] = rate
                    ri[m] = i
                    rj[m] = j
                    rk[m] = 1
                    total += rate
                    m += 1
        for p in range(k_occ):
            s = occ[p]
            for i in range(1, s // 2 + 1):
                rate = b[i, s - i] * eta[s]
                if rate > 0.0:
                    rates[m] = rate
                    ri[m] = i
                    rj[m] = s - i
                    rk[m] = -1
                    total += rate
                    m += 1
        if total <= 0.0:
            return count, t_end, True
        t_next = t - math.log(1.0 - np.random.random()) / total
        if t_next > t_end:
            return count, t_end, True
        t = t_next
        u = np.random.random() * total
        chosen = m - 1
        acc = 0.0
        for e in range(m):
            acc += rates[e]
            if acc > u:
                chosen = e
                break
        i, j, k = ri[chosen], rj[chosen], rk[chosen]
        if k == 1:
            eta[i] -= 1
            eta[j] -= 1
            eta[i + j] += 1
        else:
            eta[i + j] -= 1
            eta[i] += 1
            eta[j] += 1
        times[count] = t
        ev_i[count] = i
        ev_j[count] = j
        ev_k[count] = k
        count += 1
    return count, t, False


@numba.njit(cache=True)
def _monomer_partners(eta1, literal):
    if eta1 < 2:
        return 0
    return eta1 if literal else eta1 - 1


@numba.njit(cache=True)
def _fw_pick(tree, vals, u):
    """Index drawn by ``u`` in the tree, moved to a positive entry if round-off missed."""
    n = len(vals) - 1
    r = _fw_find(tree, u)
    if vals[r] > 0.0:
        return r
    for d in range(1, n):
        if r + d <= n and vals[r + d] > 0.0:
            return r + d
        if r - d >= 1 and vals[r - d] > 0.0:
            return r - d
    return r


@numba.njit(cache=True)
def _bd_run(eta, A, B, V, t, t_end, literal, times, ev_i, ev_j, ev_k):
    """Monomer-only events with Fenwick trees over sizes.

    The merge ``1 + r`` has rate ``eta_1 A_r e_r / V`` with ``e_r = eta_r``
    for ``r >= 2`` and ``e_1`` the number of monomer partners of a monomer;
    the coagulation tree stores ``A_r e_r`` so only the sizes touched by an
    event change.
    """
    n = len(eta) - 1
    cap = len(times)
    cvals = np.zeros(n + 1)
    fvals = np.zeros(n + 1)
    for r in range(1, n):
        e = eta[r] if r > 1 else _monomer_partners(eta[1], literal)
        cvals[r] = A[r] * e
    for r in range(2, n + 1):
        fvals[r] = B[r] * eta[r]
    ctree = _fw_build(cvals)
    ftree = _fw_build(fvals)
    count = 0
    while count < cap:
        if count % 4096 == 4095:
            # drop round-off accumulated by incremental updates
            ctree = _fw_build(cvals)
            ftree = _fw_build(fvals)
        coag = eta[1] * max(_fw_total(ctree), 0.0) / V
        frag = max(_fw_total(ftree), 0.0)
        total = coag + frag
        if total <= 1e-300:
            return count, t_end, True
        t_next = t - math.log(1.0 - np.random.random()) / total
        if t_next > t_end:
            return count, t_end, True
        t = t_next
        u = np.random.random() * total
        if u < coag:
            r = _fw_pick(ctree, cvals, u * V / eta[1])
            i, j, k = 1, r, 1
            eta[1] -= 1
            eta[r] -= 1
            eta[r + 1] += 1
            top = r + 1
        else:
            s = _fw_pick(ftree, fvals, u - coag)
            i, j, k = 1, s - 1, -1
            eta[s] -= 1
            eta[s - 1] += 1
            eta[1] += 1
            top = s
        for r in (1, j, top):
            new_c = 0.0
            if r < n:
                e = eta[r] if r > 1 else _monomer_partners(eta[1], literal)
                new_c = A[r] * e
            _fw_add(ctree, r, new_c - cvals[r])
            cvals[r] = new_c
            new_f = B[r] * eta[r] if r >= 2 else 0.0
            _fw_add(ftree, r, new_f - fvals[r])
            fvals[r] = new_f
        times[count] = t
        ev_i[count] = i
        ev_j[count] = j
        ev_k[count] = k
        count += 1
    return count, t, False


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True, eq=False)
class Trace:
    """Initial state plus the list of events up to ``t_end``.

    Event ``e`` happens at ``times[e]``; ``kinds[e]`` is ``+1`` for the
    merge of sizes ``(first[e], second[e])`` and ``-1`` for the split of
    ``first[e] + second[e]`` into them.
    """

    eta0: np.ndarray
    V: float
    t_end: float
    times: np.ndarray
    first: np.ndarray
    second: np.ndarray
    kinds: np.ndarray
    eta_final: np.ndarray

    @property
    def M(self) -> int:
        return int(np.dot(np.arange(len(self.eta0)), self.eta0))

    @property
    def n_events(self) -> int:
        return len(self.times)

    def counts_at(self, t_values) -> np.ndarray:
        """Dense counts ``eta_0..eta_M`` (index 0 unused) right after time ``t`` for each ``t``."""
        t_values = np.atleast_1d(np.asarray(t_values, dtype=float))
        if np.any(np.diff(t_values) < 0):
            raise DomainError("times must be non-decreasing")
        return _snapshots(self.eta0, self.times, self.first, self.second, self.kinds, t_values)

    def state_at(self, t: float) -> Configuration:
        return Configuration.from_dense(self.counts_at([t])[0, 1:])


def _as_counts(eta0) -> np.ndarray:
    if isinstance(eta0, Configuration):
        dense = eta0.dense()
    else:
        dense = tuple(int(c) for c in eta0)
    if any(c < 0 for c in dense):
        raise DomainError("counts must be non-negative")
    M = sum((r + 1) * c for r, c in enumerate(dense))
    out = np.zeros(M + 1, dtype=np.int64)
    out[1: len(dense) + 1] = dense[:M]
    return out


def gillespie_run(kernel: Kernel, eta0, V: float, t_end: float, rng,
                  same_size: str = "falling") -> Trace:
    """Exact continuous-time trajectory from ``eta0`` up to ``t_end``.

    ``eta0`` is a ``Configuration`` or dense counts ``(eta_1, eta_2, ...)``.
    Becker-Doring kernels use Fenwick trees (``O(log M)`` per event); other
    kernels rescan the occupied sizes at every event.
    """
    if same_size not in ("falling", "literal"):
        raise DomainError("same_size must be 'falling' or 'literal'")
    if V <= 0 or t_end < 0:
        raise DomainError("need V > 0 and t_end >= 0")
    eta = _as_counts(eta0)
    M = len(eta) - 1
    if M > kernel.n_max:
        raise DomainError(f"kernel tables cover sizes up to {kernel.n_max}, mass is {M}")
    literal = same_size == "literal"
    _seed_numba(_numba_seed(_as_generator(rng)))
    eta0_arr = eta.copy()
    chunks = []
    t = 0.0
    done = M == 0
    if kernel.is_becker_doring:
        A = np.zeros(M + 1)
        B = np.zeros(M + 1)
        n = min(M, kernel.n_max)
        A[1:n] = kernel.a_r[1:n]
        B[2:n + 1] = kernel.b_r[2:n + 1]
    else:
        a = np.ascontiguousarray(kernel.a[: M + 1, : M + 1])
        b = np.ascontiguousarray(kernel.b[: M + 1, : M + 1])
    while not done:
        times = np.empty(_CHUNK_EVENTS)
        ev_i = np.empty(_CHUNK_EVENTS, dtype=np.int32)
        ev_j = np.empty(_CHUNK_EVENTS, dtype=np.int32)
        ev_k = np.empty(_CHUNK_EVENTS, dtype=np.int8)
        if kernel.is_becker_doring:
            cnt, t, done = _bd_run(eta, A, B, float(V), t, float(t_end), literal,
                                   times, ev_i, ev_j, ev_k)
        else:
            cnt, t, done = _general_run(eta, a, b, float(V), t, float(t_end), literal,
                                        times, ev_i, ev_j, ev_k)
        chunks.append((times[:cnt], ev_i[:cnt], ev_j[:cnt], ev_k[:cnt]))
    if chunks:
        times, ev_i, ev_j, ev_k = (np.concatenate(parts) for parts in zip(*chunks))
    else:
        times = np.empty(0)
        ev_i = ev_j = np.empty(0, dtype=np.int32)
        ev_k = np.empty(0, dtype=np.int8)
    return Trace(eta0_arr, float(V), float(t_end), times, ev_i, ev_j, ev_k, eta)


@numba.njit(cache=True)
def _apply(eta, i, j, k):
    if k == 1:
        eta[i] -= 1
        eta[j] -= 1
        eta[i + j] += 1
    else:
        eta[i + j] -= 1
        eta[i] += 1
        eta[j] += 1


@numba.njit(cache=True)
def _snapshots(eta0, times, first, second, kinds, t_values):
    out = np.empty((len(t_values), len(eta0)), dtype=np.int64)
    eta = eta0.copy()
    e = 0
    for s in range(len(t_values)):
        while e < len(times) and times[e] <= t_values[s]:
            _apply(eta, first[e], second[e], kinds[e])
            e += 1
        out[s] = eta
    return out


@numba.njit(cache=True)
def _occupation_means(eta0, times, first, second, kinds, t0, t1):
    acc = np.zeros(len(eta0))
    eta = eta0.copy()
    last = 0.0
    for e in range(len(times) + 1):
        t = times[e] if e < len(times) else t1
        lo = max(last, t0)
        hi = min(t, t1)
        if hi > lo:
            for r in range(len(eta)):
                if eta[r]:
                    acc[r] += eta[r] * (hi - lo)
        if e < len(times):
            _apply(eta, first[e], second[e], kinds[e])
        last = t
    return acc / (t1 - t0)


@numba.njit(cache=True)
def _occupation_keys(eta0, times, first, second, kinds, t0, t1):
    base = len(eta0)
    n = len(times) + 1
    keys = np.empty(n, dtype=np.int64)
    durations = np.zeros(n)
    eta = eta0.copy()
    last = 0.0
    for e in range(n):
        t = times[e] if e < len(times) else t1
        key = 0
        for r in range(len(eta) - 1, 0, -1):
            key = key * base + eta[r]
        keys[e] = key
        lo = max(last, t0)
        hi = min(t, t1)
        if hi > lo:
            durations[e] = hi - lo
        if e < len(times):
            _apply(eta, first[e], second[e], kinds[e])
        last = t
    return keys, durations


def _check_window(trace: Trace, burn_in: float):
    if not 0 <= burn_in < trace.t_end:
        raise DomainError("burn_in must lie in [0, t_end)")


def occupation_law(trace: Trace, burn_in: float = 0.0) -> dict:
    """Fraction of ``[burn_in, t_end]`` spent in each configuration."""
    _check_window(trace, burn_in)
    M = trace.M
    if M > LAW_MAX_MASS:
        raise CapExceeded(f"configuration law needs M <= {LAW_MAX_MASS}; use occupation_means")
    keys, dur = _occupation_keys(trace.eta0, trace.times, trace.first, trace.second,
                                 trace.kinds, float(burn_in), trace.t_end)
    uniq, inv = np.unique(keys, return_inverse=True)
    weight = np.bincount(inv, weights=dur)
    total = weight.sum()
    out = {}
    for key, w in zip(uniq, weight):
        if w <= 0:
            continue
        counts = []
        k = int(key)
        for _ in range(M):
            k, c = divmod(k, M + 1)
            counts.append(c)
        out[Configuration.from_dense(counts)] = w / total
    return out


def occupation_means(trace: Trace, burn_in: float = 0.0) -> np.ndarray:
    """Time averages of ``eta_r`` over ``[burn_in, t_end]``; entry ``r - 1`` is size ``r``."""
    _check_window(trace, burn_in)
    acc = _occupation_means(trace.eta0, trace.times, trace.first, trace.second,
                            trace.kinds, float(burn_in), trace.t_end)
    return acc[1:]


def occupation_average(trace: Trace, burn_in: float = 0.0):
    """Configuration law for ``M <= 15``, per-size means otherwise."""
    if trace.M <= LAW_MAX_MASS:
        return occupation_law(trace, burn_in)
    return occupation_means(trace, burn_in)


# ---------------------------------------------------------------------------
# mean-field equation


class OdeSolution(NamedTuple):
    times: np.ndarray
    profiles: np.ndarray  # profiles[k, r - 1] = c_r(times[k])
    mass: np.ndarray
    step_error: float

    @property
    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass - self.mass[0])))


@numba.njit(cache=True)
def _rhs_general(c, a, b, outflow, out):
    R = len(c) - 1
    out[:] = 0.0
    for i in range(1, R + 1):
        if c[i] == 0.0:
            continue
        for j in range(1, R + 1):
            rate = a[i, j] * c[i] * c[j]
            if rate == 0.0:
                continue
            if i + j <= R:
                out[i + j] += 0.5 * rate
                out[i] -= rate
            elif outflow:
                out[i] -= rate
    for s in range(2, R + 1):
        if c[s] == 0.0:
            continue
        for i in range(1, s):
            rate = b[i, s - i] * c[s]
            out[i] += rate
            out[s] -= 0.5 * rate


@numba.njit(cache=True)
def _rhs_bd(c, A, B, outflow, out):
    """Becker-Doring fluxes ``J_r = a_r c_1 c_r - b_{r+1} c_{r+1}``."""
    R = len(c) - 1
    for r in range(R + 1):
        out[r] = 0.0
    for r in range(1, R + 1):
        if r < R:
            J = A[r] * c[1] * c[r] - B[r + 1] * c[r + 1]
        elif outflow:
            J = A[r] * c[1] * c[r]
        else:
            J = 0.0
        out[r] -= J
        out[1] -= J
        if r < R:
            out[r + 1] += J


@numba.njit(cache=True)
def _rhs(c, a, b, A, B, bd, outflow, out):
    if bd:
        _rhs_bd(c, A, B, outflow, out)
    else:
        _rhs_general(c, a, b, outflow, out)


@numba.njit(cache=True)
def _rk4(c0, a, b, A, B, bd, outflow, dt, n_steps, save_every):
    R = len(c0) - 1
    n_save = n_steps // save_every + 1
    saved = np.empty((n_save, R + 1))
    c = c0.copy()
    saved[0] = c
    k1 = np.empty(R + 1)
    k2 = np.empty(R + 1)
    k3 = np.empty(R + 1)
    k4 = np.empty(R + 1)
    tmp = np.empty(R + 1)
    s = 1
    h = 0.5 * dt
    for step in range(1, n_steps + 1):
        _rhs(c, a, b, A, B, bd, outflow, k1)
        for r in range(R + 1):
            tmp[r] = c[r] + h * k1[r]
        _rhs(tmp, a, b, A, B, bd, outflow, k2)
        for r in range(R + 1):
            tmp[r] = c[r] + h * k2[r]
        _rhs(tmp, a, b, A, B, bd, outflow, k3)
        for r in range(R + 1):
            tmp[r] = c[r] + dt * k3[r]
        _rhs(tmp, a, b, A, B, bd, outflow, k4)
        for r in range(R + 1):
            c[r] += dt / 6.0 * (k1[r] + 2.0 * k2[r] + 2.0 * k3[r] + k4[r])
        if step % save_every == 0:
            saved[s] = c
            s += 1
    return saved


def solve_cf_ode(kernel: Kernel, c0, R_trunc: int, t_end: float, dt: float,
                 save_dt: float | None = None, boundary: str = "closed",
                 mean_field: bool = True, halving_tol: float = 1e-6) -> OdeSolution:
    """Integrate the coagulation-fragmentation equation for sizes ``<= R_trunc``.

    Classical fourth-order Runge-Kutta with fixed ``dt``; the run is
    repeated with ``dt / 2`` and ``StepSizeRejected`` is raised if the two
    disagree by more than ``halving_tol`` at any saved time.

    ``boundary="closed"`` forbids merges beyond ``R_trunc`` (mass is
    conserved); ``"outflow"`` lets them happen and drops the product.
    ``mean_field=True`` doubles the kernel diagonal so that the equation
    is the large-volume limit of ``gillespie_run``.
    """
    if boundary not in ("closed", "outflow"):
        raise DomainError("boundary must be 'closed' or 'outflow'")
    if R_trunc < 1 or R_trunc > kernel.n_max:
        raise DomainError(f"R_trunc must lie in [1, {kernel.n_max}]")
    if dt <= 0 or t_end < 0:
        raise DomainError("need dt > 0 and t_end >= 0")
    c0 = np.asarray(c0, dtype=float)
    if np.any(c0 < 0):
        raise DomainError("initial densities must be non-negative")
    c = np.zeros(R_trunc + 1)
    c[1: min(len(c0), R_trunc) + 1] = c0[:R_trunc]
    save_dt = t_end if save_dt is None or save_dt <= 0 else save_dt
    n_steps = max(1, int(round(t_end / dt)))
    save_every = max(1, int(round(save_dt / dt)))
    n_steps = (n_steps // save_every) * save_every or save_every
    dt_eff = t_end / n_steps if t_end > 0 else 0.0
    bd = kernel.is_becker_doring
    k = mean_field_kernel(kernel) if mean_field and not bd else kernel
    R = R_trunc
    a = np.ascontiguousarray(k.a[: R + 1, : R + 1])
    b = np.ascontiguousarray(k.b[: R + 1, : R + 1])
    A = np.zeros(R + 1)
    B = np.zeros(R + 2)
    if bd:
        n = kernel.n_max
        A[1: min(R, n - 1) + 1] = kernel.a_r[1: min(R, n - 1) + 1]
        B[2: R + 1] = kernel.b_r[2: R + 1]
        if not mean_field:
            # the equation read literally halves the monomer-monomer terms
            A[1] *= 0.5
            B[2] *= 0.5
    outflow = boundary == "outflow"
    coarse = _rk4(c, a, b, A, B, bd, outflow, dt_eff, n_steps, save_every)
    fine = _rk4(c, a, b, A, B, bd, outflow, dt_eff / 2, 2 * n_steps, 2 * save_every)
    err = float(np.max(np.abs(coarse - fine)))
    if not err <= halving_tol:
        raise StepSizeRejected(f"step halving changed the solution by {err:.3g}")
    profiles = fine[:, 1:]
    times = np.arange(len(profiles)) * save_every * dt_eff
    mass = profiles @ np.arange(1, R + 1)
    return OdeSolution(times, profiles, mass, err)
