"""Condensation experiments and statistical verdicts.

Every test returns a ``Report`` whose JSON form has the keys
``experiment``, ``params``, ``statistic``, ``p_value``, ``verdict`` and
an optional ``details`` object.  Integer-valued statistics are spread
uniformly over their unit cell before a KS comparison with a continuous
law, which keeps the KS statistic from measuring the lattice step.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .errors import DomainError, RegimeMismatch
from .oracle import (
    compound_from_rates,
    compute_a_V,
    default_tilt,
    local_limit_ratio,
    log_prob_total,
    tilted_rates,
)
from .pmf import Pmf, log_poisson
from .rates import I_j, J_rho_j
from .sampler import (
    SEQUENTIAL_MAX_MASS,
    ReplicaRng,
    SequentialSampler,
    SplitSampler,
    sample_compound,
)
from .weights import PowerLaw, WeightSequence, jump_pmf_X

ALPHA = 0.01
DEFAULT_EPS = 0.1
DEFAULT_GAMMA = 1.5
CHUNK = 1000


# ---------------------------------------------------------------------------
# reports


@dataclass
class Report:
    experiment: str
    params: dict
    statistic: float
    p_value: float | None
    verdict: str
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        out = {
            "experiment": self.experiment,
            "params": _jsonable(self.params),
            "statistic": _jsonable(self.statistic),
            "p_value": _jsonable(self.p_value),
            "verdict": self.verdict,
        }
        if self.details:
            out["details"] = _jsonable(self.details)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)


REPORT_KEYS = ("experiment", "params", "statistic", "p_value", "verdict")


def validate_report(obj: dict) -> None:
    """Raise ``DomainError`` unless ``obj`` follows the report schema."""
    missing = [k for k in REPORT_KEYS if k not in obj]
    if missing:
        raise DomainError(f"report lacks keys {missing}")
    extra = set(obj) - set(REPORT_KEYS) - {"details"}
    if extra:
        raise DomainError(f"report has unknown keys {sorted(extra)}")
    if not isinstance(obj["experiment"], str) or not isinstance(obj["params"], dict):
        raise DomainError("experiment must be a string and params an object")
    if obj["verdict"] not in ("pass", "fail"):
        raise DomainError("verdict must be 'pass' or 'fail'")
    if obj["p_value"] is not None and not 0 <= obj["p_value"] <= 1:
        raise DomainError("p_value must lie in [0, 1]")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def _verdict(ok: bool) -> str:
    return "pass" if ok else "fail"


# ---------------------------------------------------------------------------
# statistics helpers


def dequantize(values, rng) -> np.ndarray:
    """Integer data plus independent ``Uniform(-1/2, 1/2)`` noise."""
    gen = rng.generator() if isinstance(rng, ReplicaRng) else np.random.default_rng(rng)
    values = np.asarray(values, dtype=float)
    return values + gen.uniform(-0.5, 0.5, size=values.shape)


def ks_normal(x, var: float = 1.0) -> tuple:
    """One-sample KS statistic and asymptotic p-value against ``N(0, var)``."""
    res = stats.kstest(np.asarray(x, float), stats.norm(scale=math.sqrt(var)).cdf, method="asymp")
    return float(res.statistic), float(res.pvalue)


def ks_two_sample(x, y) -> tuple:
    res = stats.ks_2samp(np.asarray(x, float), np.asarray(y, float), method="asymp")
    return float(res.statistic), float(res.pvalue)


def tv_distance(p, q) -> float:
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    n = max(len(p), len(q))
    p = np.pad(p, (0, n - len(p)))
    q = np.pad(q, (0, n - len(q)))
    return 0.5 * float(np.abs(p - q).sum())


def chi_square_homogeneity(counts_a, counts_b, min_expected: float = 5.0) -> tuple:
    """Two-sample chi-square on matched category counts.

    Categories are sorted by pooled count and the sparse ones merged until
    every expected cell reaches ``min_expected``.  Returns ``(stat, p)``.
    """
    a = np.asarray(counts_a, float)
    b = np.asarray(counts_b, float)
    if a.shape != b.shape:
        raise DomainError("count vectors must align")
    order = np.argsort(-(a + b), kind="stable")
    a, b = a[order], b[order]
    frac = min(a.sum(), b.sum()) / (a.sum() + b.sum())
    rows_a, rows_b = [], []
    acc_a = acc_b = 0.0
    for x, y in zip(a, b):
        acc_a += x
        acc_b += y
        if (acc_a + acc_b) * frac >= min_expected:
            rows_a.append(acc_a)
            rows_b.append(acc_b)
            acc_a = acc_b = 0.0
    if acc_a + acc_b > 0:
        if rows_a:
            rows_a[-1] += acc_a
            rows_b[-1] += acc_b
        else:
            rows_a.append(acc_a)
            rows_b.append(acc_b)
    if len(rows_a) < 2:
        return 0.0, 1.0
    chi2, p, _, _ = stats.chi2_contingency(np.array([rows_a, rows_b]), correction=False)
    return float(chi2), float(p)


def chi_square_gof(observed, probs, min_expected: float = 5.0) -> tuple:
    """Goodness of fit of counts against probabilities, merging sparse cells."""
    obs = np.asarray(observed, float)
    p = np.asarray(probs, float)
    n = obs.sum()
    order = np.argsort(-p, kind="stable")
    obs, p = obs[order], p[order]
    cells_o, cells_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, p * n):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            cells_o.append(acc_o)
            cells_e.append(acc_e)
            acc_o = acc_e = 0.0
    if cells_o:
        cells_o[-1] += acc_o
        cells_e[-1] += acc_e
    if len(cells_o) < 2:
        return 0.0, 1.0
    cells_e = np.array(cells_e)
    cells_e *= n / cells_e.sum()
    res = stats.chisquare(cells_o, cells_e)
    return float(res.statistic), float(res.pvalue)


# ---------------------------------------------------------------------------
# thresholds and fluctuation samples


@dataclass(frozen=True)
class ThresholdPolicy:
    """Excess threshold ``x(n)`` and the derived ``y(t)``.

    ``x(n) = eps * n`` unless ``x_of_n`` is supplied, in which case ``xi``
    must give ``limsup x(n) / n`` (possibly infinite).
    """

    eps: float = DEFAULT_EPS
    gamma: float = DEFAULT_GAMMA
    omega: float = 0.1
    x_of_n: Callable | None = None
    xi_value: float | None = None

    @property
    def xi(self) -> float:
        if self.x_of_n is None:
            return self.eps
        if self.xi_value is None:
            raise DomainError("a custom x(n) needs its limsup x(n)/n")
        return self.xi_value

    def x(self, n: float) -> float:
        return self.eps * n if self.x_of_n is None else float(self.x_of_n(n))

    def y(self, t: float) -> float:
        if math.isfinite(self.xi):
            return self.gamma * t
        return (1 + self.omega) * self.x((1 + self.omega) * t)

    def gamma_min(self, W: WeightSequence) -> float:
        """Lower bound ``rho_c / q + xi`` that ``gamma`` must exceed."""
        return W.rho_c / W.q + self.xi

    def validate(self, W: WeightSequence) -> None:
        if math.isfinite(self.xi) and not self.gamma > self.gamma_min(W):
            raise DomainError(f"gamma={self.gamma} must exceed {self.gamma_min(W):.6g}")


@dataclass(frozen=True, eq=False)
class FluctuationSample:
    raw: np.ndarray
    centering: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("scale must be positive")

    @property
    def standardized(self) -> np.ndarray:
        return (np.asarray(self.raw, float) - self.centering) / self.scale


# ---------------------------------------------------------------------------
# condensation experiment


@dataclass(frozen=True, eq=False)
class CondensationResult:
    """Summary of exact draws at fixed ``(V, M)``.

    ``bulk_hist[r]`` pools the sizes of all clusters except one largest
    cluster per draw; ``bulk_sizes[i]`` is the number of such clusters
    in draw ``i``.
    """

    V: float
    M: int
    K: np.ndarray
    marginals: np.ndarray
    bulk_hist: np.ndarray
    bulk_sizes: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return len(self.K)


def _summarize_counts(counts: np.ndarray, k: int, M: int):
    n = len(counts)
    nz = counts > 0
    K = np.where(nz.any(1), M - np.argmax(nz[:, ::-1], axis=1), 0)
    marg = np.zeros((n, k), dtype=np.int64)
    kk = min(k, counts.shape[1])
    marg[:, :kk] = counts[:, :kk]
    hist = np.zeros(M + 1, dtype=np.int64)
    hist[1:] = counts.sum(0)
    np.subtract.at(hist, K[K > 0], 1)
    sizes = counts.sum(1).astype(np.int64) - (K > 0)
    return K.astype(np.int64), marg, hist, sizes


def _summarize_configs(configs, k: int, M: int):
    n = len(configs)
    K = np.zeros(n, dtype=np.int64)
    marg = np.zeros((n, k), dtype=np.int64)
    hist = np.zeros(M + 1, dtype=np.int64)
    sizes = np.zeros(n, dtype=np.int64)
    for i, c in enumerate(configs):
        K[i] = c.largest
        for r, cnt in c.pairs:
            hist[r] += cnt
            if r <= k:
                marg[i, r - 1] = cnt
        if K[i]:
            hist[K[i]] -= 1
        sizes[i] = c.n_clusters - (K[i] > 0)
    return K, marg, hist, sizes


def make_sampler(W: WeightSequence, V: float, M: int):
    """Sequential tables when they fit, the split sampler otherwise."""
    if M <= SEQUENTIAL_MAX_MASS and M <= 2000:
        return SequentialSampler(W, V, M)
    return SplitSampler(W, V, M)


def _chunk(args):
    W, V, M, k, seed, stream, n, sampler = args
    if sampler is None:
        sampler = make_sampler(W, V, M)
    rng = ReplicaRng(seed, stream)
    if isinstance(sampler, SequentialSampler):
        return _summarize_counts(sampler.draw_counts(rng, n), k, M)
    return _summarize_configs(sampler.draw(rng, n), k, M)


def condensation_experiment(W: WeightSequence, V: float, M: int, n_samples: int, seed: int,
                            k: int = 3, policy: ThresholdPolicy | None = None,
                            workers: int = 1, sampler=None) -> CondensationResult:
    """``n_samples`` exact draws from the invariant measure with mass ``M``.

    Draws come in chunks of ``CHUNK``; chunk ``i`` uses stream ``i`` of
    ``seed``, so the result does not depend on ``workers``.
    """
    if n_samples < 1:
        raise DomainError("need at least one sample")
    policy = policy or ThresholdPolicy()
    if not W.oracle_only and math.isfinite(W.q):
        need = V * W.rho_c + policy.x(W.q * V)
        if M < need:
            warnings.warn(f"M={M} is below V rho_c + x(qV) = {need:.1f}", stacklevel=2)
    sizes = [min(CHUNK, n_samples - s) for s in range(0, n_samples, CHUNK)]
    if workers > 1 and len(sizes) > 1:
        jobs = [(W, V, M, k, seed, i, n, None) for i, n in enumerate(sizes)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk, jobs))
    else:
        sampler = sampler or make_sampler(W, V, M)
        parts = [_chunk((W, V, M, k, seed, i, n, sampler)) for i, n in enumerate(sizes)]
    K = np.concatenate([p[0] for p in parts])
    marg = np.concatenate([p[1] for p in parts])
    hist = np.sum([p[2] for p in parts], axis=0)
    bsz = np.concatenate([p[3] for p in parts])
    return CondensationResult(float(V), int(M), K, marg, hist, bsz, int(seed))


# ---------------------------------------------------------------------------
# limit theorems


def _power_law(W: WeightSequence) -> PowerLaw:
    if not isinstance(W, PowerLaw):
        raise RegimeMismatch("fluctuation regimes are defined for power-law weights")
    return W


def fluctuation_regime(W: WeightSequence) -> str:
    """``"gaussian"`` for ``b > 3``, ``"truncated"`` for ``b = 3``, ``"stable"`` for ``2 < b < 3``."""
    b = _power_law(W).b
    if b > 3:
        return "gaussian"
    if b == 3:
        return "truncated"
    if b > 2:
        return "stable"
    raise RegimeMismatch(f"b={b} has infinite rho_c; no condensation")


def lln_test(W: WeightSequence, res: CondensationResult, tol: float = 0.05) -> Report:
    dev = (res.K - (res.M - W.rho_c * res.V)) / res.V
    stat = float(abs(dev.mean()))
    return Report("lln", {"V": res.V, "M": res.M, "n": res.n, "tol": tol}, stat, None,
                  _verdict(stat < tol), {"mean": float(dev.mean()), "sd": float(dev.std())})


def marginal_clt_test(W: WeightSequence, res: CondensationResult, seed: int = 0,
                      corr_tol: float = 0.05) -> Report:
    """KS of ``(eta_1 - V Q_1 phi_c) / sqrt(V)`` against ``N(0, Q_1 phi_c)`` plus ``corr(eta_1, eta_2)``."""
    c1 = float(W.tilted(W.phi_c, 1)[0])
    x = (dequantize(res.marginals[:, 0], ReplicaRng(seed, 1)) - res.V * c1) / math.sqrt(res.V)
    stat, p = ks_normal(x, c1)
    corr = float(np.corrcoef(res.marginals[:, 0], res.marginals[:, 1])[0, 1])
    ok = p > ALPHA and abs(corr) < corr_tol
    return Report("marginal_clt", {"V": res.V, "M": res.M, "n": res.n}, stat, p, _verdict(ok),
                  {"variance": c1, "corr_12": corr, "mean": float(x.mean())})


def gaussian_fluctuation_test(W: WeightSequence, res: CondensationResult, seed: int = 0) -> Report:
    """KS of ``(K - (M - rho_c V)) / sqrt(V)`` against ``N(0, sum r^2 Q_r phi_c^r)``."""
    if fluctuation_regime(W) != "gaussian":
        raise RegimeMismatch("the Gaussian regime needs b > 3")
    fs = FluctuationSample(dequantize(res.K, ReplicaRng(seed, 2)), res.M - W.rho_c * res.V,
                           math.sqrt(res.V))
    stat, p = ks_normal(fs.standardized, W.sigma2)
    z = fs.standardized
    return Report("gaussian_fluctuation", {"V": res.V, "M": res.M, "n": res.n, "b": W.b}, stat, p,
                  _verdict(p > ALPHA),
                  {"variance": W.sigma2, "mean": float(z.mean()), "sample_variance": float(z.var())})


def reference_stable_sample(W: WeightSequence, V: float, n: int, rng,
                            m_max: int | None = None) -> np.ndarray:
    """``(rho_c V - sum_{i <= N(qV)} X_i) / a_V`` from unconditioned compound draws.

    Jumps beyond ``m_max`` are recorded as ``m_max + 1``; the default
    ``m_max`` puts the lost tail far outside the compared range.
    """
    a_V = compute_a_V(W, V)
    m_max = m_max or int(100 * V)
    x = jump_pmf_X(W, m_max)
    gen = rng.generator() if isinstance(rng, ReplicaRng) else np.random.default_rng(rng)
    totals = sample_compound(W.q * V, x, gen, size=n)
    return (W.rho_c * V - dequantize(totals, gen.integers(2**63))) / a_V


def stable_fluctuation_test(W: WeightSequence, res: CondensationResult, seed: int = 0) -> Report:
    """Two-sample KS of ``(K - (M - rho_c V)) / a_V`` against the unconditioned reference."""
    if fluctuation_regime(W) != "stable":
        raise RegimeMismatch("the stable regime needs 2 < b < 3")
    V = res.V
    a_V = compute_a_V(W, V)
    fs = FluctuationSample(dequantize(res.K, ReplicaRng(seed, 2)), res.M - W.rho_c * V, a_V)
    ref = reference_stable_sample(W, V, res.n, ReplicaRng(seed, 3))
    stat, p = ks_two_sample(fs.standardized, ref)
    a_4V = compute_a_V(W, 4 * V)
    alpha = W.b - 1
    growth = a_4V / a_V
    tail = float(np.mean(np.abs(ref) > 3))
    return Report("stable_fluctuation", {"V": V, "M": res.M, "n": res.n, "b": W.b}, stat, p,
                  _verdict(p > ALPHA),
                  {"a_V": a_V, "a_4V": a_4V, "growth_ratio": growth,
                   "growth_target": 4 ** (1 / alpha),
                   "reference_tail_3": tail, "gaussian_tail_3": 2 * stats.norm.sf(3)})


def truncation_level(V: float) -> int:
    """``C_V = ceil(sqrt(V) log V)``."""
    return math.ceil(math.sqrt(V) * math.log(V))


def truncated_gaussian_test(W: WeightSequence, res: CondensationResult, seed: int = 0) -> Report:
    """KS of ``(K - M + V sum_{j <= C_V} j Q_j phi_c^j) / B_V`` against ``N(0, 1)``."""
    if fluctuation_regime(W) != "truncated":
        raise RegimeMismatch("the truncated regime needs b = 3")
    V = res.V
    C = truncation_level(V)
    c = W.tilted(W.phi_c, C)
    j = np.arange(1, C + 1)
    mean_C = float(np.dot(j, c))
    B = math.sqrt(V * float(np.dot(j * j, c)))
    fs = FluctuationSample(dequantize(res.K, ReplicaRng(seed, 2)), res.M - V * mean_C, B)
    stat, p = ks_normal(fs.standardized, 1.0)
    tail = W.moment(0, W.phi_c, C + 1).value / W.q
    return Report("truncated_gaussian", {"V": V, "M": res.M, "n": res.n, "b": W.b, "C_V": C}, stat,
                  p, _verdict(p > ALPHA),
                  {"B_V": B, "V_tail_prob": V * tail, "B2_over_C2": B * B / (C * C),
                   "B2_over_VlogV": B * B / (V * math.log(V))})


def fluctuation_test(W: WeightSequence, res: CondensationResult, seed: int = 0) -> Report:
    regime = fluctuation_regime(W)
    if regime == "gaussian":
        return gaussian_fluctuation_test(W, res, seed)
    if regime == "stable":
        return stable_fluctuation_test(W, res, seed)
    return truncated_gaussian_test(W, res, seed)


def bulk_equivalence_test(W: WeightSequence, res: CondensationResult, tol: float = 0.02,
                          cutoff: int | None = None) -> Report:
    """TV distance between the pooled bulk sizes and the law of ``X``.

    Sizes above ``cutoff`` are compared as one tail bucket.
    """
    cutoff = min(res.M, cutoff or res.M)
    hist = res.bulk_hist.astype(float)
    total = hist.sum()
    emp = np.concatenate([hist[1:cutoff + 1], [hist[cutoff + 1:].sum()]]) / total
    x = jump_pmf_X(W, cutoff)
    ref = np.concatenate([x.probs[1:], [x.tail_mass]])
    tv = tv_distance(emp, ref)
    sizes = res.bulk_sizes
    ratio = float(sizes.mean() / sizes.var()) if sizes.var() > 0 else math.inf
    return Report("bulk_equivalence", {"V": res.V, "M": res.M, "n": res.n, "cutoff": cutoff},
                  tv, None, _verdict(tv < tol),
                  {"pooled_sizes": int(total), "count_mean": float(sizes.mean()),
                   "count_mean_over_var": ratio, "qV": W.q * res.V})


# ---------------------------------------------------------------------------
# exact diagnostics


def _self_convolution(p: np.ndarray) -> np.ndarray:
    n = len(p)
    return np.convolve(p, p)[:n]


def jump_log_pmf(W: WeightSequence, m_max: int, phi: float | None = None) -> np.ndarray:
    """``log P(J = k)`` for ``k = 0..m_max`` with ``P(J = k) ∝ Q_k phi^k``.

    ``phi`` defaults to ``phi_c`` (the law of ``X``) when ``q`` is finite
    and to ``1`` (the law of ``Y``) otherwise.  Computed from the log
    weights, so light tails do not underflow.
    """
    if phi is None:
        phi = W.phi_c if not W.oracle_only and math.isfinite(W.q) else 1.0
    k = np.arange(1, m_max + 1)
    out = np.full(m_max + 1, -np.inf)
    out[1:] = W.log_weight(k) + k * math.log(phi) - math.log(W.moment(0, phi).value)
    return out


def subexponential_ratio(jump, m_values=None) -> np.ndarray:
    """``P(X_1 + X_2 = m) / (2 P(X = m))`` for ``m = 2..m_max`` (or the given ``m``).

    ``jump`` is a ``Pmf`` or an array of log-probabilities.  The ratio is
    unchanged by the tilt ``p_k -> p_k e^{theta k}``; tilting so both ends
    of the pmf carry equal weight keeps light tails in range.
    """
    logp = jump.log_pmf() if isinstance(jump, Pmf) else np.asarray(jump, float)
    n = len(logp) - 1
    theta = (logp[1] - logp[n]) / (n - 1) if n > 1 and np.isfinite(logp[n]) else 0.0
    logq = logp + theta * np.arange(n + 1)
    shift = float(np.max(logq[np.isfinite(logq)]))
    p = np.exp(logq - shift)
    conv = _self_convolution(p)
    m = np.arange(2, n + 1) if m_values is None else np.asarray(m_values, int)
    with np.errstate(divide="ignore", invalid="ignore"):
        return conv[m] / (2 * p[m]) * math.exp(shift)


def intermediate_variation(jump: Pmf, m: int, eps: float) -> tuple:
    """``(inf, sup)`` of ``P(X = k) / P(X = m)`` over ``|k / m - 1| < eps``."""
    p = jump.pmf()
    lo = max(1, math.floor(m * (1 - eps)) + 1)
    hi = math.ceil(m * (1 + eps)) - 1
    if hi >= len(p):
        raise DomainError(f"pmf must extend to {hi}")
    with np.errstate(divide="ignore", invalid="ignore"):
        r = p[lo:hi + 1] / p[m]
    return float(r.min()), float(r.max())


def n_fold_ratio(jump: Pmf, n: int, policy: ThresholdPolicy) -> tuple:
    """``P(X_1 + .. + X_n = m) / (n P(X = ceil(m - n EX)))`` for ``n EX + x(n) <= m <= m_max``."""
    p = jump.pmf()
    m_max = len(p) - 1
    mean = jump.mean()
    conv = p.copy()
    for _ in range(n - 1):
        conv = np.convolve(conv, p)[:m_max + 1]
    start = math.ceil(n * mean + policy.x(n))
    m = np.arange(start, m_max + 1)
    idx = np.ceil(m - n * mean).astype(int)
    with np.errstate(divide="ignore", invalid="ignore"):
        return m, conv[m] / (n * p[idx])


def assumption_diagnostics(W_or_jump, m_max: int = 2000, eps: float = 0.01,
                           m_intermediate: int | None = None, n_grid=(2, 4, 8),
                           policy: ThresholdPolicy | None = None, tol: float = 0.05) -> Report:
    """Finite-range evidence for the three heavy-tail conditions on ``X``.

    Weights with infinite ``q`` are checked on the untilted jumps ``Y``.

    (I) self-convolution ratio at ``m_max``; (III) pmf ratios in a
    relative window around ``m_intermediate``; (II) ``n``-fold ratios for
    ``n`` in ``n_grid``.  The verdict reflects (I) only.
    """
    policy = policy or ThresholdPolicy()
    m_int = m_intermediate or m_max
    reach = max(m_max, math.ceil(m_int * (1 + eps)) + 1)
    if isinstance(W_or_jump, Pmf):
        jump = W_or_jump
        ratios = subexponential_ratio(jump)
        params = {"jump": "supplied", "m_max": m_max}
    else:
        log_jump = jump_log_pmf(W_or_jump, reach)
        jump = Pmf(np.exp(log_jump))
        ratios = subexponential_ratio(log_jump[:m_max + 1])
        params = {"weights": W_or_jump.to_config(), "m_max": m_max}
    r_top = float(ratios[m_max - 2])
    details = {"subexponential_ratio": r_top,
               "subexponential_ratio_curve": {int(m): float(ratios[m - 2])
                                              for m in (10, 100, 1000, m_max) if m <= m_max}}
    if m_int < len(jump.probs) - 1:
        try:
            details["intermediate_inf_sup"] = intermediate_variation(jump, m_int, eps)
        except DomainError:
            pass
    fold = {}
    small = Pmf(jump.probs[:m_max + 1], tail_mass=jump.tail_mass + float(jump.probs[m_max + 1:].sum()))
    for n in n_grid:
        m, r = n_fold_ratio(small, n, policy)
        r = r[np.isfinite(r)]
        if len(r):
            fold[str(n)] = {"min": float(r.min()), "max": float(r.max())}
    details["n_fold_ratio"] = fold
    params.update({"eps": eps, "tol": tol})
    return Report("assumption_diagnostics", params, abs(r_top - 1), None,
                  _verdict(abs(r_top - 1) < tol), details)


def local_limit_check(W: WeightSequence, V: float, policy: ThresholdPolicy | None = None,
                      width: int = 50, band: float = 0.1) -> Report:
    """Exact ratios on ``m in [rho_c V + y(qV), rho_c V + y(qV) + width]``."""
    policy = policy or ThresholdPolicy()
    policy.validate(W)
    start = math.ceil(W.rho_c * V + policy.y(W.q * V))
    m = np.arange(start, start + width + 1)
    r = local_limit_ratio(W, V, m)
    dev = float(np.max(np.abs(r - 1)))
    return Report("local_limit", {"V": V, "gamma": policy.gamma, "start": start, "width": width},
                  dev, None, _verdict(dev < band),
                  {"min": float(r.min()), "max": float(r.max())})


def _richardson(V, values) -> float:
    """Constant term of a least-squares fit ``a + b log(V)/V + c/V``."""
    V = np.asarray(V, float)
    A = np.column_stack([np.ones_like(V), np.log(V) / V, 1 / V])
    if len(V) < 3:
        A = A[:, :len(V)]
    coef = np.linalg.lstsq(A, np.asarray(values, float), rcond=None)[0]
    return float(coef[0])


def free_energy_check(W: WeightSequence, rho: float, V_grid, rel_tol: float = 0.02) -> Report:
    """``-(1/V) log P(sum_{N(wV)} Y = ceil(rho V))`` against ``I_1(rho)``."""
    target = I_j(W, 1, rho)
    rows = []
    for V in V_grid:
        M = math.ceil(rho * V)
        rows.append(-log_prob_total(W, V, M, 1.0) / V)
    last = rows[-1]
    rel = abs(last - target) / abs(target) if target else abs(last)
    return Report("free_energy", {"rho": rho, "V_grid": list(V_grid)}, rel, None,
                  _verdict(rel < rel_tol),
                  {"values": rows, "target": target, "extrapolated": _richardson(V_grid, rows)})


def conditional_log_prob(W: WeightSequence, V: float, M: int, counts) -> float:
    """``log P(eta_r = counts[r-1] for r <= j | mass M)``, computed exactly."""
    counts = np.asarray(counts, dtype=np.int64)
    j = len(counts)
    head = int(np.dot(np.arange(1, j + 1), counts))
    if head > M:
        return -math.inf
    phi = default_tilt(W, V, M)
    rates = tilted_rates(W, V, M, phi)
    log_head = float(sum(log_poisson(rates[r], counts[r]) for r in range(j)))
    rest = rates.copy()
    rest[:j] = 0.0
    log_rest = compound_from_rates(rest, M).log_at(M - head)
    log_all = compound_from_rates(rates, M).log_at(M)
    return log_head + log_rest - log_all


def empirical_rate_check(W: WeightSequence, rho: float, ell_head, V_grid,
                         rel_tol: float = 0.05) -> Report:
    """``-(1/V) log P(eta_r = floor(V ell_r), r <= j | mass ceil(rho V))`` against ``J_{rho,j}``."""
    ell = np.asarray(ell_head, dtype=float)
    target = J_rho_j(W, rho, ell, len(ell))
    rows = []
    for V in V_grid:
        M = math.ceil(rho * V)
        counts = np.floor(V * ell).astype(np.int64)
        rows.append(-conditional_log_prob(W, V, M, counts) / V)
    last = rows[-1]
    rel = abs(last - target) / abs(target) if target else abs(last)
    return Report("empirical_rate", {"rho": rho, "ell": ell.tolist(), "V_grid": list(V_grid)}, rel,
                  None, _verdict(rel < rel_tol),
                  {"values": rows, "target": target, "extrapolated": _richardson(V_grid, rows)})
