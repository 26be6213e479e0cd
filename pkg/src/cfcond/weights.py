"""Weight sequences Q_r and the series built from them.

A weight sequence fixes the invariant measure of the coagulation and
fragmentation process.  Everything downstream needs the generating
series

    F_j(phi) = sum_{r >= j} r Q_r phi^r,

its inverse in ``phi``, and a handful of related moments.  Series are
evaluated with an explicit bound on the discarded remainder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.special import exp1, gamma, gammaincc, zeta

from .errors import DomainError, NonConvergence
from .pmf import Pmf

DEFAULT_TOL = 1e-12
_CHUNK = 1 << 15
_SHORT_CHUNK = 1 << 10
_EPS = np.finfo(float).eps


class SeriesValue(NamedTuple):
    value: float
    truncation_bound: float


def _upper_gamma(a: float, z: float) -> float:
    """Upper incomplete gamma function for any real ``a`` and ``z > 0``."""
    if a > 0:
        return float(gammaincc(a, z) * gamma(a))
    if a == 0:
        return float(exp1(z))
    return (_upper_gamma(a + 1, z) - math.exp(a * math.log(z) - z)) / a


def _em_tail(s: float, kappa: float, start: int) -> SeriesValue:
    """sum_{r >= start} r^(-s) exp(-kappa r) by Euler-Maclaurin."""
    a = float(start)
    f = math.exp(-s * math.log(a) - kappa * a)
    g = s / a + kappa
    integral = kappa ** (s - 1) * _upper_gamma(1 - s, kappa * a)
    f3 = -(g**3 + 3 * g * s / a**2 + 2 * s / a**3) * f
    value = integral + f / 2 + g * f / 12 + f3 / 720
    bound = 4 * f * (g + abs(s) / a) ** 5 / 30240 + 8 * _EPS * abs(value)
    return SeriesValue(value, bound)


def power_series(s: float, x: float, j: int = 1, tol: float = DEFAULT_TOL) -> SeriesValue:
    """sum_{r >= j} r^(-s) x^r for ``0 <= x <= 1``."""
    if x < 0 or x > 1:
        raise DomainError(f"power_series needs 0 <= x <= 1, got {x}")
    if x == 0.0:
        return SeriesValue(0.0, 0.0)
    if x == 1.0:
        if s <= 1:
            return SeriesValue(math.inf, 0.0)
        v = float(zeta(s, j))
        return SeriesValue(v, 16 * _EPS * v)
    log_x = math.log(x)
    for size in (_SHORT_CHUNK, _CHUNK):
        r = np.arange(j, j + size, dtype=float)
        terms = np.exp(-s * np.log(r) + r * log_x)
        # remainder after index n is at most t_{n+1} / (1 - theta_{n+1})
        theta = x * (1.0 + 1.0 / r) ** max(0.0, -s)
        with np.errstate(divide="ignore"):
            rem = np.where(theta < 1, terms / (1 - theta), np.inf)
        ok = np.nonzero(rem[1:] <= tol)[0]
        if len(ok):
            n = ok[0] + 1
            value = float(np.sum(terms[:n]))
            return SeriesValue(value, float(rem[n]) + 8 * _EPS * value)
    head = float(np.sum(terms))
    tail = _em_tail(s, -log_x, j + _CHUNK)
    value = head + tail.value
    return SeriesValue(value, tail.truncation_bound + 8 * _EPS * value)


def _geometric_moment(k: int, y: float, j: int) -> float:
    """sum_{r >= j} r^k y^r in closed form for k in {0, 1, 2}."""
    if y >= 1:
        return math.inf
    if y == 0:
        return 0.0
    yj = y**j
    d = 1 - y
    if k == 0:
        return yj / d
    if k == 1:
        return yj * (j - (j - 1) * y) / d**2
    if k == 2:
        return yj * (y * (1 + y) / d**3 + 2 * j * y / d**2 + j * j / d)
    raise DomainError(f"moment order {k} not supported")


class WeightSequence:
    """Base class for weight sequences ``Q_1, Q_2, ...``.

    Subclasses provide ``phi_c`` (radius of convergence of the series),
    ``log_weight`` and ``moment``.
    """

    kind = "abstract"

    @property
    def phi_c(self) -> float:
        raise NotImplementedError

    @property
    def oracle_only(self) -> bool:
        """True when only brute-force oracles make sense (no finite radius)."""
        return math.isinf(self.phi_c)

    def log_weight(self, r) -> np.ndarray:
        raise NotImplementedError

    def weights(self, n: int) -> np.ndarray:
        """``Q_1 .. Q_n`` as an array indexed from zero."""
        return np.exp(self.log_weight(np.arange(1, n + 1)))

    def tilted(self, phi: float, n: int) -> np.ndarray:
        """``Q_r phi^r`` for ``r = 1..n``, computed in log space."""
        r = np.arange(1, n + 1)
        if phi == 0:
            return np.zeros(n)
        return np.exp(self.log_weight(r) + r * math.log(phi))

    def moment(self, k: int, phi: float, j: int = 1, tol: float = DEFAULT_TOL) -> SeriesValue:
        """``sum_{r >= j} r^k Q_r phi^r`` with a truncation bound."""
        raise NotImplementedError

    @cached_property
    def w(self) -> float:
        return self.moment(0, 1.0).value

    @cached_property
    def q(self) -> float:
        return self.moment(0, self.phi_c).value

    @cached_property
    def rho_c(self) -> float:
        return self.moment(1, self.phi_c).value

    @cached_property
    def sigma2(self) -> float:
        """Second moment sum r^2 Q_r phi_c^r."""
        return self.moment(2, self.phi_c).value

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PowerLaw(WeightSequence):
    """``Q_r = r^(-b) phi_c^(-r)``; the tilted weights decay like ``r^(-b)``."""

    b: float
    phi_c_value: float

    kind = "power_law"

    def __post_init__(self):
        if not self.b > 1:
            raise DomainError(f"power law exponent must exceed 1, got {self.b}")
        if not self.phi_c_value > 1:
            raise DomainError(f"phi_c must exceed 1, got {self.phi_c_value}")

    @property
    def phi_c(self) -> float:
        return float(self.phi_c_value)

    def log_weight(self, r):
        r = np.asarray(r, dtype=float)
        return -self.b * np.log(r) - r * math.log(self.phi_c_value)

    def moment(self, k, phi, j=1, tol=DEFAULT_TOL):
        if phi < 0 or phi > self.phi_c:
            raise DomainError(f"phi={phi} outside [0, phi_c={self.phi_c}]")
        return power_series(self.b - k, phi / self.phi_c, max(j, 1), tol)

    def to_config(self):
        return {"kind": self.kind, "b": self.b, "phi_c": self.phi_c_value}


@dataclass(frozen=True)
class Geometric(WeightSequence):
    """``Q_r = z^r`` with ``0 < z < 1``; the critical density is infinite."""

    z: float

    kind = "geometric"

    def __post_init__(self):
        if not 0 < self.z < 1:
            raise DomainError(f"geometric ratio must lie in (0, 1), got {self.z}")

    @property
    def phi_c(self) -> float:
        return 1.0 / self.z

    def log_weight(self, r):
        return np.asarray(r, dtype=float) * math.log(self.z)

    def moment(self, k, phi, j=1, tol=DEFAULT_TOL):
        if phi < 0 or phi > self.phi_c:
            raise DomainError(f"phi={phi} outside [0, phi_c={self.phi_c}]")
        return SeriesValue(_geometric_moment(k, self.z * phi, max(j, 1)), 0.0)

    def to_config(self):
        return {"kind": self.kind, "z": self.z}


@dataclass(frozen=True)
class Explicit(WeightSequence):
    """Explicit head ``Q_1..Q_R`` optionally continued by another family.

    Without a tail the weights vanish beyond ``R``; the series are then
    polynomials, ``phi_c`` is infinite and the sequence is meant for the
    brute-force oracles.
    """

    head: tuple
    tail: WeightSequence | None = None

    kind = "explicit"

    def __post_init__(self):
        head = tuple(float(h) for h in self.head)
        if not head:
            raise DomainError("explicit weights need a non-empty head")
        if any(h < 0 or not math.isfinite(h) for h in head):
            raise DomainError("explicit weights must be finite and non-negative")
        if sum(head) == 0 and self.tail is None:
            raise DomainError("explicit weights are all zero")
        object.__setattr__(self, "head", head)

    @property
    def phi_c(self) -> float:
        return math.inf if self.tail is None else self.tail.phi_c

    def log_weight(self, r):
        r = np.asarray(r, dtype=np.int64)
        out = np.full(r.shape, -np.inf)
        head = np.asarray(self.head)
        inside = (r >= 1) & (r <= len(head))
        with np.errstate(divide="ignore"):
            out[inside] = np.log(head[r[inside] - 1])
        if self.tail is not None:
            beyond = r > len(head)
            out[beyond] = self.tail.log_weight(r[beyond])
        return out

    def moment(self, k, phi, j=1, tol=DEFAULT_TOL):
        if phi < 0 or phi > self.phi_c:
            raise DomainError(f"phi={phi} outside [0, phi_c={self.phi_c}]")
        n = len(self.head)
        j = max(j, 1)
        value = 0.0
        for r in range(j, n + 1):
            value += r**k * self.head[r - 1] * phi**r
        bound = 4 * _EPS * value
        if self.tail is not None:
            t = self.tail.moment(k, phi, max(j, n + 1), tol)
            value += t.value
            bound += t.truncation_bound
        return SeriesValue(value, bound)

    def to_config(self):
        cfg = {"kind": self.kind, "head": list(self.head)}
        if self.tail is not None:
            tail = self.tail.to_config()
            cfg["tail"] = tail.pop("kind")
            cfg.update(tail)
        return cfg


_KIND_ALIASES = {
    "power_law": "power_law",
    "powerlaw": "power_law",
    "power": "power_law",
    "geometric": "geometric",
    "geom": "geometric",
    "explicit": "explicit",
}


def _family(kind: str, cfg: dict) -> WeightSequence:
    kind = _KIND_ALIASES.get(str(kind).lower().replace("-", "_"))
    if kind == "power_law":
        try:
            return PowerLaw(float(cfg["b"]), float(cfg["phi_c"]))
        except KeyError as exc:
            raise DomainError(f"power law weights need key {exc}") from None
    if kind == "geometric":
        if "z" not in cfg:
            raise DomainError("geometric weights need key 'z'")
        return Geometric(float(cfg["z"]))
    raise DomainError(f"unknown weight family {kind!r}")


def weights_from_config(cfg: dict) -> WeightSequence:
    """Build a weight sequence from a flat mapping.

    Recognised keys: ``kind`` (power_law, geometric, explicit), ``b``,
    ``phi_c``, ``z``, ``head`` (list or comma separated string) and, for
    explicit heads continued by a family, ``tail``.
    """
    if "kind" not in cfg or cfg["kind"] in (None, ""):
        raise DomainError("weight configuration lacks 'kind'")
    kind = _KIND_ALIASES.get(str(cfg["kind"]).lower().replace("-", "_"))
    if kind is None:
        raise DomainError(f"unknown weight family {cfg['kind']!r}")
    if kind != "explicit":
        return _family(kind, cfg)
    head = cfg.get("head")
    if head is None:
        raise DomainError("explicit weights need key 'head'")
    if isinstance(head, str):
        head = [float(h) for h in head.replace(",", " ").split()]
    tail = cfg.get("tail")
    return Explicit(tuple(head), _family(tail, cfg) if tail else None)


def eval_F(W: WeightSequence, phi: float, j: int = 1, tol: float = DEFAULT_TOL) -> SeriesValue:
    """``F_j(phi) = sum_{r >= j} r Q_r phi^r``."""
    if j < 1:
        raise DomainError(f"j must be at least 1, got {j}")
    return W.moment(1, phi, j, tol)


def critical_density(W: WeightSequence, j: int = 1) -> float:
    """``F_j(phi_c)``, possibly infinite."""
    if math.isinf(W.phi_c):
        return math.inf
    return eval_F(W, W.phi_c, j).value


def phi_of_rho(W: WeightSequence, x: float, j: int = 1, tol: float = DEFAULT_TOL) -> float:
    """Generalised inverse of ``F_j``: the root of ``F_j(phi) = x``, capped at ``phi_c``."""
    if not x >= 0:
        raise DomainError(f"density must be non-negative, got {x}")
    if x == 0:
        return 0.0
    if x >= critical_density(W, j):
        return W.phi_c
    lo, hi = 0.0, W.phi_c
    if math.isinf(hi):
        hi = 1.0
        while eval_F(W, hi, j).value < x:
            hi *= 2
            if hi > 1e300:
                raise NonConvergence("could not bracket the root")
    target = tol * max(1.0, x)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return mid
        f = eval_F(W, mid, j, tol=min(tol, target) / 4).value
        if abs(f - x) <= target and hi - lo < 1e-15 * hi:
            return mid
        if f < x:
            lo = mid
        else:
            hi = mid
    raise NonConvergence(f"bisection for F_{j}(phi) = {x} did not converge")


def _tilted_pmf(W: WeightSequence, phi: float, m_max: int) -> Pmf:
    if m_max < 1:
        raise DomainError("m_max must be at least 1")
    norm = W.moment(0, phi).value
    if not math.isfinite(norm) or norm <= 0:
        raise DomainError(f"jump law at phi={phi} is not normalisable")
    probs = np.zeros(m_max + 1)
    probs[1:] = W.tilted(phi, m_max) / norm
    tail = 0.0
    if not math.isinf(W.phi_c) or len(getattr(W, "head", ())) > m_max:
        tail = W.moment(0, phi, m_max + 1).value / norm
    return Pmf(probs, tail_mass=tail)


def jump_pmf(W: WeightSequence, phi: float, m_max: int) -> Pmf:
    """Law ``P(r) = Q_r phi^r / sum_s Q_s phi^s`` on ``1..m_max`` with tail mass."""
    return _tilted_pmf(W, phi, m_max)


def jump_pmf_X(W: WeightSequence, m_max: int) -> Pmf:
    """Jump law tilted at the critical point, ``P(X = r) = Q_r phi_c^r / q``."""
    if math.isinf(W.phi_c):
        raise DomainError("X is undefined when phi_c is infinite")
    return _tilted_pmf(W, W.phi_c, m_max)


def jump_pmf_Y(W: WeightSequence, m_max: int) -> Pmf:
    """Untilted jump law ``P(Y = r) = Q_r / w``."""
    return _tilted_pmf(W, 1.0, m_max)
