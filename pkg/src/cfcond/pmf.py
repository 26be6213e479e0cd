"""Scaled probability mass functions on {0, ..., m_max}."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Pmf:
    """A pmf stored as ``probs * exp(log_scale)`` on ``0..m_max``.

    ``tail_mass`` is the probability of values above ``m_max`` (in
    unscaled units).  Keeping a common log scale lets tables whose
    entries would underflow in double precision still be compared.
    """

    probs: np.ndarray
    tail_mass: float = 0.0
    log_scale: float = 0.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1:
            raise ValueError("probs must be one-dimensional")
        object.__setattr__(self, "probs", probs)

    @property
    def m_max(self) -> int:
        return len(self.probs) - 1

    def log_pmf(self) -> np.ndarray:
        """Natural log of the unscaled pmf (``-inf`` where zero)."""
        with np.errstate(divide="ignore"):
            return np.log(self.probs) + self.log_scale

    def pmf(self) -> np.ndarray:
        """Unscaled pmf values (may underflow)."""
        return np.exp(self.log_pmf())

    def log_at(self, m: int) -> float:
        if m < 0 or m > self.m_max:
            return -np.inf
        p = self.probs[m]
        return float(np.log(p) + self.log_scale) if p > 0 else -np.inf

    def at(self, m: int) -> float:
        return float(np.exp(self.log_at(m)))

    def mean(self) -> float:
        p = self.pmf()
        return float(np.dot(np.arange(len(p)), p) / p.sum())

    def normalized(self) -> np.ndarray:
        """Pmf on ``0..m_max`` renormalised to sum to one."""
        p = self.probs / self.probs.sum()
        return p


def log_poisson(lam: float, k):
    """Log of the Poisson(lam) pmf at ``k`` (array friendly)."""
    from scipy.special import gammaln

    k = np.asarray(k, dtype=float)
    if lam == 0:
        return np.where(k == 0, 0.0, -np.inf)
    return k * np.log(lam) - lam - gammaln(k + 1)
