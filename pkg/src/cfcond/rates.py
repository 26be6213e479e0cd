"""Large-deviation rate functions for the empirical cluster densities.

Densities ``ell = (ell_1, ell_2, ...)`` are passed as arrays holding
``ell_1 .. ell_R``; entries beyond ``R`` are taken to be zero.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import xlogy

from .errors import DomainError
from .weights import WeightSequence, phi_of_rho

# densities whose mass exceeds rho by less than this (relative) count as equal
_MASS_SLACK = 1e-10


def _as_density(ell) -> np.ndarray:
    ell = np.atleast_1d(np.asarray(ell, dtype=float))
    if ell.ndim != 1:
        raise DomainError("densities must be one-dimensional")
    if np.any(ell < 0) or not np.all(np.isfinite(ell)):
        raise DomainError("densities must be finite and non-negative")
    return ell


def relative_entropy(ell, c) -> float:
    """``H(ell | c) = sum_r ell_r log(ell_r / c_r) - ell_r + c_r`` with ``0 log 0 = 0``."""
    ell = _as_density(ell)
    c = np.asarray(c, dtype=float)
    if c.shape != ell.shape:
        raise DomainError("ell and c must have the same length")
    if np.any((c == 0) & (ell > 0)):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = xlogy(ell, ell) - xlogy(ell, np.where(c > 0, c, 1.0)) - ell + c
    return float(np.sum(terms))


def mass(ell) -> float:
    """``sum_r r ell_r``."""
    ell = _as_density(ell)
    return float(np.dot(np.arange(1, len(ell) + 1), ell))


def equilibrium_density(W: WeightSequence, rho: float, n: int) -> np.ndarray:
    """``c_r^rho = Q_r phi(rho)^r`` for ``r = 1..n``."""
    return W.tilted(phi_of_rho(W, rho), n)


def _entropy_to_tilted(W: WeightSequence, ell: np.ndarray, phi: float, start: int = 1) -> float:
    """``sum_{r >= start} H(ell_r | Q_r phi^r)`` where ``ell`` holds ``ell_1..ell_R``."""
    n = len(ell)
    if start > n:
        return W.moment(0, phi, start).value
    c = W.tilted(phi, n)[start - 1:]
    head = relative_entropy(ell[start - 1:], c)
    return head + W.moment(0, phi, n + 1).value


def J_rho(W: WeightSequence, rho: float, ell) -> float:
    """Rate function of the empirical densities at total density ``rho``.

    ``J(ell) = H(ell | c^rho) - (rho - sum r ell_r) log(phi(rho) / phi_c)``
    when the mass of ``ell`` does not exceed ``rho``, and ``+inf`` otherwise.
    """
    if W.oracle_only:
        raise DomainError("rate functions need a finite phi_c")
    if rho < 0:
        raise DomainError("density must be non-negative")
    ell = _as_density(ell)
    excess = rho - mass(ell)
    if excess < -_MASS_SLACK * max(1.0, rho):
        return math.inf
    phi = phi_of_rho(W, rho)
    h = _entropy_to_tilted(W, ell, phi)
    if phi >= W.phi_c or excess <= 0:
        return h
    return h - excess * math.log(phi / W.phi_c)


def I_j(W: WeightSequence, j: int, x: float) -> float:
    """``x log phi_j(x) - sum_{r >= j} Q_r phi_j(x)^r + sum_{r >= j} Q_r``."""
    if j < 1:
        raise DomainError("j must be at least 1")
    if x < 0:
        raise DomainError("argument must be non-negative")
    phi = phi_of_rho(W, x, j)
    base = W.moment(0, 1.0, j).value
    if phi == 0:
        return base
    return x * math.log(phi) - W.moment(0, phi, j).value + base


def J_rho_j(W: WeightSequence, rho: float, ell, j: int) -> float:
    """Rate function of the first ``j`` densities.

    ``sum_{r <= j} H(ell_r | Q_r) + I_{j+1}(rho - m_j) - I_1(rho)`` with
    ``m_j = sum_{r <= j} r ell_r``; ``+inf`` if ``m_j > rho``.
    """
    if W.oracle_only:
        raise DomainError("rate functions need a finite phi_c")
    if j < 1:
        raise DomainError("j must be at least 1")
    ell = _as_density(ell)
    head = np.zeros(j)
    k = min(j, len(ell))
    head[:k] = ell[:k]
    rest = rho - mass(head)
    if rest < -_MASS_SLACK * max(1.0, rho):
        return math.inf
    rest = max(rest, 0.0)
    h = relative_entropy(head, W.weights(j))
    return h + I_j(W, j + 1, rest) - I_j(W, 1, rho)


def sup_convergence(W: WeightSequence, rho: float, ell, j_max: int) -> tuple:
    """``([J_{rho,1}, ..., J_{rho,j_max}], J_rho)`` for checking ``sup_j J_{rho,j} = J_rho``."""
    values = [J_rho_j(W, rho, ell, j) for j in range(1, j_max + 1)]
    return np.array(values), J_rho(W, rho, ell)

