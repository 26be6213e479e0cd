"""Exception types raised across the package."""


class CfcondError(Exception):
    """Base class for all package errors."""


class DomainError(CfcondError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class NonConvergence(CfcondError, RuntimeError):
    """An iterative solver failed to reach its tolerance."""


class CapExceeded(CfcondError, ValueError):
    """A brute-force routine was asked for a size above its cap."""


class AcceptanceTooLow(CfcondError, RuntimeError):
    """A rejection sampler would accept too rarely to be practical."""


class NumericalDegeneracy(CfcondError, FloatingPointError):
    """A probability needed as a denominator underflowed to zero."""


class EmptyInput(CfcondError, ValueError):
    """A statistic was requested from an empty sample."""


class StepSizeRejected(CfcondError, RuntimeError):
    """An integrator step failed its step-halving consistency check."""


class RegimeMismatch(CfcondError, ValueError):
    """Parameters do not match the regime an experiment requires."""
