"""Reversible coagulation-fragmentation: exact measures, samplers, dynamics and condensation statistics."""

from .errors import (
    AcceptanceTooLow,
    CapExceeded,
    CfcondError,
    DomainError,
    EmptyInput,
    NonConvergence,
    NumericalDegeneracy,
    RegimeMismatch,
    StepSizeRejected,
)
from .oracle import Configuration, enumerate_partitions, pi_exact
from .pmf import Pmf
from .sampler import (
    ReplicaRng,
    RejectionSampler,
    SequentialSampler,
    SplitSampler,
    bulk,
    largest_particle,
    sample_pi_rejection,
    sample_pi_sequential,
    sample_pi_split,
)
from .weights import Explicit, Geometric, PowerLaw, WeightSequence, weights_from_config

__version__ = "0.1.0"
