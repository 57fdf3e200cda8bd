"""Decentralized z-anonymity for hierarchical sensor networks.

Gateways arranged in a ring count value occurrences with a masked counting
Bloom filter, enforce the z threshold at a rotating coordinator, and then
hand out publication budgets around the ring, so the central entity only
ever sees tuples that are z-anonymous across the whole network.
"""

from .anonymizer import (
    BucketConfig,
    CentralizedZAnonymizer,
    MeasurementTuple,
    WindowLog,
    bucketize,
    publishable_count,
)
from .metrics import (
    MetricsReport,
    collusion_monte_carlo,
    collusion_probability,
    coordination_bytes,
    emit_csv,
    publication_ratio,
    read_csv,
)
from .securesum import PerturbationVector, mask, sample_perturbation, unmask
from .simnet import ConfigError, ScenarioConfig, build_topology, run_scenario
from .sketch import CountingFilter, ExactCounter, FilterParams, size_parameters

__version__ = "0.1.0"
