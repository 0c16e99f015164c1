"""Coarse community-level alignment of two unaligned graphs from paired
noisy graph signals, via sparse graph-smooth partial least squares."""

from .graphs import (
    Graph,
    Membership,
    SmoothingOperator,
    normalized_laplacian,
    sbm_generate,
    smoothing_operator,
)
from .signals import SignalDataset, SimulationConfig, cross_product, generate_paired_signals
from .solver import (
    FactorPair,
    PenaltySpec,
    SolverConfig,
    l1_penalty,
    no_penalty,
    objective,
    penalty_upper_bound,
    sgpls_greedy,
    sgpls_multirank,
)
from .evaluate import (
    extract_membership,
    match_and_score,
    oracle_tune,
    run_variant_comparison,
)

__version__ = "0.1.0"
