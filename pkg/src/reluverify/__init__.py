"""Hybrid robustness verifier for fully connected ReLU networks.

Certified lower bounds come from interval and backward linear bound
propagation with split constraints; sound upper bounds from an
activation-exact complementarity program solved by an interior-point
method; a branch-and-bound loop tightens both until a verdict or a small
bracket remains. An exact pattern-enumeration oracle provides desk-scale
ground truth.
"""

from .bab import Certificate, Domain, Metrics, compute_metrics, verify
from .bounds import (
    ACTIVE,
    INACTIVE,
    LayerBounds,
    LinearBound,
    SplitSet,
    crown_lower_bound,
    ibp_bounds,
    optimize_relaxation,
)
from .branching import BranchScore, alignment_fraction, base_scores, pattern_aligned_scores, select_domain
from .complementarity import (
    MpccProblem,
    MpccSolution,
    WarmStart,
    build_problem,
    classify_partition,
    make_warm_start,
    region_lp_polish,
    solve,
)
from .network import (
    DimensionError,
    NetworkFormatError,
    NonFiniteError,
    ReluNetwork,
    SchemaError,
    Specification,
    VerificationInstance,
    forward_eval,
    load_instance,
    load_network,
    save_instance,
    save_network,
    spec_value,
)
from .oracle import PatternCapError, PatternRegion, global_min, pgd_upper_bound, solve_pattern_lp

__version__ = "0.1.0"
