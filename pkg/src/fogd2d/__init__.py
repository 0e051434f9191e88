"""Toolkit for opportunistic content delivery in cache-enabled D2D networks.

Closed-form performance analytics on Poisson network models, a slot-level
protocol simulator that serves as their statistical oracle, a gradient
projection optimizer for the probabilistic caching placement, and an
experiment harness with deterministic seeded sweeps.
"""

from .analytics import (
    ActivationTable,
    AnalyticalReport,
    AnalyticsError,
    DensityReport,
    QuadratureConfig,
    QuadratureError,
    TruncationError,
    activation_table,
    active_densities,
    assoc_distance_pdf,
    cache_hit,
    conditional_active_density,
    coverage,
    coverage_baseline,
    delivery_metrics,
    osa_probability,
    scdp,
    scdp_gradient,
    zeta_mrfs,
    zeta_rfs,
)
from .content import (
    MRFS,
    RFS,
    CachingPolicy,
    CombinationSet,
    ContentParams,
    Popularity,
    combination_set,
    enumerate_combinations,
    mpc_policy,
    sample_cache,
    uniform_policy,
    zipf_popularity,
)
from .network import NetworkParams
from .optimizer import (
    OptimizerConfig,
    OptimizerError,
    OptimizerTrace,
    line_search,
    optimize_caching,
    project_tangent,
    simplex_grid,
    stepsize_bounds,
)
from .simulator import (
    MonteCarloResult,
    NetworkRealization,
    SimulationEstimate,
    SlotOutcome,
    monte_carlo,
    osa_activation_probe,
    radial_density_profile,
    run_slot,
    sample_network,
    select_candidate,
    sense_osa,
)

__version__ = "0.1.0"
SCHEMA_VERSION = 1
