"""Numerical toolkit for principal-intermediary-agent markets.

The pipeline: a principal issues an outcome-contingent contract, an
intermediary best-responds with a revenue-optimal mechanism over the
agents' private costs, and the library quantifies what delegation costs
the principal (optimal contracts, first/second-best benchmarks, and the
PoDM/PoA efficiency ratios), at desk scale.
"""

__version__ = "0.1.0"

from .dist_core import (
    DistClass,
    Distribution,
    classify,
    hazard_profile,
    inverse_virtual_value,
    monopoly_point,
    power,
    revenue_curve,
    shift_by_contract,
    virtual_value,
)
from .dist_catalog import (
    contribution_from_cost,
    cost_from_contribution,
    make_cond_exponential,
    make_staircase,
    make_tabulated,
    make_trunc_equal_revenue,
    make_uniform,
)
from .mechanism import (
    Agent,
    AuditReport,
    Contract,
    MarketInstance,
    MechanismOutcome,
    UtilityEstimate,
    anonymous_run,
    audit_incentives,
    optimal_anonymous_price,
    simulate_market,
    to_auction,
    vwm_run,
)
from .contract import (
    ContractSolution,
    RobustDesign,
    SearchConfig,
    optimize_contract_general,
    optimize_contract_identical_reward,
    optimize_contract_iid,
    optimize_contract_posted,
    principal_utility_iid,
    robust_contract,
)
from .benchmarks import (
    ETA,
    MHR_PRICING_RATIO,
    RatioReport,
    asymptotic_poa_bound,
    fb_exponential_mixture,
    first_best,
    h_hat,
    harmonic,
    load_taus,
    nonmonotonicity_demo,
    podm_upper_table,
    ratios,
    second_best,
)

__all__ = [name for name in dir() if not name.startswith("_")]
