"""Bayesian estimation of latent preferences and priorities."""
from .gibbs import (
    MODES,
    DesignData,
    EstimationError,
    GibbsConfig,
    LatentState,
    PosteriorDraws,
    bound_violations,
    gibbs_iteration,
    initial_state,
    prune_collinear,
    realize_complete_orders,
    realized_latents,
    run_gibbs,
    stability_audit,
    utility_bounds,
    valuation_bounds,
)
from .truncnorm import sample_truncated_normal
