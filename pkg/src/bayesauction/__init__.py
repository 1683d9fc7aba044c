"""Bayesian iterative combinatorial auctions with Monte Carlo EM price updates."""

from .core import (
    Allocation,
    Bundle,
    ItemPriceVector,
    Valuation,
    ValuationProfile,
    bundle_price,
    total_value,
    valuation_value,
)
from .solvers import (
    clearing_potential,
    indirect_revenue,
    indirect_utility,
    is_clearing,
    wdp,
)

__version__ = "0.1.0"
