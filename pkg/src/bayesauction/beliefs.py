"""Factorized Gaussian beliefs over bidders' values for the bundles they bid on.

Each observed bid (or decline) multiplies a belief by a probit factor
``Phi(+-beta * (v - price))``; the product is projected back onto a Gaussian
by matching its first two moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.special import log_ndtr

from .core import Bundle, ItemPriceVector, Valuation, ValuationProfile, bundle_price

SIGMA_FLOOR = 1e-4
_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)
_ASYMPTOTIC_CUTOFF = -30.0

Direction = Literal["above", "below"]


@dataclass(frozen=True)
class GaussianBelief:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and np.isfinite(self.sigma) and np.isfinite(self.mu)):
            raise ValueError(f"invalid Gaussian belief ({self.mu}, {self.sigma})")


def _mills_terms(u: float) -> tuple[float, float]:
    """Return ``r = phi(u)/Phi(u)`` and ``r * (u + r)`` without underflow."""
    if u < _ASYMPTOTIC_CUTOFF:
        x = -u
        x2 = 1.0 / (x * x)
        r = x * (1 + x2 * (1 - x2 * (2 - x2 * (10 - 74 * x2))))
        # r*(u + r) expanded in 1/x^2
        delta = 1 - x2 * (1 - x2 * (6 - x2 * (50 - 518 * x2)))
        return r, delta
    r = float(np.exp(-0.5 * u * u - _LOG_SQRT_2PI - log_ndtr(u)))
    return r, r * (u + r)


def probit_gaussian_moments(prior: GaussianBelief, threshold: float, beta: float,
                            direction: Direction = "above") -> GaussianBelief:
    """Moment-match ``Phi(+-beta (z - threshold)) * N(z; mu, sigma^2)``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    sign = 1.0 if direction == "above" else -1.0
    mu, var = prior.mu, prior.sigma ** 2
    t = np.sqrt(1.0 / beta ** 2 + var)
    u = sign * (mu - threshold) / t
    r, delta = _mills_terms(u)
    new_mu = mu + sign * var * r / t
    new_var = var * (1.0 - (var / (t * t)) * min(max(delta, 0.0), 1.0))
    return GaussianBelief(float(new_mu), max(float(np.sqrt(new_var)), SIGMA_FLOOR))


PriorFn = Callable[[Bundle], tuple[float, float]]


@dataclass
class BeliefState:
    """Per-bidder ordered map from bid-on bundles to Gaussian value beliefs."""

    n: int
    m: int
    beta: float = 1.0
    beliefs: list[dict[Bundle, GaussianBelief]] = field(default_factory=list)

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not self.beliefs:
            self.beliefs = [{} for _ in range(self.n)]

    def bundles(self, i: int) -> list[Bundle]:
        return list(self.beliefs[i])

    def structure(self) -> list[list[int]]:
        return [[b.bits for b in d] for d in self.beliefs]

    def means_and_stds(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened over atoms in bidder order, matching :meth:`structure`."""
        flat = [g for d in self.beliefs for g in d.values()]
        return (np.array([g.mu for g in flat], dtype=float),
                np.array([g.sigma for g in flat], dtype=float))

    def copy(self) -> "BeliefState":
        return BeliefState(self.n, self.m, self.beta, [dict(d) for d in self.beliefs])

    def dump(self) -> list[list[tuple[list[int], float, float]]]:
        return [[(b.items(), g.mu, g.sigma) for b, g in d.items()] for d in self.beliefs]


def update_on_bid(state: BeliefState, i: int, b: Bundle, prices: ItemPriceVector,
                  prior: PriorFn) -> BeliefState:
    if not b:
        raise ValueError("a bid must be on a nonempty bundle")
    d = state.beliefs[i]
    if b not in d:
        mu0, sigma0 = prior(b)
        d[b] = GaussianBelief(mu0, sigma0)
    d[b] = probit_gaussian_moments(d[b], bundle_price(prices, b), state.beta, "above")
    return state


def update_on_decline(state: BeliefState, i: int, prices: ItemPriceVector) -> BeliefState:
    d = state.beliefs[i]
    for b, g in d.items():
        d[b] = probit_gaussian_moments(g, bundle_price(prices, b), state.beta, "below")
    return state


def update_beliefs(state: BeliefState, demands: list[Bundle], prices: ItemPriceVector,
                   prior: PriorFn) -> BeliefState:
    """One round of belief updates for all bidders."""
    for i, b in enumerate(demands):
        if b:
            update_on_bid(state, i, b, prices, prior)
        else:
            update_on_decline(state, i, prices)
    return state


def sample_values(state: BeliefState, size: int, rng: np.random.Generator) -> np.ndarray:
    """``(size, A)`` nonnegative value draws over the flattened atoms."""
    mu, sigma = state.means_and_stds()
    draws = mu + sigma * rng.standard_normal((size, mu.size))
    return np.maximum(draws, 0.0)


def sample_profile(state: BeliefState, seed: int | np.random.Generator | None = None
                   ) -> ValuationProfile:
    rng = np.random.default_rng(seed)
    values = sample_values(state, 1, rng)[0]
    out, a = [], 0
    for i, d in enumerate(state.beliefs):
        atoms = []
        for b in d:
            atoms.append((b, float(values[a])))
            a += 1
        out.append(Valuation(tuple(atoms), state.m, i))
    return ValuationProfile(tuple(out), state.m)
