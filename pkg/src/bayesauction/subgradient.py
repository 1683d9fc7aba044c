"""Non-monotone clock auctions driven by excess demand (subgradient auctions)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .core import TOL, Bundle, ItemPriceVector, ValuationProfile


def subgradient_step(p: ItemPriceVector, demands: Sequence[Bundle], gamma: float) -> ItemPriceVector:
    """``p_j <- max(0, p_j + gamma * (d_j - 1))`` with ``d_j`` the demand count of item j."""
    if gamma <= 0:
        raise ValueError("step size must be positive")
    d = np.zeros(p.m)
    for b in demands:
        for j in b.items():
            d[j] += 1
    return ItemPriceVector.of(np.maximum(0.0, p.as_array() + gamma * (d - 1.0)))


@dataclass
class SubgradientPricer:
    gamma: float
    name: str = "sg"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("step size must be positive")

    def reset(self, n: int, m: int) -> None:
        pass

    def next_prices(self, prices, demands, round_index):
        return subgradient_step(prices, demands, self.gamma), {}


def step_grid(max_value: float = 10.0, size: int = 100) -> np.ndarray:
    """``size`` evenly spaced step sizes in ``(0, max_value]``."""
    return max_value * np.arange(1, size + 1) / size


def run_grid(profile: ValuationProfile, gammas: Sequence[float], cap: int = 100) -> np.ndarray:
    """Rounds to clear for every step size at once; 0 marks a failure within ``cap``.

    Bidders behave exactly as in :func:`bayesauction.engine.best_response`.
    """
    m = profile.m
    gammas = np.asarray(gammas, dtype=float)
    G = gammas.size
    order, owner = [], []
    for i, v in enumerate(profile):
        for b, val in sorted(v.atoms, key=lambda a: (len(a[0]), a[0].bits)):
            order.append((b.indicator(), val))
            owner.append(i)
    rounds = np.zeros(G, dtype=int)
    if not order:
        rounds[:] = 1
        return rounds
    items = np.array([o[0] for o in order])
    vals = np.array([o[1] for o in order])
    owner = np.array(owner)
    blocks = [np.flatnonzero(owner == i) for i in np.unique(owner)]

    P = np.zeros((G, m))
    live = np.ones(G, dtype=bool)
    for t in range(1, cap + 1):
        idx = np.flatnonzero(live)
        Pl = P[idx]
        util = vals - Pl @ items.T
        demand = np.zeros((idx.size, m))
        for cols in blocks:
            u = util[:, cols]
            best = np.maximum(u.max(axis=1), 0.0)
            cand = u >= (best - TOL)[:, None]
            has = cand.any(axis=1)
            pick = cols[np.argmax(cand, axis=1)]
            demand[has] += items[pick[has]]
        clear = (demand.max(axis=1) <= 1) & np.all((Pl <= TOL) | (demand >= 1), axis=1)
        rounds[idx[clear]] = t
        live[idx[clear]] = False
        if t == cap or not live.any():
            break
        keep = ~clear
        step = gammas[idx[keep], None] * (demand[keep] - 1.0)
        P[idx[keep]] = np.maximum(0.0, Pl[keep] + step)
    return rounds


@dataclass
class TuningResult:
    gammas: np.ndarray
    rounds: np.ndarray  # (instances, gammas), 0 = not cleared

    @property
    def cleared(self) -> np.ndarray:
        return self.rounds > 0

    def distribution_choice(self) -> int:
        """Grid index with most clears, then fewest mean rounds, then smallest step."""
        best, best_key = 0, None
        for g in range(self.gammas.size):
            ok = self.cleared[:, g]
            mean = self.rounds[ok, g].mean() if ok.any() else np.inf
            key = (-int(ok.sum()), mean, self.gammas[g])
            if best_key is None or key < best_key:
                best, best_key = g, key
        return best

    def instance_choice(self) -> np.ndarray:
        """Per instance, the grid index clearing in fewest rounds (smallest step on ties); -1 if none."""
        out = np.full(self.rounds.shape[0], -1)
        for s, row in enumerate(self.rounds):
            ok = np.flatnonzero(row > 0)
            if ok.size:
                out[s] = ok[np.argmin(row[ok])]
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gamma", "instance", "cleared", "rounds"])
            for s in range(self.rounds.shape[0]):
                for g, gamma in enumerate(self.gammas):
                    r = int(self.rounds[s, g])
                    w.writerow([repr(float(gamma)), s, int(r > 0), r if r > 0 else ""])


def tune_stepsize(instances: Sequence[ValuationProfile], gammas: Sequence[float] | None = None,
                  cap: int = 100) -> TuningResult:
    if not instances:
        raise ValueError("need at least one instance")
    gammas = step_grid() if gammas is None else np.asarray(gammas, dtype=float)
    rounds = np.array([run_grid(v, gammas, cap) for v in instances])
    return TuningResult(gammas, rounds)


Mode = Literal["distribution", "instance"]


def tuned_outcomes(result: TuningResult, mode: Mode) -> list[tuple[bool, int, float | None]]:
    """``(cleared, rounds, gamma)`` per instance under either tuning protocol."""
    out = []
    if mode == "distribution":
        g = result.distribution_choice()
        for row in result.rounds:
            r = int(row[g])
            out.append((r > 0, r, float(result.gammas[g])))
    else:
        for s, g in enumerate(result.instance_choice()):
            if g < 0:
                out.append((False, 0, None))
            else:
                out.append((True, int(result.rounds[s, g]), float(result.gammas[g])))
    return out
