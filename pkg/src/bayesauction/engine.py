"""Round loop of the iterative auction with simulated myopic bidders."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

from .core import (
    TOL,
    Allocation,
    Bundle,
    ItemPriceVector,
    Valuation,
    ValuationProfile,
    bundle_price,
    total_value,
)
from .solvers import is_clearing, wdp

logger = logging.getLogger(__name__)


class Pricer(Protocol):
    name: str

    def reset(self, n: int, m: int) -> None: ...

    def next_prices(self, prices: ItemPriceVector, demands: list[Bundle],
                    round_index: int) -> tuple[ItemPriceVector, dict]: ...


class PricerFailure(RuntimeError):
    def __init__(self, message: str, trace: list["RoundRecord"]):
        super().__init__(message)
        self.trace = trace


def best_response(v: Valuation, p: ItemPriceVector) -> Bundle:
    """Utility-maximizing atom, or the empty bundle if every atom loses money.

    Near-ties (within 1e-9) go to a nonempty bundle, then to fewer items, then
    to the smaller bitmask.
    """
    best_u = 0.0
    scored = []
    for b, val in v.atoms:
        u = val - bundle_price(p, b)
        scored.append((u, b))
        best_u = max(best_u, u)
    candidates = [b for u, b in scored if u >= best_u - TOL]
    if not candidates:
        return Bundle.empty(v.m)
    return min(candidates, key=lambda b: (len(b), b.bits))


@dataclass
class RoundRecord:
    t: int
    prices: tuple[float, ...]
    demands: list[list[int]]
    cleared: bool
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class AuctionOutcome:
    cleared: bool
    rounds: int
    prices: tuple[float, ...]
    allocation: Allocation
    efficiency: float
    trace: list[RoundRecord]


def provisional_allocation(demands: Sequence[Bundle], p: ItemPriceVector) -> Allocation:
    """The demand profile when feasible, else a revenue-maximal subset of demands."""
    try:
        return Allocation(tuple(demands))
    except ValueError:
        pass
    m = p.m
    bids = [Valuation(((b, bundle_price(p, b)),), m, i) if b else Valuation((), m, i)
            for i, b in enumerate(demands)]
    return wdp(ValuationProfile(tuple(bids), m)).allocation


def efficiency(allocation: Allocation, v: ValuationProfile) -> float:
    best = wdp(v).value
    if best <= 0:
        return 1.0
    return min(1.0, total_value(allocation, v) / best)


def run_auction(profile: ValuationProfile, pricer: Pricer, cap: int = 100) -> AuctionOutcome:
    """Start at null prices, ask for demands, stop on clearing or after ``cap`` rounds."""
    if cap < 1:
        raise ValueError("round cap must be >= 1")
    n, m = profile.n, profile.m
    pricer.reset(n, m)
    prices = ItemPriceVector.zeros(m)
    trace: list[RoundRecord] = []
    demands: list[Bundle] = []
    for t in range(1, cap + 1):
        demands = [best_response(v, prices) for v in profile]
        cleared = is_clearing(demands, prices)
        record = RoundRecord(t, prices.prices, [b.items() for b in demands], cleared)
        trace.append(record)
        if cleared:
            alloc = Allocation(tuple(demands))
            return AuctionOutcome(True, t, prices.prices, alloc, efficiency(alloc, profile), trace)
        if t == cap:
            break
        try:
            prices, diag = pricer.next_prices(prices, demands, t)
        except Exception as exc:
            raise PricerFailure(f"{pricer.name} failed in round {t}: {exc}", trace) from exc
        record.diagnostics = diag
    alloc = provisional_allocation(demands, prices)
    return AuctionOutcome(False, cap, prices.prices, alloc, efficiency(alloc, profile), trace)


def write_trace(trace: Sequence[RoundRecord], fh) -> None:
    """One JSON object per line: ``t``, ``prices``, ``demands``, ``cleared``, ``diagnostics``."""
    for rec in trace:
        fh.write(rec.to_json() + "\n")


def read_trace(fh) -> list[RoundRecord]:
    out = []
    for line in fh:
        if line.strip():
            rec = json.loads(line)
            rec["prices"] = tuple(rec["prices"])
            out.append(RoundRecord(**rec))
    return out
