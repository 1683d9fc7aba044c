"""Domain types and elementary market arithmetic.

Bundles are bitsets over at most 32 items. Valuations are XOR lists of
atomic bids with free disposal, so a single-minded bidder is simply the
one-atom case.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_ITEMS = 32
TOL = 1e-9


class DimensionError(ValueError):
    """Raised when bundles, prices or valuations disagree on the item count."""


class InfeasibleAllocationError(ValueError):
    """Raised when an allocation hands the same item to two bidders."""


@dataclass(frozen=True, order=True)
class Bundle:
    """Indicator set over items ``0..m-1`` stored as an integer bitmask."""

    bits: int
    m: int

    def __post_init__(self):
        if not 0 <= self.m <= MAX_ITEMS:
            raise DimensionError(f"item count {self.m} outside [0, {MAX_ITEMS}]")
        if self.bits < 0 or self.bits >> self.m:
            raise DimensionError(f"bundle bits {self.bits:#x} exceed m={self.m}")

    @classmethod
    def from_items(cls, items: Iterable[int], m: int) -> "Bundle":
        bits = 0
        for j in items:
            if not 0 <= j < m:
                raise DimensionError(f"item {j} outside [0, {m})")
            bits |= 1 << j
        return cls(bits, m)

    @classmethod
    def empty(cls, m: int) -> "Bundle":
        return cls(0, m)

    def items(self) -> list[int]:
        return [j for j in range(self.m) if self.bits >> j & 1]

    def indicator(self) -> np.ndarray:
        return np.array([self.bits >> j & 1 for j in range(self.m)], dtype=float)

    def issubset(self, other: "Bundle") -> bool:
        return self.bits & ~other.bits == 0

    def isdisjoint(self, other: "Bundle") -> bool:
        return self.bits & other.bits == 0

    def __or__(self, other: "Bundle") -> "Bundle":
        return Bundle(self.bits | other.bits, self.m)

    def __and__(self, other: "Bundle") -> "Bundle":
        return Bundle(self.bits & other.bits, self.m)

    def __len__(self) -> int:
        return bin(self.bits).count("1")

    def __bool__(self) -> bool:
        return self.bits != 0

    def __repr__(self) -> str:
        return f"Bundle({self.items()}, m={self.m})"


@dataclass(frozen=True)
class Valuation:
    """Multi-minded valuation: the value of a bundle is the best atom it contains."""

    atoms: tuple[tuple[Bundle, float], ...]
    m: int
    bidder_id: int = 0

    def __post_init__(self):
        seen = set()
        for bundle, value in self.atoms:
            if bundle.m != self.m:
                raise DimensionError(f"atom over m={bundle.m}, valuation over m={self.m}")
            if value < 0 or not np.isfinite(value):
                raise ValueError(f"atom value must be finite and nonnegative, got {value}")
            if bundle.bits in seen:
                raise ValueError(f"duplicate atom {bundle}")
            seen.add(bundle.bits)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Iterable[int], float]], m: int,
                   bidder_id: int = 0) -> "Valuation":
        """Build from ``(item list, value)`` pairs. The empty bundle is dropped."""
        atoms = []
        for items, value in pairs:
            b = Bundle.from_items(items, m)
            if b:
                atoms.append((b, float(value)))
        return cls(tuple(atoms), m, bidder_id)

    def value(self, x: Bundle) -> float:
        return valuation_value(self, x)

    @property
    def bundles(self) -> list[Bundle]:
        return [b for b, _ in self.atoms]

    @property
    def max_value(self) -> float:
        return max((v for _, v in self.atoms), default=0.0)

    def scaled(self, factor: float) -> "Valuation":
        return Valuation(tuple((b, v * factor) for b, v in self.atoms), self.m, self.bidder_id)


@dataclass(frozen=True)
class ItemPriceVector:
    """Nonnegative item prices; the bundle price is the sum over contained items."""

    prices: tuple[float, ...]

    def __post_init__(self):
        if any(p < 0 or not np.isfinite(p) for p in self.prices):
            raise ValueError(f"item prices must be finite and nonnegative: {self.prices}")

    @classmethod
    def zeros(cls, m: int) -> "ItemPriceVector":
        return cls((0.0,) * m)

    @classmethod
    def of(cls, values: Iterable[float]) -> "ItemPriceVector":
        # tiny negatives from LP solvers are projected to zero
        return cls(tuple(max(0.0, float(p)) for p in values))

    @property
    def m(self) -> int:
        return len(self.prices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.prices, dtype=float)

    def __getitem__(self, j: int) -> float:
        return self.prices[j]


@dataclass(frozen=True)
class Allocation:
    """One bundle per bidder; constructing an infeasible allocation raises."""

    assignments: tuple[Bundle, ...]

    def __post_init__(self):
        used = 0
        for b in self.assignments:
            if used & b.bits:
                raise InfeasibleAllocationError(f"item(s) {b.bits & used:#x} assigned twice")
            used |= b.bits

    @property
    def n(self) -> int:
        return len(self.assignments)


@dataclass(frozen=True)
class ValuationProfile:
    valuations: tuple[Valuation, ...]
    m: int = field(default=-1)

    def __post_init__(self):
        if not self.valuations:
            raise ValueError("a profile needs at least one bidder")
        m = self.valuations[0].m if self.m < 0 else self.m
        object.__setattr__(self, "m", m)
        for v in self.valuations:
            if v.m != m:
                raise DimensionError(f"valuation over m={v.m} in a profile over m={m}")

    @property
    def n(self) -> int:
        return len(self.valuations)

    def __iter__(self):
        return iter(self.valuations)

    def __getitem__(self, i: int) -> Valuation:
        return self.valuations[i]


def bundle_price(p: ItemPriceVector, x: Bundle) -> float:
    if x.m != p.m:
        raise DimensionError(f"bundle over m={x.m}, prices over m={p.m}")
    return float(sum(p.prices[j] for j in x.items()))


def valuation_value(v: Valuation, x: Bundle) -> float:
    if x.m != v.m:
        raise DimensionError(f"bundle over m={x.m}, valuation over m={v.m}")
    best = 0.0
    for b, value in v.atoms:
        if b.bits & ~x.bits == 0 and value > best:
            best = value
    return best


def total_value(a: Allocation, v: ValuationProfile) -> float:
    if a.n != v.n:
        raise DimensionError(f"allocation for {a.n} bidders, profile has {v.n}")
    return float(sum(valuation_value(vi, ai) for vi, ai in zip(v.valuations, a.assignments)))


def empty_allocation(n: int, m: int) -> Allocation:
    return Allocation(tuple(Bundle.empty(m) for _ in range(n)))


def popcount(bits: int) -> int:
    return bin(bits).count("1")


def bits_to_items(bits: int, m: int) -> list[int]:
    return [j for j in range(m) if bits >> j & 1]


def indicator_matrix(bundles: Sequence[int], m: int) -> np.ndarray:
    """Rows of 0/1 item indicators for a sequence of bitmasks."""
    masks = np.asarray(list(bundles), dtype=np.int64).reshape(-1, 1)
    return ((masks >> np.arange(m, dtype=np.int64)) & 1).astype(float)
