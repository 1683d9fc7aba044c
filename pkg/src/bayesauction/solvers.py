"""Exact winner determination and the clearing-potential arithmetic.

The winner determination problem is solved by dynamic programming over
subsets of the *active* items (items that appear in at least one atom),
which keeps the table at ``2**k`` entries for ``k`` active items.

For the Monte Carlo sampler the same bundle structure is evaluated for many
value draws. :class:`PackingTable` enumerates the maximal feasible atom
selections once and turns optimal welfare into a matrix product; it falls
back to a batched subset DP when the enumeration gets too large.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import networkx as nx
import numpy as np

from .core import (
    TOL,
    Allocation,
    Bundle,
    DimensionError,
    ItemPriceVector,
    Valuation,
    ValuationProfile,
    bundle_price,
    total_value,
)


@dataclass(frozen=True)
class WdpResult:
    allocation: Allocation
    value: float


def _compress(bits: int, active: Sequence[int]) -> int:
    out = 0
    for k, j in enumerate(active):
        if bits >> j & 1:
            out |= 1 << k
    return out


def wdp(v: ValuationProfile) -> WdpResult:
    """Efficient allocation by DP over (bidder prefix, available items)."""
    m, n = v.m, v.n
    active_bits = 0
    for vi in v:
        for b, _ in vi.atoms:
            active_bits |= b.bits
    active = [j for j in range(m) if active_bits >> j & 1]
    k = len(active)
    if k > 24:
        raise DimensionError(f"{k} active items is too many for the subset DP")
    size = 1 << k
    states = np.arange(size, dtype=np.int64)
    full = size - 1

    f = np.zeros(size)
    choices = []
    for vi in v:
        g = f.copy()
        arg = np.full(size, -1, dtype=np.int64)
        for a, (b, val) in enumerate(vi.atoms):
            cb = _compress(b.bits, active)
            idx = states[(states & cb) == cb]
            cand = f[idx ^ cb] + val
            better = cand > g[idx]
            g[idx[better]] = cand[better]
            arg[idx[better]] = a
        choices.append(arg)
        f = g

    assignments = [Bundle.empty(m)] * n
    s = full
    for i in range(n - 1, -1, -1):
        a = choices[i][s]
        if a >= 0:
            b = v[i].atoms[a][0]
            assignments[i] = b
            s ^= _compress(b.bits, active)
    allocation = Allocation(tuple(assignments))
    return WdpResult(allocation, total_value(allocation, v))


def indirect_utility(p: ItemPriceVector, vi: Valuation) -> float:
    if p.m != vi.m:
        raise DimensionError(f"prices over m={p.m}, valuation over m={vi.m}")
    best = 0.0
    for b, val in vi.atoms:
        u = val - bundle_price(p, b)
        if u > best:
            best = u
    return best


def indirect_revenue(p: ItemPriceVector) -> float:
    # with item prices, selling every item is revenue-maximal
    return float(sum(p.prices))


def clearing_objective(p: ItemPriceVector, v: ValuationProfile) -> float:
    """Summed indirect utilities plus indirect revenue."""
    return sum(indirect_utility(p, vi) for vi in v) + indirect_revenue(p)


def raw_clearing_potential(p: ItemPriceVector, v: ValuationProfile) -> float:
    """Duality gap without the nonnegativity clamp (useful for checks)."""
    return clearing_objective(p, v) - wdp(v).value


def clearing_potential(p: ItemPriceVector, v: ValuationProfile) -> float:
    return max(0.0, raw_clearing_potential(p, v))


def is_clearing(demands: Sequence[Bundle], p: ItemPriceVector) -> bool:
    """Demands are clearing when they are disjoint and cover every priced item."""
    used = 0
    for b in demands:
        if b.m != p.m:
            raise DimensionError(f"demand over m={b.m}, prices over m={p.m}")
        if used & b.bits:
            return False
        used |= b.bits
    return all(used >> j & 1 for j, pj in enumerate(p.prices) if pj > TOL)


class PackingTable:
    """Optimal welfare of many value draws over one fixed atom structure.

    ``structure[i]`` lists bidder ``i``'s bundles as bitmasks; values passed to
    :meth:`welfare` are a ``(K, A)`` array over the flattened atoms, in bidder
    order. Values must be nonnegative, so the optimum is attained on a maximal
    selection.
    """

    def __init__(self, structure: Sequence[Sequence[int]], m: int, max_selections: int = 20000):
        self.structure = [list(s) for s in structure]
        self.m = m
        self.owner = np.array([i for i, s in enumerate(self.structure) for _ in s], dtype=np.int64)
        self.masks = [b for s in self.structure for b in s]
        self.n_atoms = len(self.masks)
        self.max_selections = max_selections
        self._selections: np.ndarray | None = None
        self._enumerated = False
        self._atom_items = np.array([[b >> j & 1 for j in range(m)] for b in self.masks],
                                    dtype=float).reshape(self.n_atoms, m)

    @property
    def selections(self) -> np.ndarray | None:
        """0/1 rows of maximal feasible selections, or None past the cap."""
        if not self._enumerated:
            self._selections = self._enumerate(self.max_selections)
            self._enumerated = True
        return self._selections

    def _enumerate(self, cap: int) -> np.ndarray | None:
        if self.n_atoms == 0:
            return np.zeros((1, 0))
        g = nx.Graph()
        g.add_nodes_from(range(self.n_atoms))
        for a in range(self.n_atoms):
            for c in range(a + 1, self.n_atoms):
                if self.owner[a] != self.owner[c] and self.masks[a] & self.masks[c] == 0:
                    g.add_edge(a, c)
        rows = []
        for clique in nx.find_cliques(g):
            rows.append(clique)
            if len(rows) > cap:
                return None
        sel = np.zeros((len(rows), self.n_atoms))
        for r, clique in enumerate(rows):
            sel[r, clique] = 1.0
        return sel

    def welfare(self, values: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[1] != self.n_atoms:
            raise DimensionError(f"expected {self.n_atoms} atom values, got {values.shape[1]}")
        if self.n_atoms == 0:
            return np.zeros(values.shape[0])
        if self.selections is not None:
            return (values @ self.selections.T).max(axis=1)
        return self._dp_welfare(values)

    def _dp_welfare(self, values: np.ndarray, chunk: int = 512) -> np.ndarray:
        active_bits = 0
        for b in self.masks:
            active_bits |= b
        active = [j for j in range(self.m) if active_bits >> j & 1]
        size = 1 << len(active)
        states = np.arange(size, dtype=np.int64)
        compressed = [_compress(b, active) for b in self.masks]
        supersets = [states[(states & cb) == cb] for cb in compressed]
        out = np.empty(values.shape[0])
        for lo in range(0, values.shape[0], chunk):
            vals = values[lo:lo + chunk]
            f = np.zeros((size, vals.shape[0]))
            a = 0
            for bundles in self.structure:
                g = f.copy()
                for _ in bundles:
                    idx = supersets[a]
                    g[idx] = np.maximum(g[idx], f[idx ^ compressed[a]] + vals[:, a])
                    a += 1
                f = g
            out[lo:lo + chunk] = f[size - 1]
        return out

    def utilities(self, values: np.ndarray, prices: np.ndarray) -> np.ndarray:
        """Per-draw summed indirect utility of all bidders, shape ``(K,)``."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if self.n_atoms == 0:
            return np.zeros(values.shape[0])
        surplus = values - self._atom_items @ np.asarray(prices, dtype=float)
        total = np.zeros(values.shape[0])
        for i in np.unique(self.owner):
            cols = self.owner == i
            total += np.maximum(surplus[:, cols].max(axis=1), 0.0)
        return total

    def clearing_potential(self, values: np.ndarray, prices: np.ndarray) -> np.ndarray:
        prices = np.asarray(prices, dtype=float)
        gap = self.utilities(values, prices) + prices.sum() - self.welfare(values)
        return np.maximum(gap, 0.0)
