"""CATS bid files: parsing, bidder grouping and instance sampling.

Grammar (one record per line, surrounding whitespace ignored)::

    % comment
    goods <int>
    bids <int>
    dummy <int>
    <bid id> <value> <good> <good> ... #

Goods ``0..goods-1`` are real items; indices ``goods..goods+dummy-1`` are
dummy goods that tie a bidder's bids together. Header keywords may appear
in any order but before the first bid line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .core import Bundle, Valuation, ValuationProfile

Mode = Literal["single", "multi"]
SCALE_MAX = 10.0


class CatsParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class CatsBid:
    bid_id: int
    value: float
    goods: tuple[int, ...]


@dataclass(frozen=True)
class CatsFile:
    goods: int
    dummy: int
    bids: tuple[CatsBid, ...]
    comments: tuple[str, ...] = field(default=(), compare=False)


def parse_cats(data: str | bytes) -> CatsFile:
    if isinstance(data, bytes):
        data = data.decode("ascii")
    header: dict[str, int] = {}
    bids: list[CatsBid] = []
    comments: list[str] = []
    seen: set[int] = set()
    for line_no, raw in enumerate(data.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("%"):
            comments.append(line[1:].strip())
            continue
        tokens = line.split()
        key = tokens[0].lower()
        if key in ("goods", "bids", "dummy"):
            if bids:
                raise CatsParseError(line_no, f"header '{key}' after bid lines")
            if len(tokens) != 2:
                raise CatsParseError(line_no, f"malformed header: {line!r}")
            try:
                header[key] = int(tokens[1])
            except ValueError:
                raise CatsParseError(line_no, f"non-integer header value {tokens[1]!r}") from None
            if header[key] < 0:
                raise CatsParseError(line_no, f"negative {key} count")
            continue
        if "goods" not in header:
            raise CatsParseError(line_no, "bid line before 'goods' header")
        if tokens[-1] != "#":
            raise CatsParseError(line_no, "bid line missing terminal '#'")
        if len(tokens) < 3:
            raise CatsParseError(line_no, "bid line needs an id and a value")
        try:
            bid_id = int(tokens[0])
            value = float(tokens[1])
            goods = tuple(int(t) for t in tokens[2:-1])
        except ValueError:
            raise CatsParseError(line_no, f"malformed bid line: {line!r}") from None
        if not math.isfinite(value) or value < 0:
            raise CatsParseError(line_no, f"invalid bid value {tokens[1]}")
        limit = header["goods"] + header.get("dummy", 0)
        for g in goods:
            if not 0 <= g < limit:
                raise CatsParseError(line_no, f"good index {g} outside [0, {limit})")
        if bid_id in seen:
            raise CatsParseError(line_no, f"duplicate bid id {bid_id}")
        seen.add(bid_id)
        bids.append(CatsBid(bid_id, value, goods))
    if "goods" not in header:
        raise CatsParseError(0, "missing 'goods' header")
    if "bids" in header and header["bids"] != len(bids):
        raise CatsParseError(0, f"header announces {header['bids']} bids, found {len(bids)}")
    return CatsFile(header["goods"], header.get("dummy", 0), tuple(bids), tuple(comments))


def serialize_cats(f: CatsFile) -> str:
    lines = [f"% {c}" for c in f.comments]
    lines += [f"goods {f.goods}", f"bids {len(f.bids)}", f"dummy {f.dummy}", ""]
    for b in f.bids:
        lines.append("\t".join([str(b.bid_id), repr(float(b.value)), *map(str, b.goods), "#"]))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class BidderPool:
    bidders: tuple[Valuation, ...]
    m: int
    mode: Mode
    scale: float = 1.0

    def __len__(self) -> int:
        return len(self.bidders)

    @property
    def max_value(self) -> float:
        return max((v.max_value for v in self.bidders), default=0.0)


def _valuation(pairs: list[tuple[tuple[int, ...], float]], m: int, bidder_id: int) -> Valuation:
    # an XOR bidder repeating a bundle keeps its highest value
    best: dict[int, tuple[Bundle, float]] = {}
    for goods, value in pairs:
        b = Bundle.from_items(goods, m)
        if b and (b.bits not in best or value > best[b.bits][1]):
            best[b.bits] = (b, value)
    return Valuation(tuple(best.values()), m, bidder_id)


def group_bidders(f: CatsFile, mode: Mode = "multi") -> BidderPool:
    m = f.goods
    groups: dict[object, list[tuple[tuple[int, ...], float]]] = {}
    for bid in f.bids:
        real = tuple(g for g in bid.goods if g < m)
        dummies = [g for g in bid.goods if g >= m]
        key = ("dummy", dummies[0]) if mode == "multi" and dummies else ("bid", bid.bid_id)
        groups.setdefault(key, []).append((real, bid.value))
    bidders = []
    for pairs in groups.values():
        v = _valuation(pairs, m, len(bidders))
        if v.atoms:
            bidders.append(v)
    return BidderPool(tuple(bidders), m, mode)


def normalize_values(pool: BidderPool, top: float = SCALE_MAX) -> BidderPool:
    """Scale every value by one pool-wide factor so the largest becomes ``top``."""
    vmax = pool.max_value
    if vmax <= 0:
        raise ValueError("cannot normalize a pool whose values are all zero")
    factor = top / vmax
    return BidderPool(tuple(v.scaled(factor) for v in pool.bidders), pool.m, pool.mode,
                      pool.scale * factor)


def split_train_test(pool: BidderPool, fraction: float = 0.5,
                     seed: int = 0) -> tuple[BidderPool, BidderPool]:
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(pool))
    n_train = int(math.floor(fraction * len(pool)))
    if n_train == 0 or n_train == len(pool):
        raise ValueError(f"split of {len(pool)} bidders at {fraction} leaves a side empty")
    train = tuple(pool.bidders[i] for i in sorted(order[:n_train]))
    test = tuple(pool.bidders[i] for i in sorted(order[n_train:]))
    return (BidderPool(train, pool.m, pool.mode, pool.scale),
            BidderPool(test, pool.m, pool.mode, pool.scale))


@dataclass(frozen=True)
class AuctionInstance:
    profile: ValuationProfile
    prior_id: str
    seed: int
    distribution: str


def sample_instance(test: BidderPool, n: int = 10, seed: int = 0, prior_id: str = "",
                    distribution: str = "synthetic") -> AuctionInstance:
    if len(test) < n:
        raise ValueError(f"pool of {len(test)} bidders cannot supply {n}")
    picks = np.random.default_rng(seed).choice(len(test), size=n, replace=False)
    vals = tuple(Valuation(test.bidders[k].atoms, test.m, i) for i, k in enumerate(picks))
    return AuctionInstance(ValuationProfile(vals, test.m), prior_id, seed, distribution)


@dataclass(frozen=True)
class SyntheticParams:
    """Knobs of the fallback generator (not a CATS reimplementation).

    Each bidder draws per-item values around a shared base price; an atom's
    value is the sum of its items' values times ``1 + complementarity*(|b|-1)``.
    """

    bids_per_bidder: tuple[int, int] = (1, 4)
    size_weights: tuple[float, ...] = (0.3, 0.4, 0.2, 0.1)
    base_range: tuple[float, float] = (1.0, 3.0)
    idiosyncratic: float = 0.25
    complementarity: float = 0.0


def generate_synthetic(m: int = 12, n_bids: int = 1000, params: SyntheticParams = SyntheticParams(),
                       seed: int = 0) -> CatsFile:
    if not 1 <= m <= 32:
        raise ValueError("m must lie in [1, 32]")
    rng = np.random.default_rng(seed)
    base = rng.uniform(*params.base_range, size=m)
    weights = np.asarray(params.size_weights[:m], dtype=float)
    weights /= weights.sum()
    lo, hi = params.bids_per_bidder

    bidders: list[list[tuple[tuple[int, ...], float]]] = []
    total = 0
    while total < n_bids:
        k = min(int(rng.integers(lo, hi + 1)), n_bids - total)
        own = base * np.exp(params.idiosyncratic * rng.standard_normal(m))
        atoms: dict[tuple[int, ...], float] = {}
        for _ in range(20 * k):
            if len(atoms) == k:
                break
            size = int(rng.choice(weights.size, p=weights)) + 1
            goods = tuple(sorted(int(g) for g in rng.choice(m, size=size, replace=False)))
            if goods not in atoms:
                atoms[goods] = float(own[list(goods)].sum() * (1 + params.complementarity * (size - 1)))
        bidders.append(list(atoms.items()))
        total += len(atoms)

    bids, n_dummy = [], 0
    for atoms in bidders:
        dummy = ()
        if len(atoms) > 1:
            dummy = (m + n_dummy,)
            n_dummy += 1
        for goods, value in atoms:
            bids.append(CatsBid(len(bids), round(value, 6), goods + dummy))
    return CatsFile(m, n_dummy, tuple(bids),
                    (f"synthetic m={m} bids={n_bids} seed={seed} params={params}",))


def pool_bids(pool: BidderPool) -> list[tuple[tuple[int, ...], float]]:
    return [(tuple(b.items()), v) for bidder in pool.bidders for b, v in bidder.atoms]


def profile_from_pairs(bidders: Sequence[Sequence[tuple[Sequence[int], float]]], m: int) -> ValuationProfile:
    """Convenience constructor: ``[[(items, value), ...], ...]`` per bidder."""
    return ValuationProfile(tuple(Valuation.from_pairs(b, m, i) for i, b in enumerate(bidders)), m)


@dataclass(frozen=True)
class ClearableParams:
    """Knobs of the planted-prices generator.

    Items carry reference prices drawn once per distribution; each instance
    jitters them, splits the items among some winning bidders and gives
    every other bidder bundles priced above their value. At the instance's
    reference prices each winner strictly prefers its share and each loser
    prefers nothing, so item clearing prices exist by construction.
    """

    price_range: tuple[float, float] = (0.4, 1.6)
    price_jitter: float = 0.1
    atoms_per_bidder: tuple[int, int] = (1, 3)
    max_bundle: int = 3
    winner_surplus: tuple[float, float] = (0.1, 0.4)
    loser_discount: tuple[float, float] = (0.05, 0.4)


@dataclass(frozen=True)
class ClearableBatch:
    profiles: tuple[ValuationProfile, ...]
    prices: tuple[tuple[float, ...], ...]  # planted clearing prices per instance


def _random_bundle(rng: np.random.Generator, m: int, max_size: int) -> tuple[int, ...]:
    size = int(rng.integers(1, min(max_size, m) + 1))
    return tuple(sorted(int(g) for g in rng.choice(m, size=size, replace=False)))


def generate_clearable(m: int = 6, n: int = 5, n_instances: int = 100,
                       params: ClearableParams = ClearableParams(), seed: int = 0,
                       base_seed: int | None = None) -> ClearableBatch:
    """Instances whose item clearing prices are known.

    ``base_seed`` fixes the distribution's reference prices, so batches drawn
    with different ``seed`` but the same ``base_seed`` share a distribution
    (this is how held-out training bids are produced).
    """
    if n < 1 or not 1 <= m <= 32:
        raise ValueError("need n >= 1 and 1 <= m <= 32")
    base = np.random.default_rng(seed if base_seed is None else base_seed).uniform(*params.price_range, size=m)
    rng = np.random.default_rng([seed, 1])
    lo, hi = params.atoms_per_bidder
    profiles, planted = [], []
    for _ in range(n_instances):
        c = base * np.exp(params.price_jitter * rng.standard_normal(m))
        n_win = int(rng.integers(1, min(n, m) + 1))
        owner = rng.permutation(np.concatenate([np.arange(n_win), rng.integers(0, n_win, m - n_win)]))
        winners = rng.permutation(n)[:n_win]
        bidders: list[list[tuple[tuple[int, ...], float]]] = [[] for _ in range(n)]
        for w, i in enumerate(winners):
            share = tuple(int(j) for j in np.flatnonzero(owner == w))
            s = rng.uniform(*params.winner_surplus)
            bidders[i].append((share, c[list(share)].sum() * (1 + s)))
            surplus = s * c[list(share)].sum()
            for _ in range(int(rng.integers(lo, hi + 1)) - 1):
                b = _random_bundle(rng, m, params.max_bundle)
                if b == share or any(b == a for a, _ in bidders[i]):
                    continue
                # utility at c stays below half the winner's surplus
                bidders[i].append((b, c[list(b)].sum() + rng.uniform(-0.5, 0.5) * surplus))
        for i in set(range(n)) - set(int(w) for w in winners):
            for _ in range(int(rng.integers(lo, hi + 1))):
                b = _random_bundle(rng, m, params.max_bundle)
                if any(b == a for a, _ in bidders[i]):
                    continue
                bidders[i].append((b, c[list(b)].sum() * (1 - rng.uniform(*params.loser_discount))))
        pairs = [[(b, round(max(v, 0.0), 6)) for b, v in atoms] for atoms in bidders]
        profiles.append(profile_from_pairs(pairs, m))
        planted.append(tuple(float(x) for x in c))
    return ClearableBatch(tuple(profiles), tuple(planted))

