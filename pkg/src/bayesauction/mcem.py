"""Monte Carlo EM price updates.

E-step: draw valuation profiles from the beliefs and keep each one with
probability ``exp(-lam * W_hat(prices; v))``. M-step: item prices that
minimize the clearing potential summed over the kept draws, found by a
linear program.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import highspy
import numpy as np
from scipy import sparse

from .beliefs import BeliefState, sample_values, update_beliefs
from .core import Bundle, ItemPriceVector, ValuationProfile, indicator_matrix
from .simplex import simplex_max
from .solvers import PackingTable, clearing_potential, wdp

logger = logging.getLogger(__name__)


FACE_TOL = 1e-9


class PriceSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class McemConfig:
    lam: float = 1.0
    n_samples: int = 128
    eps: float = 0.01
    max_iter: int = 50
    max_attempts: int = 10_000
    seed: int = 0
    unnormalized: bool = False
    warm_start: bool = True
    max_batch: int = 20_000

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.n_samples < 1 or self.max_iter < 1 or self.max_attempts < 1:
            raise ValueError("n_samples, max_iter and max_attempts must be >= 1")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class SamplePool:
    structure: list[list[int]]
    m: int
    values: np.ndarray
    attempts: np.ndarray
    forced: np.ndarray
    potentials: np.ndarray

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return float(self.size / max(int(self.attempts.sum()), 1))

    @property
    def n_forced(self) -> int:
        return int(self.forced.sum())


DrawFn = Callable[[int, np.random.Generator], np.ndarray]


def sample_tilted(structure: Sequence[Sequence[int]], m: int, draw: DrawFn,
                  prices: np.ndarray, cfg: McemConfig, rng: np.random.Generator,
                  table: PackingTable | None = None) -> SamplePool:
    """Rejection-sample ``cfg.n_samples`` profiles from the tilted posterior.

    ``draw(size, rng)`` returns a ``(size, A)`` array of nonnegative values
    over the flattened atoms of ``structure``. Draws are consumed as one
    stream; a run of ``cfg.max_attempts`` rejections ends with the best draw
    of that run being kept and flagged as forced.
    """
    table = table or PackingTable(structure, m)
    prices = np.asarray(prices, dtype=float)
    need = cfg.n_samples
    kept, attempts, forced, pots = [], [], [], []
    run_len, best_w, best_v = 0, np.inf, None
    rate = 1.0
    drawn = accepted_total = 0

    while len(kept) < need:
        remaining = need - len(kept)
        batch = int(min(cfg.max_batch, max(64, np.ceil(1.5 * remaining / max(rate, 1e-6)))))
        vals = draw(batch, rng)
        if cfg.unnormalized:
            w = table.utilities(vals, prices) + prices.sum()
        else:
            w = table.clearing_potential(vals, prices)
        accept = rng.random(batch) < np.exp(-cfg.lam * w)
        hits = np.flatnonzero(accept)
        drawn += batch
        accepted_total += hits.size

        pos = 0
        while pos < batch and len(kept) < need:
            seg_end = min(batch, pos + cfg.max_attempts - run_len)
            k = np.searchsorted(hits, pos)
            if k < hits.size and hits[k] < seg_end:
                q = hits[k]
                kept.append(vals[q])
                attempts.append(run_len + q - pos + 1)
                forced.append(False)
                pots.append(w[q])
                run_len, best_w, best_v = 0, np.inf, None
                pos = q + 1
                continue
            j = pos + int(np.argmin(w[pos:seg_end]))
            if w[j] < best_w:
                best_w, best_v = w[j], vals[j].copy()
            run_len += seg_end - pos
            pos = seg_end
            if run_len >= cfg.max_attempts:
                kept.append(best_v)
                attempts.append(run_len)
                forced.append(True)
                pots.append(best_w)
                run_len, best_w, best_v = 0, np.inf, None
        rate = max(accepted_total / drawn, 1.0 / cfg.max_attempts)

    return SamplePool([list(s) for s in structure], m, np.array(kept).reshape(need, -1),
                      np.array(attempts), np.array(forced), np.array(pots))


def _atom_price_matrix(structure: Sequence[Sequence[int]], m: int) -> np.ndarray:
    masks = [b for s in structure for b in s]
    return indicator_matrix(masks, m) if masks else np.zeros((0, m))


def mc_objective(pool: SamplePool, prices: np.ndarray) -> float:
    """Summed clearing objective (utilities plus revenue) over the pool."""
    table = PackingTable(pool.structure, pool.m)
    prices = np.asarray(prices, dtype=float)
    return float(table.utilities(pool.values, prices).sum() + pool.size * prices.sum())


def _lp_data(pool: SamplePool):
    """Constraint matrix of ``pi_ik + b.p >= v_ik(b)`` over variables ``(p, pi)``.

    Rows run sample-major over the flattened atoms; one ``pi`` column per
    (sample, bidder with atoms).
    """
    m, L = pool.m, pool.size
    B = _atom_price_matrix(pool.structure, m)
    owners = np.array([i for i, s in enumerate(pool.structure) for _ in s], dtype=int)
    A = owners.size
    active, slot = np.unique(owners, return_inverse=True)
    n_pi = L * active.size
    item_cols = [np.flatnonzero(row) for row in B]
    # per atom: its item columns followed by a placeholder for the pi column
    atom_cols = np.concatenate([np.append(c, -1) for c in item_cols])
    atom_len = np.array([c.size + 1 for c in item_cols])
    cols = np.tile(atom_cols, L)
    pi = m + (np.arange(L)[:, None] * active.size + slot[None, :]).ravel()
    cols[cols < 0] = pi
    indptr = np.concatenate([[0], np.cumsum(np.tile(atom_len, L))])
    G = sparse.csr_matrix((np.ones(cols.size), cols, indptr), shape=(L * A, m + n_pi))
    c = np.concatenate([np.full(m, float(L)), np.ones(n_pi)])
    return G, pool.values.reshape(-1).astype(float), c


def _highs_model(G: sparse.csr_matrix, rhs: np.ndarray, c: np.ndarray) -> highspy.Highs:
    n_rows, n_cols = G.shape
    lp = highspy.HighsLp()
    lp.num_col_, lp.num_row_ = n_cols, n_rows
    lp.col_cost_ = c
    lp.col_lower_ = np.zeros(n_cols)
    lp.col_upper_ = np.full(n_cols, highspy.kHighsInf)
    lp.row_lower_ = rhs
    lp.row_upper_ = np.full(n_rows, highspy.kHighsInf)
    lp.a_matrix_.format_ = highspy.MatrixFormat.kRowwise
    lp.a_matrix_.start_ = G.indptr.astype(np.int32)
    lp.a_matrix_.index_ = G.indices.astype(np.int32)
    lp.a_matrix_.value_ = G.data
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.passModel(lp)
    return h


def _run(h: highspy.Highs) -> np.ndarray:
    h.run()
    if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
        raise PriceSolverError(f"price LP failed: {h.modelStatusToString(h.getModelStatus())}")
    return np.asarray(h.getSolution().col_value)


def solve_price_lp(pool: SamplePool, tie_break: bool = True) -> tuple[ItemPriceVector, float]:
    """Optimal item prices for the M-step and the optimal objective.

    Among optimal price vectors the one with the largest total price is
    returned when ``tie_break`` is set (flat optima resolve toward higher
    prices). The tie-break is a second LP over the optimal face, warm
    started from the first basis.
    """
    m = pool.m
    if pool.values.size == 0 or not np.any(pool.values > 0):
        return ItemPriceVector.zeros(m), 0.0
    G, rhs, c = _lp_data(pool)
    h = _highs_model(G, rhs, c)
    x = _run(h)
    best_obj = float(h.getInfo().objective_function_value)
    prices = np.maximum(x[:m], 0.0)
    obj = mc_objective(pool, prices)

    if tie_break:
        # complementary slackness with the optimal duals pins down the whole
        # optimal face; maximize total price over it
        sol = h.getSolution()
        n_rows, n_cols = G.shape
        col_dual, row_dual = np.asarray(sol.col_dual), np.asarray(sol.row_dual)
        fixed = np.flatnonzero(col_dual > FACE_TOL).astype(np.int32)
        tight = np.flatnonzero(row_dual > FACE_TOL).astype(np.int32)
        if fixed.size:
            h.changeColsBounds(fixed.size, fixed, np.zeros(fixed.size), np.zeros(fixed.size))
        if tight.size:
            h.changeRowsBounds(tight.size, tight, rhs[tight], rhs[tight])
        idx = np.arange(n_cols, dtype=np.int32)
        h.changeColsCost(n_cols, idx, np.concatenate([-np.ones(m), np.zeros(n_cols - m)]))
        try:
            cand = np.maximum(_run(h)[:m], 0.0)
        except PriceSolverError:
            cand = None
        if cand is not None:
            cand_obj = mc_objective(pool, cand)
            if cand_obj <= min(obj, best_obj) + 1e-9 * max(1.0, abs(best_obj)):
                prices, obj = cand, cand_obj
    return ItemPriceVector.of(prices), obj


def solve_price_lp_reference(pool: SamplePool) -> tuple[ItemPriceVector, float]:
    """Same M-step through the dense simplex, solving the fractional packing dual.

    Dual: maximize sum v_ik(b) y_ikb subject to one unit per (i, k) and
    ``L`` units per item; optimal item prices are the item-row duals.
    """
    m, L = pool.m, pool.size
    B = _atom_price_matrix(pool.structure, m)
    owners = [i for i, s in enumerate(pool.structure) for _ in s]
    if not owners:
        return ItemPriceVector.zeros(m), 0.0
    active = sorted(set(owners))
    slot = {i: r for r, i in enumerate(active)}
    n_y = L * len(owners)
    n_pi = L * len(active)
    A = np.zeros((n_pi + m, n_y))
    c = np.zeros(n_y)
    for k in range(L):
        for a, i in enumerate(owners):
            col = k * len(owners) + a
            A[k * len(active) + slot[i], col] = 1.0
            A[n_pi:, col] = B[a]
            c[col] = pool.values[k, a]
    b = np.concatenate([np.ones(n_pi), np.full(m, float(L))])
    res = simplex_max(c, A, b)
    prices = np.maximum(res.duals[n_pi:], 0.0)
    return ItemPriceVector.of(prices), res.objective


@dataclass
class EmStep:
    tau: int
    prices: tuple[float, ...]
    objective: float
    acceptance_rate: float
    forced: int
    rel_change: float


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    diff = float(np.linalg.norm(new - old))
    base = float(np.linalg.norm(old))
    if base == 0.0:
        return 0.0 if diff == 0.0 else np.inf
    return diff / base


def update_prices(state: BeliefState, p_init: ItemPriceVector, cfg: McemConfig,
                  round_index: int = 0) -> tuple[ItemPriceVector, list[EmStep]]:
    """Run EM from ``p_init`` until the relative price change drops below ``eps``.

    EM also stops early when an iterate repeats an earlier one of the same
    round, since from there it would only cycle.
    """
    structure = state.structure()
    if not any(structure):
        return ItemPriceVector.zeros(state.m), []
    table = PackingTable(structure, state.m)

    def draw(size, rng):
        return sample_values(state, size, rng)

    prices = p_init.as_array()
    steps = []
    seen = {prices.tobytes()}
    for tau in range(1, cfg.max_iter + 1):
        # same random stream at every EM iteration of a round, so the map
        # from prices to pools is deterministic and a fixed point stops EM
        rng = np.random.default_rng([cfg.seed, round_index])
        pool = sample_tilted(structure, state.m, draw, prices, cfg, rng, table)
        new, obj = solve_price_lp(pool)
        new = new.as_array()
        change = _rel_change(new, prices)
        steps.append(EmStep(tau, tuple(new), obj, pool.acceptance_rate, pool.n_forced, change))
        logger.debug("round %d em %d obj=%.4f acc=%.3f forced=%d change=%.4g",
                     round_index, tau, obj, pool.acceptance_rate, pool.n_forced, change)
        prices = new
        if change < cfg.eps:
            break
        key = prices.tobytes()
        if key in seen:
            # the iteration map is deterministic within a round: a revisit is a cycle
            break
        seen.add(key)
    return ItemPriceVector.of(prices), steps


@dataclass
class BayesianPricer:
    """Belief update followed by the MCEM price update, once per round."""

    prior: Callable[[Bundle], tuple[float, float]]
    cfg: McemConfig = field(default_factory=McemConfig)
    beta: float = 1.0
    name: str = "bayes"
    state: BeliefState | None = field(default=None, init=False)
    _prior_cache: dict = field(default_factory=dict, init=False, repr=False)

    def reset(self, n: int, m: int) -> None:
        self.state = BeliefState(n, m, self.beta)
        self._prior_cache = {}

    def _prior(self, b: Bundle) -> tuple[float, float]:
        if b not in self._prior_cache:
            self._prior_cache[b] = self.prior(b)
        return self._prior_cache[b]

    def next_prices(self, prices: ItemPriceVector, demands: list[Bundle],
                    round_index: int) -> tuple[ItemPriceVector, dict]:
        update_beliefs(self.state, demands, prices, self._prior)
        start = prices if self.cfg.warm_start else ItemPriceVector.zeros(prices.m)
        new, steps = update_prices(self.state, start, self.cfg, round_index)
        diag = {
            "em_iterations": len(steps),
            "acceptance": [round(s.acceptance_rate, 6) for s in steps],
            "forced": sum(s.forced for s in steps),
        }
        return new, diag


def profile_pool(profile: ValuationProfile) -> SamplePool:
    """A one-draw pool holding a known profile."""
    structure = [[b.bits for b, _ in v.atoms] for v in profile]
    values = np.array([[val for v in profile for _, val in v.atoms]])
    return SamplePool(structure, profile.m, values, np.ones(1, dtype=int),
                      np.zeros(1, dtype=bool), np.zeros(1))


def dual_prices(profile: ValuationProfile) -> tuple[ItemPriceVector, float]:
    """Item prices minimizing the clearing objective of a known profile, and its gap.

    The gap is zero exactly when item clearing prices exist.
    """
    prices, obj = solve_price_lp(profile_pool(profile))
    return prices, max(0.0, obj - wdp(profile).value)


def tilted_price_density(grid: np.ndarray, profiles: Sequence[ValuationProfile],
                         weights: Sequence[float], lam: float) -> np.ndarray:
    """Normalized ``sum_v exp(-lam * W_hat(p; v)) Q(v)`` over the price rows of ``grid``.

    ``profiles`` with ``weights`` form a discrete belief ``Q``; this is the
    exact tilted price density on a finite price grid.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    w = np.asarray(weights, dtype=float)
    W = np.array([[clearing_potential(ItemPriceVector.of(p), v) for v in profiles] for p in grid])
    dens = np.exp(-lam * W) @ (w / w.sum())
    return dens / dens.sum()
