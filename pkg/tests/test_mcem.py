import itertools

import numpy as np
import pytest
from scipy import stats

from bayesauction.beliefs import BeliefState, GaussianBelief
from bayesauction.core import Bundle, ItemPriceVector
from bayesauction.mcem import (
    McemConfig,
    SamplePool,
    dual_prices,
    mc_objective,
    profile_pool,
    sample_tilted,
    solve_price_lp,
    solve_price_lp_reference,
    tilted_price_density,
    update_prices,
)
from bayesauction.cats import profile_from_pairs
from bayesauction.solvers import clearing_potential
from tests.oracles import random_profile


def pool_of(structure, m, values):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    L = values.shape[0]
    return SamplePool(structure, m, values, np.ones(L, int), np.zeros(L, bool), np.zeros(L))


def grid_objective(pool, step=1e-3, top=1.0):
    """Brute-force minimum of the M-step objective over a price grid."""
    axis = np.arange(0, top + step / 2, step)
    P = np.array(list(itertools.product(axis, repeat=pool.m)))
    masks = [b for s in pool.structure for b in s]
    B = np.array([[(b >> j) & 1 for j in range(pool.m)] for b in masks], dtype=float)
    owners = np.array([i for i, s in enumerate(pool.structure) for _ in s])
    cost = P @ B.T
    total = pool.size * P.sum(axis=1)
    for k in range(pool.size):
        util = pool.values[k][None, :] - cost
        for i in np.unique(owners):
            total += np.maximum(util[:, owners == i].max(axis=1), 0.0)
    return total.min()


class TestSampler:
    def test_no_tilt_passes_draws_through(self):
        def draw(size, rng):
            return rng.uniform(0, 10, (size, 2))
        cfg = McemConfig(lam=0.0, n_samples=50)
        pool = sample_tilted([[1], [2]], 2, draw, np.array([3.0, 3.0]), cfg, np.random.default_rng(1))
        raw = draw(64, np.random.default_rng(1))
        np.testing.assert_array_equal(pool.values, raw[:50])
        assert pool.attempts.tolist() == [1] * 50

    def test_two_point_chi_square(self):
        # one bidder, atom {0} worth 2 or 6; at price 4 the potentials are 2 and 0
        q = np.array([0.5, 0.5])
        support = np.array([2.0, 6.0])

        def draw(size, rng):
            return support[rng.choice(2, size=size, p=q)][:, None]

        cfg = McemConfig(lam=1.0, n_samples=100_000)
        pool = sample_tilted([[1]], 1, draw, np.array([4.0]), cfg, np.random.default_rng(3))
        counts = np.array([(pool.values[:, 0] == v).sum() for v in support])
        target = q * np.exp(-np.array([2.0, 0.0]))
        expected = target / target.sum() * counts.sum()
        assert stats.chisquare(counts, expected).pvalue > 0.01

    def test_clearing_prices_never_reject(self):
        def draw(size, rng):
            return rng.uniform(5, 6, (size, 1))
        cfg = McemConfig(lam=5.0, n_samples=200)
        pool = sample_tilted([[1]], 1, draw, np.array([4.0]), cfg, np.random.default_rng(0))
        assert pool.attempts.tolist() == [1] * 200
        assert pool.acceptance_rate == 1.0

    def test_forced_acceptance_keeps_best_draw(self):
        def draw(size, rng):
            return rng.uniform(0, 1, (size, 1))
        cfg = McemConfig(lam=1e6, n_samples=3, max_attempts=500)
        pool = sample_tilted([[1]], 1, draw, np.array([5.0]), cfg, np.random.default_rng(0))
        assert pool.n_forced == 3
        assert pool.attempts.tolist() == [500] * 3
        # potential is 5 - v, so the kept draw is the largest value in its run
        stream = draw(64, np.random.default_rng(0))
        assert pool.values[0, 0] >= stream[:, 0].max() - 1e-12


class TestPriceLp:
    def test_single_sample_plateau(self):
        prices, obj = solve_price_lp(pool_of([[1]], 1, [[4.0]]))
        assert obj == pytest.approx(4.0)
        assert prices.prices[0] == pytest.approx(4.0)

    def test_two_sample_plateau(self):
        # (2-p)+ + (6-p)+ + 2p is 8 on [0, 2] and 6 + p beyond
        prices, obj = solve_price_lp(pool_of([[1]], 1, [[2.0], [6.0]]))
        assert obj == pytest.approx(8.0)
        assert prices.prices[0] == pytest.approx(2.0)

    def test_zero_values(self):
        prices, obj = solve_price_lp(pool_of([[1, 2]], 2, [[0.0, 0.0]]))
        assert prices.prices == (0.0, 0.0) and obj == 0.0

    def test_matches_dense_simplex(self, rng):
        for _ in range(40):
            p = random_profile(rng, n_max=3, m_max=4)
            structure = [[b.bits for b, _ in v.atoms] for v in p]
            A = sum(map(len, structure))
            pool = pool_of(structure, p.m, rng.uniform(0, 5, (int(rng.integers(1, 5)), A)))
            prices, obj = solve_price_lp(pool)
            ref_prices, ref_obj = solve_price_lp_reference(pool)
            assert obj == pytest.approx(ref_obj, abs=1e-6)
            assert mc_objective(pool, ref_prices.as_array()) == pytest.approx(ref_obj, abs=1e-6)

    def test_grid_optimality(self, rng):
        for _ in range(15):
            n, m, L = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 4))
            p = random_profile(rng, n=n, m=m)
            structure = [[b.bits for b, _ in v.atoms] for v in p]
            A = sum(map(len, structure))
            values = rng.integers(0, 1001, (L, A)) / 1000
            pool = pool_of(structure, m, values)
            _, obj = solve_price_lp(pool)
            assert obj == pytest.approx(grid_objective(pool), abs=1e-6)

    def test_dual_prices_clear_a_clearable_profile(self):
        prof = profile_from_pairs([[([0], 5.0)], [([1], 3.0)], [([0, 1], 6.0)]], 2)
        prices, gap = dual_prices(prof)
        assert gap == pytest.approx(0.0, abs=1e-9)
        assert clearing_potential(prices, prof) == pytest.approx(0.0, abs=1e-9)


def concentrated_state():
    # single-minded bidders whose means admit clearing prices (e.g. p = (4, 2.5))
    pairs = [[([0], 5.0)], [([1], 3.0)], [([0, 1], 6.0)], [([1], 2.0)]]
    prof = profile_from_pairs(pairs, 2)
    beliefs = [{v.atoms[0][0]: GaussianBelief(v.atoms[0][1], 1e-4)} for v in prof]
    return prof, BeliefState(4, 2, beliefs=beliefs)


class TestUpdatePrices:
    def test_sharp_beliefs_find_clearing_prices(self):
        prof, state = concentrated_state()
        prices, steps = update_prices(state, ItemPriceVector.zeros(2), McemConfig(seed=1))
        assert clearing_potential(prices, prof) <= 1e-3
        assert all(min(s.prices) >= 0 for s in steps)

    def test_huge_eps_runs_once(self):
        _, state = concentrated_state()
        _, steps = update_prices(state, ItemPriceVector((1.0, 1.0)), McemConfig(eps=1e9))
        assert len(steps) == 1

    def test_deterministic(self):
        _, state = concentrated_state()
        state.beliefs[0][Bundle(1, 2)] = GaussianBelief(5.0, 1.0)
        cfg = McemConfig(seed=7, n_samples=32)
        a = update_prices(state, ItemPriceVector.zeros(2), cfg, round_index=3)
        b = update_prices(state, ItemPriceVector.zeros(2), cfg, round_index=3)
        assert a[0] == b[0]
        assert [s.prices for s in a[1]] == [s.prices for s in b[1]]

    def test_m_step_never_worsens_pool_objective(self, rng):
        state = BeliefState(3, 3, beliefs=[
            {Bundle(3, 3): GaussianBelief(4.0, 1.0), Bundle(4, 3): GaussianBelief(2.0, 0.5)},
            {Bundle(1, 3): GaussianBelief(3.0, 1.0)},
            {Bundle(6, 3): GaussianBelief(5.0, 2.0)}])
        from bayesauction.beliefs import sample_values
        prices = np.zeros(3)
        for _ in range(5):
            pool = sample_tilted(state.structure(), 3, lambda s, r: sample_values(state, s, r),
                                 prices, McemConfig(n_samples=64), rng)
            new, _ = solve_price_lp(pool)
            assert mc_objective(pool, new.as_array()) <= mc_objective(pool, prices) + 1e-9
            assert min(new.prices) >= 0
            prices = new.as_array()


def test_tilted_density_concentrates():
    profiles = [profile_from_pairs([[([0], a)], [([1], b)], [([0, 1], c)]], 2)
                for a, b, c in [(3, 2, 4), (4, 1, 6), (2, 3, 5)]]
    axis = np.arange(0, 5.01, 0.5)
    grid = np.array(list(itertools.product(axis, repeat=2)))
    clearing = np.array([any(clearing_potential(ItemPriceVector.of(p), v) <= 1e-12 for v in profiles)
                         for p in grid])
    masses = [tilted_price_density(grid, profiles, [1, 1, 1], lam)[clearing].sum() for lam in (1, 10, 100)]
    assert masses[0] < masses[1] < masses[2]
    assert masses[2] > 0.99


def test_profile_pool_roundtrip():
    prof = profile_from_pairs([[([0], 5.0), ([0, 1], 7.0)], [([1], 3.0)]], 2)
    pool = profile_pool(prof)
    assert pool.structure == [[1, 3], [2]]
    assert pool.values.tolist() == [[5.0, 7.0, 3.0]]
