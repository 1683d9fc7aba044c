import logging

import numpy as np
import pytest
from scipy import linalg

from bayesauction.core import Bundle, Valuation
from bayesauction.prior import (
    DEFAULT_NOISE_VAR,
    DEFAULT_SIGNAL_VAR,
    JITTER,
    HyperGrid,
    PriorModel,
    fit,
    select_hyperparameters,
)


def weight_space_predict(X, y, Z, signal_var, noise_var):
    """Bayesian linear regression with weights ~ N(0, signal_var I)."""
    noise = noise_var + JITTER
    A = X.T @ X / noise + np.eye(X.shape[1]) / signal_var
    cov = np.linalg.inv(A)
    w = cov @ X.T @ y / noise
    mean = Z @ w
    var = np.einsum("ij,jk,ik->i", Z, cov, Z) + noise_var
    return mean, np.sqrt(var)


def additive_bidders():
    return [Valuation.from_pairs([([0], 1.0)], 2, 0), Valuation.from_pairs([([1], 2.0)], 2, 1),
            Valuation.from_pairs([([0, 1], 3.0)], 2, 2)]


class TestFit:
    def test_additive_data(self):
        model = fit(additive_bidders())
        mean, std = model.predict(Bundle(3, 2))
        ref, _ = weight_space_predict(model.X, model.y, np.array([[1.0, 1.0]]),
                                      model.signal_var, model.noise_var)
        assert mean == pytest.approx(ref[0], abs=1e-8)
        assert abs(mean - 3.0) <= np.sqrt(model.noise_var)

    def test_repeated_observation_interpolates(self):
        bidders = [Valuation.from_pairs([([0], 5.0)], 1, i) for i in range(3)]
        model = fit(bidders, signal_var=10.0, noise_var=1e-6)
        assert model.predict(Bundle(1, 1))[0] == pytest.approx(5.0, abs=1e-4)

    def test_empty_bundle(self):
        model = fit(additive_bidders())
        mean, std = model.predict(Bundle(0, 2))
        assert mean == 0
        assert std == pytest.approx(np.sqrt(model.noise_var))

    def test_too_few_bids(self):
        with pytest.raises(ValueError):
            fit([Valuation.from_pairs([([0], 1.0)], 1)])

    def test_degenerate_targets_use_defaults(self, caplog):
        bidders = [Valuation.from_pairs([([i], 2.0)], 3, i) for i in range(3)]
        with caplog.at_level(logging.WARNING):
            model = fit(bidders)
        assert (model.signal_var, model.noise_var) == (DEFAULT_SIGNAL_VAR, DEFAULT_NOISE_VAR)
        assert "degenerate" in caplog.text

    def test_grid_choice_matches_cholesky_scoring(self, rng):
        X = (rng.random((30, 5)) < 0.4).astype(float)
        y = X @ rng.uniform(0.5, 2, 5) + 0.3 * rng.standard_normal(30)
        grid = HyperGrid(tuple(np.logspace(-2, 2, 9)), tuple(np.logspace(-3, 1, 9)))
        sv, nv, lml = select_hyperparameters(X, y, grid)
        scores = {(a, b): PriorModel(X, y, a, b).log_marginal_likelihood()
                  for a in grid.signal_vars for b in grid.noise_vars}
        assert (sv, nv) == max(scores, key=scores.get)
        assert lml == pytest.approx(scores[(sv, nv)], rel=1e-9)

    def test_likelihood_prefers_cleaner_data(self, rng):
        X = (rng.random((40, 4)) < 0.5).astype(float)
        clean = X @ np.array([1.0, 2.0, 0.5, 1.5])
        noisy = clean + rng.standard_normal(40)
        lml = lambda y: PriorModel(X, y, 1.0, 0.01).log_marginal_likelihood()
        assert lml(clean) > lml(noisy)


class TestPredict:
    def test_matches_weight_space_regression(self, rng):
        for _ in range(25):
            n, m = int(rng.integers(2, 12)), int(rng.integers(1, 7))
            X = (rng.random((n, m)) < 0.5).astype(float)
            y = rng.uniform(0, 10, n)
            sv, nv = 10 ** rng.uniform(-2, 2), 10 ** rng.uniform(-3, 1)
            model = PriorModel(X, y, sv, nv)
            Z = (rng.random((6, m)) < 0.5).astype(float)
            mean, std = model.predict_features(Z)
            ref_mean, ref_std = weight_space_predict(X, y, Z, sv, nv)
            np.testing.assert_allclose(mean, ref_mean, rtol=1e-8, atol=1e-8)
            np.testing.assert_allclose(std, ref_std, rtol=1e-8, atol=1e-8)

    def test_additive_in_noise_free_limit(self, rng):
        X = (rng.random((8, 6)) < 0.5).astype(float)
        model = PriorModel(X, rng.uniform(0, 5, 8), 1.0, 1e-6)
        a, b = Bundle.from_items([0, 2], 6), Bundle.from_items([3, 5], 6)
        assert model.predict(a | b)[0] == pytest.approx(model.predict(a)[0] + model.predict(b)[0], abs=1e-8)

    def test_variance_bounds(self, rng):
        X = (rng.random((10, 4)) < 0.5).astype(float)
        model = PriorModel(X, rng.uniform(0, 5, 10), 2.0, 0.3)
        for bits in range(16):
            b = Bundle(bits, 4)
            _, std = model.predict(b)
            assert std ** 2 >= model.noise_var - 1e-15
            assert std ** 2 <= model.signal_var * len(b) + model.noise_var + 1e-12


class TestLikelihood:
    def test_standard_normal(self):
        model = PriorModel(np.array([[1.0]]), np.array([0.0]), 0.5, 0.5)
        assert model.log_marginal_likelihood() == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-8)

    def test_order_invariant(self, rng):
        X = (rng.random((12, 3)) < 0.5).astype(float)
        y = rng.uniform(0, 4, 12)
        perm = rng.permutation(12)
        a = PriorModel(X, y, 1.3, 0.2).log_marginal_likelihood()
        b = PriorModel(X[perm], y[perm], 1.3, 0.2).log_marginal_likelihood()
        assert a == pytest.approx(b, rel=1e-12)

    def test_factorization_failure_reported(self, monkeypatch):
        # K is PSD by construction, so force the failure path
        def broken(*args, **kwargs):
            raise linalg.LinAlgError("not positive definite")
        monkeypatch.setattr("bayesauction.prior.linalg.cholesky", broken)
        with pytest.raises(linalg.LinAlgError, match="after jitter"):
            PriorModel(np.eye(2), np.zeros(2), 1.0, 1.0)


def test_save_load_roundtrip(tmp_path, rng):
    X = (rng.random((7, 3)) < 0.5).astype(float)
    model = PriorModel(X, rng.uniform(0, 5, 7), 0.7, 0.05)
    path = tmp_path / "prior.txt"
    model.save(path)
    again = PriorModel.load(path)
    assert (again.signal_var, again.noise_var) == (model.signal_var, model.noise_var)
    np.testing.assert_array_equal(again.X, model.X)
    np.testing.assert_array_equal(again.y, model.y)
    assert again.predict(Bundle(5, 3)) == model.predict(Bundle(5, 3))
