"""Gaussian-process prior over bundle values with a linear kernel.

The kernel on bundle indicator vectors is ``k(x, x') = signal_var * x . x'``,
so the predictive mean of a bundle is the sum of per-item predictions.
Hyperparameters come from a log-spaced grid search on the log marginal
likelihood. The whole grid is scored from one eigendecomposition of
``X X^T``; the chosen model then caches a Cholesky factor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .core import Bundle, Valuation, indicator_matrix

logger = logging.getLogger(__name__)

JITTER = 1e-8
DEFAULT_SIGNAL_VAR = 1.0
DEFAULT_NOISE_VAR = 0.1


@dataclass(frozen=True)
class HyperGrid:
    signal_vars: tuple[float, ...] = tuple(np.logspace(-2, 2, 17))
    noise_vars: tuple[float, ...] = tuple(np.logspace(-3, 1, 17))


def _lml_from_eigen(eigvals: np.ndarray, proj_sq: np.ndarray, signal_var: float,
                    noise_var: float) -> float:
    # proj_sq: squared projections of y onto the eigenvectors of X X^T
    d = signal_var * eigvals + noise_var + JITTER
    n = eigvals.size
    return float(-0.5 * np.sum(proj_sq / d) - 0.5 * np.sum(np.log(d)) - 0.5 * n * np.log(2 * np.pi))


@dataclass
class PriorModel:
    X: np.ndarray
    y: np.ndarray
    signal_var: float
    noise_var: float
    _chol: np.ndarray = field(init=False, repr=False)
    _alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.signal_var <= 0 or self.noise_var <= 0:
            raise ValueError("GP variances must be positive")
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        K = self.signal_var * self.X @ self.X.T
        K[np.diag_indices_from(K)] += self.noise_var + JITTER
        try:
            self._chol = linalg.cholesky(K, lower=True)
        except linalg.LinAlgError as exc:
            raise linalg.LinAlgError("kernel matrix not positive definite after jitter") from exc
        self._alpha = linalg.cho_solve((self._chol, True), self.y)

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def predict_features(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and std (noise included) for indicator rows ``Z``."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        Ks = self.signal_var * Z @ self.X.T
        mean = Ks @ self._alpha
        w = linalg.solve_triangular(self._chol, Ks.T, lower=True)
        prior_var = self.signal_var * np.einsum("ij,ij->i", Z, Z)
        var = prior_var - np.einsum("ij,ij->j", w, w) + self.noise_var
        return mean, np.sqrt(np.maximum(var, self.noise_var))

    def predict(self, x: Bundle) -> tuple[float, float]:
        mean, std = self.predict_features(x.indicator()[None, :])
        return float(mean[0]), float(std[0])

    def log_marginal_likelihood(self) -> float:
        n = self.y.size
        return float(-0.5 * self.y @ self._alpha - np.sum(np.log(np.diag(self._chol)))
                     - 0.5 * n * np.log(2 * np.pi))

    def save(self, path: str | Path) -> None:
        """Flat text: a header line with hyperparameters, then ``y x_1 .. x_m`` rows."""
        with open(path, "w") as fh:
            fh.write(f"# signal_var={self.signal_var!r} noise_var={self.noise_var!r} "
                     f"m={self.m} n={self.y.size}\n")
            for row, target in zip(self.X, self.y):
                fh.write(repr(float(target)) + " " + " ".join(str(int(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PriorModel":
        with open(path) as fh:
            header = fh.readline().lstrip("#").split()
            meta = dict(kv.split("=", 1) for kv in header)
            m = int(meta["m"])
            rows = [line.split() for line in fh if line.strip()]
        y = np.array([float(r[0]) for r in rows])
        X = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(rows), m)
        return cls(X, y, float(meta["signal_var"]), float(meta["noise_var"]))


def training_design(bidders: Iterable[Valuation]) -> tuple[np.ndarray, np.ndarray]:
    """Every atom of every bidder becomes one regression observation."""
    masks, targets, m = [], [], None
    for v in bidders:
        m = v.m
        for b, val in v.atoms:
            masks.append(b.bits)
            targets.append(val)
    if m is None:
        raise ValueError("no training bidders")
    return indicator_matrix(masks, m), np.asarray(targets, dtype=float)


def select_hyperparameters(X: np.ndarray, y: np.ndarray,
                           grid: HyperGrid = HyperGrid()) -> tuple[float, float, float]:
    eigvals, eigvecs = linalg.eigh(X @ X.T)
    eigvals = np.maximum(eigvals, 0.0)
    proj_sq = (eigvecs.T @ y) ** 2
    best = (-np.inf, DEFAULT_SIGNAL_VAR, DEFAULT_NOISE_VAR)
    for sv in grid.signal_vars:
        for nv in grid.noise_vars:
            lml = _lml_from_eigen(eigvals, proj_sq, sv, nv)
            if lml > best[0]:
                best = (lml, sv, nv)
    return best[1], best[2], best[0]


def fit(train: Sequence[Valuation] | None = None, *, X: np.ndarray | None = None,
        y: np.ndarray | None = None, grid: HyperGrid = HyperGrid(),
        signal_var: float | None = None, noise_var: float | None = None) -> PriorModel:
    """Fit the prior on training bids, or on an explicit design ``X, y``.

    Passing both ``signal_var`` and ``noise_var`` skips the grid search.
    """
    if X is None:
        X, y = training_design(train or ())
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise ValueError("need at least two training bids")
    if signal_var is not None and noise_var is not None:
        return PriorModel(X, y, signal_var, noise_var)
    if np.ptp(y) == 0:
        logger.warning("degenerate training targets; using default GP hyperparameters")
        return PriorModel(X, y, DEFAULT_SIGNAL_VAR, DEFAULT_NOISE_VAR)
    sv, nv, lml = select_hyperparameters(X, y, grid)
    logger.debug("prior fit: signal_var=%.4g noise_var=%.4g lml=%.4f", sv, nv, lml)
    return PriorModel(X, y, signal_var if signal_var is not None else sv,
                      noise_var if noise_var is not None else nv)
