"""Dense tableau simplex for ``max c.y  s.t.  A y <= b, y >= 0`` with ``b >= 0``.

The slack basis is feasible, so a single phase suffices. Bland's rule
guarantees termination on degenerate problems, which the clearing LPs
produce in abundance. This is a reference implementation: it is exact
enough to cross-check the production solver, not fast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnboundedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimplexResult:
    x: np.ndarray
    objective: float
    duals: np.ndarray
    iterations: int


def simplex_max(c, A, b, tol: float = 1e-11, max_iter: int = 100_000) -> SimplexResult:
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    rows, n = A.shape
    if np.any(b < 0):
        raise ValueError("right-hand side must be nonnegative for the slack start")

    T = np.zeros((rows + 1, n + rows + 1))
    T[:rows, :n] = A
    T[:rows, n:n + rows] = np.eye(rows)
    T[:rows, -1] = b
    T[-1, :n] = -c
    basis = np.arange(n, n + rows)

    for it in range(max_iter):
        entering = np.flatnonzero(T[-1, :-1] < -tol)
        if entering.size == 0:
            break
        j = entering[0]
        col = T[:rows, j]
        positive = np.flatnonzero(col > tol)
        if positive.size == 0:
            raise UnboundedError(f"column {j} is unbounded")
        ratios = T[positive, -1] / col[positive]
        best = ratios.min()
        ties = positive[ratios <= best + tol]
        r = ties[np.argmin(basis[ties])]
        T[r] /= T[r, j]
        others = np.arange(rows + 1) != r
        T[others] -= np.outer(T[others, j], T[r])
        basis[r] = j
    else:
        raise RuntimeError("simplex iteration limit reached")

    sol = np.zeros(n + rows)
    sol[basis] = T[:rows, -1]
    return SimplexResult(sol[:n], float(T[-1, -1]), T[-1, n:n + rows].copy(), it)
