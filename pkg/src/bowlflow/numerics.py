"""Small shared numerical kernels: non-uniform finite differences and fits.

The finite-difference weights use Fornberg's recursion, vectorised over many
query points so residual certification sweeps stay cheap.
"""

from __future__ import annotations

import numpy as np

from .errors import FitError


def fornberg_weights(stencils: np.ndarray, targets: np.ndarray, max_deriv: int) -> np.ndarray:
    """Finite-difference weights on arbitrary stencils.

    stencils: (nq, k) node abscissae per query, targets: (nq,) evaluation
    points. Returns (nq, max_deriv+1, k) weights so that
    ``(weights[:, m, :] * f(stencils)).sum(axis=1)`` approximates the m-th
    derivative at each target.
    """
    stencils = np.asarray(stencils, dtype=float)
    targets = np.asarray(targets, dtype=float)
    nq, k = stencils.shape
    mmax = max_deriv
    delta = np.zeros((nq, mmax + 1, k))
    delta[:, 0, 0] = 1.0
    c1 = np.ones(nq)
    c4 = stencils[:, 0] - targets
    for i in range(1, k):
        c2 = np.ones(nq)
        c5 = c4
        c4 = stencils[:, i] - targets
        for j in range(i):
            c3 = stencils[:, i] - stencils[:, j]
            c2 = c2 * c3
            if j == i - 1:
                for m in range(mmax, 0, -1):
                    delta[:, m, i] = c1 * (m * delta[:, m - 1, i - 1] - c5 * delta[:, m, i - 1]) / c2
                delta[:, 0, i] = -c1 * c5 * delta[:, 0, i - 1] / c2
            for m in range(mmax, 0, -1):
                delta[:, m, j] = (c4 * delta[:, m, j] - m * delta[:, m - 1, j]) / c3
            delta[:, 0, j] = c4 * delta[:, 0, j] / c3
        c1 = c2
    return delta


def stencil_indices(x_table: np.ndarray, x_query: np.ndarray, width: int) -> np.ndarray:
    """Start index of the width-point stencil nearest each query point."""
    n = x_table.size
    if n < width:
        raise FitError(f"table has {n} nodes, stencil needs {width}")
    pos = np.searchsorted(x_table, x_query)
    start = np.clip(pos - width // 2, 0, n - width)
    return start


def local_poly_derivative(
    x_table: np.ndarray,
    y_table: np.ndarray,
    x_query: np.ndarray,
    deriv: int = 1,
    width: int = 5,
) -> np.ndarray:
    """Derivative of tabulated data at arbitrary points by local polynomials.

    Fits the degree-(width-1) interpolating polynomial through the ``width``
    table nodes nearest each query point and differentiates it there.
    """
    x_query = np.atleast_1d(np.asarray(x_query, dtype=float))
    start = stencil_indices(x_table, x_query, width)
    idx = start[:, None] + np.arange(width)[None, :]
    w = fornberg_weights(x_table[idx], x_query, deriv)
    return np.einsum("qk,qk->q", w[:, deriv, :], y_table[idx])


def nonuniform_first_derivative(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second-order first derivative on a non-uniform grid, one-sided at ends."""
    return local_poly_derivative(x, y, x, deriv=1, width=3)


def thinned_indices(u: np.ndarray, min_ratio: float = 1.05) -> np.ndarray:
    """Indices of a geometrically thinned subsample of increasing u (first kept).

    Guarantees adjacent kept values differ by at least ``min_ratio`` in
    ratio, so finite differences on the subsample stay above float
    quantisation even when the underlying grid is much finer.
    """
    idx = [0]
    last = 0.0
    for i in range(1, u.size):
        if last == 0.0 or u[i] >= last * min_ratio:
            idx.append(i)
            last = float(u[i])
    return np.asarray(idx, dtype=int)


def even_tip_fit(u: np.ndarray, x: np.ndarray, u_cap: float, min_points: int = 8):
    """Least squares of x - x[0] = (kappa/2) u^2 + c4 u^4 on 0 < u <= u_cap.

    Returns (kappa, c4, n_points).  The even basis matches a smooth
    rotationally symmetric cap; kappa is the tip curvature.
    """
    u = np.asarray(u, dtype=float)
    window = (u > 0.0) & (u <= u_cap)
    if window.sum() < min_points:
        raise FitError(
            f"tip fit needs {min_points} nodes with 0 < u <= {u_cap:g}, "
            f"found {int(window.sum())}"
        )
    uw = u[window]
    Xw = np.asarray(x, dtype=float)[window] - x[0]
    basis = np.stack([uw**2, uw**4], axis=1)
    coef, *_ = np.linalg.lstsq(basis, Xw, rcond=None)
    return float(2.0 * coef[0]), float(coef[1]), int(window.sum())


def smoothstep_c2(u: np.ndarray) -> np.ndarray:
    """Quintic smoothstep: 0 at u<=0, 1 at u>=1, C^2 at both ends."""
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u * u)


def linear_fit(x: np.ndarray, y: np.ndarray, min_points: int = 8) -> tuple[float, float, float]:
    """Least-squares line y = slope*x + intercept; returns (slope, intercept, rms residual)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < min_points:
        raise FitError(f"fit needs at least {min_points} points, got {x.size}")
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2)))
