"""Translating-soliton profile ODEs and their tabulated solutions.

The rotationally symmetric translating soliton (the bowl; for dimension 1
the grim reaper curve) has a profile P solving

    P_ww / (1 + P_w^2) + (n - 1) P_w / w = 1,      P(0) = P_w(0) = 0,

with a regular singular point at w = 0.  Integration starts from the series

    P(w) = w^2/(2n) + c4 w^4 + c6 w^6 + O(w^8),
    c4 = 1 / (4 n^3 (n + 2)),   c6 = 2 (3 - n) c4 / (3 n^2 (n + 4)),

whose coefficients follow by substituting an even power series into the ODE
(the quartic and sextic coefficients are cross-checked against brute-force
integration in the test suite).

The barrier construction additionally needs the even correction profile Q
solving

    -(n-1) Q_z / z - d/dz[ Q_z / (1 + F_z^2 / A^4) ] = 1,   Q(0) = Q_z(0) = 0,

where F(z) = (A^2/a) P(a z).  Since F_z^2 / A^4 = P_w(a z)^2 the solution
depends on (n, a) only; A is kept for bookkeeping.  Near zero
Q(z) = -z^2/(2n) - 3 a^2 c4 z^4 + O(z^6).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .errors import ProfileError
from .numerics import linear_fit, local_poly_derivative

_FLOAT_FMT = "%.17g"


def series_coefficients(n: int) -> tuple[float, float]:
    """Quartic and sextic coefficients of the profile series at w = 0."""
    c4 = 1.0 / (4.0 * n**3 * (n + 2))
    c6 = 2.0 * (3.0 - n) * c4 / (3.0 * n**2 * (n + 4))
    return c4, c6


def _series_bowl(n: int, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c4, c6 = series_coefficients(n)
    p = w * w / (2.0 * n) + c4 * w**4 + c6 * w**6
    v = w / n + 4.0 * c4 * w**3 + 6.0 * c6 * w**5
    return p, v


def _bowl_rhs(n: int):
    def rhs(w, y):
        v = y[1]
        return (v, (1.0 - (n - 1) * v / w) * (1.0 + v * v))

    return rhs


def bowl_second_derivative(n: int, w: np.ndarray, p_w: np.ndarray) -> np.ndarray:
    """P_ww recovered from the defining ODE, with the w -> 0 series limit."""
    p_w = np.asarray(p_w, dtype=float)
    return (1.0 - (n - 1) * _deriv_over_arg(n, w, p_w)) * (1.0 + p_w * p_w)


def _deriv_over_arg(n: int, w: np.ndarray, p_w: np.ndarray) -> np.ndarray:
    """P_w(w)/w with the series limit 1/n at w = 0."""
    c4, c6 = series_coefficients(n)
    w = np.asarray(w, dtype=float)
    small = w < 1e-6
    safe = np.where(small, 1.0, w)
    return np.where(small, 1.0 / n + 4.0 * c4 * w * w + 6.0 * c6 * w**4, np.asarray(p_w) / safe)


@dataclass
class SolitonProfile:
    """Tabulated bowl-soliton profile for one dimension n >= 1."""

    dimension: int
    grid: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    series_radius: float
    tol: float = 1e-8
    _value_spline: CubicHermiteSpline | None = field(default=None, repr=False, compare=False)
    _deriv_spline: CubicHermiteSpline | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.grid = np.ascontiguousarray(self.grid, dtype=float)
        self.values = np.ascontiguousarray(self.values, dtype=float)
        self.derivs = np.ascontiguousarray(self.derivs, dtype=float)
        if self.dimension < 1:
            raise ProfileError(f"dimension must be >= 1, got {self.dimension}")
        if self.grid.ndim != 1 or np.any(np.diff(self.grid) <= 0.0):
            raise ProfileError("profile grid must be strictly increasing")
        if self.grid[0] != 0.0 or self.values[0] != 0.0 or self.derivs[0] != 0.0:
            raise ProfileError("profile must start at the tip: P(0) = P_w(0) = 0")
        if np.any(self.derivs[1:] <= 0.0):
            raise ProfileError("profile derivative must be positive for w > 0")
        if np.any(np.diff(self.derivs) <= 0.0):
            raise ProfileError("profile derivative must be strictly increasing (convexity)")
        for arr in (self.grid, self.values, self.derivs):
            arr.setflags(write=False)

    @property
    def w_max(self) -> float:
        return float(self.grid[-1])

    def _splines(self) -> tuple[CubicHermiteSpline, CubicHermiteSpline]:
        if self._value_spline is None:
            self._value_spline = CubicHermiteSpline(self.grid, self.values, self.derivs)
            d2 = self.second_derivative(self.grid)
            self._deriv_spline = CubicHermiteSpline(self.grid, self.derivs, d2)
        return self._value_spline, self._deriv_spline

    def value(self, w) -> np.ndarray:
        self._check_domain(w)
        return self._splines()[0](w)

    def deriv(self, w) -> np.ndarray:
        self._check_domain(w)
        return self._splines()[1](w)

    def second_derivative(self, w) -> np.ndarray:
        """P_ww through the ODE identity evaluated on stored or interpolated P_w."""
        w = np.asarray(w, dtype=float)
        if w.shape == self.grid.shape and np.array_equal(w, self.grid):
            pw = self.derivs
        else:
            self._check_domain(w)
            pw = self._splines()[1](w)
        n = self.dimension
        return (1.0 - (n - 1) * _deriv_over_arg(n, w, pw)) * (1.0 + pw * pw)

    def deriv_over_w(self, w) -> np.ndarray:
        """P_w(w)/w, regular through w = 0."""
        w = np.asarray(w, dtype=float)
        self._check_domain(w)
        pw = self._splines()[1](w)
        return _deriv_over_arg(self.dimension, w, pw)

    def _check_domain(self, w) -> None:
        w = np.asarray(w, dtype=float)
        if w.size and (np.min(w) < 0.0 or np.max(w) > self.grid[-1] * (1.0 + 1e-12)):
            raise ProfileError(
                f"query outside tabulated domain [0, {self.grid[-1]:g}]: "
                f"[{np.min(w):g}, {np.max(w):g}]"
            )


@dataclass
class QProfile:
    """Tabulated correction profile Q for the interior barrier family."""

    dimension: int
    a: float
    A: float
    grid: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    series_radius: float
    bowl: SolitonProfile | None = field(default=None, repr=False, compare=False)
    tol: float = 1e-8
    _value_spline: CubicHermiteSpline | None = field(default=None, repr=False, compare=False)
    _deriv_spline: CubicHermiteSpline | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.grid = np.ascontiguousarray(self.grid, dtype=float)
        self.values = np.ascontiguousarray(self.values, dtype=float)
        self.derivs = np.ascontiguousarray(self.derivs, dtype=float)
        if self.grid[0] != 0.0 or self.values[0] != 0.0 or self.derivs[0] != 0.0:
            raise ProfileError("correction profile must satisfy Q(0) = Q_z(0) = 0")
        if np.any(self.values[1:] >= 0.0):
            raise ProfileError("correction profile must be negative for z > 0")
        if np.any(self.derivs[1:] >= 0.0):
            raise ProfileError("correction profile must be decreasing for z > 0")
        for arr in (self.grid, self.values, self.derivs):
            arr.setflags(write=False)

    @property
    def z_max(self) -> float:
        return float(self.grid[-1])

    def _splines(self):
        if self._value_spline is None:
            self._value_spline = CubicHermiteSpline(self.grid, self.values, self.derivs)
            d2 = self.second_derivative(self.grid)
            self._deriv_spline = CubicHermiteSpline(self.grid, self.derivs, d2)
        return self._value_spline, self._deriv_spline

    def value(self, z) -> np.ndarray:
        self._check_domain(z)
        return self._splines()[0](z)

    def deriv(self, z) -> np.ndarray:
        self._check_domain(z)
        return self._splines()[1](z)

    def deriv_over_z(self, z) -> np.ndarray:
        """Q_z(z)/z, regular through z = 0 with limit -1/n."""
        z = np.asarray(z, dtype=float)
        self._check_domain(z)
        qz = self._splines()[1](z)
        c4, _ = series_coefficients(self.dimension)
        small = z < 1e-6
        safe = np.where(small, 1.0, z)
        return np.where(small, -1.0 / self.dimension - 12.0 * self.a**2 * c4 * z * z, qz / safe)

    def second_derivative(self, z) -> np.ndarray:
        """Q_zz recovered from the defining ODE."""
        if self.bowl is None:
            raise ProfileError("correction profile lacks its bowl reference")
        z = np.asarray(z, dtype=float)
        if z.shape == self.grid.shape and np.array_equal(z, self.grid):
            qz = self.derivs
        else:
            self._check_domain(z)
            qz = self._splines()[1](z)
        n, a = self.dimension, self.a
        pw = self.bowl.deriv(a * z)
        pww = self.bowl.second_derivative(a * z)
        g = 1.0 + pw * pw
        gz = 2.0 * a * pw * pww
        c4, _ = series_coefficients(n)
        small = z < 1e-6
        safe = np.where(small, 1.0, z)
        qz_over_z = np.where(small, -1.0 / n - 12.0 * a**2 * c4 * z * z, qz / safe)
        return g * (-1.0 - (n - 1) * qz_over_z) + qz * gz / g

    def _check_domain(self, z) -> None:
        z = np.asarray(z, dtype=float)
        if z.size and (np.min(z) < 0.0 or np.max(z) > self.grid[-1] * (1.0 + 1e-12)):
            raise ProfileError(
                f"query outside tabulated domain [0, {self.grid[-1]:g}]: "
                f"[{np.min(z):g}, {np.max(z):g}]"
            )


def _build_grid(w0: float, w_max: float, h_uniform: float) -> np.ndarray:
    """Geometric nodes on [w0, min(1, w_max)], uniform spacing beyond 1."""
    w_knee = min(1.0, w_max)
    ratio = 1.0 + max(h_uniform, 1e-4)
    n_geo = max(int(np.ceil(np.log(w_knee / w0) / np.log(ratio))), 8)
    geo = w0 * (w_knee / w0) ** (np.arange(n_geo + 1) / n_geo)
    if w_max <= w_knee:
        return np.concatenate([[0.0], geo])
    n_uni = max(int(np.ceil((w_max - w_knee) / h_uniform)), 2)
    uni = np.linspace(w_knee, w_max, n_uni + 1)
    return np.concatenate([[0.0], geo, uni[1:]])


def solve_bowl_profile(
    n: int,
    w_max: float,
    tol: float = 1e-8,
    series_radius: float = 1e-3,
    max_spacing: float = 0.01,
) -> SolitonProfile:
    """Solve the bowl profile ODE and tabulate (P, P_w) on [0, w_max].

    The series start hands off to an adaptive integrator at ``series_radius``.
    The uniform section spacing is shrunk where the third derivative is large
    (for n = 1 the profile has a finite-w singularity at pi/2) so that the
    residual oracle stays below ``tol``.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ProfileError(f"dimension must be a positive integer, got {n!r}")
    if w_max < 1.0:
        raise ProfileError(f"w_max must be >= 1, got {w_max}")
    if not 0.0 < tol <= 1e-3:
        raise ProfileError(f"tol must lie in (0, 1e-3], got {tol}")
    if n == 1 and w_max >= np.pi / 2:
        raise ProfileError("for n = 1 the profile blows up at pi/2; choose w_max < pi/2")

    w0 = series_radius
    p0, v0 = _series_bowl(n, np.asarray(w0))
    sol = solve_ivp(
        _bowl_rhs(n),
        (w0, w_max),
        [float(p0), float(v0)],
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
        dense_output=True,
    )
    if not sol.success:
        raise ProfileError(f"profile integration failed: {sol.message}")

    # Spacing controller from |P_www| sampled on the solved trajectory.
    w_s = np.geomspace(max(0.5, w0 * 10), w_max, 256)
    p_s, v_s = sol.sol(w_s)
    vp = (1.0 - (n - 1) * v_s / w_s) * (1.0 + v_s * v_s)
    vpp = (-(n - 1) * (vp * w_s - v_s) / w_s**2) * (1.0 + v_s * v_s) + (
        1.0 - (n - 1) * v_s / w_s
    ) * 2.0 * v_s * vp
    budget = 72.0 * 0.02 * tol
    h_uniform = float(np.clip(np.min((budget / np.maximum(np.abs(vpp), 1e-12)) ** (1.0 / 3.0)),
                              1e-4, max_spacing))

    grid = _build_grid(w0, w_max, h_uniform)
    inner = grid <= w0
    values = np.empty_like(grid)
    derivs = np.empty_like(grid)
    values[inner], derivs[inner] = _series_bowl(n, grid[inner])
    values[0] = derivs[0] = 0.0
    pv = sol.sol(grid[~inner])
    values[~inner], derivs[~inner] = pv[0], pv[1]

    profile = SolitonProfile(n, grid, values, derivs, series_radius=w0, tol=tol)
    resid = np.max(np.abs(profile_residual(profile)))
    if resid > tol:
        raise ProfileError(
            f"profile residual {resid:.3e} exceeds tol {tol:.3e}; "
            "w_max or tol unattainable with this spacing"
        )
    return profile


def profile_residual(profile: SolitonProfile, w: Iterable[float] | None = None) -> np.ndarray:
    """Defining-ODE residual of the tabulated data at interior points.

    The derivative of P_w is reconstructed from the stored table alone by
    local polynomial differentiation, so the check is independent of the
    integration path that produced the data.
    """
    n = profile.dimension
    if w is None:
        wq = profile.grid[1:-1]
        vq = profile.derivs[1:-1]
    else:
        wq = np.atleast_1d(np.asarray(w, dtype=float))
        if np.any(wq <= 0.0):
            raise ProfileError("residual is defined at interior points w > 0 only")
        profile._check_domain(wq)
        vq = local_poly_derivative(profile.grid, profile.derivs, wq, deriv=0, width=5)
    vprime = local_poly_derivative(profile.grid, profile.derivs, wq, deriv=1, width=5)
    return vprime / (1.0 + vq * vq) + (n - 1) * vq / wq - 1.0


def q_residual(q: QProfile, z: Iterable[float] | None = None) -> np.ndarray:
    """Defining-ODE residual of the correction profile at interior points."""
    if q.bowl is None:
        raise ProfileError("correction profile lacks its bowl reference")
    n, a = q.dimension, q.a
    if z is None:
        zq = q.grid[1:-1]
        vq = q.derivs[1:-1]
    else:
        zq = np.atleast_1d(np.asarray(z, dtype=float))
        if np.any(zq <= 0.0):
            raise ProfileError("residual is defined at interior points z > 0 only")
        q._check_domain(zq)
        vq = local_poly_derivative(q.grid, q.derivs, zq, deriv=0, width=5)
    vprime = local_poly_derivative(q.grid, q.derivs, zq, deriv=1, width=5)
    pw = q.bowl.deriv(a * zq)
    pww = q.bowl.second_derivative(a * zq)
    g = 1.0 + pw * pw
    gz = 2.0 * a * pw * pww
    # -(n-1) Qz/z - [Qz/g]_z = 1  with  [Qz/g]_z = Qzz/g - Qz gz/g^2
    lhs = -(n - 1) * vq / zq - (vprime / g - vq * gz / (g * g))
    return lhs - 1.0


def solve_q(
    n: int,
    a: float,
    A: float,
    bowl: SolitonProfile,
    z_max: float,
    tol: float = 1e-8,
    series_radius: float = 1e-3,
    max_spacing: float = 0.01,
) -> QProfile:
    """Solve the interior correction ODE for Q on [0, z_max]."""
    if n < 2:
        raise ProfileError(f"correction profile needs n >= 2, got {n}")
    if a <= 0.0 or A <= 0.0:
        raise ProfileError("parameters a and A must be positive")
    if bowl.w_max < a * z_max:
        raise ProfileError(
            f"bowl profile domain too short: needs w_max >= {a * z_max:g}, has {bowl.w_max:g}"
        )
    c4, _ = series_coefficients(n)
    z0 = series_radius
    q0 = -z0 * z0 / (2.0 * n) - 3.0 * a * a * c4 * z0**4
    v0 = -z0 / n - 12.0 * a * a * c4 * z0**3

    def rhs(z, y):
        v = y[1]
        pw = float(bowl.deriv(a * z))
        pww = float(bowl.second_derivative(np.asarray(a * z)))
        g = 1.0 + pw * pw
        gz = 2.0 * a * pw * pww
        return (v, g * (-1.0 - (n - 1) * v / z) + v * gz / g)

    sol = solve_ivp(
        rhs, (z0, z_max), [q0, v0], method="DOP853",
        rtol=1e-12, atol=1e-14, dense_output=True,
    )
    if not sol.success:
        raise ProfileError(f"correction integration failed: {sol.message}")

    grid = _build_grid(z0, z_max, min(max_spacing, max_spacing / a))
    inner = grid <= z0
    values = np.empty_like(grid)
    derivs = np.empty_like(grid)
    values[inner] = -grid[inner] ** 2 / (2.0 * n) - 3.0 * a * a * c4 * grid[inner] ** 4
    derivs[inner] = -grid[inner] / n - 12.0 * a * a * c4 * grid[inner] ** 3
    values[0] = derivs[0] = 0.0
    qv = sol.sol(grid[~inner])
    values[~inner], derivs[~inner] = qv[0], qv[1]

    q = QProfile(n, a, A, grid, values, derivs, series_radius=z0, bowl=bowl, tol=tol)
    resid = np.max(np.abs(q_residual(q)))
    if resid > tol:
        raise ProfileError(f"correction residual {resid:.3e} exceeds tol {tol:.3e}")
    return q


def eval_profile(profile: SolitonProfile | QProfile, w) -> dict[str, np.ndarray]:
    """Monotone C^1 evaluation of a tabulated profile and its derivative."""
    return {"value": profile.value(w), "deriv": profile.deriv(w)}


@dataclass(frozen=True)
class AsymptoticsReport:
    small_coeff: float
    large_const: float
    tail_exponent: float
    tail_rms: float
    tail_window: tuple[float, float]


def check_bowl_asymptotics(profile: SolitonProfile, w_small: float = 1e-2) -> AsymptoticsReport:
    """Estimate the two asymptotic regimes of a tabulated bowl profile.

    small_coeff is 2n P(w)/w^2 near zero (limit 1).  large_const is the
    w -> infinity limit of g(w) = P - w^2/(2(n-1)) + log w, estimated by a
    least-squares fit of g to  g_inf + beta / w^2  on the outer half of the
    table.  tail_exponent is the log-log slope of |g - g_inf|, expected -2.
    """
    n = profile.dimension
    if n < 2:
        raise ProfileError("asymptotics check requires n >= 2 (no quadratic-minus-log tail for n = 1)")
    if profile.w_max < 50.0:
        raise ProfileError(f"w_max = {profile.w_max:g} too small to fit the tail; need >= 50")
    small_coeff = float(2.0 * n * profile.value(w_small) / w_small**2)

    w = profile.grid
    g = profile.values - w**2 / (2.0 * (n - 1)) + np.log(np.where(w > 0, w, 1.0))
    outer = w >= profile.w_max / 2.0
    basis = np.stack([np.ones(outer.sum()), w[outer] ** -2.0], axis=1)
    coef, *_ = np.linalg.lstsq(basis, g[outer], rcond=None)
    g_inf = float(coef[0])

    lo, hi = 20.0, profile.w_max / 2.0
    window = (w >= lo) & (w <= hi)
    if window.sum() < 8:
        raise ProfileError("tail window [20, w_max/2] holds fewer than 8 nodes")
    gap = np.abs(g[window] - g_inf)
    if np.any(gap <= 0.0):
        raise ProfileError("degenerate tail: |g - g_inf| vanished inside the fit window")
    slope, _, rms = linear_fit(np.log(w[window]), np.log(gap))
    return AsymptoticsReport(small_coeff, g_inf, float(slope), rms, (lo, hi))


def profile_to_csv(profile: SolitonProfile | QProfile, path) -> None:
    """Write the profile table as CSV with columns w, P, P_w at 17 digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["w", "P", "P_w"])
        for w, p, v in zip(profile.grid, profile.values, profile.derivs):
            writer.writerow([_FLOAT_FMT % w, _FLOAT_FMT % p, _FLOAT_FMT % v])


def bowl_from_csv(path, dimension: int, series_radius: float = 1e-3, tol: float = 1e-8) -> SolitonProfile:
    grid, values, derivs = _read_profile_csv(path)
    return SolitonProfile(dimension, grid, values, derivs, series_radius=series_radius, tol=tol)


def q_from_csv(path, dimension: int, a: float, A: float, bowl: SolitonProfile,
               series_radius: float = 1e-3, tol: float = 1e-8) -> QProfile:
    grid, values, derivs = _read_profile_csv(path)
    return QProfile(dimension, a, A, grid, values, derivs,
                    series_radius=series_radius, bowl=bowl, tol=tol)


def _read_profile_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["w", "P", "P_w"]:
            raise ProfileError(f"unexpected profile CSV header: {header}")
        rows = [(float(r[0]), float(r[1]), float(r[2])) for r in reader]
    arr = np.asarray(rows, dtype=float)
    return arr[:, 0], arr[:, 1], arr[:, 2]
