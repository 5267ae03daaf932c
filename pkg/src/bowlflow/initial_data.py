"""Construction and admissibility of the initial hypersurface.

The compactified initial profile at rescaled time tau0 glues a translated
bowl cap onto the quasi-stationary exterior tail:

    lambda0(phi) = -A + e^{-tau0} (F(z) - F(R1)) + C0          for |z| <= R1,
    lambda0(phi) = -1 / (c - a log(2(n-1) - phi^2))            beyond,

with z = phi e^{tau0/2}, F = (A^2/a) P(a z), and the junction constant

    C0 = A - 1 / (c - a log(2(n-1) - R1^2 e^{-tau0}))

chosen so the two pieces agree at z = R1.  The corner there is smoothed by a
C^2 convex blend of the two analytic pieces on [(1-zeta) R1, (1+zeta) R1];
the blend stays within delta/10 of the unsmoothed profile, where delta is
the least barrier clearance on the blend interval, and does not steepen the
profile beyond the steeper one-sided corner slope.

Admissibility converts the datum to the physical graph u(x) and checks
u(x0) = 0, u_x > 0, u_xx < 0, the curvature ratio bound (at most 1 on the
cap, at most c_bar R1^{-3} on the tail), and fits the half-power tip
expansion u = alpha x^{1/2} + beta x^{3/2} + gamma x^{5/2}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .barriers import BarrierFamily, BarrierParams, eval_patched, tail_profile
from .errors import FitError, InitialDataError
from .frames import FrameParams, RescaledProfile, from_rescaled
from .numerics import even_tip_fit, local_poly_derivative, smoothstep_c2, thinned_indices


@dataclass(frozen=True)
class InitialDataConfig:
    """Placement of the initial datum: barrier constants, start time, blend width."""

    params: BarrierParams
    T: float = 1.0
    zeta: float = 0.1
    z_fit_cap: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 < self.zeta < 1.0:
            raise InitialDataError("corner half-width fraction zeta must lie in (0, 1)")

    @property
    def tau0(self) -> float:
        return self.params.tau0

    @property
    def t0(self) -> float:
        return self.T - math.exp(-self.params.tau0)

    @property
    def C0(self) -> float:
        return junction_constant(self.params, self.params.tau0)

    def frame(self) -> FrameParams:
        return FrameParams(T=self.T, a=self.params.a, n=self.params.n)


def junction_constant(params: BarrierParams, tau0: float) -> float:
    """Constant gluing the bowl cap to the tail continuously at z = R1."""
    n, a, c = params.n, params.a, params.c
    s_edge = 2.0 * n - 2.0 - params.R1**2 * math.exp(-tau0)
    if s_edge <= 0.0:
        raise InitialDataError(
            f"tau0 = {tau0} too small: the cap z = R1 leaves the cylinder "
            f"(2(n-1) - R1^2 e^-tau0 = {s_edge:g})"
        )
    return params.A - 1.0 / (c - a * math.log(s_edge))


def _interior_piece(cfg: InitialDataConfig, family: BarrierFamily, z: np.ndarray) -> np.ndarray:
    p = cfg.params
    emt = math.exp(-p.tau0)
    f = family.F(z, "0")
    f_r1 = family.F(np.asarray(p.R1), "0")
    return -p.A + emt * (f - f_r1) + cfg.C0


def _interior_piece_dz(cfg: InitialDataConfig, family: BarrierFamily, z: np.ndarray) -> np.ndarray:
    return math.exp(-cfg.params.tau0) * family.F(z, "0", 1)


def _exterior_piece(cfg: InitialDataConfig, z: np.ndarray) -> np.ndarray:
    phi = np.asarray(z, dtype=float) * math.exp(-cfg.params.tau0 / 2.0)
    return tail_profile(cfg.params, phi, "0")


def _exterior_piece_dz(cfg: InitialDataConfig, z: np.ndarray) -> np.ndarray:
    scale = math.exp(-cfg.params.tau0 / 2.0)
    phi = np.asarray(z, dtype=float) * scale
    return tail_profile(cfg.params, phi, "0", 1) * scale


def hat_value(cfg: InitialDataConfig, family: BarrierFamily, phi) -> np.ndarray:
    """Unsmoothed initial profile as a function of phi (cap value 0)."""
    p = cfg.params
    phi = np.abs(np.asarray(phi, dtype=float))
    cap = p.cylinder_radius
    if np.any(phi > cap):
        raise InitialDataError("phi outside the closed cylinder")
    z = phi * math.exp(p.tau0 / 2.0)
    out = np.empty_like(phi)
    inner = z <= p.R1
    at_cap = phi >= cap
    outer = ~inner & ~at_cap
    if np.any(inner):
        out[inner] = _interior_piece(cfg, family, z[inner])
    if np.any(outer):
        out[outer] = _exterior_piece(cfg, z[outer])
    out[at_cap] = 0.0
    return out if out.ndim else float(out)


def hat_slope_z(cfg: InitialDataConfig, family: BarrierFamily, z) -> np.ndarray:
    """One-sided slope of the unsmoothed profile in z; at the corner returns
    the larger one-sided limit."""
    p = cfg.params
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty_like(z)
    inner = z < p.R1
    corner = z == p.R1
    outer = z > p.R1
    if np.any(inner):
        out[inner] = _interior_piece_dz(cfg, family, z[inner])
    if np.any(outer):
        out[outer] = _exterior_piece_dz(cfg, z[outer])
    if np.any(corner):
        zc = z[corner]
        out[corner] = np.maximum(
            _interior_piece_dz(cfg, family, zc), _exterior_piece_dz(cfg, zc)
        )
    return out


def smoothed_value(cfg: InitialDataConfig, family: BarrierFamily, phi) -> np.ndarray:
    """Corner-smoothed initial profile: C^2 blend of the two pieces on I_zeta."""
    p = cfg.params
    phi = np.abs(np.asarray(phi, dtype=float))
    cap = p.cylinder_radius
    z = phi * math.exp(p.tau0 / 2.0)
    lo, hi = (1.0 - cfg.zeta) * p.R1, (1.0 + cfg.zeta) * p.R1
    out = hat_value(cfg, family, phi)
    blend = (z > lo) & (z < hi) & (phi < cap)
    if np.any(blend):
        zb = z[blend]
        w = smoothstep_c2((zb - lo) / (hi - lo))
        out_b = (1.0 - w) * _interior_piece(cfg, family, zb) + w * _exterior_piece(cfg, zb)
        out[blend] = out_b
    return out if out.ndim else float(out)


def smoothed_slope_z(cfg: InitialDataConfig, family: BarrierFamily, z) -> np.ndarray:
    p = cfg.params
    z = np.atleast_1d(np.asarray(z, dtype=float))
    lo, hi = (1.0 - cfg.zeta) * p.R1, (1.0 + cfg.zeta) * p.R1
    out = hat_slope_z(cfg, family, z)
    blend = (z > lo) & (z < hi)
    if np.any(blend):
        zb = z[blend]
        u = (zb - lo) / (hi - lo)
        w = smoothstep_c2(u)
        wp = 30.0 * u * u * (1.0 - u) ** 2 / (hi - lo)
        vi, ve = _interior_piece(cfg, family, zb), _exterior_piece(cfg, zb)
        di, de = _interior_piece_dz(cfg, family, zb), _exterior_piece_dz(cfg, zb)
        out[blend] = (1.0 - w) * di + w * de + wp * (ve - vi)
    return out


def corner_clearance(cfg: InitialDataConfig, family: BarrierFamily, n_samples: int = 2001) -> float:
    """Least barrier clearance delta of the unsmoothed datum on the blend interval."""
    p = cfg.params
    lo, hi = (1.0 - cfg.zeta) * p.R1, (1.0 + cfg.zeta) * p.R1
    z = np.linspace(lo, hi, n_samples)
    phi = z * math.exp(-p.tau0 / 2.0)
    hat = hat_value(cfg, family, phi)
    upper = eval_patched(family, phi, p.tau0, "+")
    lower = eval_patched(family, phi, p.tau0, "-")
    delta = float(min(np.min(upper - hat), np.min(hat - lower)))
    if delta <= 0.0:
        raise InitialDataError(
            f"barriers leave no clearance on the blend interval (delta = {delta:g}); "
            "reject this configuration"
        )
    return delta


def smooth_corner(
    cfg: InitialDataConfig,
    family: BarrierFamily,
    phi_nodes: np.ndarray,
    n_check: int = 2001,
) -> RescaledProfile:
    """Smoothed initial datum on ``phi_nodes``, with the blend bounds verified.

    Checks, on a dense audit grid over the blend interval: the smoothed
    profile deviates from the unsmoothed one by at most delta/10, does not
    steepen beyond the corner slope budget, stays strictly monotone, and
    stays strictly between the barriers.
    """
    p = cfg.params
    delta = corner_clearance(cfg, family, n_check)
    lo, hi = (1.0 - cfg.zeta) * p.R1, (1.0 + cfg.zeta) * p.R1
    z = np.linspace(lo, hi, n_check)
    phi = z * math.exp(-p.tau0 / 2.0)
    hat = hat_value(cfg, family, phi)
    smooth = smoothed_value(cfg, family, phi)
    dev = float(np.max(np.abs(smooth - hat)))
    if dev > delta / 10.0:
        raise InitialDataError(
            f"smoothing deviation {dev:g} exceeds delta/10 = {delta / 10.0:g}"
        )
    slope_budget = float(np.max(np.abs(hat_slope_z(cfg, family, z))))
    slope_max = float(np.max(np.abs(smoothed_slope_z(cfg, family, z))))
    if slope_max > slope_budget * (1.0 + 1e-12):
        raise InitialDataError(
            f"smoothing violates the slope bound: {slope_max:g} > {slope_budget:g}"
        )
    upper = eval_patched(family, phi, p.tau0, "+")
    lower = eval_patched(family, phi, p.tau0, "-")
    if np.min(upper - smooth) <= 0.0 or np.min(smooth - lower) <= 0.0:
        raise InitialDataError("smoothed datum is not strictly between the barriers")

    return build_initial_profile(cfg, family, phi_nodes, smooth=True)


def build_initial_profile(
    cfg: InitialDataConfig,
    family: BarrierFamily,
    phi_nodes: np.ndarray,
    smooth: bool = False,
) -> RescaledProfile:
    """Sample the (optionally smoothed) initial datum on a phi grid.

    Nodes at or beyond the cylinder radius are dropped: the returned profile
    carries strictly negative lambda; the evolver re-attaches the Dirichlet
    cap node itself.
    """
    p = cfg.params
    phi_nodes = np.asarray(phi_nodes, dtype=float)
    keep = phi_nodes < p.cylinder_radius
    phi = phi_nodes[keep]
    values = smoothed_value(cfg, family, phi) if smooth else hat_value(cfg, family, phi)
    return RescaledProfile(p.tau0, phi, values)


@dataclass(frozen=True)
class AdmissibilityReport:
    """Geometric admissibility of one physical profile."""

    tip_ok: bool
    monotone_ok: bool
    concave_ok: bool
    ratio_max: float
    ratio_max_exterior: float
    ratio_bound: float
    alpha: float
    beta: float
    gamma: float
    gamma_normalized: float
    expansion_defect: float
    open_condition_ok: bool
    fit_points: int

    @property
    def accepted(self) -> bool:
        return (
            self.tip_ok
            and self.monotone_ok
            and self.concave_ok
            and self.ratio_max_exterior <= self.ratio_bound * 1.01
            and self.ratio_max <= max(1.0, self.ratio_bound) + 1e-2
            and self.open_condition_ok
        )


def tip_expansion_fit(x: np.ndarray, u: np.ndarray, u_cap: float, min_points: int = 8):
    """Least-squares half-power expansion u = a X^1/2 + b X^3/2 + c X^5/2.

    X is measured from the tip (first node).  Returns (alpha, beta, gamma,
    n_points).
    """
    X = np.asarray(x, dtype=float) - x[0]
    u = np.asarray(u, dtype=float)
    window = (u > 0.0) & (u <= u_cap)
    if window.sum() < min_points:
        raise FitError(
            f"tip expansion fit ill-conditioned: {int(window.sum())} nodes with "
            f"0 < u <= {u_cap:g}, need {min_points}"
        )
    Xw, uw = X[window], u[window]
    basis = np.stack([Xw**0.5, Xw**1.5, Xw**2.5], axis=1)
    coef, *_ = np.linalg.lstsq(basis, uw, rcond=None)
    return float(coef[0]), float(coef[1]), float(coef[2]), int(window.sum())


def open_tip_condition(C: float, gamma_norm: float) -> bool:
    """Open admissibility condition on (C, gamma) controlling the ratio near the tip."""
    lhs = (3.0 + 56.0 * gamma_norm + C * (9.0 + 40.0 * gamma_norm)) / 16.0
    rhs = 6.0 * gamma_norm + 0.75
    return C >= 1.0 and rhs > 0.0 and lhs >= rhs * (1.0 - 1e-12)


def admissibility(
    profile: RescaledProfile,
    fp: FrameParams,
    cfg: InitialDataConfig,
    z_handoff: float = 1.0,
    z_curv_cap: float = 1.5,
) -> AdmissibilityReport:
    """Convert to the physical graph and run all admissibility checks.

    Pointwise derivative signs and the curvature ratio are evaluated on a
    geometrically thinned subsample of the inverted graph x(u); inside the
    tip window z < z_handoff, where the structure sits near the float
    quantisation floor of x, they come from the even tip fit instead.
    """
    p = cfg.params
    phys = from_rescaled(profile, fp)
    u, x = phys.u_values, phys.x_nodes
    t_gap = fp.T - phys.t

    try:
        kappa, c4, _ = even_tip_fit(u, x, z_curv_cap * t_gap)
    except FitError as exc:
        raise InitialDataError(str(exc)) from exc

    idx = thinned_indices(u)
    u_t, x_t = u[idx], x[idx]
    x_u = local_poly_derivative(u_t, x_t, u_t, deriv=1, width=3)
    x_uu = local_poly_derivative(u_t, x_t, u_t, deriv=2, width=3)
    z_t = u_t / t_gap
    stencil = z_t >= z_handoff
    near_tip = ~stencil & (u_t > 0.0)

    tip_ok = bool(u[0] == 0.0)
    monotone_ok = bool(np.all(np.diff(x) > 0.0)) and bool(np.all(x_u[stencil] > 0.0))
    concave_ok = bool(np.all(x_uu[stencil] > 0.0)) and kappa > 0.0

    ratio = np.empty_like(u_t)
    ratio[0] = 1.0
    if np.any(near_tip):
        un = u_t[near_tip]
        xu_fit = kappa * un + 4.0 * c4 * un**3
        xuu_fit = kappa + 12.0 * c4 * un * un
        ratio[near_tip] = un * xuu_fit / (xu_fit * (1.0 + xu_fit * xu_fit))
    ratio[stencil] = (
        u_t[stencil] * x_uu[stencil] / (x_u[stencil] * (1.0 + x_u[stencil] ** 2))
    )
    ratio_bound = p.c_bar * p.R1**-3
    exterior = z_t >= (1.0 + cfg.zeta) * p.R1
    ratio_max_ext = float(np.max(ratio[exterior])) if np.any(exterior) else 0.0

    u_cap = min(
        0.1 * math.sqrt(2.0 * (p.n - 1) * t_gap),
        cfg.z_fit_cap * t_gap,
    )
    try:
        alpha, beta, gamma, n_fit = tip_expansion_fit(x, u, u_cap)
    except FitError as exc:
        raise InitialDataError(str(exc)) from exc
    gamma_norm = gamma * alpha**3
    defect = abs(1.0 + 2.0 * alpha * beta)
    open_ok = open_tip_condition(max(1.0, ratio_bound), gamma_norm)

    return AdmissibilityReport(
        tip_ok=tip_ok,
        monotone_ok=monotone_ok,
        concave_ok=concave_ok,
        ratio_max=float(np.max(ratio)),
        ratio_max_exterior=ratio_max_ext,
        ratio_bound=float(ratio_bound),
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        gamma_normalized=gamma_norm,
        expansion_defect=defect,
        open_condition_ok=open_ok,
        fit_points=n_fit,
    )
