"""Curvature diagnostics and asymptotic-rate fits for evolved trajectories.

The rotationally symmetric graph r = u(x) has principal curvatures

    kappa_rot   = 1 / (u sqrt(1 + u_x^2))     (multiplicity n - 1),
    kappa_graph = -u_xx / (1 + u_x^2)^{3/2},

computed here on the inverted graph x(u), which is regular through the tip:
there x_u = 0 and both curvatures equal x_uu(0).  The tip value comes from a
least-squares even expansion x = x0 + (kappa/2) u^2 + c u^4 rather than raw
second differences: at desk-scale rescaled times the tip structure of the
compactified profile lives ~9 orders of magnitude below the profile itself,
so pointwise stencils at the innermost nodes measure float quantisation, not
curvature.  For the same reason pointwise derivative signs are evaluated on
a geometrically thinned subsample (adjacent spacing at least a few percent).

Rate fits:
  * tip mean curvature H = (n-1) kappa_rot + kappa_graph against T - t
    (expected slope -1, prefactor a),
  * cylinder gap log(2(n-1) - phi^2) against y = -1/lambda (expected -1/a),
  * tip shape error sup_z |a (p(z) - p(0)) - P(a z)| per snapshot,
  * gradient diagnostic q = p_z with its linear bounds and edge limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .barriers import BarrierFamily
from .errors import FitError
from .evolver import FlowState, Trajectory
from .frames import FrameParams, PhysicalProfile, RescaledProfile, from_rescaled, interior_view, tip_frame
from .numerics import even_tip_fit, linear_fit, local_poly_derivative, thinned_indices
from .profiles import SolitonProfile


def tip_curvature_fit(p: PhysicalProfile, u_cap: float, min_points: int = 8) -> float:
    """Tip curvature from the even expansion x = x0 + (kappa/2) u^2 + c u^4."""
    kappa, _, _ = even_tip_fit(p.u_values, p.x_nodes, u_cap, min_points)
    return kappa


@dataclass
class CurvatureProfile:
    """Principal curvatures on the thinned node set, tip limit at index 0."""

    u: np.ndarray
    kappa_rot: np.ndarray
    kappa_graph: np.ndarray
    ratio: np.ndarray
    indices: np.ndarray

    def mean_curvature_of(self, n: int) -> np.ndarray:
        return (n - 1) * self.kappa_rot + self.kappa_graph


def principal_curvatures(
    p: PhysicalProfile,
    tip_fit_u_cap: float | None = None,
    min_ratio: float = 1.05,
    handoff_frac: float = 2.0 / 3.0,
) -> CurvatureProfile:
    """Principal curvatures of the profile on a quantisation-safe subsample.

    ``tip_fit_u_cap`` bounds the window of the even tip fit (by default ten
    times the first thinned node).  Inside ``handoff_frac`` of that window
    the curvatures come from the fitted even expansion; beyond it from
    3-point stencils on the thinned nodes.
    """
    u_all = p.u_values
    if np.any(u_all[1:] <= 0.0):
        raise FitError("u must vanish only at the tip node")
    idx = thinned_indices(u_all, min_ratio)
    u = u_all[idx]
    x = p.x_nodes[idx]
    x_u = local_poly_derivative(u, x, u, deriv=1, width=3)
    x_uu = local_poly_derivative(u, x, u, deriv=2, width=3)
    if tip_fit_u_cap is None:
        tip_fit_u_cap = u[1] * 10.0 if u.size > 1 else 0.0
    kappa_tip, c4, _ = even_tip_fit(p.u_values, p.x_nodes, tip_fit_u_cap)

    near = (u > 0.0) & (u < handoff_frac * tip_fit_u_cap)
    if np.any(near):
        un = u[near]
        x_u[near] = kappa_tip * un + 4.0 * c4 * un**3
        x_uu[near] = kappa_tip + 12.0 * c4 * un * un

    kappa_rot = np.empty_like(u)
    kappa_graph = np.empty_like(u)
    ratio = np.empty_like(u)
    kappa_rot[0] = kappa_graph[0] = kappa_tip
    ratio[0] = 1.0
    xi, xii = x_u[1:], x_uu[1:]
    kappa_rot[1:] = xi / (u[1:] * np.sqrt(1.0 + xi * xi))
    kappa_graph[1:] = xii / (1.0 + xi * xi) ** 1.5
    ratio[1:] = u[1:] * xii / (xi * (1.0 + xi * xi))
    return CurvatureProfile(u=u, kappa_rot=kappa_rot, kappa_graph=kappa_graph,
                            ratio=ratio, indices=idx)


def ratio_extremum(p: PhysicalProfile, min_ratio: float = 1.05) -> tuple[float, float]:
    """(max curvature ratio, u-location of the maximum)."""
    cp = principal_curvatures(p, min_ratio=min_ratio)
    i = int(np.argmax(cp.ratio))
    return float(cp.ratio[i]), float(cp.u[i])


@dataclass
class RateFit:
    slope: float
    prefactor: float
    rms: float
    n_points: int
    window: tuple[float, float]


@dataclass
class DiagnosticsReport:
    """All asymptotic-rate diagnostics of one trajectory."""

    tip_rate_slope: float
    tip_rate_prefactor: float
    tip_rate_rms: float
    cyl_decay_slope: float
    cyl_decay_rms: float
    tip_profile_error: list
    ratio_max_series: list
    ratio_argmax_z: list
    q_linear_bounds: tuple
    q_edge_value: float
    snapshot_taus: list
    fit_windows: dict = field(default_factory=dict)
    curvature_argmax_z: list = field(default_factory=list)
    sandwich_margin_series: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tip_rate_slope": self.tip_rate_slope,
            "tip_rate_prefactor": self.tip_rate_prefactor,
            "tip_rate_rms": self.tip_rate_rms,
            "cyl_decay_slope": self.cyl_decay_slope,
            "cyl_decay_rms": self.cyl_decay_rms,
            "tip_profile_error": list(self.tip_profile_error),
            "ratio_max_series": list(self.ratio_max_series),
            "ratio_argmax_z": list(self.ratio_argmax_z),
            "q_linear_bounds": list(self.q_linear_bounds),
            "q_edge_value": self.q_edge_value,
            "snapshot_taus": list(self.snapshot_taus),
            "fit_windows": self.fit_windows,
            "curvature_argmax_z": list(self.curvature_argmax_z),
            "sandwich_margin_series": list(self.sandwich_margin_series),
        }


def physical_snapshot(state: FlowState | RescaledProfile, fp: FrameParams) -> PhysicalProfile:
    """Convert a flow state to the physical graph, dropping the cap node."""
    return from_rescaled(interior_view(state), fp)


def tip_mean_curvature(state: FlowState | RescaledProfile, fp: FrameParams,
                       z_fit_cap: float = 1.5) -> tuple[float, float]:
    """(tip mean curvature, z-location of the nodewise curvature maximum)."""
    phys = physical_snapshot(state, fp)
    t_gap = fp.T - phys.t
    cp = principal_curvatures(phys, tip_fit_u_cap=z_fit_cap * t_gap)
    h = cp.mean_curvature_of(fp.n)
    i = int(np.argmax(np.maximum(cp.kappa_rot, cp.kappa_graph)))
    return float(h[0]), float(cp.u[i] / t_gap)


def tip_rate_fit(
    traj: Trajectory | list,
    fp: FrameParams,
    transient_frac: float = 0.2,
    z_fit_cap: float = 1.5,
    min_points: int = 8,
    min_decades: float = 1.5,
) -> tuple[RateFit, list]:
    """Fit log(tip mean curvature) against log(T - t) over the trajectory.

    Returns the fit and the per-snapshot z-locations of the nodewise
    curvature maximum (expected at the tip).
    """
    snapshots = traj.snapshots if isinstance(traj, Trajectory) else list(traj)
    k0 = int(math.floor(transient_frac * len(snapshots)))
    window = snapshots[k0:]
    if len(window) < min_points:
        raise FitError(f"tip rate fit needs {min_points} snapshots, got {len(window)}")
    t_gaps = np.asarray([math.exp(-s.tau) for s in window])
    decades = math.log10(t_gaps.max() / t_gaps.min())
    if decades < min_decades:
        raise FitError(
            f"tip rate fit spans {decades:.2f} decades of T - t; needs {min_decades}"
        )
    h_vals, argmax_z = [], []
    for s in window:
        h, zmax = tip_mean_curvature(s, fp, z_fit_cap)
        h_vals.append(h)
        argmax_z.append(zmax)
    slope, intercept, rms = linear_fit(np.log(t_gaps), np.log(np.asarray(h_vals)))
    fit = RateFit(slope=slope, prefactor=math.exp(intercept), rms=rms,
                  n_points=len(window), window=(float(t_gaps.min()), float(t_gaps.max())))
    return fit, argmax_z


def cylinder_decay_fit(
    state: FlowState | RescaledProfile,
    fp: FrameParams,
    gap_window: tuple[float, float] = (1e-6, 0.5),
) -> RateFit:
    """Fit log(2(n-1) - phi^2) against y = -1/lambda near the cylinder cap."""
    prof = interior_view(state)
    gap = 2.0 * (fp.n - 1) - prof.phi_nodes**2
    y = -1.0 / prof.lambda_values
    keep = (gap >= gap_window[0]) & (gap <= gap_window[1])
    if keep.sum() < 8:
        raise FitError(
            f"cylinder window {gap_window} holds {int(keep.sum())} nodes; needs 8"
        )
    slope, intercept, rms = linear_fit(y[keep], np.log(gap[keep]))
    return RateFit(slope=slope, prefactor=math.exp(intercept), rms=rms,
                   n_points=int(keep.sum()),
                   window=(float(y[keep].min()), float(y[keep].max())))


def tip_profile_convergence(
    traj: Trajectory | list,
    a: float,
    a_tilde: float,
    bowl: SolitonProfile,
    z_cap: float = 5.0,
) -> list[float]:
    """Per snapshot, sup over |z| <= z_cap of |a (p(z) - p(0)) - P(a z)|."""
    snapshots = traj.snapshots if isinstance(traj, Trajectory) else list(traj)
    errors = []
    for s in snapshots:
        tf = tip_frame(interior_view(s), a_tilde, z_cap=z_cap)
        model = bowl.value(a * tf.z_nodes)
        err = np.abs(a * (tf.p_values - tf.p_values[0]) - model)
        errors.append(float(np.max(err)))
    return errors


def q_diagnostic(
    state: FlowState | RescaledProfile,
    a: float,
    n: int,
    a_tilde: float,
    z_cap: float = 5.0,
    z_lo: float = 0.25,
) -> tuple[float, float, float]:
    """Linear bounds of q = p_z on [z_lo, z_cap] and its value at the window edge.

    Returns (c_minus, c_plus, edge) with c_minus <= q(z)/z <= c_plus on the
    window; the edge ratio approaches a/(n-1) once the tip has locked onto
    the soliton shape.
    """
    tf = tip_frame(interior_view(state), a_tilde, z_cap=z_cap)
    window = tf.z_nodes >= z_lo
    if window.sum() < 4:
        raise FitError("q diagnostic window too thin")
    ratios = tf.q_values[window] / tf.z_nodes[window]
    return float(np.min(ratios)), float(np.max(ratios)), float(ratios[-1])


def report(
    traj: Trajectory,
    family: BarrierFamily,
    bowl: SolitonProfile,
    fp: FrameParams,
    z_cap: float = 5.0,
) -> DiagnosticsReport:
    """Full diagnostics of one evolved trajectory."""
    p = family.params
    a_tilde = 1.0 / p.A
    fit, argmax_z = tip_rate_fit(traj, fp)
    final = traj.snapshots[-1]
    cyl = cylinder_decay_fit(final, fp)
    errors = tip_profile_convergence(traj, p.a, a_tilde, bowl, z_cap)
    ratio_max, ratio_argz = [], []
    for s in traj.snapshots:
        phys = physical_snapshot(s, fp)
        rmax, u_at = ratio_extremum(phys)
        ratio_max.append(rmax)
        ratio_argz.append(u_at / (fp.T - phys.t))
    qb = q_diagnostic(final, p.a, p.n, a_tilde, z_cap=z_cap)
    margins = [
        (e["tau"], e["upper"], e["lower"])
        for e in traj.events
        if e.get("kind") == "margins"
    ]
    return DiagnosticsReport(
        tip_rate_slope=fit.slope,
        tip_rate_prefactor=fit.prefactor,
        tip_rate_rms=fit.rms,
        cyl_decay_slope=cyl.slope,
        cyl_decay_rms=cyl.rms,
        tip_profile_error=errors,
        ratio_max_series=ratio_max,
        ratio_argmax_z=ratio_argz,
        q_linear_bounds=(qb[0], qb[1]),
        q_edge_value=qb[2],
        snapshot_taus=[s.tau for s in traj.snapshots],
        fit_windows={
            "tip_rate": {"t_gap": list(fit.window), "n_points": fit.n_points},
            "cylinder": {"y": list(cyl.window), "n_points": cyl.n_points},
            "q": {"z": [0.25, z_cap]},
        },
        curvature_argmax_z=argmax_z,
        sandwich_margin_series=margins,
    )
