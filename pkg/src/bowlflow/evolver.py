"""Stiff evolution of the compactified rescaled flow on a fixed phi grid.

The state lambda(phi, tau) obeys

    d_tau lambda = (lambda_pp - 2 lambda_p^2/lambda) / (1 + e^tau lambda_p^2 / lambda^4)
                   + ((n-1)/phi - phi/2) lambda_p - a lambda^2

on [0, sqrt(2(n-1))] with even symmetry at phi = 0 and lambda = 0 pinned at
the cylinder cap.  At the origin the degenerate drift has the symmetry limit
((n-1)/phi) lambda_p -> (n-1) lambda_pp, so the axis row carries n times the
second difference.

Stepping is linearly implicit: the second-order term (with its nonlinear
denominator frozen at the step start), the drift, and the linearised
reaction go into one tridiagonal solve; the remaining gradient-quotient term
is explicit and uniformly non-stiff.  Step size adapts on a step-doubling
error estimate, with optional Richardson extrapolation of the accepted
state.  The stiffness grows like e^tau, which the implicit treatment absorbs
unconditionally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from .barriers import BarrierFamily, eval_patched
from .errors import EvolutionError
from .frames import RescaledProfile

_DTAU_FLOOR = 1e-12


@dataclass
class FlowState:
    """Evolving profile sampled on the fixed grid, cap node included."""

    tau: float
    phi_nodes: np.ndarray
    lambda_values: np.ndarray
    dt_last: float = 0.0

    def __post_init__(self) -> None:
        self.phi_nodes = np.ascontiguousarray(self.phi_nodes, dtype=float)
        self.lambda_values = np.ascontiguousarray(self.lambda_values, dtype=float)
        if self.phi_nodes.shape != self.lambda_values.shape:
            raise EvolutionError("grid and values must have equal shape")

    def copy(self) -> "FlowState":
        return FlowState(self.tau, self.phi_nodes, self.lambda_values.copy(), self.dt_last)

    def check_invariants(self, mono_tol: float = 1e-12) -> None:
        lam = self.lambda_values
        if lam[-1] != 0.0:
            raise EvolutionError(f"cap boundary value drifted to {lam[-1]:g}")
        if np.any(lam[:-1] >= 0.0):
            raise EvolutionError("interior lambda lost its sign")
        scale = float(np.max(np.abs(lam)))
        if np.any(np.diff(lam) < -mono_tol * max(scale, 1.0)):
            i = int(np.argmin(np.diff(lam)))
            raise EvolutionError(
                f"monotonicity lost near phi = {self.phi_nodes[i]:g} at tau = {self.tau:g}"
            )


@dataclass
class Trajectory:
    """Snapshots at requested checkpoints plus the step/margin event log."""

    snapshots: list = field(default_factory=list)
    events: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def taus(self) -> np.ndarray:
        return np.asarray([s.tau for s in self.snapshots])


def make_phi_grid(
    n: int,
    num_nodes: int,
    phi_min: float,
    cap_scale: float = 1e-7,
) -> np.ndarray:
    """Two-sided geometric grid on [0, sqrt(2(n-1))].

    Nodes run geometrically from ``phi_min`` to the midpoint and from the
    midpoint to within ``cap_scale`` of the cylinder cap, with the decade
    budget split proportionally.  There are no interior nodes below
    ``phi_min``: at desk-scale rescaled times the tip structure sits many
    orders of magnitude below the profile itself, and finer nodes would
    carry sub-quantisation lambda increments.
    """
    cap = math.sqrt(2.0 * (n - 1))
    if not 0.0 < phi_min < cap / 8.0:
        raise EvolutionError(f"phi_min = {phi_min:g} must lie in (0, {cap / 8.0:g})")
    if not 0.0 < cap_scale < cap / 8.0:
        raise EvolutionError("cap_scale out of range")
    mid = cap / 2.0
    dec_left = math.log10(mid / phi_min)
    dec_right = math.log10(mid / cap_scale)
    n_interior = num_nodes - 2
    if n_interior < 16:
        raise EvolutionError("grid needs at least 18 nodes")
    n_left = max(8, round(n_interior * dec_left / (dec_left + dec_right)))
    n_right = n_interior - n_left
    if n_right < 8:
        raise EvolutionError("too few nodes for the cap cluster; raise num_nodes")
    left = np.geomspace(phi_min, mid, n_left)
    right = cap - np.geomspace(cap_scale, mid, n_right + 1)[::-1]
    grid = np.concatenate([[0.0], left, right[1:], [cap]])
    if np.any(np.diff(grid) <= 0.0):
        raise EvolutionError("degenerate grid; raise num_nodes or the cluster scales")
    return grid


class Evolver:
    """Time stepper for one grid and one parameter pair (n, a).

    The drift ((n-1)/phi - phi/2) lambda_phi equals -d lambda/d xi exactly in
    the log-gap coordinate xi = log(2(n-1) - phi^2), where the profile is
    smooth arbitrarily close to the cap; differencing the drift in xi keeps
    the cap boundary layer honest where phi stencils would see the
    unresolvable log singularity.  The final interior row uses the two-point
    inward xi-difference so the Dirichlet cap value never enters the drift.
    """

    def __init__(
        self,
        n: int,
        a: float,
        phi_nodes: np.ndarray,
        richardson: bool = True,
        mono_tol: float = 1e-10,
    ) -> None:
        phi = np.ascontiguousarray(phi_nodes, dtype=float)
        cap = math.sqrt(2.0 * (n - 1))
        if phi[0] != 0.0 or abs(phi[-1] - cap) > 1e-12 or np.any(np.diff(phi) <= 0.0):
            raise EvolutionError("grid must run from 0 to sqrt(2(n-1)) strictly increasing")
        self.n, self.a = n, a
        self.phi = phi
        self.richardson = richardson
        self.mono_tol = mono_tol
        h = np.diff(phi)
        hm, hp = h[:-1], h[1:]
        self._d1 = (
            -hp / (hm * (hm + hp)),
            (hp - hm) / (hm * hp),
            hm / (hp * (hm + hp)),
        )
        self._d2 = (2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp)))
        self._axis_coeff = 2.0 * n / phi[1] ** 2
        # xi spacings via log1p on gap ratios (stable for tiny phi and near the cap);
        # the spacing into the cap node itself is -inf and never used (the last
        # interior row differences inward), so mask it out.
        s_ref = 2.0 * (n - 1) - phi[:-1] ** 2
        ratio = -(phi[1:] - phi[:-1]) * (phi[1:] + phi[:-1]) / s_ref
        ratio[-1] = -0.5
        dxi = np.log1p(ratio)
        xm = dxi[:-1]  # xi_i - xi_{i-1} (negative)
        xp = dxi[1:]   # xi_{i+1} - xi_i (negative)
        # centred nonuniform first derivative in xi at rows 1..N-2
        wl = -xp / (xm * (xm + xp))
        wc = (xp - xm) / (xm * xp)
        wr = xm / (xp * (xm + xp))
        # last interior row: two-point inward difference, cap value excluded
        wl[-1] = -1.0 / xm[-1]
        wc[-1] = 1.0 / xm[-1]
        wr[-1] = 0.0
        # drift contribution is -lambda_xi
        self._drift = (-wl, -wc, -wr)

    def gradient(self, lam: np.ndarray) -> np.ndarray:
        """Centred lambda_phi at interior nodes, 0 at the axis by symmetry."""
        g = np.zeros_like(lam)
        dl, dc, dr = self._d1
        g[1:-1] = dl * lam[:-2] + dc * lam[1:-1] + dr * lam[2:]
        g[-1] = (lam[-1] - lam[-2]) / (self.phi[-1] - self.phi[-2])
        return g

    def _be_step(self, lam: np.ndarray, tau: float, dtau: float) -> np.ndarray:
        """One linearly implicit backward-Euler step of size dtau."""
        n_pts = lam.size
        grad = self.gradient(lam)
        ept = math.exp(tau)
        stiff = ept * grad[1:-1] ** 2 / lam[1:-1] ** 4
        c2 = 1.0 / (1.0 + stiff)
        explicit = np.zeros(n_pts)
        explicit[1:-1] = -2.0 * c2 * grad[1:-1] ** 2 / lam[1:-1]

        upper = np.zeros(n_pts)
        diag = np.ones(n_pts)
        lower = np.zeros(n_pts)
        d2l, d2c, d2r = self._d2
        drl, drc, drr = self._drift
        diag[1:-1] -= dtau * (c2 * d2c + drc - 2.0 * self.a * lam[1:-1])
        lower[:-2] = -dtau * (c2 * d2l + drl)
        upper[2:] = -dtau * (c2 * d2r + drr)
        # Axis row: d_tau lambda = n lambda_pp - a lambda^2 with the symmetric
        # second difference 2 (lambda_1 - lambda_0)/phi_1^2.
        diag[0] = 1.0 + dtau * (self._axis_coeff + 0.0) - dtau * (-2.0 * self.a * lam[0])
        upper[1] = -dtau * self._axis_coeff
        # Cap row: Dirichlet.
        diag[-1] = 1.0
        lower[-2] = 0.0

        rhs = lam + dtau * (explicit + self.a * lam * lam)
        rhs[-1] = 0.0
        ab = np.zeros((3, n_pts))
        ab[0, 1:] = upper[1:]
        ab[1] = diag
        ab[2, :-1] = lower[:-1]
        out = solve_banded((1, 1), ab, rhs)
        out[-1] = 0.0
        return out

    def step(self, state: FlowState, dtau_max: float, tol: float) -> FlowState:
        """Advance one accepted step with step-doubling error control."""
        new_state, _ = self._attempt(state, dtau_max, tol)
        return new_state

    def _attempt(self, state: FlowState, dtau_max: float, tol: float):
        lam, tau = state.lambda_values, state.tau
        dtau = min(state.dt_last if state.dt_last > 0.0 else dtau_max, dtau_max)
        rejections = []
        for _ in range(60):
            full = self._be_step(lam, tau, dtau)
            half = self._be_step(lam, tau, 0.5 * dtau)
            two = self._be_step(half, tau + 0.5 * dtau, 0.5 * dtau)
            err = float(np.max(np.abs(two - full)))
            if err <= tol:
                cand = 2.0 * two - full if self.richardson else two
                cand[-1] = 0.0
                out = FlowState(tau + dtau, self.phi, cand, dt_last=self._next_dtau(dtau, err, tol, dtau_max))
                try:
                    out.check_invariants(self.mono_tol)
                except EvolutionError:
                    if self.richardson:
                        out = FlowState(tau + dtau, self.phi, two,
                                        dt_last=self._next_dtau(dtau, err, tol, dtau_max))
                        out.check_invariants(self.mono_tol)
                    else:
                        raise
                return out, rejections
            rejections.append({"tau": tau, "dtau": dtau, "error": err})
            dtau *= max(0.1, 0.9 * math.sqrt(tol / err))
            if dtau < _DTAU_FLOOR:
                break
        raise EvolutionError(
            f"step size underflow at tau = {tau:g} (stiffness beyond the configured "
            f"integrator); last dtau = {dtau:g}"
        )

    @staticmethod
    def _next_dtau(dtau: float, err: float, tol: float, dtau_max: float) -> float:
        grow = 2.0 if err == 0.0 else min(2.0, max(0.3, 0.9 * math.sqrt(tol / err)))
        return min(dtau_max, dtau * grow)


def state_from_profile(profile: RescaledProfile, n: int) -> FlowState:
    """Attach the Dirichlet cap node to a strictly-negative rescaled profile."""
    cap = math.sqrt(2.0 * (n - 1))
    phi = profile.phi_nodes
    lam = profile.lambda_values
    if phi[-1] < cap:
        phi = np.concatenate([phi, [cap]])
        lam = np.concatenate([lam, [0.0]])
    return FlowState(profile.tau, phi, lam, dt_last=0.0)


def tip_resolution(phi: np.ndarray, R1: float, tau: float) -> int:
    """Number of interior nodes resolving the tip region |phi| <= R1 e^{-tau/2}."""
    return int(np.count_nonzero((phi > 0.0) & (phi <= R1 * math.exp(-tau / 2.0))))


def sandwich_margins(state: FlowState, family: BarrierFamily) -> tuple[float, float]:
    """(min upper gap, min lower gap) of the state against the patched barriers."""
    upper = eval_patched(family, state.phi_nodes, state.tau, "+")
    lower = eval_patched(family, state.phi_nodes, state.tau, "-")
    return (
        float(np.min(upper - state.lambda_values)),
        float(np.min(state.lambda_values - lower)),
    )


def run(
    initial: RescaledProfile | FlowState,
    family: BarrierFamily,
    tau_end: float,
    checkpoints=None,
    tol: float = 1e-9,
    dtau_max: float = 2e-3,
    eps_grid: float | None = None,
    tip_guard: int = 32,
    enforce_sandwich: bool = True,
    richardson: bool = True,
) -> Trajectory:
    """Evolve from the initial profile to tau_end, recording snapshots.

    Sandwich margins against the patched barriers are evaluated at every
    accepted step; the run refuses to continue (raises, never silently) once
    a margin drops below -eps_grid.  ``eps_grid`` defaults to 1e-3 |A|.
    """
    p = family.params
    state = initial if isinstance(initial, FlowState) else state_from_profile(initial, p.n)
    if tau_end < state.tau:
        raise EvolutionError(f"tau_end = {tau_end} precedes the initial tau = {state.tau}")
    if eps_grid is None:
        eps_grid = 1e-3 * abs(p.A)
    guard = tip_resolution(state.phi_nodes, p.R1, max(tau_end, state.tau))
    if guard < tip_guard:
        raise EvolutionError(
            f"only {guard} nodes resolve the tip region at tau_end = {tau_end}; "
            f"remesh with more nodes inside phi <= {p.R1 * math.exp(-tau_end / 2.0):g}"
        )
    if checkpoints is None:
        checkpoints = np.arange(state.tau, tau_end + 1e-12, 0.25)
    checkpoints = np.unique(np.clip(np.asarray(checkpoints, dtype=float), state.tau, tau_end))

    evolver = Evolver(p.n, p.a, state.phi_nodes, richardson=richardson)
    traj = Trajectory(config={
        "n": p.n, "a": p.a, "tau0": state.tau, "tau_end": tau_end,
        "tol": tol, "dtau_max": dtau_max, "eps_grid": eps_grid,
        "num_nodes": int(state.phi_nodes.size), "richardson": richardson,
        "enforce_sandwich": enforce_sandwich,
    })

    def note_margins(st: FlowState) -> None:
        up, low = sandwich_margins(st, family)
        traj.events.append({"kind": "margins", "tau": st.tau, "upper": up, "lower": low})
        if enforce_sandwich and min(up, low) < -eps_grid:
            raise EvolutionError(
                f"sandwich violation at tau = {st.tau:g}: margins ({up:g}, {low:g}) "
                f"below -eps_grid = {-eps_grid:g}"
            )

    note_margins(state)
    next_ckpt = 0
    while next_ckpt < checkpoints.size and checkpoints[next_ckpt] <= state.tau + 1e-12:
        traj.snapshots.append(state.copy())
        next_ckpt += 1

    while state.tau < tau_end - 1e-12:
        target = checkpoints[next_ckpt] if next_ckpt < checkpoints.size else tau_end
        dtau_cap = min(dtau_max, target - state.tau)
        new_state, rejections = evolver._attempt(state, dtau_cap, tol)
        for rej in rejections:
            traj.events.append({"kind": "rejected_step", **rej})
        state = new_state
        note_margins(state)
        while next_ckpt < checkpoints.size and state.tau >= checkpoints[next_ckpt] - 1e-12:
            traj.snapshots.append(state.copy())
            next_ckpt += 1
    return traj
