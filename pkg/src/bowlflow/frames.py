"""Coordinate bookkeeping between the physical, rescaled, and tip frames.

With vanishing time T and blow-up parameter a > 0 the frames are linked by

    tau = -log(T - t),        y = x + a log(T - t),
    phi = u (T - t)^{-1/2},   z = phi e^{tau/2} = u (T - t)^{-1},

and the compactified variable lambda = -1/y.  All maps here are exact node
by node; resampling between the natural grids of the two frames uses
monotone interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import FrameError


@dataclass(frozen=True)
class FrameParams:
    """Vanishing time, blow-up parameter, and dimension of the flow."""

    T: float
    a: float
    n: int

    def __post_init__(self) -> None:
        if not np.isfinite(self.T):
            raise FrameError("vanishing time T must be finite")
        if self.a <= 0.0:
            raise FrameError("blow-up parameter a must be positive")
        if self.n < 1:
            raise FrameError("dimension n must be >= 1")

    @property
    def cylinder_radius(self) -> float:
        """Rescaled radius of the asymptotic cylinder, sqrt(2(n-1))."""
        return float(np.sqrt(2.0 * (self.n - 1)))

    def tau_of_t(self, t: float) -> float:
        if t >= self.T:
            raise FrameError(f"time {t} is not before the vanishing time {self.T}")
        return float(-np.log(self.T - t))

    def t_of_tau(self, tau: float) -> float:
        return float(self.T - np.exp(-tau))


@dataclass
class PhysicalProfile:
    """Graph r = u(x) at one physical time, tip at the first node."""

    t: float
    x_nodes: np.ndarray
    u_values: np.ndarray

    def __post_init__(self) -> None:
        self.x_nodes = np.ascontiguousarray(self.x_nodes, dtype=float)
        self.u_values = np.ascontiguousarray(self.u_values, dtype=float)
        if self.x_nodes.shape != self.u_values.shape or self.x_nodes.ndim != 1:
            raise FrameError("x_nodes and u_values must be 1-d arrays of equal length")
        if self.u_values[0] != 0.0:
            raise FrameError("first node must be the tip: u(x_0) = 0")
        if np.any(np.diff(self.x_nodes) <= 0.0):
            raise FrameError("x_nodes must be strictly increasing")
        if np.any(np.diff(self.u_values) <= 0.0):
            raise FrameError("profile must be strictly increasing (graph invertible)")


@dataclass
class RescaledProfile:
    """Compactified profile lambda(phi) at one rescaled time."""

    tau: float
    phi_nodes: np.ndarray
    lambda_values: np.ndarray

    def __post_init__(self) -> None:
        self.phi_nodes = np.ascontiguousarray(self.phi_nodes, dtype=float)
        self.lambda_values = np.ascontiguousarray(self.lambda_values, dtype=float)
        if self.phi_nodes.shape != self.lambda_values.shape or self.phi_nodes.ndim != 1:
            raise FrameError("phi_nodes and lambda_values must be 1-d arrays of equal length")
        if np.any(np.diff(self.phi_nodes) <= 0.0):
            raise FrameError("phi_nodes must be strictly increasing")
        if np.any(self.lambda_values >= 0.0):
            raise FrameError("lambda must be negative everywhere (y > 0)")
        if np.any(np.diff(self.lambda_values) <= 0.0):
            raise FrameError("lambda must be strictly increasing in phi")


@dataclass(frozen=True)
class TipFrame:
    """Blown-up tip coordinates extracted from a rescaled profile."""

    tau: float
    z_nodes: np.ndarray
    p_values: np.ndarray
    q_values: np.ndarray


def to_rescaled(
    p: PhysicalProfile,
    fp: FrameParams,
    phi_nodes: np.ndarray | None = None,
) -> RescaledProfile:
    """Map a physical profile to the compactified rescaled frame.

    Optionally resamples onto ``phi_nodes`` with monotone (PCHIP)
    interpolation of lambda(phi); the requested grid must lie inside the
    range covered by the input profile.
    """
    tau = fp.tau_of_t(p.t)
    scale = np.exp(tau / 2.0)  # (T - t)^{-1/2}
    phi = p.u_values * scale
    y = p.x_nodes - fp.a * tau
    if np.any(y <= 0.0):
        raise FrameError(
            "y = x + a log(T - t) must be positive for the compactified frame; "
            "profile translation is misconfigured"
        )
    lam = -1.0 / y
    if phi_nodes is None:
        return RescaledProfile(tau, phi, lam)
    phi_nodes = np.asarray(phi_nodes, dtype=float)
    if phi_nodes[0] < phi[0] - 1e-15 or phi_nodes[-1] > phi[-1] * (1.0 + 1e-12):
        raise FrameError("requested phi grid extends beyond the converted profile")
    lam_i = PchipInterpolator(phi, lam)(phi_nodes)
    return RescaledProfile(tau, phi_nodes, lam_i)


def from_rescaled(r: RescaledProfile, fp: FrameParams) -> PhysicalProfile:
    """Inverse of to_rescaled; the phi = 0 sample recovers the tip node."""
    if not np.isfinite(r.tau):
        raise FrameError("tau must be finite")
    if np.any(r.lambda_values >= 0.0):
        raise FrameError("lambda >= 0 sample encountered; physical frame undefined")
    t = fp.t_of_tau(r.tau)
    y = -1.0 / r.lambda_values
    x = y + fp.a * r.tau
    u = r.phi_nodes * np.exp(-r.tau / 2.0)
    return PhysicalProfile(t, x, u)


def interior_view(r: RescaledProfile | object) -> RescaledProfile:
    """Strip trailing nodes with lambda >= 0 (the cylinder-cap Dirichlet node).

    Accepts anything exposing tau, phi_nodes, lambda_values, so evolver
    states can be converted without importing that module here.
    """
    phi = np.asarray(r.phi_nodes, dtype=float)
    lam = np.asarray(r.lambda_values, dtype=float)
    keep = lam < 0.0
    if not np.all(keep[:-1]) or not keep[0]:
        raise FrameError("profile has non-negative lambda away from the cylinder cap")
    return RescaledProfile(float(r.tau), phi[keep], lam[keep])


def tip_frame(r: RescaledProfile, a_tilde: float, z_cap: float | None = None) -> TipFrame:
    """Extract the tip frame: z = phi e^{tau/2}, p = e^tau (y - a_tilde).

    ``a_tilde`` is the y-coordinate the tip approaches (1/A for the barrier
    family).  q = p_z comes from centred differences on the z grid.  With
    ``z_cap`` the output is restricted to z <= z_cap.
    """
    y = -1.0 / r.lambda_values
    z = r.phi_nodes * np.exp(r.tau / 2.0)
    p = np.exp(r.tau) * (y - a_tilde)
    if z_cap is not None:
        keep = z <= z_cap
        if keep.sum() < 3:
            raise FrameError(
                f"tip frame empty: fewer than 3 nodes with z <= {z_cap:g} at tau = {r.tau:g}"
            )
        z, p = z[keep], p[keep]
    q = np.gradient(p, z, edge_order=2)
    return TipFrame(r.tau, z, p, q)
