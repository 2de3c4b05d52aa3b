"""Free classical relativistic particles: the closed-form reference for the
quantum modules in their plane-wave limit, delta-ensemble transport on a grid,
and non-relativistic limit identities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .dynamics import Trajectory
from .errors import DimensionError, PreconditionError
from .minkowski import dot
from .wavefunction import ManyBodyState, four_momenta


@dataclass(frozen=True, eq=False)
class ClassicalState:
    """Per-particle masses (n,) and on-shell four-momenta (n, 4).

    The principal function of particle a is S_a(x) = -p_a . x, so its
    velocity field is the constant p_a / m_a.
    """

    masses: np.ndarray
    momenta: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.array(self.masses, dtype=float))
        p = np.atleast_2d(np.array(self.momenta, dtype=float))
        if p.shape != (len(m), 4):
            raise DimensionError(f"need one four-momentum per mass, got {p.shape} for {len(m)} masses")
        if np.any(m <= 0):
            raise ValueError("classical trajectories need positive masses")
        if np.any(p[:, 0] <= 0):
            raise ValueError("energies must be positive")
        if np.any(np.abs(dot(p, p) - m**2) > 1e-12 * np.maximum(1.0, p[:, 0] ** 2)):
            raise ValueError("momenta are off the mass shell")
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "momenta", p)

    @classmethod
    def from_p3(cls, masses: Sequence[float], p3s) -> "ClassicalState":
        p3s = np.atleast_2d(np.asarray(p3s, dtype=float))
        return cls(masses, np.vstack([four_momenta(p, m) for m, p in zip(np.atleast_1d(masses), p3s)]))

    @classmethod
    def from_plane_wave(cls, state: ManyBodyState) -> "ClassicalState":
        """The classical counterpart of a state with exactly one mode per particle."""
        if any(k != 1 for k in state.mode_counts):
            raise ValueError("only single-mode states have a classical counterpart")
        return cls(state.masses, np.vstack([p[0] for p in state.momenta]))

    @property
    def n(self) -> int:
        return len(self.masses)

    @property
    def velocities(self) -> np.ndarray:
        return self.momenta / self.masses[:, None]


def classical_trajectory(cs: ClassicalState, initial, tau_span, samples: int = 101) -> Trajectory:
    """X_a(tau) = X_a(0) + (p_a / m_a) tau, sampled on a uniform tau grid."""
    x0 = np.array(initial, dtype=float).reshape(cs.n, 4)
    tau = np.linspace(float(tau_span[0]), float(tau_span[1]), samples)
    V = cs.velocities
    X = x0[None] + (tau - tau[0])[:, None, None] * V[None]
    return Trajectory(tau, X, np.broadcast_to(V, X.shape).copy(), tuple(range(cs.n)),
                      {"parameter": "tau", "method": "closed_form", "reason": "complete"})


def proper_time_along(traj: Trajectory, a: int = 0) -> float:
    """sum over segments of sqrt(dX.dX) for particle slot a (timelike segments)."""
    dX = np.diff(traj.X[:, a], axis=0)
    xx = dot(dX, dX)
    return float(np.sum(np.sqrt(np.clip(xx, 0.0, None))))


# ---------------------------------------------------------------------------
# delta ensemble on a grid
# ---------------------------------------------------------------------------


class DeltaReport(NamedTuple):
    """Discrete transport residuals of a Gaussian surrogate of delta^4(x - X(tau)).

    weak_residual: |sum phi R| / |sum phi d_tau rho| for a smooth test function.
    spatial_divergence: max |V^i D_i rho| (exactly 0 for a static particle).
    transport_mismatch: max |V^mu D_mu rho + d_tau rho| / max |d_tau rho|, exact d_tau rho.
    marginal_l1: L1 distance of the x^0-marginal from the 3-space surrogate.
    marginal_flux: max |sum_x0 D_0(rho V^0) dx0| relative to max rho^(3) |V|/w.
    """

    weak_residual: float
    spatial_divergence: float
    transport_mismatch: float
    marginal_l1: float
    marginal_flux: float


def _gauss(u: np.ndarray, w: float) -> np.ndarray:
    return np.exp(-0.5 * (u / w) ** 2) / (np.sqrt(2 * np.pi) * w)


def delta_equivariance_check(
    traj: Trajectory,
    width: float,
    spacing: float,
    dtau: float | None = None,
    tau: float | None = None,
    axis: int | None = None,
    half_extent: float = 10.0,
    test_sigma: float = 1.0,
) -> DeltaReport:
    """Transport check of rho(x; tau) = G_w(x^0 - X^0) G_w(x^i - X^i) on an (x^0, x^i) grid.

    Uses the first particle of ``traj`` (a straight classical path), the
    spatial axis of largest velocity unless ``axis`` is given, forward
    differences in tau with ``dtau`` (default: the width) and central
    differences on the grid.
    """
    if width < 3 * spacing:
        raise ValueError(f"grid too coarse: width {width} is below 3 grid cells of {spacing}")
    V = traj.V[0, 0]
    if axis is None:
        axis = 1 + int(np.argmax(np.abs(V[1:]))) if np.any(V[1:] != 0) else 1
    tau = 0.5 * (traj.s[0] + traj.s[-1]) if tau is None else tau
    dtau = width if dtau is None else dtau
    X0 = traj.X[0, 0] + (tau - traj.s[0]) * V

    n_cells = int(np.ceil(half_extent / spacing))
    off = spacing * np.arange(-n_cells, n_cells + 1)
    t = X0[0] + off
    x = X0[axis] + off
    T, Xg = np.meshgrid(t, x, indexing="ij")

    def rho(tt):
        c = X0 + (tt - tau) * V
        return _gauss(T - c[0], width) * _gauss(Xg - c[axis], width)

    r0, r1 = rho(tau), rho(tau + dtau)
    dtau_rho = (r1 - r0) / dtau
    d0 = np.gradient(r0, spacing, axis=0, edge_order=2)
    d1 = np.gradient(r0, spacing, axis=1, edge_order=2)
    flux_t = V[0] * d0
    flux_x = V[axis] * d1
    R = dtau_rho + flux_t + flux_x

    # smooth test function, offset so that its derivatives do not vanish at X
    phi = np.exp(-((T - X0[0] - 0.5 * test_sigma) ** 2 + (Xg - X0[axis] + 0.3 * test_sigma) ** 2)
                 / (2 * test_sigma**2))
    weak = abs(np.sum(phi * R)) / max(abs(np.sum(phi * dtau_rho)), np.finfo(float).tiny)

    # exact d rho / d tau of the surrogate, for the pointwise transport comparison
    exact = (V[0] * (T - X0[0]) + V[axis] * (Xg - X0[axis])) / width**2 * r0
    mismatch = float(np.max(np.abs(flux_t + flux_x + exact)) / np.max(np.abs(exact)))

    marginal = r0.sum(axis=0) * spacing
    direct = _gauss(x - X0[axis], width)
    l1 = float(np.sum(np.abs(marginal - direct)) * spacing)
    flux0 = np.abs(np.sum(np.gradient(r0 * V[0], spacing, axis=0, edge_order=2), axis=0) * spacing)
    marginal_flux = float(np.max(flux0) / (np.max(direct) * max(abs(V[0]), 1e-300) / width))
    return DeltaReport(float(weak), float(np.max(np.abs(flux_x))), mismatch, l1, marginal_flux)


# ---------------------------------------------------------------------------
# non-relativistic limit
# ---------------------------------------------------------------------------


class NonrelReport(NamedTuple):
    speed: float
    dtau_dt: float
    dtau_dt_deviation: float
    dt_relation_residual: float
    identity_residual: float


def many_time_identity_residual(
    f: Callable[[np.ndarray], float],
    t: float,
    n: int,
    h: float = 1e-5,
) -> float:
    """|sum_a d f / d t_a - d f(t, .., t) / dt| at equal times, both by central differences."""
    base = np.full(n, float(t))
    partial = 0.0
    for a in range(n):
        e = np.zeros(n)
        e[a] = h
        partial += (f(base + e) - f(base - e)) / (2 * h)
    diag = (f(base + h) - f(base - h)) / (2 * h)
    return abs(partial - diag)


def nonrel_limit_check(
    source: ClassicalState | ManyBodyState,
    threshold: float = 0.01,
    tau_total: float = 10.0,
    identity_n: int = 3,
    seed: int = 0,
) -> NonrelReport:
    """Slow-particle checks along the classical path of the first particle.

    dtau/dt from path segments must deviate from 1 by at most v^2; the time
    lapse must satisfy dt^2 = |dX|^2 / v^2; and the many-time identity is
    verified for f = prod_a sin(omega_a t_a) with random omega.
    """
    cs = ClassicalState.from_plane_wave(source) if isinstance(source, ManyBodyState) else source
    p = cs.momenta[0]
    v = float(np.linalg.norm(p[1:]) / p[0])
    if v >= threshold:
        raise PreconditionError(f"speed {v:.3g} is not below the non-relativistic threshold {threshold}")
    traj = classical_trajectory(ClassicalState(cs.masses[:1], cs.momenta[:1]), np.zeros((1, 4)), (0.0, tau_total))
    dX = np.diff(traj.X[:, 0], axis=0)
    dtau = np.sqrt(dot(dX, dX))
    dt = dX[:, 0]
    ratio = dtau / dt
    dev = float(np.max(np.abs(ratio - 1.0)))
    if v > 0:
        spatial = np.sum(dX[:, 1:] ** 2, axis=1)
        rel = float(np.max(np.abs(dt**2 - spatial / v**2) / dt**2))
    else:
        rel = 0.0
    rng = np.random.default_rng(seed)
    omega = rng.uniform(0.5, 2.0, identity_n)

    def f(ts):
        return float(np.prod(np.sin(omega * ts)))

    ident = max(many_time_identity_residual(f, t, identity_n) for t in rng.uniform(0, 3, 5))
    return NonrelReport(v, float(np.mean(ratio)), dev, rel, ident)
