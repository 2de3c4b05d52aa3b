"""Joint trajectories in the scalar parameter s, and proper-time audits.

Every massive particle advances with the same s: dX_a/ds = V_a(X_1..X_n).
Massless particles carry no trajectory; states containing them are guided by
the traced density and currents of the massive particles.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import (
    DimensionError,
    MultiComponentError,
    NodeError,
    NonPositiveOmegaError,
    StepLimitError,
)
from .minkowski import Boost, dot
from .wavefunction import ManyBodyState, quantum_potential, velocity_field

METHODS = ("rk4_fixed", "rk4_adaptive")


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4_fixed"
    step: float = 1e-3
    tolerance: float = 1e-8
    max_steps: int = 10_000_000
    psi_floor: float | None = None
    max_halvings: int = 10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def floor(self, state: ManyBodyState) -> float:
        return state.psi_floor if self.psi_floor is None else self.psi_floor


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples ``X[k]`` (n, 4) at parameter values ``s[k]`` with velocities ``V[k]``.

    ``particles`` are the state indices of the massive particles carried.
    ``meta`` records the integrator settings and why integration stopped.
    """

    s: np.ndarray
    X: np.ndarray
    V: np.ndarray
    particles: tuple[int, ...]
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def reason(self) -> str:
        return self.meta.get("reason", "complete")

    @property
    def final(self) -> np.ndarray:
        return self.X[-1]

    def __len__(self):
        return len(self.s)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "particle", "t", "x", "y", "z"])
            for s, x in zip(self.s, self.X):
                for a, xa in zip(self.particles, x):
                    w.writerow(["%.17g" % s, a] + ["%.17g" % v for v in xa])

    def summary(self) -> dict:
        vv = dot(self.V, self.V)
        return {
            "reason": self.reason,
            "samples": len(self),
            "s_start": float(self.s[0]),
            "s_end": float(self.s[-1]),
            "final": self.final.tolist(),
            "tachyonic_samples": [int(np.sum(vv[:, i] < 0)) for i in range(self.n)],
            "meta": {k: v for k, v in self.meta.items() if k != "reason"},
        }


# ---------------------------------------------------------------------------
# RK4 core
# ---------------------------------------------------------------------------

Rhs = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


class _Node(Exception):
    pass


def _guard(rhs: Rhs, floor: float) -> Callable[[np.ndarray], np.ndarray]:
    def f(y):
        v, rho = rhs(y)
        if not rho > floor:
            raise _Node()
        return v
    return f


def _rk4_step(f, y, k1, h):
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _run_fixed(f, y0, s0, s1, cfg: IntegratorConfig):
    """RK4 on the uniform grid s0 + (s1 - s0) k / N.

    A step whose stages touch the node floor is retried with half the step
    (up to ``max_halvings`` times); after a shortened step the integrator
    aims for the next grid point again.
    """
    span = s1 - s0
    nsteps = int(np.ceil(abs(span) / cfg.step - 1e-9)) if span != 0 else 0
    if nsteps > cfg.max_steps:
        raise StepLimitError(f"{nsteps} steps needed, max_steps={cfg.max_steps}")
    ss, ys, vs = [s0], [y0], []
    y, s, k1 = y0, s0, f(y0)
    reason = "complete"
    halvings = taken = 0
    i = 0
    while i < nsteps:
        target = s0 + span * (i + 1) / nsteps
        h = target - s
        for attempt in range(cfg.max_halvings + 1):
            try:
                y_new = _rk4_step(f, y, k1, h)
                k1_new = f(y_new)
                break
            except _Node:
                h *= 0.5
                halvings += 1
        else:
            reason = "node"
            break
        taken += 1
        if taken > cfg.max_steps:
            raise StepLimitError(f"fixed-step integration exceeded max_steps={cfg.max_steps}")
        vs.append(k1)
        y, k1 = y_new, k1_new
        if attempt == 0:
            s = target
            i += 1
        else:
            s = s + h
        ss.append(s)
        ys.append(y)
    vs.append(k1)
    return ss, ys, vs, reason, halvings


def _safe(f, y, fallback):
    try:
        return f(y)
    except _Node:
        return fallback


def _run_adaptive(f, y0, s0, s1, cfg: IntegratorConfig):
    direction = 1.0 if s1 >= s0 else -1.0
    h = direction * min(cfg.step, abs(s1 - s0)) if s1 != s0 else 0.0
    ss, ys, vs = [s0], [y0], []
    y, s = y0, s0
    reason = "complete"
    steps = 0
    halvings_used = 0
    k1 = f(y)
    while direction * (s1 - s) > 1e-14 * max(1.0, abs(s1)):
        steps += 1
        if steps > cfg.max_steps:
            raise StepLimitError(f"adaptive integration exceeded max_steps={cfg.max_steps}")
        if direction * (s + h - s1) > 0:
            h = s1 - s
        try:
            full = _rk4_step(f, y, k1, h)
            half = _rk4_step(f, y, k1, 0.5 * h)
            two = _rk4_step(f, half, f(half), 0.5 * h)
            k1_new = f(two)
        except _Node:
            h *= 0.5
            halvings_used += 1
            if halvings_used > cfg.max_halvings and abs(h) < 1e-12:
                reason = "node"
                break
            continue
        err = float(np.max(np.abs(two - full))) / 15.0
        if err <= cfg.tolerance:
            vs.append(k1)
            y = two + (two - full) / 15.0
            s = s1 if h == s1 - s else s + h
            k1 = _safe(f, y, k1_new)
            ss.append(s)
            ys.append(y)
        fac = 4.0 if err == 0 else min(4.0, max(0.2, 0.9 * (cfg.tolerance / err) ** 0.2))
        h = h * fac
    vs.append(k1)
    return ss, ys, vs, reason, halvings_used


def _integrate_rhs(rhs: Rhs, y0: np.ndarray, span, cfg: IntegratorConfig, floor: float, meta: dict) -> tuple:
    f = _guard(rhs, floor)
    try:
        f(y0)
    except _Node:
        raise NodeError("initial configuration lies at a node of the wave function") from None
    s0, s1 = map(float, span)
    runner = _run_fixed if cfg.method == "rk4_fixed" else _run_adaptive
    ss, ys, vs, reason, halvings = runner(f, y0, s0, s1, cfg)
    meta = dict(meta, method=cfg.method, step=cfg.step, tolerance=cfg.tolerance,
                psi_floor=floor, reason=reason, step_halvings=halvings)
    return np.array(ss), np.array(ys), np.array(vs), meta


def _state_rhs(state: ManyBodyState) -> Rhs:
    def rhs(y):
        return velocity_field(state, y)
    return rhs


def _initial(state: ManyBodyState, initial) -> np.ndarray:
    y0 = np.array(initial, dtype=float)
    n = len(state.massive)
    if y0.shape != (n, 4):
        raise DimensionError(f"need one initial event per massive particle: shape ({n}, 4), got {y0.shape}")
    if not np.all(np.isfinite(y0)):
        raise ValueError("initial events must be finite")
    return y0


def integrate(state: ManyBodyState, initial, s_span, cfg: IntegratorConfig | None = None) -> Trajectory:
    """Integrate dX_a/ds = V_a for all massive particles with a common s."""
    cfg = cfg or IntegratorConfig()
    y0 = _initial(state, initial)
    s, X, V, meta = _integrate_rhs(_state_rhs(state), y0, s_span, cfg, cfg.floor(state), {"parameter": "s"})
    return Trajectory(s, X, V, state.massive, _tachyon_meta(V, meta))


def integrate_reparam(
    state: ManyBodyState,
    initial,
    lambda_span,
    omega: Callable[[np.ndarray], float] | float,
    cfg: IntegratorConfig | None = None,
) -> Trajectory:
    """Integrate dX_a/dlambda = Omega(X) V_a; the spacetime path is that of ``integrate``.

    ``omega`` is a positive constant or a callable on a configuration (n, 4).
    """
    cfg = cfg or IntegratorConfig()
    y0 = _initial(state, initial)
    if callable(omega):
        om = omega
    else:
        const = float(omega)
        om = lambda y: const  # noqa: E731

    def rhs(y):
        v, rho = velocity_field(state, y)
        w = float(om(y))
        if not w > 0:
            raise NonPositiveOmegaError(f"Omega = {w} at configuration {y.tolist()}")
        return w * v, rho

    s, X, V, meta = _integrate_rhs(rhs, y0, lambda_span, cfg, cfg.floor(state), {"parameter": "lambda"})
    return Trajectory(s, X, V, state.massive, _tachyon_meta(V, meta))


def _tachyon_meta(V: np.ndarray, meta: dict) -> dict:
    vv = dot(V, V)
    meta["tachyonic_samples"] = [int(np.sum(vv[:, i] < 0)) for i in range(vv.shape[1])]
    meta["lightlike_crossings"] = [int(np.sum(np.diff(np.sign(vv[:, i])) != 0)) for i in range(vv.shape[1])]
    return meta


# ---------------------------------------------------------------------------
# batched fixed-step integration (ensembles)
# ---------------------------------------------------------------------------


def integrate_batch(
    state: ManyBodyState,
    initial: np.ndarray,
    delta_s: float,
    cfg: IntegratorConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance many configurations (M, n, 4) by ``delta_s`` with fixed-step RK4.

    Members that hit the node floor are re-run individually with the
    step-halving policy of :func:`integrate`.  Returns ``(final, ok)``; ``ok``
    is False for members that terminated at a node.  The result for a member
    depends only on its own initial configuration and the batch it is in.
    """
    cfg = cfg or IntegratorConfig()
    y = np.array(initial, dtype=float)
    M = y.shape[0]
    ok = np.ones(M, dtype=bool)
    if M == 0 or delta_s == 0:
        return y, ok
    floor = cfg.floor(state)
    nsteps = max(1, int(np.ceil(abs(delta_s) / cfg.step - 1e-9)))
    h = delta_s / nsteps
    bad = np.zeros(M, dtype=bool)

    def f(z):
        v, rho = velocity_field(state, z)
        hit = ~(rho > floor)
        if hit.any():
            bad[hit] = True
            v = np.where(hit[:, None, None], 0.0, v)
        return v

    for _ in range(nsteps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    f(y)
    for i in np.flatnonzero(bad):
        traj = integrate(state, initial[i], (0.0, delta_s), cfg)
        y[i] = traj.final
        ok[i] = traj.reason == "complete"
    return y, ok


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------


class ProperTimeReport(NamedTuple):
    """Segmentwise check of ds^2 = dX.dX / V.V and of ds^2 = f dX.dX, f = (1 + 2Q/m)^-1.

    Residuals are relative to ds^2 and have shape (segments, n); NaN where
    the segment was skipped because V.V is near zero or changes sign.
    """

    residual_v: np.ndarray
    residual_f: np.ndarray
    max_residual_v: float
    max_residual_f: float
    skipped: int
    tachyonic_segments: int
    sign_consistent: bool


def _midpoints(traj: Trajectory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ds = np.diff(traj.s)
    dX = np.diff(traj.X, axis=0)
    mid = 0.5 * (traj.X[1:] + traj.X[:-1])
    return ds, dX, mid


def proper_time_audit(state: ManyBodyState, traj: Trajectory, lightlike_tol: float = 1e-6) -> ProperTimeReport:
    if state.n_components != 1:
        raise MultiComponentError("the proper-time audit needs a single-component state")
    ds, dX, mid = _midpoints(traj)
    V, _ = velocity_field(state, mid)
    vv = dot(V, V)
    xx = dot(dX, dX)
    ds2 = ds[:, None] ** 2
    vv_ends = dot(traj.V, traj.V)
    skip = (np.abs(vv) < lightlike_tol) | (np.sign(vv_ends[1:]) != np.sign(vv_ends[:-1]))
    res_v = np.abs(xx / vv - ds2) / ds2
    f = np.empty_like(vv)
    for i, a in enumerate(traj.particles):
        q = quantum_potential(state, a, _embed(state, traj.particles, mid))
        f[:, i] = 1.0 / (1.0 + 2.0 * q / state.particles[a].mass)
    res_f = np.abs(f * xx - ds2) / ds2
    res_v[skip] = np.nan
    res_f[skip] = np.nan
    tach = (vv < 0) & ~skip
    consistent = bool(np.all(xx[tach] < 0))
    return ProperTimeReport(
        res_v, res_f,
        float(np.nanmax(res_v)) if np.any(~skip) else 0.0,
        float(np.nanmax(res_f)) if np.any(~skip) else 0.0,
        int(skip.sum()), int(tach.sum()), consistent,
    )


def _embed(state: ManyBodyState, particles, X: np.ndarray) -> np.ndarray:
    if len(particles) != state.n:
        raise DimensionError("quantum potential needs all particles to carry trajectories")
    return X


class ClassicalTimeReport(NamedTuple):
    s_total: float
    tau_total: float
    f_profile: np.ndarray
    spacelike_segments: int
    max_segment_residual: float


def classical_time_compare(state: ManyBodyState, traj: Trajectory, a: int) -> ClassicalTimeReport:
    """Total s against the classical proper time of particle ``a`` along the path.

    Segmentwise ds = sqrt(f_a) dtau with f_a = (1 + 2 Q_a / m_a)^-1 at the
    segment midpoint is checked on timelike segments.
    """
    i = traj.particles.index(a)
    ds, dX, mid = _midpoints(traj)
    xx = dot(dX[:, i], dX[:, i])
    timelike = xx > 0
    dtau = np.sqrt(np.where(timelike, xx, 0.0))
    q = quantum_potential(state, a, _embed(state, traj.particles, mid))
    f = 1.0 / (1.0 + 2.0 * q / state.particles[a].mass)
    ok = timelike & (f > 0)
    res = np.abs(np.sqrt(np.where(ok, f, 0.0)) * dtau - ds) / np.abs(ds)
    return ClassicalTimeReport(
        float(traj.s[-1] - traj.s[0]),
        float(dtau.sum()),
        f,
        int((~timelike).sum()),
        float(res[ok].max()) if ok.any() else 0.0,
    )


def path_distance(a: Trajectory | np.ndarray, b: Trajectory | np.ndarray, chunk: int = 256) -> float:
    """Largest distance from a sample of ``a`` to the polyline through ``b``.

    Configurations are flattened to R^{4n} with the Euclidean norm.
    """
    pa = (a.X if isinstance(a, Trajectory) else np.asarray(a)).reshape(len(a.X if isinstance(a, Trajectory) else a), -1)
    pb = (b.X if isinstance(b, Trajectory) else np.asarray(b)).reshape(len(b.X if isinstance(b, Trajectory) else b), -1)
    if len(pb) == 1:
        return float(np.max(np.linalg.norm(pa - pb[0], axis=1)))
    p0, seg = pb[:-1], np.diff(pb, axis=0)
    seg2 = np.sum(seg * seg, axis=1)
    seg2 = np.where(seg2 == 0, 1.0, seg2)
    worst = 0.0
    for i in range(0, len(pa), chunk):
        q = pa[i:i + chunk, None, :] - p0[None]
        t = np.clip(np.sum(q * seg[None], axis=2) / seg2[None], 0.0, 1.0)
        d = q - t[..., None] * seg[None]
        worst = max(worst, float(np.sqrt(np.min(np.sum(d * d, axis=2), axis=1)).max()))
    return worst


class BoostCheck(NamedTuple):
    max_trajectory_deviation: float
    max_density_deviation: float


def boost_covariance_check(
    state: ManyBodyState,
    initial,
    s_span,
    b: Boost,
    cfg: IntegratorConfig | None = None,
) -> BoostCheck:
    """Compare integrate(boosted state, boosted start) with the boosted trajectory.

    s is a scalar, so samples are compared at equal s.  The density check
    evaluates rho' at boosted sample points against rho at the originals,
    relative to the peak density.
    """
    cfg = cfg or IntegratorConfig()
    lam = b.matrix()
    t0 = integrate(state, initial, s_span, cfg)
    bs = state.boosted(b)
    t1 = integrate(bs, np.asarray(initial, float) @ lam.T, s_span, cfg)
    if len(t0) != len(t1):
        raise RuntimeError("boosted run produced a different sample grid")
    dev = float(np.max(np.abs(t0.X @ lam.T - t1.X)) / max(1.0, float(np.max(np.abs(t1.X)))))
    _, rho0 = velocity_field(state, t0.X)
    _, rho1 = velocity_field(bs, t0.X @ lam.T)
    drho = float(np.max(np.abs(rho1 - rho0)) / np.max(rho0))
    return BoostCheck(dev, drho)


def config_dict(cfg: IntegratorConfig) -> dict:
    return asdict(cfg)
