"""Positive-energy many-particle Klein-Gordon states as finite plane-wave sums.

A state is

    psi_A(x_1..x_n) = sum_K c[A, k_1..k_n] prod_a exp(-i p_{a,k_a} . x_a)

with p^0 = +sqrt(p^2 + m^2) for every mode.  All field quantities (psi, its
first and second derivatives, currents, velocities, the quantum potential)
are evaluated analytically from the mode sum; integrals of the density over
axis-aligned boxes are evaluated in closed form.

Batched inputs: every evaluator accepts configurations of shape ``(n, 4)`` or
``(N, n, 4)`` and returns correspondingly unbatched or batched results.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from math import prod
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DimensionError,
    IndeterminateError,
    MasslessError,
    MultiComponentError,
    NodeError,
    NoMasslessError,
)
from .minkowski import METRIC, Boost

PSI_FLOOR_REL = 1e-12
LATTICE_TOL = 1e-9
# Rows per GEMM chunk in the contraction kernel; large enough to amortise
# python overhead, small enough to keep intermediates in the tens of MB.
_CHUNK = 8192


@dataclass(frozen=True)
class ParticleSpec:
    mass: float
    components: int = 1

    def __post_init__(self):
        if not np.isfinite(self.mass) or self.mass < 0:
            raise ValueError(f"mass must be finite and >= 0, got {self.mass}")
        if int(self.components) != self.components or self.components < 1:
            raise ValueError(f"components must be a positive integer, got {self.components}")

    @property
    def massless(self) -> bool:
        return self.mass == 0


def mass_shell_energy(p3, mass: float) -> np.ndarray:
    p3 = np.asarray(p3, dtype=float)
    return np.sqrt(np.sum(p3 * p3, axis=-1) + mass * mass)


def four_momenta(p3, mass: float) -> np.ndarray:
    """Positive-energy four-momenta for an array of 3-momenta, shape (K, 4)."""
    p3 = np.atleast_2d(np.asarray(p3, dtype=float))
    if p3.shape[-1] != 3:
        raise DimensionError(f"3-momenta must have last axis 3, got {p3.shape}")
    return np.column_stack([mass_shell_energy(p3, mass), p3])


@dataclass(frozen=True, eq=False)
class ManyBodyState:
    """Immutable mode-sum wave function.

    ``momenta[a]`` holds the contravariant four-momenta of particle ``a``'s
    modes, shape ``(K_a, 4)``.  ``amplitudes`` has shape ``(A, K_1, ..., K_n)``
    where ``A`` is the product of the particles' component counts.
    ``L`` and ``T`` describe the normalization box ``[0, T] x [0, L]^3`` used
    per particle.
    """

    particles: tuple[ParticleSpec, ...]
    momenta: tuple[np.ndarray, ...]
    amplitudes: np.ndarray
    L: float
    T: float
    normalized: bool = False
    _allow_negative_energy: bool = field(default=False, repr=False)

    def __post_init__(self):
        parts = tuple(self.particles)
        if not parts:
            raise DimensionError("a state needs at least one particle")
        moms = tuple(np.array(p, dtype=float).reshape(-1, 4) for p in self.momenta)
        if len(moms) != len(parts):
            raise DimensionError(f"{len(parts)} particles but {len(moms)} mode lists")
        amps = np.array(self.amplitudes, dtype=complex)
        n_comp = prod(p.components for p in parts)
        want = (n_comp,) + tuple(len(m) for m in moms)
        if amps.shape != want:
            if amps.shape == want[1:] and n_comp == 1:
                amps = amps.reshape(want)
            else:
                raise DimensionError(f"amplitude tensor shape {amps.shape}, expected {want}")
        for a, (spec, p) in enumerate(zip(parts, moms)):
            if len(p) == 0:
                raise DimensionError(f"particle {a} has no modes")
            if not np.all(np.isfinite(p)):
                raise ValueError(f"particle {a}: non-finite momenta")
            msq = p[:, 0] ** 2 - np.sum(p[:, 1:] ** 2, axis=1)
            scale = np.maximum(1.0, p[:, 0] ** 2)
            if np.any(np.abs(msq - spec.mass**2) > 1e-9 * scale):
                raise ValueError(f"particle {a}: modes off the mass shell m={spec.mass}")
            if not self._allow_negative_energy and np.any(p[:, 0] <= 0):
                raise ValueError(f"particle {a}: modes must carry positive energy")
        if not (self.L > 0 and self.T > 0 and np.isfinite(self.L) and np.isfinite(self.T)):
            raise ValueError("box sizes L and T must be positive and finite")
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "T", float(self.T))
        for p in moms:
            p.setflags(write=False)
        amps.setflags(write=False)
        object.__setattr__(self, "particles", parts)
        object.__setattr__(self, "momenta", moms)
        object.__setattr__(self, "amplitudes", amps)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_modes(
        cls,
        particles: Sequence[ParticleSpec],
        p3s: Sequence,
        amplitudes,
        L: float,
        T: float,
        normalize: bool = True,
    ) -> "ManyBodyState":
        moms = tuple(four_momenta(p3, spec.mass) for spec, p3 in zip(particles, p3s))
        state = cls(tuple(particles), moms, amplitudes, L, T)
        return state.normalize() if normalize else state

    @classmethod
    def from_lattice(
        cls,
        particles: Sequence[ParticleSpec],
        ks: Sequence,
        amplitudes,
        L: float,
        T: float,
        normalize: bool = True,
    ) -> "ManyBodyState":
        """Modes given as integer lattice vectors, p = 2 pi k / L."""
        p3s = [2 * np.pi * np.atleast_2d(np.asarray(k, dtype=float)) / L for k in ks]
        return cls.from_modes(particles, p3s, amplitudes, L, T, normalize)

    def normalize(self) -> "ManyBodyState":
        """Rescale so the density integrates to one over the n-particle box."""
        norm = self.box_norm()
        if not norm > 0:
            raise ValueError("cannot normalize a state with zero norm")
        return replace(self, amplitudes=self.amplitudes / np.sqrt(norm), normalized=True)

    def with_amplitudes(self, amplitudes) -> "ManyBodyState":
        return replace(self, amplitudes=amplitudes, normalized=False)

    def boosted(self, b: Boost, which: Sequence[int] | None = None) -> "ManyBodyState":
        """Scalar transform psi'(x') = psi(b^-1 x') for the selected particles.

        Amplitudes are unchanged; each selected particle's mode momenta are
        boosted.  The result is off-lattice in general.
        """
        lam = b.matrix()
        idx = range(self.n) if which is None else which
        moms = list(self.momenta)
        for a in idx:
            moms[a] = moms[a] @ lam.T
        return replace(self, momenta=tuple(moms))

    # -- layout -------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.particles)

    @property
    def n_components(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def mode_counts(self) -> tuple[int, ...]:
        return self.amplitudes.shape[1:]

    @property
    def masses(self) -> np.ndarray:
        return np.array([p.mass for p in self.particles])

    @property
    def massive(self) -> tuple[int, ...]:
        return tuple(a for a, p in enumerate(self.particles) if not p.massless)

    @property
    def massless(self) -> tuple[int, ...]:
        return tuple(a for a, p in enumerate(self.particles) if p.massless)

    @cached_property
    def on_lattice(self) -> bool:
        for p in self.momenta:
            k = p[:, 1:] * self.L / (2 * np.pi)
            if np.any(np.abs(k - np.round(k)) > LATTICE_TOL):
                return False
        return True

    def box_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.zeros((self.n, 4))
        hi = np.tile([self.T, self.L, self.L, self.L], (self.n, 1))
        return lo, hi

    def varying_axes(self) -> np.ndarray:
        """Boolean (n, 4): True where the density can depend on that coordinate."""
        return np.array([[np.ptp(p[:, mu]) > 0 for mu in range(4)] for p in self.momenta])

    def box_norm(self) -> float:
        lo, hi = self.box_bounds()
        return float(density_integral(self, lo, hi))

    # -- cached scales ------------------------------------------------------

    @cached_property
    def peak_density(self) -> float:
        lo, hi = self.box_bounds()
        idx = list(self.massive) if self.massless else slice(None)
        return estimate_peak_density(self, lo[idx], hi[idx], refine=False)

    @cached_property
    def psi_floor(self) -> float:
        return PSI_FLOOR_REL * self.peak_density

    @cached_property
    def _traced(self) -> "_TracedState":
        return _TracedState.build(self)


def _inject_negative_energy(state: ManyBodyState, a: int, mode: int, weight: complex = 0.5) -> ManyBodyState:
    """Add a negative-energy partner of one mode (same 3-momentum, p^0 = -E).

    Test-only: the result is unphysical and its spatial norm oscillates in
    x^0 through the interference of the +E and -E terms.
    """
    moms = [m.copy() for m in state.momenta]
    partner = moms[a][mode].copy()
    partner[0] = -partner[0]
    moms[a] = np.vstack([moms[a], partner])
    c = np.asarray(state.amplitudes)
    extra = weight * np.take(c, [mode], axis=1 + a)
    amps = np.concatenate([c, extra], axis=1 + a)
    return ManyBodyState(
        state.particles, tuple(moms), amps, state.L, state.T,
        normalized=False, _allow_negative_energy=True,
    )


# ---------------------------------------------------------------------------
# contraction kernel
# ---------------------------------------------------------------------------


def _as_batch(state: ManyBodyState, xs, n: int | None = None) -> tuple[np.ndarray, bool]:
    x = np.asarray(xs, dtype=float)
    n = state.n if n is None else n
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (n, 4):
        raise DimensionError(f"configurations must have shape (n={n}, 4) or (N, {n}, 4), got {np.shape(xs)}")
    return x, single


def _phases(momenta: Sequence[np.ndarray], x: np.ndarray) -> list[np.ndarray]:
    """exp(-i p.x) per particle, each (N, K_a)."""
    out = []
    for a, p in enumerate(momenta):
        xa = x[:, a, :]
        arg = (xa[:, 0:1] * p[None, :, 0] - xa[:, 1:2] * p[None, :, 1]
               - xa[:, 2:3] * p[None, :, 2] - xa[:, 3:4] * p[None, :, 3])
        out.append(np.exp(-1j * arg))
    return out


def _contract(c: np.ndarray, phases: list[np.ndarray], keep: int | None) -> np.ndarray:
    """Contract the amplitude tensor with every particle's phases except ``keep``.

    Returns (N, A) when ``keep`` is None, else (N, A, K_keep).  The largest
    mode axis goes through a GEMM first; the rest are batched reductions.
    """
    n = c.ndim - 1
    N = phases[0].shape[0]
    others = [b for b in range(n) if b != keep]
    if not others:
        return np.broadcast_to(c, (N,) + c.shape)
    first = max(others, key=lambda b: c.shape[1 + b])
    axes = [b for b in range(n) if b != first]
    t = np.moveaxis(c, 1 + first, -1)
    rest = t.shape[:-1]
    t = (t.reshape(-1, t.shape[-1]) @ phases[first].T).T.reshape((N,) + rest)
    for b in sorted(others, key=lambda b: -c.shape[1 + b]):
        if b == first:
            continue
        pos = 2 + axes.index(b)
        t = np.einsum("n...k,nk->n...", np.moveaxis(t, pos, -1), phases[b])
        axes.remove(b)
    return t


class _Sums(NamedTuple):
    psi: np.ndarray    # (N, A)
    grad: np.ndarray   # (N, A, n, 4), lower index d/dx^mu
    hess: np.ndarray | None  # (N, A, n, 4, 4), same-particle blocks only


def _mode_sums(state: ManyBodyState, x: np.ndarray, second: bool = False) -> _Sums:
    N = x.shape[0]
    if N > _CHUNK:
        parts = [_mode_sums(state, x[i:i + _CHUNK], second) for i in range(0, N, _CHUNK)]
        return _Sums(
            np.concatenate([p.psi for p in parts]),
            np.concatenate([p.grad for p in parts]),
            np.concatenate([p.hess for p in parts]) if second else None,
        )
    c = state.amplitudes
    ph = _phases(state.momenta, x)
    A = state.n_components
    grad = np.empty((N, A, state.n, 4), dtype=complex)
    hess = np.empty((N, A, state.n, 4, 4), dtype=complex) if second else None
    psi = None
    for a, p in enumerate(state.momenta):
        env = _contract(c, ph, keep=a) * ph[a][:, None, :]
        if psi is None:
            psi = env.sum(axis=-1)
        pl = p * METRIC
        grad[:, :, a, :] = np.einsum("nak,km->nam", env, -1j * pl)
        if second:
            hess[:, :, a] = np.einsum("nak,kmv->namv", env, -pl[:, :, None] * pl[:, None, :])
    return _Sums(psi, grad, hess)


def evaluate_psi(state: ManyBodyState, xs) -> np.ndarray:
    """psi_A only, shape (A,) or (N, A); the cheap path used for sampling."""
    x, single = _as_batch(state, xs)
    out = []
    for i in range(0, x.shape[0], _CHUNK):
        out.append(_contract(state.amplitudes, _phases(state.momenta, x[i:i + _CHUNK]), keep=None))
    psi = np.concatenate(out) if out else np.empty((0, state.n_components), complex)
    return psi[0] if single else psi


def density(state: ManyBodyState, xs) -> np.ndarray:
    psi = evaluate_psi(state, xs)
    return np.sum(psi.real**2 + psi.imag**2, axis=-1)


# ---------------------------------------------------------------------------
# field samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldSample:
    """psi, gradients, density and currents at one or many configurations.

    ``grad[..., A, a, mu]`` is d psi_A / d x_a^mu.  ``currents[..., a, :]`` is
    the contravariant j_a^mu; NaN for massless particles.
    """

    psi: np.ndarray
    grad: np.ndarray
    density: np.ndarray
    currents: np.ndarray


def _currents(state: ManyBodyState, psi: np.ndarray, grad: np.ndarray) -> np.ndarray:
    # j_a^mu = (i/2m) psi^dag <-> d_a^mu psi = -Im(psi^dag d_a^mu psi) / m
    up = grad * METRIC
    q = np.einsum("na,naim->nim", psi.conj(), up)
    j = np.full(q.shape, np.nan)
    for a in state.massive:
        j[:, a, :] = -q[:, a, :].imag / state.particles[a].mass
    return j


def evaluate(state: ManyBodyState, xs) -> FieldSample:
    x, single = _as_batch(state, xs)
    s = _mode_sums(state, x)
    rho = np.sum(s.psi.real**2 + s.psi.imag**2, axis=-1)
    j = _currents(state, s.psi, s.grad)
    if single:
        return FieldSample(s.psi[0], s.grad[0], rho[0], j[0])
    return FieldSample(s.psi, s.grad, rho, j)


def _check_massive(state: ManyBodyState, a: int):
    if not 0 <= a < state.n:
        raise DimensionError(f"particle index {a} out of range for n={state.n}")
    if state.particles[a].massless:
        raise MasslessError(f"particle {a} is massless and has no velocity field")


def velocity(state: ManyBodyState, a: int, xs) -> np.ndarray:
    """V_a^mu = j_a^mu / psi^dag psi at one configuration."""
    _check_massive(state, a)
    f = evaluate(state, xs)
    if np.ndim(f.density) != 0:
        raise DimensionError("velocity() takes a single configuration; use velocity_field for batches")
    if not f.density > state.psi_floor:
        raise NodeError(f"density {f.density:.3e} at or below node floor {state.psi_floor:.3e}")
    return f.currents[a] / f.density


def velocity_field(state: ManyBodyState, xs) -> tuple[np.ndarray, np.ndarray]:
    """Velocities of all massive particles and the density, without node checks.

    ``xs`` holds positions of the massive particles only, in order.  States
    containing massless particles use the traced density and currents.
    Returns ``(V, rho)`` with V of shape (N, n_massive, 4).
    """
    if state.massless:
        rho, j = traceout_massless(state, xs)
        return j / np.asarray(rho)[..., None, None], rho
    x, single = _as_batch(state, xs)
    s = _mode_sums(state, x)
    rho = np.sum(s.psi.real**2 + s.psi.imag**2, axis=-1)
    j = _currents(state, s.psi, s.grad)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = j / rho[:, None, None]
    if single:
        return v[0], rho[0]
    return v, rho


def quantum_potential(state: ManyBodyState, a: int, xs) -> np.ndarray | float:
    """Q_a = box_a R / (2 m_a R) for psi = R e^{iS}, from analytic derivatives."""
    _check_massive(state, a)
    if state.n_components != 1:
        raise MultiComponentError("Q is defined only for single-component wave functions")
    x, single = _as_batch(state, xs)
    s = _mode_sums(state, x, second=True)
    psi = s.psi[:, 0]
    d = s.grad[:, 0, a, :]
    h = s.hess[:, 0, a]
    rho = psi.real**2 + psi.imag**2
    if np.any(rho <= state.psi_floor):
        raise NodeError("quantum potential requested at a node")
    R = np.sqrt(rho)
    dR = (psi.conj()[:, None] * d).real / R[:, None]
    box_psi = np.einsum("m,nmm->n", METRIC, h)
    dd = np.einsum("m,nm,nm->n", METRIC, d.conj(), d).real
    boxR = (dd + (psi.conj() * box_psi).real - np.einsum("m,nm,nm->n", METRIC, dR, dR)) / R
    q = boxR / (2 * state.particles[a].mass * R)
    return q[0] if single else q


def current_divergence(state: ManyBodyState, xs) -> tuple[np.ndarray, np.ndarray]:
    """Per massive particle d_{a mu} j_a^mu and the magnitude of its summands.

    Returns ``(div, scale)`` each of shape (N, n) (NaN for massless particles);
    ``scale`` is the sum of the absolute sizes of the two products entering
    the divergence, the natural yardstick for rounding-level cancellation.
    """
    x, single = _as_batch(state, xs)
    s = _mode_sums(state, x, second=True)
    N = x.shape[0]
    div = np.full((N, state.n), np.nan)
    scale = np.full((N, state.n), np.nan)
    for a in state.massive:
        d = s.grad[:, :, a, :]
        h = s.hess[:, :, a]
        m = state.particles[a].mass
        t1 = np.einsum("m,nam,nam->n", METRIC, d.conj(), d)
        t2 = np.einsum("m,na,namm->n", METRIC, s.psi.conj(), h)
        div[:, a] = -(t1 + t2).imag / m
        s1 = np.einsum("nam,nam->n", np.abs(d), np.abs(d))
        s2 = np.einsum("na,namm->n", np.abs(s.psi), np.abs(h))
        scale[:, a] = (s1 + s2) / m
    if single:
        return div[0], scale[0]
    return div, scale


class EnergyStats(NamedTuple):
    mean: float
    stddev: float


def energy_stats(state: ManyBodyState, a: int) -> EnergyStats:
    """Mean and spread of particle a's energy from its marginal mode weights."""
    w = np.abs(state.amplitudes) ** 2
    axes = tuple(i for i in range(w.ndim) if i != 1 + a)
    w = w.sum(axis=axes)
    w = w / w.sum()
    E = state.momenta[a][:, 0]
    mean = float(w @ E)
    var = float(w @ (E - mean) ** 2)
    return EnergyStats(mean, np.sqrt(max(var, 0.0)))


def epsilon_estimate(state: ManyBodyState, a: int, xs, rel_threshold: float = 1e-10) -> float:
    """Ratio |psi|^2 d0 V^0 / (V^0 d0 |psi|^2) for particle a at one configuration.

    Small values mean the V^0 variation is negligible next to the density's
    own time dependence.
    """
    _check_massive(state, a)
    x, single = _as_batch(state, xs)
    if not single:
        raise DimensionError("epsilon_estimate takes a single configuration")
    s = _mode_sums(state, x, second=True)
    psi, d, h = s.psi[0], s.grad[0, :, a, :], s.hess[0, :, a]
    m = state.particles[a].mass
    rho = float(np.sum(np.abs(psi) ** 2))
    if not rho > state.psi_floor:
        raise NodeError("epsilon requested at a node")
    d0rho = 2 * float(np.sum(psi.conj() * d[:, 0]).real)
    j0 = -float(np.sum(psi.conj() * d[:, 0]).imag) / m
    d0j0 = -float(np.sum(d[:, 0].conj() * d[:, 0] + psi.conj() * h[:, 0, 0]).imag) / m
    v0 = j0 / rho
    d0v0 = (d0j0 - v0 * d0rho) / rho
    e_scale = float(np.max(np.abs(state.momenta[a][:, 0])))
    denom = v0 * d0rho
    if abs(d0rho) <= rel_threshold * rho * e_scale or abs(denom) == 0:
        raise IndeterminateError("d0|psi|^2 vanishes at this point; epsilon is 0/0")
    return rho * d0v0 / denom


# ---------------------------------------------------------------------------
# box integrals
# ---------------------------------------------------------------------------


def _axis_factor(kappa: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """int_lo^hi exp(i kappa x) dx, or exp(i kappa lo) where lo == hi."""
    w = hi - lo
    mid = 0.5 * (hi + lo)
    integ = np.exp(1j * kappa * mid) * w * np.sinc(kappa * w / (2 * np.pi))
    return np.where(w == 0, np.exp(1j * kappa * lo), integ)


def _pair_factors(p: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """G[B, k, k'] = prod_mu axis integral of exp(-i (p_k - p_k').x) over the box.

    ``lo``/``hi`` have shape (B, 4).
    """
    dp = p[:, None, :] - p[None, :, :]            # (K, K, 4)
    kappa = -(dp * METRIC)                         # exp(-i eta dp x) = exp(i kappa x)
    g = _axis_factor(kappa[None], lo[:, None, None, :], hi[:, None, None, :])
    return np.prod(g, axis=-1)


def density_integral(state: ManyBodyState, lo, hi) -> np.ndarray | float:
    """Integral of psi^dag psi over product boxes, in closed form.

    ``lo``, ``hi``: (n, 4) or (B, n, 4).  Axes with ``lo == hi`` are evaluated
    at that coordinate instead of integrated.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    single = lo.ndim == 2
    if single:
        lo, hi = lo[None], hi[None]
    if lo.shape != hi.shape or lo.shape[1:] != (state.n, 4):
        raise DimensionError(f"box bounds must have shape (n, 4) or (B, n, 4), got {lo.shape}")
    c = state.amplitudes
    B = lo.shape[0]
    w = np.broadcast_to(c, (B,) + c.shape)
    for a, p in enumerate(state.momenta):
        g = _pair_factors(p, lo[:, a], hi[:, a])
        w = np.moveaxis(np.einsum("b...k,bkl->b...l", np.moveaxis(w, 2 + a, -1), g), -1, 2 + a)
    total = (w * c.conj()).reshape(B, -1).sum(axis=1).real
    return float(total[0]) if single else total


def spatial_norm(state: ManyBodyState, t_values: Sequence[float]) -> float:
    """N(t_1..t_n): spatial integral of the density over the box at fixed times.

    Computed through the full double mode sum with the time phases kept, so
    x^0-independence is a result of the evaluation, not an assumption.
    """
    t = np.asarray(t_values, dtype=float)
    if t.shape != (state.n,):
        raise DimensionError(f"need one time per particle ({state.n}), got {t.shape}")
    lo = np.zeros((state.n, 4))
    hi = np.full((state.n, 4), float(state.L))
    lo[:, 0] = hi[:, 0] = t
    return float(density_integral(state, lo, hi))


# ---------------------------------------------------------------------------
# massless trace-out
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _TracedState:
    """Reduced density matrix over massive mode multi-indices.

    R[m, m'] = sum_A sum_{l, l'} c[A, l, m] conj(c[A, l', m']) G[l, l'] where G
    is the box integral of the massless particles' plane-wave products.
    """

    massive: tuple[int, ...]
    momenta: tuple[np.ndarray, ...]
    masses: np.ndarray
    R: np.ndarray

    @classmethod
    def build(cls, state: ManyBodyState) -> "_TracedState":
        ml, mm = state.massless, state.massive
        if not ml:
            raise NoMasslessError("state has no massless particles to trace out")
        if not mm:
            raise NoMasslessError("state has no massive particle left after trace-out")
        c = state.amplitudes
        order = [0] + [1 + a for a in ml] + [1 + a for a in mm]
        ct = np.transpose(c, order)
        A = c.shape[0]
        kl = prod(c.shape[1 + a] for a in ml)
        km = prod(c.shape[1 + a] for a in mm)
        ct = ct.reshape(A, kl, km)
        lo, hi = state.box_bounds()
        g = np.ones((1, 1), dtype=complex)
        for a in ml:
            g = np.kron(g, _pair_factors(state.momenta[a], lo[a][None], hi[a][None])[0])
        R = np.einsum("alm,lk,akn->mn", ct, g, ct.conj())
        return cls(mm, tuple(state.momenta[a] for a in mm), state.masses[list(mm)], R)

    def phases(self, x: np.ndarray) -> np.ndarray:
        ph = _phases(self.momenta, x)
        e = ph[0]
        for p in ph[1:]:
            e = (e[:, :, None] * p[:, None, :]).reshape(e.shape[0], -1)
        return e

    def weighted_momenta(self, b: int) -> np.ndarray:
        """p_b^mu for every flattened massive multi-index, shape (M, 4)."""
        counts = [len(p) for p in self.momenta]
        idx = np.unravel_index(np.arange(prod(counts)), counts)
        return self.momenta[b][idx[b]]


def traceout_massless(state: ManyBodyState, xs_massive) -> tuple[np.ndarray, np.ndarray]:
    """Density and massive-particle currents after integrating out massless particles.

    Integration over each massless particle's box ``[0,T] x [0,L]^3`` is done
    in closed form.  Returns ``(rho, j)`` with j of shape (..., n_massive, 4).
    """
    if not state.massless:
        raise NoMasslessError("state has no massless particles to trace out")
    tr = state._traced
    x, single = _as_batch(state, xs_massive, n=len(tr.massive))
    e = tr.phases(x)
    re = e.conj() @ tr.R.T           # (N, M): sum_m' R[m, m'] conj(e_m')
    rho = np.einsum("nm,nm->n", e, re).real
    j = np.empty((x.shape[0], len(tr.massive), 4))
    for i in range(len(tr.massive)):
        p = tr.weighted_momenta(i)
        # (i/2m) psi* <-> d psi, summed over both sides of the pair
        j[:, i, :] = np.einsum("nm,nm,mu->nu", e, re, p).real / tr.masses[i]
    if single:
        return rho[0], j[0]
    return rho, j


# ---------------------------------------------------------------------------
# peak density estimate
# ---------------------------------------------------------------------------


def density_gradient(state: ManyBodyState, xs) -> tuple[np.ndarray, np.ndarray]:
    """rho and d rho / d x_a^mu (shape (N, n, 4)) for massive-only states."""
    x, single = _as_batch(state, xs)
    s = _mode_sums(state, x)
    rho = np.sum(np.abs(s.psi) ** 2, axis=-1)
    g = 2 * np.einsum("na,naim->nim", s.psi.conj(), s.grad).real
    return (rho[0], g[0]) if single else (rho, g)


def configuration_density(state: ManyBodyState, xs) -> np.ndarray:
    """Density over the configurations that carry trajectories (massive particles)."""
    if state.massless:
        return traceout_massless(state, xs)[0]
    return density(state, xs)


def estimate_peak_density(
    state: ManyBodyState,
    lo: np.ndarray,
    hi: np.ndarray,
    budget: int = 65536,
    refine: bool = True,
    n_refine: int = 8,
) -> float:
    """Coarse-grid maximum of the configuration density over a box.

    ``lo``/``hi`` bound the configuration particles (the massive ones when
    massless particles are traced out), shape (n_conf, 4).

    The grid spans only the coordinates the density can depend on; with
    ``refine`` the best grid points seed bounded local maximisation.
    """
    from scipy.optimize import minimize

    idx = state.massive if state.massless else tuple(range(state.n))
    vary = state.varying_axes()[list(idx)]
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    free = np.argwhere(vary)
    mid = 0.5 * (lo + hi)
    d = len(free)
    if d == 0:
        return float(configuration_density(state, mid))
    g = max(2, int(np.floor(budget ** (1.0 / d))))
    ticks = [lo[a, mu] + (np.arange(g) + 0.5) / g * (hi[a, mu] - lo[a, mu]) for a, mu in free]
    mesh = np.stack(np.meshgrid(*ticks, indexing="ij"), axis=-1).reshape(-1, d)
    pts = np.broadcast_to(mid, (len(mesh),) + mid.shape).copy()
    pts[:, free[:, 0], free[:, 1]] = mesh
    rho = configuration_density(state, pts)
    best = float(rho.max())
    if not refine or state.massless:
        return best

    bounds = [(lo[a, mu], hi[a, mu]) for a, mu in free]

    scale = best if best > 0 else 1.0

    def negrho(z):
        # work in units of the best grid value: the optimizer's tolerances are absolute
        p = mid.copy()
        p[free[:, 0], free[:, 1]] = z
        r, gr = density_gradient(state, p)
        return -r / scale, -gr[free[:, 0], free[:, 1]] / scale

    for i in np.argsort(rho)[::-1][:n_refine]:
        res = minimize(negrho, mesh[i], jac=True, method="L-BFGS-B", bounds=bounds)
        best = max(best, float(-res.fun) * scale)
    return best
