"""Pointer-based measurement statistics on decohered post-measurement states.

A scenario starts from sum_b c_b psi_b(x) phi_b(y): system packets psi_b and
narrow, mutually non-overlapping pointer packets phi_b of a heavy pointer.
Members are sampled from the joint density, transported in s, and each
member's pointer event is assigned to the branch whose packet dominates
there.  The pointer reading uses the pointer's x coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dynamics import IntegratorConfig, integrate
from .ensemble import EnsembleSpec, majorant, pushforward, sample
from .errors import OverlapError, UnclassifiedError
from .minkowski import Boost
from .wavefunction import ManyBodyState, ParticleSpec, density, four_momenta

DOMINANCE = 1e3
FLOOR_REL = 1e-6
OVERLAP_REL = 1e-6
DECOHERENCE_REL = 1e-4
UNCLASSIFIED_MAX = 0.01


@dataclass(frozen=True, eq=False)
class Packet:
    """Single-particle mode sum: 3-momenta (K, 3) and amplitudes (K,)."""

    p3: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        p3 = np.atleast_2d(np.array(self.p3, dtype=float))
        amps = np.atleast_1d(np.array(self.amplitudes, dtype=complex))
        if p3.shape[1] != 3 or len(p3) != len(amps):
            raise ValueError(f"packet needs (K, 3) momenta and K amplitudes, got {p3.shape} and {amps.shape}")
        object.__setattr__(self, "p3", p3)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def plane_wave(cls, p3) -> "Packet":
        return cls(np.atleast_2d(p3), [1.0])

    @classmethod
    def lattice_mode(cls, k: int, L: float) -> "Packet":
        return cls([[2 * np.pi * k / L, 0.0, 0.0]], [1.0])

    def state(self, mass: float, L: float, T: float, normalize: bool = True) -> ManyBodyState:
        return ManyBodyState.from_modes([ParticleSpec(mass)], [self.p3], self.amplitudes, L, T, normalize)


@dataclass(frozen=True)
class PointerSpec:
    mass: float = 100.0
    width: float = 1.0
    cutoff: float = 6.4

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("pointer must be massive")
        if not self.width > 0:
            raise ValueError("pointer width must be positive")


def pointer_packet(center: float, spec: PointerSpec, L: float) -> Packet:
    """Lattice modes with |p| w <= cutoff and amplitudes exp(-(p w)^2 / 2 - i p y_b).

    At x^0 = 0 this is a periodic Gaussian |phi| ~ exp(-(y - y_b)^2 / (2 w^2)).
    """
    dp = 2 * np.pi / L
    kmax = int(np.floor(spec.cutoff / (spec.width * dp)))
    p = dp * np.arange(-kmax, kmax + 1)
    amps = np.exp(-0.5 * (p * spec.width) ** 2 - 1j * p * center)
    return Packet(np.column_stack([p, np.zeros_like(p), np.zeros_like(p)]), amps)


@dataclass(frozen=True, eq=False)
class Branch:
    amplitude: complex
    system: Packet
    pointer_center: float


@dataclass(frozen=True, eq=False)
class MeasurementScenario:
    branches: tuple[Branch, ...]
    L: float = 16.0
    T: float = 20.0
    system_mass: float = 1.0
    pointer: PointerSpec = field(default_factory=PointerSpec)
    count: int = 10_000
    seed: int = 1
    s_final: float = 1.0
    step: float = 0.05
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        norm = sum(abs(b.amplitude) ** 2 for b in self.branches)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"branch weights must sum to 1, got {norm:.15g}")

    @property
    def system_massless(self) -> bool:
        return self.system_mass == 0

    @property
    def expected(self) -> np.ndarray:
        return np.array([abs(b.amplitude) ** 2 for b in self.branches])

    def pointer_packets(self) -> list[Packet]:
        return [pointer_packet(b.pointer_center, self.pointer, self.L) for b in self.branches]


def two_branch_scenario(c: Sequence[complex], centers=(4.0, 12.0), **kw) -> MeasurementScenario:
    """System branches on the lattice modes k = 1, 2 along x, pointer packets at ``centers``."""
    L = kw.get("L", 16.0)
    branches = [Branch(complex(cb), Packet.lattice_mode(b + 1, L), y) for b, (cb, y) in enumerate(zip(c, centers))]
    return MeasurementScenario(tuple(branches), **kw)


# ---------------------------------------------------------------------------
# state construction and invariants
# ---------------------------------------------------------------------------


def _pointer_states(packets: Sequence[Packet], spec: PointerSpec, L: float, T: float) -> list[ManyBodyState]:
    return [p.state(spec.mass, L, T, normalize=False) for p in packets]


def check_overlap(packets: Sequence[Packet], spec: PointerSpec, L: float, T: float, grid: int = 4096) -> float:
    """Largest |phi_b||phi_b'| (b != b') over a grid in y at x^0 in {0, T/2, T},
    relative to the largest |phi_b|^2.  Raises OverlapError above the bound."""
    states = _pointer_states(packets, spec, L, T)
    y = (np.arange(grid) + 0.5) * L / grid
    worst, peak = 0.0, 0.0
    for t in (0.0, 0.5 * T, T):
        pts = np.zeros((grid, 1, 4))
        pts[:, 0, 0] = t
        pts[:, 0, 1] = y
        amp = np.sqrt(np.stack([density(s, pts) for s in states]))
        peak = max(peak, float(np.max(amp**2)))
        for i in range(len(states)):
            for j in range(i + 1, len(states)):
                worst = max(worst, float(np.max(amp[i] * amp[j])))
    rel = worst / peak
    if rel > OVERLAP_REL:
        raise OverlapError(f"pointer packets overlap: max |phi_b||phi_b'| = {rel:.3e} of peak density")
    return rel


def _system_layout(branches: Sequence[Branch]) -> tuple[np.ndarray, list[slice]]:
    p3 = np.vstack([b.system.p3 for b in branches])
    bounds = np.cumsum([0] + [len(b.system.p3) for b in branches])
    return p3, [slice(bounds[i], bounds[i + 1]) for i in range(len(branches))]


def build_post_measurement(sc: MeasurementScenario, check: bool = True) -> ManyBodyState:
    """sum_b c_b psi_b(x) phi_b(y) as one amplitude tensor over the union of modes.

    With ``check`` the pointer-overlap bound and the absence of cross-branch
    density at random points are verified.
    """
    packets = sc.pointer_packets()
    if check:
        check_overlap(packets, sc.pointer, sc.L, sc.T)
    p_sys, slots = _system_layout(sc.branches)
    p_ptr = packets[0].p3
    C = np.zeros((len(p_sys), len(p_ptr)), dtype=complex)
    for b, (br, sl, pk) in enumerate(zip(sc.branches, slots, packets)):
        if not np.allclose(pk.p3, p_ptr):
            raise ValueError("pointer packets must share one mode lattice")
        C[sl] += br.amplitude * np.outer(br.system.amplitudes, pk.amplitudes)
    particles = [ParticleSpec(sc.system_mass), ParticleSpec(sc.pointer.mass)]
    state = ManyBodyState(
        tuple(particles),
        (four_momenta(p_sys, sc.system_mass), four_momenta(p_ptr, sc.pointer.mass)),
        C[None], sc.L, sc.T,
    )
    state = _normalize_branchwise(state, sc)
    if check and not sc.system_massless:
        decoherence_residual(sc, state)
    return state


def _normalize_branchwise(state: ManyBodyState, sc: MeasurementScenario) -> ManyBodyState:
    # each branch product psi_b phi_b is normalized separately so that the
    # |c_b|^2 are the branch weights; cross terms vanish by non-overlap
    p_sys, slots = _system_layout(sc.branches)
    C = np.array(state.amplitudes[0])
    for br, sl in zip(sc.branches, slots):
        if br.amplitude == 0:
            continue
        sub = replace(state, amplitudes=C[None, sl], momenta=(state.momenta[0][sl], state.momenta[1]))
        C[sl] = C[sl] / np.sqrt(sub.box_norm() / abs(br.amplitude) ** 2)
    return replace(state, amplitudes=C[None], normalized=True)


def branch_state(sc: MeasurementScenario, b: int) -> ManyBodyState:
    """The effective wave function of branch ``b`` alone, normalized."""
    one = replace(sc, branches=(replace(sc.branches[b], amplitude=1.0),))
    return build_post_measurement(one, check=False)


def decoherence_residual(sc: MeasurementScenario, state: ManyBodyState, points: int = 100, seed: int = 0) -> float:
    """Largest |rho - sum_b rho_b| at random box points, relative to the peak density."""
    rng = np.random.default_rng(seed)
    lo, hi = state.box_bounds()
    x = lo + rng.random((points,) + lo.shape) * (hi - lo)
    # bias half of the points onto the pointer packets where branch densities live
    centers = np.array([b.pointer_center for b in sc.branches])
    x[: points // 2, 1, 1] = centers[rng.integers(len(centers), size=points // 2)] + rng.normal(
        0, sc.pointer.width, points // 2)
    rho = density(state, x)
    parts = np.zeros(points)
    for b, br in enumerate(sc.branches):
        if br.amplitude != 0:
            parts += abs(br.amplitude) ** 2 * density(branch_state(sc, b), x)
    rel = float(np.max(np.abs(rho - parts)) / state.peak_density)
    if rel > DECOHERENCE_REL:
        raise OverlapError(f"cross-branch density {rel:.3e} of peak: branches are not decohered")
    return rel


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


class Classifier:
    """argmax_b |phi_b(y)|^2 with a dominance ratio and an absolute floor."""

    def __init__(self, pointer_states: Sequence[ManyBodyState], dominance: float = DOMINANCE,
                 floor_rel: float = FLOOR_REL):
        self.states = list(pointer_states)
        self.dominance = dominance
        peak = max(float(np.sum(np.abs(s.amplitudes)) ** 2) for s in self.states)
        self.floor = floor_rel * peak

    @classmethod
    def for_scenario(cls, sc: MeasurementScenario, boost: Boost | None = None) -> "Classifier":
        states = _pointer_states(sc.pointer_packets(), sc.pointer, sc.L, sc.T)
        if boost is not None:
            states = [s.boosted(boost) for s in states]
        return cls(states)

    def __call__(self, events) -> np.ndarray:
        """Branch index per pointer event (..., 4); -1 where unclassified."""
        ev = np.asarray(events, dtype=float)
        flat = ev.reshape(-1, 1, 4)
        d = np.stack([density(s, flat) for s in self.states], axis=1)
        order = np.argsort(d, axis=1)
        best = order[:, -1]
        top = d[np.arange(len(d)), best]
        runner = d[np.arange(len(d)), order[:, -2]] if d.shape[1] > 1 else np.zeros(len(d))
        ok = (top > self.floor) & (top > self.dominance * runner)
        return np.where(ok, best, -1).reshape(ev.shape[:-1])


def classify_branch(sc: MeasurementScenario, pointer_event) -> int | None:
    b = int(Classifier.for_scenario(sc)(np.asarray(pointer_event, dtype=float)))
    return None if b < 0 else b


# ---------------------------------------------------------------------------
# single apparatus
# ---------------------------------------------------------------------------


@dataclass
class MeasurementReport:
    expected: np.ndarray
    empirical: np.ndarray
    stderr: np.ndarray
    count: int
    unclassified: int
    excluded: int
    sigmas: float = 3.0

    @property
    def unclassified_rate(self) -> float:
        return self.unclassified / max(self.count, 1)

    @property
    def within(self) -> bool:
        return bool(np.all(np.abs(self.empirical - self.expected) <= self.sigmas * self.stderr))

    @property
    def passed(self) -> bool:
        return self.within and self.unclassified_rate < UNCLASSIFIED_MAX

    def to_dict(self) -> dict:
        rows = [
            {"branch": b, "expected": float(e), "empirical": float(p), "stderr": float(s)}
            for b, (e, p, s) in enumerate(zip(self.expected.ravel(), self.empirical.ravel(), self.stderr.ravel()))
        ]
        return {"branches": rows, "count": self.count, "unclassified": self.unclassified,
                "excluded_members": self.excluded, "passed": self.passed}


def binomial_stderr(p: np.ndarray, n: int) -> np.ndarray:
    return np.sqrt(p * (1 - p) / max(n, 1))


def _run_ensemble(state, spec, s_final, step, workers):
    S = sample(state, spec)
    pushed = pushforward(state, S, s_final, IntegratorConfig(step=step), workers)
    return S, pushed


def run_measurement(sc: MeasurementScenario, state: ManyBodyState | None = None) -> MeasurementReport:
    state = build_post_measurement(sc) if state is None else state
    spec = EnsembleSpec.full_box(state, sc.count, sc.seed, workers=sc.workers)
    _, pushed = _run_ensemble(state, spec, sc.s_final, sc.step, sc.workers)
    slot = len(state.massive) - 1            # the pointer is the last massive particle
    labels = Classifier.for_scenario(sc)(pushed.configs[:, slot])
    n = len(labels)
    counts = np.array([np.sum(labels == b) for b in range(len(sc.branches))])
    unclassified = int(np.sum(labels < 0))
    expected = sc.expected
    report = MeasurementReport(expected, counts / max(n, 1), binomial_stderr(expected, n), n,
                               unclassified, len(pushed.meta["excluded"]))
    if report.unclassified_rate >= UNCLASSIFIED_MAX:
        raise UnclassifiedError(f"{unclassified} of {n} pointer events fall outside every branch support")
    return report


def t_doubling_check(sc: MeasurementScenario) -> tuple[MeasurementReport, MeasurementReport, float]:
    """Rerun with the time box doubled; returns both reports and max |dp| / stderr."""
    r1 = run_measurement(sc)
    r2 = run_measurement(replace(sc, T=2 * sc.T))
    se = np.where(r1.stderr > 0, r1.stderr, np.inf)
    return r1, r2, float(np.max(np.abs(r1.empirical - r2.empirical) / se))


def massless_two_path(sc: MeasurementScenario, surrogate_mass: float = 1.0):
    """Branch statistics with a massless system (pointer-only trajectories,
    traced density) against a massive surrogate carrying joint trajectories.

    Returns (massless report, massive report, max |dp| / combined stderr).
    """
    ml = run_measurement(replace(sc, system_mass=0.0))
    mv = run_measurement(replace(sc, system_mass=surrogate_mass))
    comb = np.sqrt(ml.stderr**2 + mv.stderr**2)
    z = np.abs(ml.empirical - mv.empirical) / np.where(comb > 0, comb, np.inf)
    return ml, mv, float(np.max(z))


def effective_wavefunction_check(sc: MeasurementScenario, members: int = 10, delta_s: float = 1.0,
                                 step: float = 0.01) -> float:
    """Continue classified members under the full state and under their branch's
    state alone; returns the largest pointer-path deviation."""
    state = build_post_measurement(sc)
    spec = EnsembleSpec.full_box(state, members, sc.seed)
    _, pushed = _run_ensemble(state, spec, sc.s_final, sc.step, 1)
    slot = len(state.massive) - 1
    labels = Classifier.for_scenario(sc)(pushed.configs[:, slot])
    cfg = IntegratorConfig(step=step)
    worst = 0.0
    for x, b in zip(pushed.configs, labels):
        if b < 0:
            continue
        full = integrate(state, x, (0.0, delta_s), cfg)
        eff = integrate(branch_state(sc, int(b)), x, (0.0, delta_s), cfg)
        worst = max(worst, float(np.max(np.abs(full.X[:, slot] - eff.X[:, slot]))))
    return worst


# ---------------------------------------------------------------------------
# two apparatuses
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CorrelationScenario:
    """Joint state sum c[b1, b2] zeta_b1(x1) xi_b2(x2) phi_b1(y1) phi'_b2(y2).

    Particle order: system 1, system 2, pointer 1, pointer 2.  ``boosts``
    gives each apparatus (its system and its pointer) its own frame for
    :func:`frame_mix_check`.
    """

    amplitudes: np.ndarray
    systems: tuple[tuple[Packet, ...], tuple[Packet, ...]]
    centers: tuple[tuple[float, ...], tuple[float, ...]]
    L: float = 16.0
    T: float = 20.0
    system_mass: float = 1.0
    pointer: PointerSpec = field(default_factory=PointerSpec)
    count: int = 10_000
    seed: int = 1
    s_final: float = 0.5
    step: float = 0.05
    boosts: tuple[Boost | None, Boost | None] = (None, None)
    workers: int = 1

    def __post_init__(self):
        c = np.array(self.amplitudes, dtype=complex)
        if c.shape != (len(self.systems[0]), len(self.systems[1])):
            raise ValueError(f"amplitude matrix shape {c.shape} does not match the branch counts")
        if abs(np.sum(np.abs(c) ** 2) - 1.0) > 1e-12:
            raise ValueError("correlation amplitudes must have unit total weight")
        object.__setattr__(self, "amplitudes", c)

    @property
    def expected(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def side(self, k: int) -> MeasurementScenario:
        """Single-apparatus view used for packets and classification."""
        n = len(self.systems[k])
        branches = tuple(Branch(1.0 / np.sqrt(n), self.systems[k][b], self.centers[k][b]) for b in range(n))
        return MeasurementScenario(branches, self.L, self.T, self.system_mass, self.pointer)


def correlation_scenario(c, centers=((4.0, 12.0), (4.0, 12.0)), **kw) -> CorrelationScenario:
    L = kw.get("L", 16.0)
    c = np.asarray(c, dtype=complex)
    systems = tuple(tuple(Packet.lattice_mode(b + 1, L) for b in range(c.shape[k])) for k in (0, 1))
    return CorrelationScenario(c, systems, centers, **kw)


def build_correlation_state(sc: CorrelationScenario, check: bool = True) -> ManyBodyState:
    sides = [sc.side(0), sc.side(1)]
    ptr = [s.pointer_packets() for s in sides]
    if check:
        for k in (0, 1):
            check_overlap(ptr[k], sc.pointer, sc.L, sc.T)
    sys_layout = [_system_layout(s.branches) for s in sides]
    p1, sl1 = sys_layout[0]
    p2, sl2 = sys_layout[1]
    q1, q2 = ptr[0][0].p3, ptr[1][0].p3
    C = np.zeros((len(p1), len(p2), len(q1), len(q2)), dtype=complex)
    for b1 in range(sc.amplitudes.shape[0]):
        for b2 in range(sc.amplitudes.shape[1]):
            cb = sc.amplitudes[b1, b2]
            if cb == 0:
                continue
            z = sides[0].branches[b1].system.amplitudes
            x = sides[1].branches[b2].system.amplitudes
            f1, f2 = ptr[0][b1].amplitudes, ptr[1][b2].amplitudes
            term = np.einsum("i,j,k,l->ijkl", z, x, f1, f2)
            # unit norm per product term
            term = term / np.sqrt(_product_norm(sides, b1, b2, ptr, sc))
            C[sl1[b1], sl2[b2]] += cb * term
    m, M = sc.system_mass, sc.pointer.mass
    particles = (ParticleSpec(m), ParticleSpec(m), ParticleSpec(M), ParticleSpec(M))
    moms = (four_momenta(p1, m), four_momenta(p2, m), four_momenta(q1, M), four_momenta(q2, M))
    return ManyBodyState(particles, moms, C[None], sc.L, sc.T, normalized=True)


def _product_norm(sides, b1, b2, ptr, sc) -> float:
    norm = 1.0
    for k, b in ((0, b1), (1, b2)):
        norm *= sides[k].branches[b].system.state(sc.system_mass, sc.L, sc.T, normalize=False).box_norm()
        norm *= ptr[k][b].state(sc.pointer.mass, sc.L, sc.T, normalize=False).box_norm()
    return norm


@dataclass
class CorrelationReport:
    expected: np.ndarray
    empirical: np.ndarray
    stderr: np.ndarray
    count: int
    unclassified: int
    excluded: int
    sigmas: float = 3.0

    @property
    def within(self) -> bool:
        return bool(np.all(np.abs(self.empirical - self.expected) <= self.sigmas * self.stderr))

    @property
    def unclassified_rate(self) -> float:
        return self.unclassified / max(self.count, 1)

    @property
    def passed(self) -> bool:
        return self.within and self.unclassified_rate < UNCLASSIFIED_MAX

    def correlation(self) -> float:
        """E = sum_b1b2 (+-1)(+-1) p[b1, b2] for two-outcome apparatuses, outcome 0 -> +1."""
        sign = np.array([1.0, -1.0])
        return float(sign @ self.empirical @ sign)

    def to_dict(self) -> dict:
        return {"expected": self.expected.tolist(), "empirical": self.empirical.tolist(),
                "stderr": self.stderr.tolist(), "count": self.count, "unclassified": self.unclassified,
                "excluded_members": self.excluded, "passed": self.passed}


def _frames(sc: CorrelationScenario) -> np.ndarray | None:
    if all(b is None for b in sc.boosts):
        return None
    lam = [np.eye(4) if b is None else b.matrix() for b in sc.boosts]
    return np.stack([lam[0], lam[1], lam[0], lam[1]])


def _mixed_frame_state(state: ManyBodyState, sc: CorrelationScenario) -> ManyBodyState:
    for k, b in enumerate(sc.boosts):
        if b is not None:
            state = state.boosted(b, which=(k, k + 2))
    return state


def run_correlation(sc: CorrelationScenario, state: ManyBodyState | None = None,
                    use_boosts: bool = False, majorant_value: float | None = None) -> CorrelationReport:
    """Joint outcome table from pointer events of both apparatuses.

    With ``use_boosts`` each apparatus's particles are described in its own
    boosted frame: the state is transformed, sampling maps the region through
    the boosts, and pointers are classified with boosted packets.
    """
    state = build_correlation_state(sc) if state is None else state
    spec = EnsembleSpec.full_box(state, sc.count, sc.seed, workers=sc.workers)
    if majorant_value is not None:
        spec = spec.replace(majorant=majorant_value)
    classifiers = [Classifier.for_scenario(sc.side(k)) for k in (0, 1)]
    if use_boosts and _frames(sc) is not None:
        M = majorant(state, spec)
        state = _mixed_frame_state(state, sc)
        spec = spec.replace(frames=_frames(sc), majorant=M)
        classifiers = [Classifier.for_scenario(sc.side(k), sc.boosts[k]) for k in (0, 1)]
    _, pushed = _run_ensemble(state, spec, sc.s_final, sc.step, sc.workers)
    l1 = classifiers[0](pushed.configs[:, 2])
    l2 = classifiers[1](pushed.configs[:, 3])
    n = len(l1)
    B1, B2 = sc.amplitudes.shape
    table = np.zeros((B1, B2))
    for b1 in range(B1):
        for b2 in range(B2):
            table[b1, b2] = np.sum((l1 == b1) & (l2 == b2))
    unclassified = int(np.sum((l1 < 0) | (l2 < 0)))
    if unclassified / max(n, 1) >= UNCLASSIFIED_MAX:
        raise UnclassifiedError(f"{unclassified} of {n} members have an unassigned pointer")
    expected = sc.expected
    return CorrelationReport(expected, table / max(n, 1), binomial_stderr(expected, n), n, unclassified,
                             len(pushed.meta["excluded"]))


def chsh_amplitudes(theta: float) -> np.ndarray:
    """Two-outcome joint amplitudes with correlation E = -cos(theta)."""
    s, c = np.sin(theta / 2), np.cos(theta / 2)
    return np.array([[s, c], [-c, s]]) / np.sqrt(2)


CHSH_SETTINGS = {"a": 0.0, "a'": np.pi / 2, "b": np.pi / 4, "b'": 3 * np.pi / 4}


@dataclass
class CHSHReport:
    correlations: dict
    S: float
    stderr: float
    expected: float = 2 * np.sqrt(2)

    @property
    def passed(self) -> bool:
        return abs(abs(self.S) - self.expected) <= 3 * self.stderr


def run_chsh(base: CorrelationScenario | None = None, settings: dict | None = None, **kw) -> CHSHReport:
    """CHSH combination E(a,b) - E(a,b') + E(a',b) + E(a',b') from four runs."""
    st = settings or CHSH_SETTINGS
    pairs = [("a", "b", 1), ("a", "b'", -1), ("a'", "b", 1), ("a'", "b'", 1)]
    E, var = {}, 0.0
    S = 0.0
    for i, (x, y, sign) in enumerate(pairs):
        c = chsh_amplitudes(st[x] - st[y])
        if base is None:
            sc = correlation_scenario(c, **kw)
        else:
            sc = replace(base, amplitudes=c, seed=base.seed + i)
        rep = run_correlation(sc)
        e = rep.correlation()
        E[f"{x},{y}"] = e
        S += sign * e
        var += (1 - e**2) / rep.count
    return CHSHReport(E, S, float(np.sqrt(var)))


@dataclass
class FrameMixReport:
    reference: CorrelationReport
    mixed: CorrelationReport
    max_z: float

    @property
    def passed(self) -> bool:
        return self.max_z <= 3.0 and self.mixed.passed


def frame_mix_check(sc: CorrelationScenario) -> FrameMixReport:
    """Outcome table with each apparatus in its own frame versus all in one frame."""
    state = build_correlation_state(sc)
    spec = EnsembleSpec.full_box(state, sc.count, sc.seed)
    M = majorant(state, spec)
    ref = run_correlation(replace(sc, boosts=(None, None)), state, majorant_value=M)
    mixed = run_correlation(sc, state, use_boosts=True, majorant_value=M)
    comb = np.sqrt(ref.stderr**2 + mixed.stderr**2)
    diff = np.abs(ref.empirical - mixed.empirical)
    z = np.where(comb > 0, diff / np.where(comb > 0, comb, 1.0), np.where(diff > 0, np.inf, 0.0))
    return FrameMixReport(ref, mixed, float(np.max(z)))
