"""Monte Carlo ensembles drawn from |psi|^2 over spacetime boxes, their
transport under the s-flow, and the statistical and pointwise equivariance
checks built on them.

Reproducibility: member ``i`` draws from its own Philox stream keyed by
``(seed, i)``; candidates are consumed from that stream in order, so the
accepted configuration does not depend on how members are batched or on the
worker count.  Pushforward works on fixed member blocks for the same reason.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

from .dynamics import IntegratorConfig, integrate_batch
from .errors import DimensionError, MajorantBreachError, NodeError
from .wavefunction import (
    ManyBodyState,
    _as_batch,
    _mode_sums,
    configuration_density,
    current_divergence,
    density_integral,
    energy_stats,
    estimate_peak_density,
    spatial_norm,
    velocity_field,
)

SAMPLERS = ("rejection", "mcmc")
BLOCK = 256
_EVAL_CHUNK = 16384


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    """``lo``/``hi``: per-particle 4-box, shape (n_conf, 4), for the particles
    that carry trajectories.  ``frames`` optionally maps each particle's
    sampled point u to Lambda_a u (shape (n_conf, 4, 4)); the density is then
    evaluated at the mapped point.
    """

    count: int
    lo: np.ndarray
    hi: np.ndarray
    seed: int = 0
    sampler: str = "rejection"
    safety: float = 1.5
    majorant: float | None = None
    burn_in: int = 400
    mcmc_step: float = 0.1
    frames: np.ndarray | None = None
    workers: int = 1

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float)
        hi = np.array(self.hi, dtype=float)
        if lo.ndim != 2 or lo.shape[1] != 4 or lo.shape != hi.shape:
            raise DimensionError(f"region bounds must both have shape (n, 4), got {lo.shape} and {hi.shape}")
        if np.any(hi < lo):
            raise ValueError("region upper bounds must be >= lower bounds")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if not self.safety >= 1:
            raise ValueError("majorant safety factor must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if self.frames is not None:
            fr = np.array(self.frames, dtype=float)
            if fr.shape != (lo.shape[0], 4, 4):
                raise DimensionError(f"frames must have shape ({lo.shape[0]}, 4, 4)")
            object.__setattr__(self, "frames", fr)

    @classmethod
    def full_box(cls, state: ManyBodyState, count: int, seed: int = 0, **kw) -> "EnsembleSpec":
        lo, hi = state.box_bounds()
        idx = list(state.massive)
        return cls(count, lo[idx], hi[idx], seed, **kw)

    def replace(self, **kw) -> "EnsembleSpec":
        from dataclasses import replace
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class SampleSet:
    configs: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.configs)

    def to_csv(self, path, particles: Sequence[int] | None = None) -> None:
        parts = range(self.configs.shape[1]) if particles is None else particles
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["member", "particle", "t", "x", "y", "z"])
            for i, x in enumerate(self.configs):
                for a, xa in zip(parts, x):
                    w.writerow([i, a] + ["%.17g" % v for v in xa])


def member_rng(seed: int, member: int) -> np.random.Generator:
    """Counter-based stream for one ensemble member."""
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(member)))


def check_region(state: ManyBodyState, spec: EnsembleSpec, tol: float = 1e-12) -> None:
    lo, hi = state.box_bounds()
    idx = list(state.massive)
    if np.any(spec.lo < lo[idx] - tol) or np.any(spec.hi > hi[idx] + tol):
        raise ValueError("sampling region must lie inside the normalization box")


def triangle_bound(state: ManyBodyState) -> float:
    """sup |psi|^2 <= sum_A (sum_K |c_AK|)^2, or the traced analogue."""
    if state.massless:
        return float(np.abs(state._traced.R).sum())
    c = np.abs(state.amplitudes).reshape(state.n_components, -1)
    return float(np.sum(c.sum(axis=1) ** 2))


def majorant(state: ManyBodyState, spec: EnsembleSpec) -> float:
    if spec.majorant is not None:
        return float(spec.majorant)
    bound = triangle_bound(state)
    if spec.frames is not None:
        return bound
    return min(bound, spec.safety * estimate_peak_density(state, spec.lo, spec.hi, refine=True))


def _density_chunked(state: ManyBodyState, x: np.ndarray) -> np.ndarray:
    out = np.empty(len(x))
    for i in range(0, len(x), _EVAL_CHUNK):
        out[i:i + _EVAL_CHUNK] = configuration_density(state, x[i:i + _EVAL_CHUNK])
    return out


def _map(spec: EnsembleSpec, u: np.ndarray) -> np.ndarray:
    x = spec.lo + u * (spec.hi - spec.lo)
    if spec.frames is not None:
        x = np.einsum("aij,...aj->...ai", spec.frames, x)
    return x


def _blocks(count: int, block: int = BLOCK) -> list[range]:
    return [range(i, min(i + block, count)) for i in range(0, count, block)]


def _run_blocks(fn, blocks, workers: int):
    if workers <= 1 or len(blocks) <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))


def _rejection_block(state, spec, members: range, M: float):
    n = spec.lo.shape[0]
    width = 4 * n + 1
    rngs = {i: member_rng(spec.seed, i) for i in members}
    out = np.empty((len(members), n, 4))
    pending = list(members)
    proposed = 0
    peak_seen = 0.0
    K = 16
    accepted_candidates = 0
    while pending:
        draws = np.stack([rngs[i].random((K, width)) for i in pending])      # (P, K, width)
        x = _map(spec, draws[..., :-1].reshape(len(pending), K, n, 4))
        rho = _density_chunked(state, x.reshape(-1, n, 4)).reshape(len(pending), K)
        proposed += rho.size
        peak_seen = max(peak_seen, float(rho.max()))
        if peak_seen > M * (1 + 1e-9):
            raise MajorantBreachError(
                f"density {peak_seen:.6g} exceeds majorant {M:.6g}; rerun with a larger safety factor")
        accept = draws[..., -1] * M < rho
        accepted_candidates += int(accept.sum())
        still = []
        hits = 0
        for row, i in enumerate(pending):
            k = np.flatnonzero(accept[row])
            if k.size:
                out[i - members.start] = x[row, k[0]]
                hits += 1
            else:
                still.append(i)
        # candidates past a member's first acceptance are discarded, so size the
        # next block for roughly two expected acceptances
        rate = max(accepted_candidates, 1) / proposed
        K = int(np.clip(np.ceil(2.0 / rate), 4, 8192))
        pending = still
    return out, proposed, peak_seen, accepted_candidates


def _mcmc_block(state, spec, members: range, M: float):
    n = spec.lo.shape[0]
    span = spec.hi - spec.lo
    B = len(members)
    init = np.empty((B, n, 4))
    steps = np.empty((spec.burn_in, B, n, 4))
    unif = np.empty((spec.burn_in, B))
    for j, i in enumerate(members):
        g = member_rng(spec.seed, i)
        init[j] = g.random((n, 4))
        steps[:, j] = g.standard_normal((spec.burn_in, n, 4)) * spec.mcmc_step
        unif[:, j] = g.random(spec.burn_in)
    u = init
    rho = _density_chunked(state, _map(spec, u))
    accepted = 0
    for k in range(spec.burn_in):
        prop = u + steps[k] * (span > 0)
        # reflect into the unit box; the proposal stays symmetric
        prop = np.abs(prop)
        prop = 1.0 - np.abs(1.0 - prop)
        prop = np.clip(prop, 0.0, 1.0)
        r_new = _density_chunked(state, _map(spec, prop))
        take = unif[k] * rho < r_new
        u = np.where(take[:, None, None], prop, u)
        rho = np.where(take, r_new, rho)
        accepted += int(take.sum())
    return _map(spec, u), accepted, float(rho.max()) if B else 0.0


def sample(state: ManyBodyState, spec: EnsembleSpec) -> SampleSet:
    """Draw ``spec.count`` configurations with density proportional to rho on the region."""
    n = spec.lo.shape[0]
    if n != len(state.massive):
        raise DimensionError(f"region has {n} particles, state has {len(state.massive)} massive particles")
    if spec.count == 0:
        return SampleSet(np.empty((0, n, 4)), {"sampler": spec.sampler, "count": 0})
    if spec.frames is None:
        check_region(state, spec)
    M = majorant(state, spec)
    blocks = _blocks(spec.count)
    if spec.sampler == "rejection":
        parts = _run_blocks(lambda b: _rejection_block(state, spec, b, M), blocks, spec.workers)
        configs = np.concatenate([p[0] for p in parts])
        proposed = sum(p[1] for p in parts)
        meta = {"sampler": "rejection", "count": spec.count, "majorant": M, "proposed": proposed,
                "acceptance": sum(p[3] for p in parts) / proposed,
                "max_density_seen": max(p[2] for p in parts)}
    else:
        parts = _run_blocks(lambda b: _mcmc_block(state, spec, b, M), blocks, spec.workers)
        configs = np.concatenate([p[0] for p in parts])
        moves = sum(p[1] for p in parts)
        meta = {"sampler": "mcmc", "count": spec.count, "burn_in": spec.burn_in, "thinning": 1,
                "step": spec.mcmc_step, "move_acceptance": moves / (spec.count * max(spec.burn_in, 1))}
    meta["seed"] = spec.seed
    return SampleSet(configs, meta)


def pushforward(
    state: ManyBodyState,
    samples: SampleSet,
    delta_s: float,
    cfg: IntegratorConfig | None = None,
    workers: int = 1,
) -> SampleSet:
    """Advance every member by ``delta_s``; node-terminated members are dropped.

    ``meta['members']`` holds the original indices of the surviving members
    and ``meta['excluded']`` those of the dropped ones.
    """
    cfg = cfg or IntegratorConfig(step=0.01)
    X = samples.configs
    blocks = _blocks(len(X))
    parts = _run_blocks(lambda b: integrate_batch(state, X[b.start:b.stop], delta_s, cfg), blocks, workers)
    if parts:
        final = np.concatenate([p[0] for p in parts])
        ok = np.concatenate([p[1] for p in parts])
    else:
        final, ok = X.copy(), np.ones(0, dtype=bool)
    members = np.flatnonzero(ok)
    meta = dict(samples.meta, delta_s=delta_s, step=cfg.step, members=members.tolist(),
                excluded=np.flatnonzero(~ok).tolist())
    return SampleSet(final[ok], meta)


# ---------------------------------------------------------------------------
# goodness of fit
# ---------------------------------------------------------------------------


class ChiSquare(NamedTuple):
    name: str
    statistic: float
    dof: int
    p_value: float
    count: int


def merge_bins(expected: np.ndarray, observed: np.ndarray, min_expected: float = 5.0):
    """Merge consecutive bins (raster order) until each has >= min_expected."""
    e_out, o_out = [], []
    e_acc = o_acc = 0.0
    for e, o in zip(expected.ravel(), observed.ravel()):
        e_acc += e
        o_acc += o
        if e_acc >= min_expected:
            e_out.append(e_acc)
            o_out.append(o_acc)
            e_acc = o_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if e_out:
            e_out[-1] += e_acc
            o_out[-1] += o_acc
        else:
            e_out.append(e_acc)
            o_out.append(o_acc)
    return np.array(e_out), np.array(o_out)


def chi_square(expected: np.ndarray, observed: np.ndarray, name: str = "") -> ChiSquare:
    e, o = merge_bins(expected, observed)
    stat = float(np.sum((o - e) ** 2 / e))
    dof = max(len(e) - 1, 1)
    return ChiSquare(name, stat, dof, float(stats.chi2.sf(stat, dof)), int(observed.sum()))


def histogram_axes(state: ManyBodyState) -> list[list[tuple[int, int]]]:
    """Histogram layout: per particle its (up to two) varying axes, then pairs of
    leading spatial axes across particles.  Entries are (slot, mu) with slot
    the index among massive particles."""
    vary = state.varying_axes()[list(state.massive)]
    groups = []
    lead = []
    for slot, row in enumerate(vary):
        axes = [int(mu) for mu in np.flatnonzero(row)]
        if axes:
            groups.append([(slot, mu) for mu in axes[:2]])
        spatial = [mu for mu in axes if mu > 0]
        if spatial:
            lead.append((slot, spatial[0]))
    for i in range(len(lead)):
        for j in range(i + 1, len(lead)):
            groups.append([lead[i], lead[j]])
    return groups


def chi_square_against_density(
    state: ManyBodyState,
    configs: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    groups: list[list[tuple[int, int]]] | None = None,
    bins: int = 20,
) -> list[ChiSquare]:
    """Binned comparison of ``configs`` (already restricted to the box) with rho
    restricted to the box, one test per axis group.  Bin probabilities are
    exact box integrals of the mode sum."""
    if state.massless:
        raise NotImplementedError("binned density comparison needs a state without massless particles")
    groups = histogram_axes(state) if groups is None else groups
    total = float(density_integral(state, lo, hi))
    out = []
    for g in groups:
        edges = [np.linspace(lo[a, mu], hi[a, mu], bins + 1) for a, mu in g]
        grids = np.meshgrid(*[np.arange(bins)] * len(g), indexing="ij")
        idx = np.stack([m.ravel() for m in grids], axis=1)
        blo = np.broadcast_to(lo, (len(idx),) + lo.shape).copy()
        bhi = np.broadcast_to(hi, (len(idx),) + hi.shape).copy()
        for k, (a, mu) in enumerate(g):
            blo[:, a, mu] = edges[k][idx[:, k]]
            bhi[:, a, mu] = edges[k][idx[:, k] + 1]
        prob = density_integral(state, blo, bhi) / total
        counts, _ = np.histogramdd(np.stack([configs[:, a, mu] for a, mu in g], axis=1), bins=edges)
        name = " x ".join(f"p{a}.{'txyz'[mu]}" for a, mu in g)
        out.append(chi_square(prob * len(configs), counts.ravel(), name))
    return out


def uniform_ks(configs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> dict[str, float]:
    """Per-axis KS p-values of configs against the uniform law on the box (nondegenerate axes)."""
    out = {}
    for a in range(configs.shape[1]):
        for mu in range(4):
            if hi[a, mu] > lo[a, mu]:
                u = (configs[:, a, mu] - lo[a, mu]) / (hi[a, mu] - lo[a, mu])
                out[f"p{a}.{'txyz'[mu]}"] = float(stats.kstest(u, "uniform").pvalue)
    return out


@dataclass
class EquivarianceReport:
    delta_s: float
    count: int
    kept: int
    excluded: int
    interior_lo: np.ndarray
    interior_hi: np.ndarray
    tests: list[ChiSquare]
    threshold: float = 0.01

    @property
    def p_min(self) -> float:
        return min(t.p_value for t in self.tests)

    @property
    def passed(self) -> bool:
        return self.p_min > self.threshold

    def to_dict(self) -> dict:
        return {
            "delta_s": self.delta_s,
            "count": self.count,
            "kept": self.kept,
            "excluded_members": self.excluded,
            "interior_lo": self.interior_lo.tolist(),
            "interior_hi": self.interior_hi.tolist(),
            "tests": [t._asdict() for t in self.tests],
            "p_min": self.p_min,
            "threshold": self.threshold,
            "passed": self.passed,
        }


def speed_bounds(state: ManyBodyState, *config_sets: np.ndarray) -> np.ndarray:
    """max |V_a^mu| over the given configuration sets, shape (n, 4)."""
    vmax = np.zeros((len(state.massive), 4))
    for xs in config_sets:
        for i in range(0, len(xs), _EVAL_CHUNK):
            v, _ = velocity_field(state, xs[i:i + _EVAL_CHUNK])
            vmax = np.maximum(vmax, np.nanmax(np.abs(v), axis=0))
    return vmax


def equivariance_test(
    state: ManyBodyState,
    spec: EnsembleSpec,
    delta_s: float,
    cfg: IntegratorConfig | None = None,
    bins: int = 20,
    shell_safety: float = 1.5,
    samples: SampleSet | None = None,
) -> EquivarianceReport:
    """Sample rho on the region, transport by ``delta_s``, and compare the
    transported members in an interior box with rho on that box.

    The interior excludes a boundary shell of width
    ``shell_safety * max|V^mu| * delta_s`` per axis, so nothing that started
    outside the sampled region can reach it.
    """
    samples = sample(state, spec) if samples is None else samples
    pushed = pushforward(state, samples, delta_s, cfg, spec.workers)
    vmax = speed_bounds(state, samples.configs, pushed.configs)
    margin = shell_safety * vmax * abs(delta_s)
    ilo, ihi = spec.lo + margin, spec.hi - margin
    degenerate = spec.hi == spec.lo
    ilo[degenerate] = spec.lo[degenerate]
    ihi[degenerate] = spec.hi[degenerate]
    if np.any(ihi < ilo):
        raise ValueError("boundary shell swallows the region; shorten delta_s or enlarge the region")
    X = pushed.configs
    inside = np.all((X >= ilo) & (X <= ihi), axis=(1, 2))
    tests = chi_square_against_density(state, X[inside], ilo, ihi, bins=bins)
    return EquivarianceReport(delta_s, samples.count, int(inside.sum()), len(pushed.meta["excluded"]),
                              ilo, ihi, tests)


# ---------------------------------------------------------------------------
# pointwise checks
# ---------------------------------------------------------------------------


class ContinuityResidual(NamedTuple):
    residual: np.ndarray | float
    scale: np.ndarray | float


def continuity_residual(state: ManyBodyState, xs) -> ContinuityResidual:
    """sum_a d_{a mu}(rho V_a^mu) from analytic second derivatives, with the
    magnitude of the cancelling terms as a yardstick."""
    x, single = _as_batch(state, xs)
    rho = configuration_density(state, x)
    if np.any(~(rho > state.psi_floor)):
        raise NodeError("continuity residual requested at a node")
    div, scale = current_divergence(state, x)
    m = list(state.massive)
    r, sc = np.sum(div[:, m], axis=1), np.sum(scale[:, m], axis=1)
    return ContinuityResidual(r[0], sc[0]) if single else ContinuityResidual(r, sc)


class ConditionalSpaceDensity:
    """rho(x; t) / N(t) on the spatial box at fixed particle times."""

    def __init__(self, state: ManyBodyState, t_values: Sequence[float]):
        self.state = state
        self.t = np.asarray(t_values, dtype=float)
        self.norm = spatial_norm(state, self.t)

    def __call__(self, x3) -> np.ndarray:
        x3 = np.asarray(x3, dtype=float)
        pts = np.concatenate([np.broadcast_to(self.t[:, None], x3.shape[:-1] + (1,)), x3], axis=-1)
        return configuration_density(self.state, pts) / self.norm


def conditional_space_density(state: ManyBodyState, t_values: Sequence[float]) -> ConditionalSpaceDensity:
    return ConditionalSpaceDensity(state, t_values)


class SpaceResidual(NamedTuple):
    residual: np.ndarray | float
    raw: np.ndarray | float
    scale: np.ndarray | float
    epsilon_proxy: float


def space_equivariance_residual(state: ManyBodyState, a: int, xs, floor_rel: float = 1e-8) -> SpaceResidual:
    """r = d0 rho + d_i(rho v^i) with v^i = V^i / V^0, for particle ``a``.

    ``residual`` is |r| divided by |d0 rho| + |d_i(rho v^i)|, the latter
    floored at ``floor_rel * rho * <E>`` so that exactly stationary points
    report a rounding-size number instead of 0/0.
    """
    if state.particles[a].massless or state.massless:
        raise DimensionError("space-equivariance residual needs a massive particle in a massive-only state")
    x, single = _as_batch(state, xs)
    s = _mode_sums(state, x, second=True)
    psi = s.psi
    g = s.grad[:, :, a, :]
    h = s.hess[:, :, a]
    m = state.particles[a].mass
    rho = np.sum(np.abs(psi) ** 2, axis=1)
    if np.any(~(rho > state.psi_floor)):
        raise NodeError("space-equivariance residual requested at a node")
    eta = np.array([1.0, -1.0, -1.0, -1.0])
    gu = g * eta                                    # d^mu psi
    hu = h * eta[None, None, None, :]               # d_nu d^mu psi
    drho = 2 * np.einsum("na,nam->nm", psi.conj(), g).real
    j = -np.einsum("na,nam->nm", psi.conj(), gu).imag / m
    dj = -(np.einsum("nav,nam->nvm", g.conj(), gu) + np.einsum("na,navm->nvm", psi.conj(), hu)).imag / m
    j0 = j[:, 0]
    div = np.zeros(len(rho))
    for i in (1, 2, 3):
        div += drho[:, i] * j[:, i] / j0 + rho * dj[:, i, i] / j0 - rho * j[:, i] * dj[:, i, 0] / j0**2
    raw = drho[:, 0] + div
    e_mean, e_std = energy_stats(state, a)
    scale = np.abs(drho[:, 0]) + np.abs(div)
    norm = np.abs(raw) / np.maximum(scale, floor_rel * rho * e_mean)
    proxy = e_std / e_mean
    if single:
        return SpaceResidual(float(norm[0]), float(raw[0]), float(scale[0]), proxy)
    return SpaceResidual(norm, raw, scale, proxy)
