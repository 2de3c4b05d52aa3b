import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relbohm.canonical import (
    entangled_two_branch,
    packet_with_energy_spread,
    plane_wave,
    standing_wave,
    two_mode_1d,
)
from relbohm.dynamics import IntegratorConfig
from relbohm.ensemble import (
    EnsembleSpec,
    chi_square,
    chi_square_against_density,
    conditional_space_density,
    continuity_residual,
    equivariance_test,
    majorant,
    member_rng,
    merge_bins,
    pushforward,
    sample,
    space_equivariance_residual,
    triangle_bound,
    uniform_ks,
)
from relbohm.errors import DimensionError, MajorantBreachError, NodeError
from relbohm.wavefunction import ManyBodyState, ParticleSpec, density, energy_stats, spatial_norm

from oracles import fd_divergence, gauss_box_integral

E06 = np.sqrt(1.36)


def box_points(state, count, seed):
    rng = np.random.default_rng(seed)
    lo, hi = state.box_bounds()
    return lo + rng.random((count,) + lo.shape) * (hi - lo)


# -- sampling ---------------------------------------------------------------------


def test_count_zero():
    s = two_mode_1d()
    out = sample(s, EnsembleSpec.full_box(s, 0))
    assert out.configs.shape == (0, 1, 4)


def test_plane_wave_uniform_marginals():
    s = plane_wave()
    spec = EnsembleSpec.full_box(s, 10_000, seed=1)
    out = sample(s, spec)
    assert out.count == 10_000
    p = uniform_ks(out.configs, spec.lo, spec.hi)
    assert len(p) == 4 and min(p.values()) > 0.01


def test_two_mode_marginal_chi2():
    s = two_mode_1d()
    spec = EnsembleSpec.full_box(s, 10_000, seed=1)
    out = sample(s, spec)
    # x marginal: 20 bins, probabilities from quadrature of the mode sum (independent of box integrals)
    edges = np.linspace(0, s.L, 21)

    def marginal(p):
        x = np.zeros((len(p), 1, 4))
        x[:, 0, 0], x[:, 0, 1] = p[:, 0], p[:, 1]
        return density(s, x)

    prob = np.array([gauss_box_integral(marginal, [0, a], [s.T, b], order=20) for a, b in zip(edges[:-1], edges[1:])])
    prob /= prob.sum()
    counts, _ = np.histogram(out.configs[:, 0, 1], edges)
    assert chi_square(prob * out.count, counts).p_value > 0.01
    # and the joint (t, x) test against exact box integrals
    assert chi_square_against_density(s, out.configs, spec.lo, spec.hi)[0].p_value > 0.01


def test_sampler_inside_region_and_positive():
    s = entangled_two_branch()
    lo, hi = s.box_bounds()
    spec = EnsembleSpec(500, lo + 1.0, 0.5 * hi, seed=3)
    out = sample(s, spec)
    assert np.all(out.configs >= spec.lo) and np.all(out.configs <= spec.hi)
    assert np.all(density(s, out.configs) > 0)


def test_region_outside_box_rejected():
    s = two_mode_1d()
    lo, hi = s.box_bounds()
    with pytest.raises(ValueError):
        sample(s, EnsembleSpec(10, lo - 1, hi))
    with pytest.raises(DimensionError):
        sample(s, EnsembleSpec(10, np.zeros((2, 4)), np.ones((2, 4))))


def test_majorant_breach():
    s = two_mode_1d()
    spec = EnsembleSpec.full_box(s, 200, majorant=0.5 * s.peak_density)
    with pytest.raises(MajorantBreachError):
        sample(s, spec)


def test_majorant_bounds():
    s = entangled_two_branch()
    spec = EnsembleSpec.full_box(s, 10)
    M = majorant(s, spec)
    assert s.peak_density <= M <= triangle_bound(s) * (1 + 1e-12)
    assert np.max(density(s, box_points(s, 5000, 0))) <= M


def test_mcmc_sampler_marginal():
    s = two_mode_1d()
    spec = EnsembleSpec.full_box(s, 4000, seed=2, sampler="mcmc", mcmc_step=0.3, burn_in=400)
    out = sample(s, spec)
    assert out.meta["sampler"] == "mcmc" and out.meta["burn_in"] == 400
    assert chi_square_against_density(s, out.configs, spec.lo, spec.hi, bins=10)[0].p_value > 0.01


def test_member_streams_independent_of_layout():
    a = member_rng(7, 3).random(5)
    assert np.array_equal(a, member_rng(7, 3).random(5))
    assert not np.array_equal(a, member_rng(7, 4).random(5))


@settings(max_examples=5, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32))
def test_determinism_across_workers(workers, seed):
    s = entangled_two_branch()
    spec = EnsembleSpec.full_box(s, 600, seed=seed)
    a = sample(s, spec)
    b = sample(s, spec.replace(workers=workers))
    assert np.array_equal(a.configs, b.configs)
    pa = pushforward(s, a, 0.2, IntegratorConfig(step=0.05), workers=1)
    pb = pushforward(s, b, 0.2, IntegratorConfig(step=0.05), workers=workers)
    assert np.array_equal(pa.configs, pb.configs)


def test_prefix_stable_under_count():
    # members are generated from their own streams, so a larger run extends a smaller one
    s = two_mode_1d()
    small = sample(s, EnsembleSpec.full_box(s, 300, seed=5)).configs
    large = sample(s, EnsembleSpec.full_box(s, 700, seed=5)).configs
    assert np.array_equal(small, large[:300])


def test_ensemble_csv(tmp_path):
    s = entangled_two_branch()
    out = sample(s, EnsembleSpec.full_box(s, 3, seed=1))
    out.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "member,particle,t,x,y,z" and len(lines) == 7
    assert lines[2].startswith("0,1,")


# -- statistics helpers -----------------------------------------------------------


def test_merge_bins_minimum():
    e, o = merge_bins(np.array([1.0, 2, 3, 10, 0.5]), np.array([0, 3, 2, 9, 1]))
    assert np.all(e >= 5) and e.sum() == 16.5 and o.sum() == 15


def test_chi_square_perfect_fit():
    r = chi_square(np.full(10, 100.0), np.full(10, 100.0))
    assert r.statistic == 0 and r.p_value == pytest.approx(1.0) and r.dof == 9


# -- pushforward ------------------------------------------------------------------


def test_pushforward_zero_is_identity():
    s = two_mode_1d()
    S = sample(s, EnsembleSpec.full_box(s, 50, seed=1))
    assert np.array_equal(pushforward(s, S, 0.0).configs, S.configs)


def test_pushforward_plane_wave_translation():
    s = plane_wave()
    S = sample(s, EnsembleSpec.full_box(s, 50, seed=1))
    P = pushforward(s, S, 5.0)
    assert np.allclose(P.configs - S.configs, [5 * E06, 3.0, 0, 0], atol=1e-10)
    assert P.meta["excluded"] == []


@pytest.mark.slow
def test_two_mode_equivariance_delta_s_2():
    s = two_mode_1d()
    rep = equivariance_test(s, EnsembleSpec.full_box(s, 10_000, seed=1), 2.0, IntegratorConfig(step=0.01))
    assert rep.passed, rep.to_dict()
    assert rep.excluded < 0.01 * rep.count


def test_equivariance_detects_wrong_velocity():
    # a sample from the plane-wave density (uniform) pushed by the two-mode flow must
    # not look like the two-mode density: the statistic has power
    s = two_mode_1d()
    spec = EnsembleSpec.full_box(s, 10_000, seed=1)
    uniform = sample(plane_wave(), spec)
    rep = equivariance_test(s, spec, 0.5, IntegratorConfig(step=0.05), samples=uniform)
    assert not rep.passed


# -- pointwise identities -----------------------------------------------------------


def test_continuity_plane_wave():
    s = plane_wave()
    r = continuity_residual(s, box_points(s, 20, 0))
    assert np.all(np.abs(r.residual) <= 1e-12 * r.scale)


def test_continuity_entangled():
    s = entangled_two_branch()
    pts = box_points(s, 100, 1)
    r = continuity_residual(s, pts)
    assert np.max(np.abs(r.residual) / r.scale) < 1e-9
    for x in pts[:10]:
        fd = sum(fd_divergence(s, a, x) for a in s.massive)
        one = continuity_residual(s, x)
        assert abs(fd - one.residual) < 1e-5 * one.scale


def test_continuity_node():
    s = ManyBodyState.from_modes([ParticleSpec(1.0)], [[[0.6, 0, 0], [-0.6, 0, 0]]], [1.0, 1.0], 10.0, 10.0)
    with pytest.raises(NodeError):
        continuity_residual(s, np.array([[0.0, np.pi / 1.2, 0, 0]]))


def test_conditional_density_plane_wave():
    s = plane_wave()
    f = conditional_space_density(s, [3.0])
    x3 = np.random.default_rng(0).random((10, 1, 3)) * s.L
    assert np.allclose(f(x3), 1 / s.L**3, rtol=1e-12)


def test_conditional_density_factorizes():
    L, T = 10.0, 10.0
    dp = 2 * np.pi / L
    u, w = np.array([1.0, 0.4j]), np.array([0.7, 0.2])
    s = ManyBodyState.from_modes([ParticleSpec(1.0), ParticleSpec(2.0)],
                                 [[[0, 0, 0], [dp, 0, 0]], [[0, 0, 0], [0, dp, 0]]], np.outer(u, w), L, T)
    s1 = ManyBodyState.from_modes([ParticleSpec(1.0)], [[[0, 0, 0], [dp, 0, 0]]], u, L, T)
    s2 = ManyBodyState.from_modes([ParticleSpec(2.0)], [[[0, 0, 0], [0, dp, 0]]], w, L, T)
    t = [1.5, 4.0]
    f, f1, f2 = conditional_space_density(s, t), conditional_space_density(s1, t[:1]), conditional_space_density(s2, t[1:])
    x3 = np.random.default_rng(1).random((20, 2, 3)) * L
    assert np.allclose(f(x3), f1(x3[:, :1]) * f2(x3[:, 1:]), rtol=1e-10)


def test_conditional_norm_time_independent():
    s = entangled_two_branch()
    norms = [spatial_norm(s, [t, t + 1.0]) for t in (0.0, 2.0, 7.5, 19.0, 33.0)]
    assert np.ptp(norms) < 1e-10 * norms[0]


def test_space_residual_exact_shell():
    s = standing_wave()
    pts = box_points(s, 100, 2)
    r = space_equivariance_residual(s, 0, pts)
    rho = density(s, pts)
    assert np.max(np.abs(r.raw) / (rho * energy_stats(s, 0).mean)) < 1e-12
    assert r.epsilon_proxy == pytest.approx(0.0, abs=1e-12)


def test_space_residual_scaling():
    pts = box_points(two_mode_1d(), 100, 0)
    narrow = space_equivariance_residual(packet_with_energy_spread(0.01), 0, pts)
    wide = space_equivariance_residual(packet_with_energy_spread(0.1), 0, pts)
    assert narrow.epsilon_proxy == pytest.approx(0.01) and wide.epsilon_proxy == pytest.approx(0.1)
    assert np.median(narrow.residual) < 0.05
    assert np.median(wide.residual) > np.median(narrow.residual)
