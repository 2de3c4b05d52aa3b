from dataclasses import replace

import numpy as np
import pytest

from relbohm.errors import OverlapError
from relbohm.measurement import (
    CHSH_SETTINGS,
    Classifier,
    PointerSpec,
    branch_state,
    build_correlation_state,
    build_post_measurement,
    check_overlap,
    chsh_amplitudes,
    classify_branch,
    correlation_scenario,
    decoherence_residual,
    effective_wavefunction_check,
    frame_mix_check,
    massless_two_path,
    pointer_packet,
    run_correlation,
    run_measurement,
    two_branch_scenario,
)
from relbohm.minkowski import Boost
from relbohm.wavefunction import density

H = np.sqrt(0.5)


def test_pointer_packet_lattice_and_peak():
    pk = pointer_packet(4.0, PointerSpec(), 16.0)
    assert len(pk.p3) == 33                       # |p| w <= 6.4 on the 2 pi / 16 lattice
    st = pk.state(100.0, 16.0, 20.0, normalize=False)
    y = np.linspace(0, 16, 1601)
    ev = np.zeros((len(y), 1, 4))
    ev[:, 0, 1] = y
    assert y[np.argmax(density(st, ev))] == pytest.approx(4.0)


def test_branch_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        two_branch_scenario([0.5, 0.5])


def test_one_branch_is_product_state():
    sc = two_branch_scenario([1.0], centers=(6.0,))
    s = build_post_measurement(sc)
    sys_state = sc.branches[0].system.state(1.0, sc.L, sc.T)
    ptr_state = sc.pointer_packets()[0].state(sc.pointer.mass, sc.L, sc.T)
    rng = np.random.default_rng(0)
    x = rng.random((20, 2, 4)) * [sc.T, sc.L, sc.L, sc.L]
    assert np.allclose(density(s, x), density(sys_state, x[:, :1]) * density(ptr_state, x[:, 1:]), rtol=1e-10)
    assert s.box_norm() == pytest.approx(1.0, rel=1e-10)


def test_separated_branches_decohere():
    # 8 widths apart both directly and around the periodic box
    sc = two_branch_scenario([H, H], centers=(4.0, 12.0))
    s = build_post_measurement(sc)
    assert decoherence_residual(sc, s) < 1e-6
    assert s.box_norm() == pytest.approx(1.0, rel=1e-10)


def test_overlapping_pointers_rejected():
    with pytest.raises(OverlapError):
        build_post_measurement(two_branch_scenario([H, H], centers=(4.0, 5.0)))
    with pytest.raises(OverlapError):
        check_overlap([pointer_packet(y, PointerSpec(), 16.0) for y in (4.0, 5.0)], PointerSpec(), 16.0, 20.0)


def test_classifier_examples():
    sc = two_branch_scenario([H, H], centers=(4.0, 12.0))
    assert classify_branch(sc, [0.0, 4.0, 0, 0]) == 0
    assert classify_branch(sc, [7.0, 12.0, 0, 0]) == 1
    assert classify_branch(sc, [0.0, 8.0, 0, 0]) is None
    # y 2 widths from center 0 and 12 from center 1 (box wide enough that the wrap is farther)
    wide = two_branch_scenario([H, H], centers=(8.0, 22.0), L=32.0)
    assert classify_branch(wide, [0.0, 10.0, 0, 0]) == 0


def test_classifier_floor():
    sc = two_branch_scenario([H, H], centers=(4.0, 12.0))
    cl = Classifier.for_scenario(sc)
    far = two_branch_scenario([1.0], centers=(4.0,), L=64.0)
    labels = Classifier.for_scenario(far)(np.array([[0.0, 4.0, 0, 0], [0.0, 36.0, 0, 0]]))
    assert list(labels) == [0, -1]
    assert cl(np.array([0.0, 4.0, 0, 0])) == 0


def test_certain_outcome():
    rep = run_measurement(two_branch_scenario([1.0, 0.0], count=1000))
    assert np.array_equal(rep.empirical, [1.0, 0.0])
    assert rep.unclassified == 0


def test_born_rule_small_run():
    rep = run_measurement(two_branch_scenario([0.5, np.sqrt(0.75)], count=2000, seed=3))
    assert rep.passed, rep.to_dict()
    d = rep.to_dict()
    assert set(d["branches"][0]) == {"branch", "expected", "empirical", "stderr"}


def test_massless_system_two_paths():
    sc = two_branch_scenario([H, H], count=2000, seed=2)
    ml, mv, z = massless_two_path(sc)
    assert ml.passed and mv.passed
    assert z <= 2.0


def test_effective_wave_function():
    sc = two_branch_scenario([0.5, np.sqrt(0.75)], count=10)
    assert effective_wavefunction_check(sc, members=5, delta_s=1.0) < 1e-3


def test_branch_state_is_single_branch():
    sc = two_branch_scenario([0.5, np.sqrt(0.75)])
    b1 = branch_state(sc, 1)
    assert b1.box_norm() == pytest.approx(1.0, rel=1e-10)
    assert Classifier.for_scenario(sc)(np.array([0.0, 12.0, 0, 0])) == 1


# -- correlations ------------------------------------------------------------------


def test_chsh_amplitudes_give_minus_cos():
    sign = np.array([1.0, -1.0])
    for theta in (0.0, 0.4, np.pi / 4, 2.0):
        c = chsh_amplitudes(theta)
        assert np.sum(np.abs(c) ** 2) == pytest.approx(1.0)
        assert sign @ np.abs(c) ** 2 @ sign == pytest.approx(-np.cos(theta))
    # the standard settings reach |S| = 2 sqrt 2 in the exact tables
    E = lambda a, b: -np.cos(CHSH_SETTINGS[a] - CHSH_SETTINGS[b])  # noqa: E731
    S = E("a", "b") - E("a", "b'") + E("a'", "b") + E("a'", "b'")
    assert abs(S) == pytest.approx(2 * np.sqrt(2))


def test_correlated_table():
    sc = correlation_scenario(np.diag([H, H]), count=2000, seed=4)
    rep = run_correlation(sc)
    assert rep.passed
    assert rep.empirical[0, 1] == 0 and rep.empirical[1, 0] == 0


def test_product_amplitudes_factorize():
    u, w = np.array([0.6, 0.8]), np.array([np.sqrt(0.3), np.sqrt(0.7)])
    sc = correlation_scenario(np.outer(u, w), count=2000, seed=5)
    rep = run_correlation(sc)
    assert rep.passed
    p1, p2 = rep.empirical.sum(axis=1), rep.empirical.sum(axis=0)
    assert np.abs(rep.empirical - np.outer(p1, p2)).max() < 0.03


def test_correlation_state_normalized():
    sc = correlation_scenario(chsh_amplitudes(0.7), count=10)
    assert build_correlation_state(sc).box_norm() == pytest.approx(1.0, rel=1e-9)


def test_frame_mix_no_boost_identical():
    sc = correlation_scenario(np.diag([H, H]), count=1000, seed=6)
    fm = frame_mix_check(sc)
    assert np.array_equal(fm.reference.empirical, fm.mixed.empirical)


def test_frame_mix_opposite_boosts():
    sc = correlation_scenario(np.diag([H, H]), count=1000, seed=7)
    fm = frame_mix_check(replace(sc, boosts=(Boost((0.3, 0, 0)), Boost((-0.3, 0, 0)))))
    assert fm.passed, (fm.reference.to_dict(), fm.mixed.to_dict())
