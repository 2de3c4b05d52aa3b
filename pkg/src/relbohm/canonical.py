"""Named reference states used by the test suite, scripts and example scenarios.

All live on the lattice of a box with L = 4 pi / 0.6 (lattice spacing 0.3 in
momentum), so every momentum below is a lattice point.  The superpositions
are node-free by construction: one amplitude dominates the sum of the others.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from .wavefunction import ManyBodyState, ParticleSpec, energy_stats

BOX_L = 4 * np.pi / 0.6
BOX_T = 40.0
X_AXIS = np.array([1.0, 0.0, 0.0])


def _along_x(ps) -> np.ndarray:
    return np.outer(np.asarray(ps, dtype=float), X_AXIS)


def plane_wave(mass: float = 1.0, p3=(0.6, 0.0, 0.0), L: float = BOX_L, T: float = BOX_T,
               normalize: bool = True) -> ManyBodyState:
    return ManyBodyState.from_modes([ParticleSpec(mass)], [np.atleast_2d(p3)], [1.0], L, T, normalize)


def two_mode_1d(L: float = BOX_L, T: float = BOX_T) -> ManyBodyState:
    """One particle, m = 1, modes p = 0 and p = 0.6 along x, amplitudes (1, 0.5)."""
    return ManyBodyState.from_modes([ParticleSpec(1.0)], [_along_x([0.0, 0.6])], [1.0, 0.5], L, T)


def entangled_two_branch(L: float = BOX_L, T: float = BOX_T) -> ManyBodyState:
    """Two particles (m = 1, 1.5) in 0.8 |0>|-0.3> + 0.45 e^{0.4i} |0.6>|0.3>."""
    c = np.diag([0.8, 0.45 * np.exp(0.4j)])
    return ManyBodyState.from_modes(
        [ParticleSpec(1.0), ParticleSpec(1.5)],
        [_along_x([0.0, 0.6]), _along_x([-0.3, 0.3])],
        c, L, T,
    )


def generic_four_mode(L: float = BOX_L, T: float = BOX_T) -> ManyBodyState:
    """Two particles (m = 1, 1.5), two modes each, full non-product amplitude matrix."""
    c = np.array([[1.0, 0.3], [0.25, 0.2 * np.exp(0.7j)]])
    return ManyBodyState.from_modes(
        [ParticleSpec(1.0), ParticleSpec(1.5)],
        [_along_x([0.0, 0.6]), _along_x([-0.3, 0.6])],
        c, L, T,
    )


def standing_wave(L: float = BOX_L, T: float = BOX_T) -> ManyBodyState:
    """Modes p = +-0.6 with amplitudes (1, 0.5): a single energy shell.

    V^0 is constant while |dX/dt| = 1.8 / 1.166 > 1 at the density minima,
    so trajectories here are superluminal.
    """
    return ManyBodyState.from_modes([ParticleSpec(1.0)], [_along_x([0.6, -0.6])], [1.0, 0.5], L, T)


CANONICAL = {
    "plane_wave": plane_wave,
    "two_mode_1d": two_mode_1d,
    "entangled_two_branch": entangled_two_branch,
    "generic_four_mode": generic_four_mode,
    "standing_wave": standing_wave,
}


def gaussian_packet(
    spread: float,
    k0: int = 6,
    n_modes: int = 21,
    mass: float = 1.0,
    L: float = BOX_L,
    T: float = BOX_T,
) -> ManyBodyState:
    """Lattice modes k0 + j (j = -n//2..n//2) along x with weights exp(-j^2 / (4 spread^2))."""
    j = np.arange(n_modes) - n_modes // 2
    ks = k0 + j
    amps = np.exp(-(j**2) / (4.0 * spread**2))
    return ManyBodyState.from_modes([ParticleSpec(mass)], [_along_x(2 * np.pi * ks / L)], amps, L, T)


def packet_with_energy_spread(
    target: float,
    k0: int = 6,
    n_modes: int = 21,
    mass: float = 1.0,
    L: float = BOX_L,
    T: float = BOX_T,
) -> ManyBodyState:
    """Gaussian lattice packet whose relative energy spread dE / <E> equals ``target``."""

    def rel_spread(spread):
        st = energy_stats(gaussian_packet(spread, k0, n_modes, mass, L, T), 0)
        return st.stddev / st.mean - target

    lo, hi = 1e-2, 1e3
    if rel_spread(lo) > 0 or rel_spread(hi) < 0:
        raise ValueError(f"relative energy spread {target} not reachable with {n_modes} modes around k0={k0}")
    spread = brentq(rel_spread, lo, hi, xtol=1e-12)
    return gaussian_packet(spread, k0, n_modes, mass, L, T)
