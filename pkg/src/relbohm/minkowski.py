"""Minkowski geometry in units hbar = c = 1, signature (+, -, -, -).

Four-vectors are plain arrays whose last axis has length 4 and holds
``(t, x, y, z)``.  :class:`FourVector` is a convenience wrapper for single
events; every function here also accepts stacked arrays and broadcasts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

METRIC = np.array([1.0, -1.0, -1.0, -1.0])


class FourVector(NamedTuple):
    t: float
    x: float
    y: float
    z: float

    @property
    def array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    @classmethod
    def of(cls, v) -> "FourVector":
        v = np.asarray(v, dtype=float)
        if v.shape != (4,):
            raise ValueError(f"expected shape (4,), got {v.shape}")
        return cls(*map(float, v))


def as_vectors(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape[-1:] != (4,):
        raise ValueError(f"last axis must have length 4, got shape {arr.shape}")
    return arr


def dot(u, v) -> np.ndarray | float:
    """Minkowski product ``u0 v0 - u.v`` along the last axis."""
    u = np.asarray(u)
    v = np.asarray(v)
    out = u[..., 0] * v[..., 0] - u[..., 1] * v[..., 1] - u[..., 2] * v[..., 2] - u[..., 3] * v[..., 3]
    return out[()] if np.ndim(out) == 0 else out


def lower(v) -> np.ndarray:
    """Index lowering ``v_mu = eta_mu_nu v^nu``; works for complex input."""
    return np.asarray(v) * METRIC


def is_timelike(v) -> np.ndarray | bool:
    return dot(v, v) > 0


@dataclass(frozen=True)
class Boost:
    """Pure Lorentz boost with frame velocity ``beta`` (|beta| < 1).

    Acting on an event: ``t' = gamma (t - beta.x)``,
    ``x'_par = gamma (x_par - beta t)``, transverse components unchanged.
    ``Boost(beta)`` followed by ``Boost(-beta)`` is the identity.
    """

    beta: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float)
        if b.shape != (3,):
            raise ValueError(f"beta must be a 3-vector, got shape {b.shape}")
        if not np.all(np.isfinite(b)):
            raise ValueError("beta must be finite")
        if float(b @ b) >= 1.0:
            raise ValueError(f"|beta| must be < 1, got {np.sqrt(b @ b):.6g}")
        object.__setattr__(self, "beta", tuple(map(float, b)))

    @property
    def gamma(self) -> float:
        b = np.asarray(self.beta)
        return 1.0 / np.sqrt(1.0 - b @ b)

    def inverse(self) -> "Boost":
        return Boost(tuple(-b for b in self.beta))

    def matrix(self) -> np.ndarray:
        b = np.asarray(self.beta)
        b2 = b @ b
        g = self.gamma
        lam = np.eye(4)
        lam[0, 0] = g
        lam[0, 1:] = -g * b
        lam[1:, 0] = -g * b
        if b2 > 0:
            lam[1:, 1:] += (g - 1.0) * np.outer(b, b) / b2
        return lam

    def apply(self, v) -> np.ndarray:
        return as_vectors(v) @ self.matrix().T


def boost(b: Boost, v):
    """Apply ``b`` to a four-vector (or stack); returns a FourVector for single inputs."""
    out = b.apply(v)
    if out.shape == (4,):
        return FourVector.of(out)
    return out
