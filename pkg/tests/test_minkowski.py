import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relbohm.minkowski import Boost, FourVector, boost, dot, is_timelike, lower

finite = st.floats(-50, 50, allow_nan=False)
vec4 = st.lists(finite, min_size=4, max_size=4).map(np.array)


@st.composite
def boosts(draw):
    d = np.array(draw(st.lists(st.floats(-1, 1), min_size=3, max_size=3)))
    speed = draw(st.floats(0, 0.95))
    n = np.linalg.norm(d)
    return Boost(tuple(speed * d / n) if n > 1e-6 else (0.0, 0.0, 0.0))


@pytest.mark.parametrize("u, v, expected", [
    ((1, 0, 0, 0), (1, 0, 0, 0), 1.0),
    ((1, 1, 0, 0), (1, 1, 0, 0), 0.0),
    ((2, 1, 0, 0), (1, 2, 0, 0), 0.0),
])
def test_dot_examples(u, v, expected):
    assert dot(u, v) == expected


def test_boost_examples():
    b = Boost((0.6, 0, 0))
    assert b.gamma == pytest.approx(1.25)
    assert np.allclose(boost(b, (1, 0, 0, 0)).array, [1.25, -0.75, 0, 0], atol=1e-15)
    assert np.allclose(boost(b, (1, 1, 0, 0)).array, [0.5, 0.5, 0, 0], atol=1e-15)
    v = np.array([0.3, -1.2, 4.0, 2.5])
    assert np.array_equal(boost(Boost(), v).array, v)
    assert isinstance(boost(b, v), FourVector)


def test_boost_transverse_untouched():
    out = Boost((0.6, 0, 0)).apply([[1, 2, 3, 4]])
    assert np.allclose(out[0, 2:], [3, 4])


@pytest.mark.parametrize("beta", [(1, 0, 0), (0.8, 0.8, 0), (np.nan, 0, 0), (0.5, 0)])
def test_boost_rejects_invalid(beta):
    with pytest.raises(ValueError):
        Boost(beta)


def test_lower_and_timelike():
    assert np.array_equal(lower([1, 2, 3, 4]), [1, -2, -3, -4])
    assert is_timelike([1, 0.5, 0, 0]) and not is_timelike([1, 2, 0, 0])


def test_fourvector_shape_check():
    with pytest.raises(ValueError):
        FourVector.of([1, 2, 3])


@settings(max_examples=200, deadline=None)
@given(boosts(), vec4, vec4)
def test_boost_preserves_dot(b, u, v):
    d = dot(u, v)
    assert abs(dot(b.apply(u), b.apply(v)) - d) <= 1e-10 * (1 + abs(d)) * (1 + np.abs(u).max() * np.abs(v).max())


@settings(max_examples=200, deadline=None)
@given(boosts(), vec4)
def test_boost_inverse_roundtrip(b, u):
    back = b.inverse().apply(b.apply(u))
    assert np.allclose(back, u, atol=1e-10 * (1 + np.abs(u).max()), rtol=0)
    assert np.allclose(Boost(tuple(-x for x in b.beta)).apply(b.apply(u)), back)


@settings(max_examples=100, deadline=None)
@given(vec4, vec4, vec4, finite)
def test_dot_symmetric_bilinear(u, v, w, a):
    assert dot(u, v) == dot(v, u)
    assert dot(a * u + w, v) == pytest.approx(a * dot(u, v) + dot(w, v), abs=1e-9 * (1 + abs(a)) * 1e4)


def test_matrix_matches_apply():
    b = Boost((0.2, -0.3, 0.5))
    v = np.random.default_rng(0).normal(size=(5, 4))
    assert np.allclose(v @ b.matrix().T, b.apply(v))
