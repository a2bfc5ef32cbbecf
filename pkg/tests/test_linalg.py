import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpflux.errors import SimulationConfigError
from jumpflux.linalg import (
    expm,
    expm_stack,
    mat_one_norm,
    one_norm,
    propagator,
    propagator_stack,
)

finite_entries = st.floats(
    min_value=-1.0, max_value=1.0, allow_nan=False, allow_infinity=False
)


def random_matrix(draw, n=2, scale=1.0):
    return scale * np.array(
        [[draw(finite_entries) for _ in range(n)] for _ in range(n)]
    )


def test_one_norm_examples():
    assert one_norm([1.0, -2.0]) == 3.0
    assert one_norm([0.0, 0.0, 0.0]) == 0.0
    assert one_norm([-0.5]) == 0.5


def test_mat_one_norm_examples():
    assert mat_one_norm(np.eye(2)) == 1.0
    assert mat_one_norm([[1.0, -3.0], [2.0, 0.0]]) == 3.0
    assert mat_one_norm(np.zeros((3, 3))) == 0.0


def test_expm_zero_is_identity():
    assert np.array_equal(expm(np.zeros((3, 3)), 2.7), np.eye(3))


def test_expm_diagonal():
    d = np.diag([0.5, -1.25])
    got = expm(d, 0.8)
    want = np.diag(np.exp(np.diag(d) * 0.8))
    assert np.abs(got - want).max() < 1e-14


def test_expm_nilpotent_truncates():
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    t = 0.37
    want = np.array([[1.0, t], [0.0, 1.0]])
    assert np.abs(expm(a, t) - want).max() < 1e-15


def test_expm_rejects_non_square():
    with pytest.raises(SimulationConfigError):
        expm(np.zeros((2, 3)), 1.0)


def _taylor_64(m: np.ndarray) -> np.ndarray:
    total = np.eye(m.shape[0])
    term = np.eye(m.shape[0])
    for k in range(1, 64):
        term = term @ m / k
        total = total + term
    return total


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_expm_matches_taylor_series(data):
    a = random_matrix(data.draw)
    t = data.draw(st.floats(min_value=-1.0, max_value=1.0))
    if mat_one_norm(a) * abs(t) > 1.0:
        a = a / (2.0 * mat_one_norm(a) + 1.0)
    got = expm(a, t)
    want = _taylor_64(a * t)
    assert mat_one_norm(got - want) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_semigroup_property(data):
    a = random_matrix(data.draw, scale=2.0)
    h1 = data.draw(st.floats(min_value=0.01, max_value=1.0))
    h2 = data.draw(st.floats(min_value=0.01, max_value=1.0))
    lhs = expm(a, h1) @ expm(a, h2)
    rhs = expm(a, h1 + h2)
    assert mat_one_norm(lhs - rhs) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_one_norm_submultiplicative(data):
    m = random_matrix(data.draw, n=3, scale=3.0)
    v = np.array([data.draw(finite_entries) for _ in range(3)])
    assert one_norm(m @ v) <= mat_one_norm(m) * one_norm(v) + 1e-12


def test_propagator_zero_generator():
    p = propagator(np.zeros((2, 2)), 0.5)
    assert np.abs(p.phi - np.eye(2)).max() < 1e-15
    assert np.abs(p.psi - 0.5 * np.eye(2)).max() < 1e-15


def test_propagator_scalar_quadrature():
    a = 0.7
    h = 0.4
    p = propagator(np.array([[a]]), h)
    assert abs(p.phi[0, 0] - np.exp(a * h)) < 1e-14
    assert abs(p.psi[0, 0] - (np.exp(a * h) - 1.0) / a) < 1e-14


def test_propagator_nilpotent_polynomial():
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    h = 0.3
    p = propagator(a, h)
    want_psi = np.array([[h, h * h / 2.0], [0.0, h]])
    assert np.abs(p.psi - want_psi).max() < 1e-15


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_propagator_identity_phi_eq_i_plus_a_psi(data):
    a = random_matrix(data.draw, scale=3.0)
    h = data.draw(st.floats(min_value=1e-3, max_value=1.0))
    p = propagator(a, h)
    assert mat_one_norm(p.phi - np.eye(2) - a @ p.psi) <= 1e-12


def test_propagator_stack_matches_singles():
    a = np.array([[0.1, -0.4], [0.9, 0.2]])
    steps = np.array([0.02, 0.1, 0.37])
    phis, psis = propagator_stack(a, steps)
    for i, h in enumerate(steps):
        p = propagator(a, float(h))
        assert mat_one_norm(phis[i] - p.phi) < 1e-13
        assert mat_one_norm(psis[i] - p.psi) < 1e-13


def test_expm_stack_handles_large_norm():
    a = np.array([[0.0, 8.0], [-8.0, 0.0]])  # norm * t = 80, needs squaring
    got = expm_stack(a[None] * 10.0)[0]
    # rotation by 80 radians
    want = np.array(
        [[np.cos(80.0), np.sin(80.0)], [-np.sin(80.0), np.cos(80.0)]]
    )
    assert mat_one_norm(got - want) < 1e-11


def test_propagator_requires_positive_step():
    with pytest.raises(SimulationConfigError):
        propagator(np.eye(2), 0.0)
