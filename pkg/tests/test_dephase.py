import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import linregress

from dtcsim import dephase as dp

EPS_GRID = [k * 0.01 * math.pi for k in range(1, 21)]


def random_density(dim, seed):
    g = np.random.default_rng(seed)
    a = g.normal(size=(dim, dim)) + 1j * g.normal(size=(dim, dim))
    r = a @ a.conj().T
    return r / np.trace(r)


# ---------------------------------------------------------------- rotations

@pytest.mark.parametrize("eps", [0.0, 0.3, 1.2])
def test_z2_rotation_entries(eps):
    u = dp.rotation_matrix("Z2", eps)
    assert u[0, 0] == pytest.approx(-math.sin(eps / 2))
    assert u[0, 1] == pytest.approx(-1j * math.cos(eps / 2))
    assert np.allclose(u @ u.conj().T, np.eye(2))


def test_z2_rotation_at_zero_is_swap():
    assert np.allclose(dp.rotation_matrix("Z2", 0.0), -1j * np.array([[0, 1], [1, 0]]))


@pytest.mark.parametrize("eps", [0.1, 0.5])
def test_z3_rotation_entries(eps):
    u = dp.rotation_matrix("Z3", eps)
    assert u[0, 1] == pytest.approx(0.5j * math.sin(eps))
    assert u[1, 1] == pytest.approx(math.sin(eps / 2) ** 2)
    assert np.allclose(u @ u.conj().T, np.eye(3))


def test_rotation_preconditions():
    with pytest.raises(dp.DephaseError):
        dp.rotation_matrix("Z2", math.pi)
    with pytest.raises(dp.DephaseError):
        dp.rotation_matrix("Z2Ising", 0.1)


# ------------------------------------------------------------------ channel

def test_channel_examples():
    d = np.diag([0.3, 0.7])
    assert np.allclose(dp.dephasing_channel(d), d)
    plus = np.full((2, 2), 0.5)
    assert np.allclose(dp.dephasing_channel(plus), np.eye(2) / 2)


@pytest.mark.parametrize("dim", [2, 3])
def test_channel_properties_random(dim):
    for seed in range(100):
        r = random_density(dim, seed)
        out = dp.dephasing_channel(r)
        assert np.trace(out) == pytest.approx(np.trace(r))
        assert np.allclose(dp.dephasing_channel(out), out)
        assert np.min(np.linalg.eigvalsh(out)) >= -1e-12


def test_channel_rejects_invalid():
    with pytest.raises(dp.DephaseError):
        dp.dephasing_channel(np.array([[1, 1], [0, 0]]))
    with pytest.raises(dp.DephaseError):
        dp.dephasing_channel(np.diag([1.5, -0.5]))
    with pytest.raises(dp.DephaseError):
        dp.dephasing_channel(np.eye(2))


# ------------------------------------------------------------ rate matrices

def test_z2_rate_matrix_closed_form():
    eps = 0.4
    s2, c2 = math.sin(eps / 2) ** 2, math.cos(eps / 2) ** 2
    assert np.allclose(dp.rate_matrix("Z2", eps), [[s2, c2], [c2, s2]])


@pytest.mark.parametrize("eps", [0.01, 0.02, 0.05])
def test_z3_three_cycle_return_matrix(eps):
    """The return map over one Z3 period is 1 - eps^2 on the diagonal, eps^2/2 off it."""
    r3 = np.linalg.matrix_power(dp.rate_matrix("Z3", eps), 3)
    ref = np.full((3, 3), eps**2 / 2) + np.eye(3) * (1 - 1.5 * eps**2)
    assert np.max(np.abs(r3 - ref)) < eps**4


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["Z2", "Z3"]), st.floats(-3.1, 3.1))
def test_rate_matrix_doubly_stochastic(protocol, eps):
    r = dp.rate_matrix(protocol, eps)
    assert np.all(r >= 0)
    assert np.max(np.abs(r.sum(axis=0) - 1)) < 1e-12
    assert np.max(np.abs(r.sum(axis=1) - 1)) < 1e-12


# -------------------------------------------------------------- decay rates

def test_z2_rate_exact():
    eps = 0.06 * math.pi
    assert dp.subharmonic_decay_rate("Z2", eps) == pytest.approx(-math.log(math.cos(eps)), abs=1e-15)
    assert dp.subharmonic_decay_rate("Z2", eps) == pytest.approx(0.0178715, abs=5e-8)


@pytest.mark.parametrize("eps", np.linspace(0.02, 0.3, 8))
def test_z2_rate_small_eps(eps):
    assert abs(dp.subharmonic_decay_rate("Z2", eps) - eps**2 / 2) <= eps**4


def test_z3_rate_near_half_eps_squared():
    eps = 0.06 * math.pi
    assert abs(dp.subharmonic_decay_rate("Z3", eps) - eps**2 / 2) <= eps**4


@pytest.mark.parametrize("eps", EPS_GRID)
def test_polarization_eigenvalue_expansion(eps):
    assert abs(dp.polarization_eigenvalue("Z2", eps).real - math.cos(eps) ** 2) < 1e-12
    assert abs(abs(dp.polarization_eigenvalue("Z3", eps)) - (1 - 1.5 * eps**2)) < 5 * eps**4


def test_decay_rate_preconditions():
    for bad in (0.0, math.pi / 2, -2.0):
        with pytest.raises(dp.DephaseError):
            dp.subharmonic_decay_rate("Z2", bad)


# ---------------------------------------------------------- population runs

def test_z2_no_error_alternates_forever():
    tr = dp.iterate_population_dynamics("Z2", 0.0, [1, 0], 50)
    assert np.allclose(tr.imbalance, (-1.0) ** np.arange(51))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["Z2", "Z3"]), st.floats(0, 1.5), st.integers(0, 1000))
def test_populations_stay_probabilities(protocol, eps, seed):
    d = 2 if protocol == "Z2" else 3
    p0 = np.random.default_rng(seed).dirichlet(np.ones(d))
    tr = dp.iterate_population_dynamics(protocol, eps, p0, 40)
    assert np.all(tr.populations >= -1e-15)
    assert np.allclose(tr.populations.sum(axis=1), 1, atol=1e-12)


def test_z2_iteration_matches_eigenvalue_rate():
    tr = dp.iterate_population_dynamics("Z2", 0.1, [1, 0], 200)
    n = tr.cycles[50:]
    fit = linregress(n, np.log(np.abs(tr.imbalance[50:])))
    assert abs(-fit.slope - (-math.log(math.cos(0.1)))) < 1e-6


@pytest.mark.parametrize("eps", [0.05, 0.2])
def test_z3_iteration_matches_eigenvalue_rate(eps):
    tr = dp.iterate_population_dynamics("Z3", eps, None, 300)
    n = tr.cycles[60::3]
    fit = linregress(n, np.log(np.abs(tr.imbalance[60::3])))
    gamma = dp.subharmonic_decay_rate("Z3", eps)
    assert abs(-fit.slope - gamma) < 0.01 * gamma


def test_population_input_validation():
    with pytest.raises(dp.DephaseError):
        dp.iterate_population_dynamics("Z2", 0.1, [0.5, 0.6])
    with pytest.raises(dp.DephaseError):
        dp.iterate_population_dynamics("Z3", 0.1, [1, 0])


def test_rate_table():
    rows = dp.rate_table("Z2", [0.1, 0.2])
    assert [r[0] for r in rows] == [0.1, 0.2]
    assert rows[0][2] == pytest.approx(0.005)
    with pytest.raises(dp.DephaseError):
        dp.rate_table("Z2", [])
