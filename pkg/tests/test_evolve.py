import math

import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from dtcsim import evolve, model
from dtcsim.evolve import (
    DimensionCapError,
    NormDriftError,
    Observable,
    TimeTrace,
    expm_krylov,
    interaction_propagator,
    pulse_unitary,
    random_environment_state,
    run_ensemble,
    run_floquet,
    z3_site_unitary,
)
from dtcsim.model import CouplingTable, DisorderField, ModelSpec, ModelTemplate, Protocol

SX = np.array([[0, 1], [1, 0]]) / 2
SY = np.array([[0, -1j], [1j, 0]]) / 2
SZ = np.diag([0.5, -0.5])


def z2_spec(n=1, eps=0.0):
    return ModelSpec(Protocol.Z2, n, CouplingTable(n, ()), DisorderField.zero(n), eps, 1.0)


def z3_spec(n=1, eps=0.0):
    return ModelSpec(Protocol.Z3, n, CouplingTable(n, ()), DisorderField.zero(n, 3), eps, 1.0)


def heisenberg_2():
    return (np.kron(SX, SX) + np.kron(SY, SY) + np.kron(SZ, SZ)) + 0.3 * np.kron(SZ, np.eye(2))


# ------------------------------------------------------------------- pulses

def test_pi_pulse_single_spin():
    u = pulse_unitary(z2_spec()).matrix()
    assert np.allclose(u, [[0, -1], [1, 0]])


@pytest.mark.parametrize("eps", [0.0, 0.1, 0.7])
def test_spin_half_pulse_is_global_y_rotation(eps):
    u = pulse_unitary(z2_spec(2, eps)).matrix()
    gen = np.kron(SY, np.eye(2)) + np.kron(np.eye(2), SY)
    assert np.max(np.abs(u - la.expm(-1j * (math.pi + eps) * gen))) < 1e-13


@pytest.mark.parametrize("eps", [0.0, 0.2, 1.1])
def test_z3_site_matrix_entries(eps):
    u = z3_site_unitary(eps)
    c, s = math.cos(eps / 2), math.sin(eps / 2)
    assert u[0, 2] == pytest.approx(-c * c)
    ref = np.array([[-s, 0.5j * math.sin(eps), -c * c],
                    [-1j * c, s * s, 0.5j * math.sin(eps)],
                    [0, -1j * c, -s]])
    assert np.max(np.abs(u - ref)) < 1e-14


def test_z3_cubed_is_diagonal_phase():
    u3 = np.linalg.matrix_power(z3_site_unitary(0.0), 3)
    assert np.allclose(u3, np.diag(np.diag(u3)))
    assert np.allclose(np.abs(np.diag(u3)), 1)


def test_z3_product_pulse_matches_kron():
    u = pulse_unitary(z3_spec(2, 0.3)).matrix()
    s = z3_site_unitary(0.3)
    assert np.max(np.abs(u - np.kron(s, s))) < 1e-14


# -------------------------------------------------------------- propagators

def test_diagonal_hamiltonian_gives_phases():
    spec = model.toy_model_spec(5, 0.0, 0.0, 10.0, 4)
    h, _ = model.build_toy_hamiltonian(spec)
    u = interaction_propagator(h, 0.37).matrix()
    e = h.matrix.diagonal().real
    assert np.max(np.abs(u - np.diag(np.exp(-1j * e * 0.37)))) < 1e-13


@pytest.mark.parametrize("tau", [0.0, 0.4, 3.0, 25.0])
def test_krylov_matches_dense_two_spins(tau):
    h = heisenberg_2()
    ref = la.expm(-1j * h * tau)
    dense = interaction_propagator(sp.csr_matrix(h), tau).matrix()
    kry = interaction_propagator(sp.csr_matrix(h), tau, method="krylov").matrix()
    assert np.max(np.abs(dense - ref)) < 1e-10
    assert np.max(np.abs(kry - ref)) < 1e-10


def test_zero_duration_is_identity():
    h = sp.csr_matrix(heisenberg_2())
    for method in ("dense-spectral", "krylov"):
        assert np.allclose(interaction_propagator(h, 0.0, method).matrix(), np.eye(4))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 30.0))
def test_krylov_on_larger_random_hamiltonian(seed, t):
    spec = model.toy_model_spec(8, 1.0, 0.0, 10.0, seed)
    h = model.build_toy_hamiltonian(spec)[0].matrix
    v = np.random.default_rng(seed).normal(size=256) + 0j
    v /= np.linalg.norm(v)
    ref = la.expm(-1j * t * h.toarray()) @ v
    assert np.max(np.abs(expm_krylov(h, v, t) - ref)) < 1e-9


def test_dense_cap_and_unknown_method():
    h = sp.identity(16, format="csr")
    with pytest.raises(DimensionCapError):
        interaction_propagator(h, 1.0, dense_cap=8)
    with pytest.raises(ValueError):
        interaction_propagator(h, 1.0, method="magic")


def test_spin_one_site_cap():
    spec = z3_spec(9)
    with pytest.raises(DimensionCapError):
        evolve.floquet_propagator(spec)


def test_cycle_propagator_unitary():
    spec = ModelTemplate("Z2", 6, 0.2, period=0.8, disorder_sigma=1.0).realize(3)
    u = evolve.floquet_propagator(spec)
    assert u.unitarity_error() < 1e-10


# ------------------------------------------------------------------- floquet

@settings(max_examples=10, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31))
def test_eps_zero_polarized_flips_exactly(n, seed):
    spec = model.toy_model_spec(n, 1.0, 0.0, 10.0, seed)
    tr = run_floquet(spec, evolve.polarized_state(n), 30)
    assert np.max(np.abs(tr.values - (-1.0) ** np.arange(31))) < 1e-10


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31))
def test_eps_zero_ising_local_spin_flips(n, seed):
    spec = model.toy_model_spec(n, 0.0, 0.0, 10.0, seed)
    psi = random_environment_state(n, seed + 1)
    tr = run_floquet(spec, psi, 30, "localZ(0)")
    assert np.max(np.abs(tr.values - (-1.0) ** np.arange(31) * tr.values[0])) < 1e-10


def test_norm_conservation_and_drift_error():
    spec = model.toy_model_spec(10, 1.0, 0.1, 10.0, 1)
    cyc = evolve.floquet_propagator(spec)
    psi = evolve.polarized_state(10)
    for _ in range(100):
        psi = cyc.apply(psi)
    assert abs(np.linalg.norm(psi) - 1) < 1e-10
    with pytest.raises(NormDriftError):
        run_floquet(spec, 2 * evolve.polarized_state(10), 2, norm_tol=-1.0)


def test_run_floquet_validation():
    spec = model.toy_model_spec(3, 1.0, 0.0, 10.0, 1)
    with pytest.raises(ValueError):
        run_floquet(spec, evolve.polarized_state(3), 0)
    with pytest.raises(ValueError):
        run_floquet(spec, evolve.polarized_state(4), 2)


def test_method_equivalence():
    spec = model.toy_model_spec(10, 1.0, 0.08 * math.pi, 10.0, 7)
    psi = random_environment_state(10, 2)
    a = run_floquet(spec, psi, 50, "globalZ", method="dense-spectral")
    b = run_floquet(spec, psi, 50, "globalZ", method="krylov")
    assert np.max(np.abs(a.values - b.values)) < 1e-8


@pytest.mark.parametrize("protocol", ["ToyModel", "Z2", "Z2Ising_x"])
def test_even_cycle_signs_constant_at_small_eps(protocol):
    eps = 0.02 * math.pi
    if protocol == "ToyModel":
        spec = model.toy_model_spec(8, 1.0, eps, 10.0, 5)
        tr = run_floquet(spec, evolve.polarized_state(8), 20)
    elif protocol == "Z2":
        spec = ModelTemplate("Z2", 6, eps, period=0.5, disorder_sigma=0.3).realize(5)
        tr = run_floquet(spec, evolve.polarized_state(6), 20)
    else:
        spec = ModelTemplate("Z2Ising", 6, eps, period=0.5).realize(5)
        tr = run_floquet(spec, evolve.product_state([1, 1], 6), 20, "globalX")
    _, even = tr.subharmonic(2)
    assert np.all(np.sign(even[:10]) == np.sign(even[0]))
    assert np.all(np.sign(tr.values[1:20:2]) == -np.sign(even[0]))


def test_z3_many_body_period_tripled():
    spec = ModelTemplate("Z3", 4, 0.0, period=0.5, disorder_sigma=0.5).realize(2)
    tr = run_floquet(spec, evolve.polarized_state(4, 3), 9)
    # level 0 -> -1 -> +1 -> 0 under the exact pulse
    assert np.allclose(tr.values, np.tile([1.0, -1.0, 0.0], 4)[:10])


# ---------------------------------------------------------------- observables

def test_observable_normalization():
    n = 3
    up = evolve.polarized_state(n)
    assert Observable("globalZ", n)(up) == pytest.approx(1.0)
    assert Observable("localZ(2)", n)(up) == pytest.approx(1.0)
    plus = evolve.product_state([1, 1], n)
    assert Observable("globalX", n)(plus) == pytest.approx(1.0)
    assert Observable("globalZ", n)(plus) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        Observable("localZ(3)", n)
    with pytest.raises(ValueError):
        Observable("globalY", n)
    with pytest.raises(ValueError):
        Observable("globalX", 2, 3)


def test_global_x_against_dense():
    n = 3
    psi = np.random.default_rng(0).normal(size=8) + 1j * np.random.default_rng(1).normal(size=8)
    psi /= np.linalg.norm(psi)
    x = np.array([[0, 1], [1, 0]])
    tot = sum(np.kron(np.kron(np.eye(2**i), x), np.eye(2 ** (n - i - 1))) for i in range(n)) / n
    assert Observable("globalX", n)(psi) == pytest.approx(np.vdot(psi, tot @ psi).real)


# ------------------------------------------------------------ environment

def test_random_environment_state():
    psi = random_environment_state(6, 3)
    assert abs(np.linalg.norm(psi) - 1) < 1e-12
    assert Observable("localZ(0)", 6)(psi) / 2 == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        random_environment_state(1, 0)


def test_random_environment_second_site_unpolarized():
    obs = Observable("localZ(1)", 5)
    vals = np.array([obs(random_environment_state(5, s)) / 2 for s in range(1000)])
    assert abs(vals.mean()) < 3 * vals.std(ddof=1) / math.sqrt(vals.size)


# ----------------------------------------------------------------- ensembles

def test_ensemble_determinism_and_singleton():
    tpl = ModelTemplate("ToyModel", 6, 0.05 * math.pi, jt=10.0, alpha=1.0)
    a = run_ensemble(tpl, 2, [11, 11], 20, initial="random_environment")
    assert np.array_equal(a[0].values, a[1].values)
    single = run_ensemble(tpl, 1, [11], 20, initial="random_environment")
    assert np.array_equal(single[0].values, a[0].values)
    direct = evolve.run_realization(tpl, 11, 20, initial="random_environment")
    assert np.array_equal(direct.values, a[0].values)
    with pytest.raises(ValueError):
        run_ensemble(tpl, 0, [], 20)
    with pytest.raises(ValueError):
        run_ensemble(tpl, 2, [1], 20)


def test_ensemble_all_period_doubled():
    tpl = ModelTemplate("ToyModel", 6, 0.02 * math.pi, jt=10.0, alpha=1.0)
    traces = run_ensemble(tpl, 30, range(30), 12)
    for tr in traces:
        assert np.all(tr.values[0::2] > 0) and np.all(tr.values[1::2] < 0)


def test_ensemble_workers_match_serial():
    tpl = ModelTemplate("ToyModel", 5, 0.1, jt=10.0, alpha=1.0)
    a = run_ensemble(tpl, 3, [1, 2, 3], 10)
    b = run_ensemble(tpl, 3, [1, 2, 3], 10, workers=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.values, y.values)


def test_trace_roundtrip():
    tr = TimeTrace("Z2", 0.1, 1.0, 5, "globalZ", np.array([1.0, -0.9, 0.8]), {"n": 2})
    back = TimeTrace.from_dict(tr.to_dict())
    assert np.array_equal(back.values, tr.values) and back.meta == tr.meta
    n, v = tr.subharmonic()
    assert list(n) == [0, 2] and list(v) == [1.0, 0.8]
