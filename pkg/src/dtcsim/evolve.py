"""Exact stroboscopic Floquet evolution.

One cycle applies the interaction propagator ``exp(-i H T)`` followed by an
ideal (delta) rotation pulse; the observable is recorded after the pulse.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import model
from .model import ModelSpec, ModelTemplate, Protocol
from .spinops import ManyBodyOperator, site_diagonals

log = logging.getLogger(__name__)

DENSE_CAP = 2**13
MAX_SPIN_ONE_SITES = 8


class EvolutionError(RuntimeError):
    pass


class DimensionCapError(EvolutionError):
    pass


class KrylovConvergenceError(EvolutionError):
    pass


class NormDriftError(EvolutionError):
    pass


# --------------------------------------------------------------------------
# propagators

class Propagator:
    """A unitary map on state vectors."""

    dim: int

    def apply(self, psi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, psi):
        return self.apply(psi)

    def matrix(self) -> np.ndarray:
        return self.apply(np.eye(self.dim, dtype=complex))

    def unitarity_error(self) -> float:
        u = self.matrix()
        return float(np.max(np.abs(u.conj().T @ u - np.eye(self.dim))))


class DenseUnitary(Propagator):
    def __init__(self, u: np.ndarray):
        self.u = np.asarray(u, dtype=complex)
        self.dim = self.u.shape[0]

    def apply(self, psi):
        return self.u @ psi

    def matrix(self):
        return self.u.copy()


class SpectralPropagator(Propagator):
    """``exp(-i H tau)`` from eigendecompositions of the decoupled blocks of H.

    Basis states that H never connects are grouped into blocks; 1x1 blocks are
    kept as a plain phase vector.
    """

    def __init__(self, dim, singles, single_phases, blocks):
        self.dim = dim
        self.singles = singles
        self.single_phases = single_phases
        self.blocks = blocks  # list of (indices, V, phases)

    def apply(self, psi):
        psi = np.asarray(psi, dtype=complex)
        out = np.empty_like(psi)
        out[self.singles] = self.single_phases.reshape((-1,) + (1,) * (psi.ndim - 1)) * psi[self.singles]
        for idx, v, ph in self.blocks:
            coef = v.conj().T @ psi[idx]
            out[idx] = v @ (ph.reshape((-1,) + (1,) * (psi.ndim - 1)) * coef)
        return out


class KrylovPropagator(Propagator):
    def __init__(self, h: sp.spmatrix, tau: float, krylov_dim=30, tol=1e-10, max_steps=10_000):
        self.h = sp.csr_matrix(h)
        self.tau = tau
        self.dim = self.h.shape[0]
        self.krylov_dim = krylov_dim
        self.tol = tol
        self.max_steps = max_steps

    def apply(self, psi):
        psi = np.asarray(psi, dtype=complex)
        if psi.ndim == 2:
            return np.column_stack([self.apply(c) for c in psi.T])
        return expm_krylov(self.h, psi, self.tau, self.krylov_dim, self.tol, self.max_steps)


class ProductPropagator(Propagator):
    """The same single-site unitary applied to every site."""

    def __init__(self, local: np.ndarray, n: int):
        self.local = np.asarray(local, dtype=complex)
        self.n = n
        self.d = self.local.shape[0]
        self.dim = self.d**n

    def apply(self, psi):
        psi = np.asarray(psi, dtype=complex)
        extra = psi.shape[1:]
        t = psi.reshape((self.d,) * self.n + extra)
        for q in range(self.n):
            t = np.moveaxis(np.tensordot(self.local, t, axes=([1], [q])), 0, q)
        return t.reshape(psi.shape)


class ComposedPropagator(Propagator):
    """``second @ first``."""

    def __init__(self, first: Propagator, second: Propagator):
        self.first, self.second = first, second
        self.dim = first.dim

    def apply(self, psi):
        return self.second.apply(self.first.apply(psi))


def expm_krylov(h, v, t, krylov_dim=30, tol=1e-10, max_steps=10_000):
    """``exp(-i h t) v`` by Lanczos with adaptive sub-stepping."""
    v = np.asarray(v, dtype=complex)
    beta0 = np.linalg.norm(v)
    if beta0 == 0 or t == 0:
        return v.copy()
    n = v.size
    m_max = min(krylov_dim, n)
    w = v / beta0
    t_done = 0.0
    dt = t
    steps = 0
    while abs(t - t_done) > 1e-15 * abs(t):
        dt = math.copysign(min(abs(dt), abs(t - t_done)), t)
        basis = np.zeros((m_max + 1, n), dtype=complex)
        alpha = np.zeros(m_max)
        beta = np.zeros(m_max)
        basis[0] = w
        m = m_max
        breakdown = False
        for j in range(m_max):
            u = h @ basis[j]
            if j > 0:
                u = u - beta[j - 1] * basis[j - 1]
            alpha[j] = np.real(np.vdot(basis[j], u))
            u = u - alpha[j] * basis[j]
            # full reorthogonalisation keeps the small basis orthonormal
            u = u - basis[: j + 1].T @ (basis[: j + 1].conj() @ u)
            beta[j] = np.linalg.norm(u)
            if beta[j] < 1e-13:
                m = j + 1
                breakdown = True
                break
            basis[j + 1] = u / beta[j]
        while True:
            evals, evecs = la.eigh_tridiagonal(alpha[:m], beta[: m - 1])
            coef = evecs @ (np.exp(-1j * evals * dt) * evecs[0].conj())
            err = 0.0 if breakdown else abs(beta[m - 1] * coef[m - 1])
            if err <= tol or breakdown:
                break
            dt /= 2
            steps += 1
            if steps > max_steps:
                raise KrylovConvergenceError("Krylov step size underflow")
        w = coef @ basis[:m]
        w /= np.linalg.norm(w)
        t_done += dt
        steps += 1
        if steps > max_steps:
            raise KrylovConvergenceError(f"Krylov propagation needed more than {max_steps} steps")
        if err < tol / 10:
            dt *= 2
    return beta0 * w


def interaction_propagator(
    h: Union[ManyBodyOperator, sp.spmatrix, np.ndarray],
    tau: float,
    method: str = "dense-spectral",
    dense_cap: int = DENSE_CAP,
    krylov_dim: int = 30,
    tol: float = 1e-10,
) -> Propagator:
    """Propagator for ``exp(-i H tau)``."""
    m = h.matrix if isinstance(h, ManyBodyOperator) else h
    m = sp.csr_matrix(m, dtype=complex)
    dim = m.shape[0]
    if method == "krylov":
        return KrylovPropagator(m, tau, krylov_dim, tol)
    if method != "dense-spectral":
        raise ValueError(f"unknown propagation method {method!r}")
    if dim > dense_cap:
        raise DimensionCapError(f"dimension {dim} exceeds dense-spectral cap {dense_cap}; use krylov")
    ncomp, labels = connected_components(abs(m) + abs(m.T), directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    groups = np.split(order, bounds)
    singles = np.array([g[0] for g in groups if g.size == 1], dtype=int)
    diag = m.diagonal()
    single_phases = np.exp(-1j * np.real(diag[singles]) * tau)
    blocks = []
    for g in groups:
        if g.size == 1:
            continue
        sub = m[g][:, g].toarray()
        e, v = la.eigh(sub)
        blocks.append((g, v, np.exp(-1j * e * tau)))
    return SpectralPropagator(dim, singles, single_phases, blocks)


# --------------------------------------------------------------------------
# pulses

def rotation_2level(theta: float, axis: str = "y") -> np.ndarray:
    """``exp(-i theta sigma_axis / 2)`` on a two-level subspace."""
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    if axis == "y":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if axis == "x":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    raise ValueError(axis)


def z3_site_unitary(epsilon: float) -> np.ndarray:
    """Lower (0 <-> -1) then upper (+1 <-> 0) pulse, levels ordered (+1, 0, -1)."""
    r = rotation_2level(math.pi + epsilon, "x")
    lower = np.eye(3, dtype=complex)
    lower[1:, 1:] = r
    upper = np.eye(3, dtype=complex)
    upper[:2, :2] = r
    return upper @ lower


def site_pulse(spec: ModelSpec) -> np.ndarray:
    if spec.local_dim == 3:
        return z3_site_unitary(spec.epsilon)
    return rotation_2level(math.pi + spec.epsilon, "y")


def pulse_unitary(spec: ModelSpec) -> ProductPropagator:
    return ProductPropagator(site_pulse(spec), spec.n)


# --------------------------------------------------------------------------
# states and observables

def product_state(local: Sequence[complex], n: int) -> np.ndarray:
    local = np.asarray(local, dtype=complex)
    psi = np.array([1.0 + 0j])
    for _ in range(n):
        psi = np.kron(psi, local)
    return psi / np.linalg.norm(psi)


def polarized_state(n: int, local_dim: int = 2) -> np.ndarray:
    """All spins up (spin-1/2) or all in level 0 (spin-1)."""
    local = np.zeros(local_dim, dtype=complex)
    local[0 if local_dim == 2 else 1] = 1.0
    return product_state(local, n)


def random_environment_state(n: int, seed: int) -> np.ndarray:
    """|up> (x) |psi_env> with a normalized complex Gaussian environment vector."""
    if n < 2:
        raise ValueError("need at least two sites")
    gen = np.random.default_rng(seed)
    env = gen.normal(size=2 ** (n - 1)) + 1j * gen.normal(size=2 ** (n - 1))
    env /= np.linalg.norm(env)
    return np.concatenate([env, np.zeros_like(env)])


OBSERVABLES = ("globalZ", "globalX", "localZ")


def parse_observable(name: str) -> tuple[str, Optional[int]]:
    """``"globalZ"``, ``"globalX"`` or ``"localZ(k)"`` / ``"localZ:k"``."""
    if name in ("globalZ", "globalX"):
        return name, None
    for sep in ("(", ":"):
        if name.startswith("localZ" + sep):
            return "localZ", int(name[len("localZ") + 1 :].rstrip(")"))
    raise ValueError(f"unknown observable {name!r}")


class Observable:
    """Per-cycle readout normalized so a fully polarized state reads 1.

    Spin-1/2 ``Z`` observables use ``2 S^z``; ``globalX`` uses ``2 S^x``.  For
    spin-1 the readout is the population difference P(0) - P(-1).
    """

    def __init__(self, name: str, n: int, local_dim: int = 2):
        kind, site = parse_observable(name)
        self.name, self.kind, self.site = name, kind, site
        self.n, self.local_dim = n, local_dim
        if site is not None and not 0 <= site < n:
            raise ValueError(f"site {site} out of range")
        zdiag = [1.0, -1.0] if local_dim == 2 else [0.0, 1.0, -1.0]
        if kind == "globalX":
            if local_dim != 2:
                raise ValueError("globalX is only defined for spin-1/2")
            self._x = [np.array([[0, 1], [1, 0]], dtype=complex)]
            self._diag = None
        else:
            cols = site_diagonals(zdiag, n)
            self._diag = cols.mean(axis=1) if kind == "globalZ" else cols[:, site]

    def __call__(self, psi: np.ndarray) -> float:
        if self._diag is not None:
            return float(np.real(np.vdot(psi, self._diag * psi)))
        # <sigma_x> per site via reshaped partial contractions
        t = psi.reshape((2,) * self.n)
        acc = 0.0
        for q in range(self.n):
            flipped = np.flip(t, axis=q)
            acc += np.real(np.vdot(t, flipped))
        return float(acc / self.n)


# --------------------------------------------------------------------------
# traces and runs

@dataclass
class TimeTrace:
    """``values[k]`` is the observable after ``k`` Floquet cycles (k=0 initial)."""

    protocol: str
    epsilon: float
    period: float
    seed: int
    observable: str
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def cycles(self) -> np.ndarray:
        return np.arange(self.values.size)

    def subharmonic(self, order: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        """Every ``order``-th sample with the subharmonic sign removed."""
        m = order or Protocol(self.protocol).order
        n = self.cycles[::m]
        return n, self.values[::m]

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "epsilon": self.epsilon,
            "period": self.period,
            "seed": self.seed,
            "observable": self.observable,
            "values": self.values.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TimeTrace":
        return cls(d["protocol"], float(d["epsilon"]), float(d["period"]), int(d["seed"]),
                   d["observable"], np.asarray(d["values"], dtype=float), dict(d.get("meta", {})))


def _interaction_hamiltonian(spec: ModelSpec) -> ManyBodyOperator:
    if spec.protocol is Protocol.TOY:
        return model.build_toy_hamiltonian(spec)[0]
    return model.build_lab_hamiltonian(spec, "interaction")


def choose_method(dim: int, dense_cap: int = DENSE_CAP) -> str:
    return "dense-spectral" if dim <= dense_cap else "krylov"


def floquet_propagator(spec: ModelSpec, method: str = "auto", dense_cap: int = DENSE_CAP,
                       tol: float = 1e-10) -> ComposedPropagator:
    if spec.local_dim == 3 and spec.n > MAX_SPIN_ONE_SITES:
        raise DimensionCapError(f"spin-1 evolution is limited to n <= {MAX_SPIN_ONE_SITES}")
    h = _interaction_hamiltonian(spec)
    if method == "auto":
        method = choose_method(h.dim, dense_cap)
    u_int = interaction_propagator(h, spec.period, method, dense_cap=dense_cap, tol=tol)
    return ComposedPropagator(u_int, pulse_unitary(spec))


def run_floquet(
    spec: ModelSpec,
    initial_state: np.ndarray,
    n_cycles: int,
    observable: str = "globalZ",
    method: str = "auto",
    dense_cap: int = DENSE_CAP,
    norm_tol: float = 1e-8,
) -> TimeTrace:
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    psi = np.asarray(initial_state, dtype=complex)
    if psi.shape != (spec.local_dim**spec.n,):
        raise ValueError(f"initial state has shape {psi.shape}, expected ({spec.local_dim ** spec.n},)")
    cycle = floquet_propagator(spec, method, dense_cap)
    obs = Observable(observable, spec.n, spec.local_dim)
    norm0 = np.linalg.norm(psi)
    values = np.empty(n_cycles + 1)
    values[0] = obs(psi)
    for k in range(1, n_cycles + 1):
        psi = cycle.apply(psi)
        drift = abs(np.linalg.norm(psi) - norm0)
        if drift > norm_tol:
            raise NormDriftError(f"state norm drifted by {drift:.2e} at cycle {k}")
        values[k] = obs(psi)
    return TimeTrace(spec.protocol.value, spec.epsilon, spec.period, spec.seed, observable, values,
                     {"n": spec.n, "alpha": spec.alpha})


INITIAL_STATES = ("polarized", "random_environment", "plus_x")


def initial_state(kind: str, spec: ModelSpec, seed: int) -> np.ndarray:
    if kind == "polarized":
        return polarized_state(spec.n, spec.local_dim)
    if kind == "random_environment":
        return random_environment_state(spec.n, seed)
    if kind == "plus_x":
        return product_state([1, 1], spec.n)
    raise ValueError(f"unknown initial state {kind!r}")


def _default_observable(protocol: Protocol) -> str:
    return "globalX" if protocol is Protocol.Z2_ISING else "globalZ"


def run_realization(template: ModelTemplate, seed: int, n_cycles: int, observable: Optional[str] = None,
                    initial: str = "polarized", method: str = "auto") -> TimeTrace:
    """One disorder realization: couplings, disorder and the initial state all follow from ``seed``."""
    from .seeding import derive_seed

    spec = template.realize(seed)
    psi0 = initial_state(initial, spec, derive_seed(seed, 2))
    obs = observable or _default_observable(spec.protocol)
    trace = run_floquet(spec, psi0, n_cycles, obs, method)
    trace.meta.update({"initial_state": initial, "template_jt": template.jt})
    return trace


def _run_task(args):
    return run_realization(*args)


def run_ensemble(
    template: ModelTemplate,
    n_realizations: int,
    seeds: Sequence[int],
    n_cycles: int,
    observable: Optional[str] = None,
    initial: str = "polarized",
    workers: int = 1,
    method: str = "auto",
) -> list[TimeTrace]:
    """Independent realizations, ordered as ``seeds``."""
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")
    seeds = list(seeds)
    if len(seeds) != n_realizations:
        raise ValueError(f"got {len(seeds)} seeds for {n_realizations} realizations")
    tasks = [(template, s, n_cycles, observable, initial, method) for s in seeds]
    if workers <= 1 or n_realizations == 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or 1)) as pool:
        return list(pool.map(_run_task, tasks))
