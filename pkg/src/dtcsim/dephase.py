"""Markovian dephasing model of the long-period regime.

Each Floquet cycle is a single-spin rotation followed by complete dephasing
in the polarization basis, so only populations survive and the dynamics
reduces to a doubly stochastic rate matrix ``R = |U|^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .evolve import rotation_2level, z3_site_unitary
from .model import Protocol


class DephaseError(ValueError):
    pass


def _protocol(protocol) -> Protocol:
    protocol = Protocol(protocol)
    if protocol not in (Protocol.Z2, Protocol.Z3):
        raise DephaseError(f"dephasing model is defined for Z2 and Z3, not {protocol.value}")
    return protocol


def rotation_matrix(protocol, epsilon: float) -> np.ndarray:
    """One-cycle single-spin rotation with pulse error ``epsilon``.

    Z2 is an x rotation by ``pi + epsilon``; Z3 applies the lower (0, -1)
    pulse and then the upper (+1, 0) pulse, levels ordered (+1, 0, -1).
    """
    protocol = _protocol(protocol)
    if not abs(epsilon) < math.pi:
        raise DephaseError("|epsilon| must be below pi")
    if protocol is Protocol.Z2:
        return rotation_2level(math.pi + epsilon, "x")
    return z3_site_unitary(epsilon)


def validate_density_matrix(rho, tol: float = 1e-12) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DephaseError("density matrix must be square")
    if np.abs(rho - rho.conj().T).max() > tol:
        raise DephaseError("density matrix must be Hermitian")
    if abs(np.trace(rho) - 1) > 1e-10:
        raise DephaseError("density matrix must have unit trace")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise DephaseError("density matrix must be positive semidefinite")
    return rho


def dephasing_channel(rho) -> np.ndarray:
    """Delete all coherences in the computational basis."""
    rho = validate_density_matrix(rho)
    return np.diag(np.diag(rho))


def rate_matrix(protocol, epsilon: float) -> np.ndarray:
    u = rotation_matrix(protocol, epsilon)
    return np.abs(u) ** 2


def default_populations(protocol) -> np.ndarray:
    """Fully polarized start: spin up (Z2) or level 0 (Z3)."""
    protocol = _protocol(protocol)
    if protocol is Protocol.Z2:
        return np.array([1.0, 0.0])
    return np.array([0.0, 1.0, 0.0])


def imbalance_weights(protocol) -> np.ndarray:
    """Observable weights: p_up - p_down, or p_0 - p_-1 for spin-1."""
    protocol = _protocol(protocol)
    if protocol is Protocol.Z2:
        return np.array([1.0, -1.0])
    return np.array([0.0, 1.0, -1.0])


def polarization_eigenvalue(protocol, epsilon: float, p0: Optional[Sequence[float]] = None) -> complex:
    """Eigenvalue of ``R^m`` whose eigenvector carries the initial imbalance.

    The stationary (uniform) mode is discarded; among the remaining modes the
    one with the largest weight in the expansion of ``p0 - uniform`` wins.
    """
    protocol = _protocol(protocol)
    if not 0 < abs(epsilon) < math.pi / 2:
        raise DephaseError("need 0 < |epsilon| < pi/2 for an unambiguous decay mode")
    m = protocol.order
    rm = np.linalg.matrix_power(rate_matrix(protocol, epsilon), m)
    d = rm.shape[0]
    p0 = default_populations(protocol) if p0 is None else np.asarray(p0, dtype=float)
    vals, vecs = np.linalg.eig(rm)
    stationary = int(np.argmin(np.abs(vals - 1)))
    coeffs = np.linalg.solve(vecs, p0 - np.full(d, 1 / d))
    weights = np.abs(coeffs) * np.linalg.norm(vecs, axis=0)
    weights[stationary] = -1
    return complex(vals[int(np.argmax(weights))])


def subharmonic_decay_rate(protocol, epsilon: float, p0: Optional[Sequence[float]] = None) -> float:
    """Decay rate per cycle, ``exp(-m gamma) = |lambda|``."""
    protocol = _protocol(protocol)
    lam = polarization_eigenvalue(protocol, epsilon, p0)
    return float(-math.log(abs(lam)) / protocol.order)


@dataclass
class PopulationTrace:
    protocol: Protocol
    epsilon: float
    populations: np.ndarray  # (n_cycles + 1, d)

    @property
    def imbalance(self) -> np.ndarray:
        return self.populations @ imbalance_weights(self.protocol)

    @property
    def cycles(self) -> np.ndarray:
        return np.arange(self.populations.shape[0])


def iterate_population_dynamics(protocol, epsilon: float, p0=None, n_cycles: int = 100) -> PopulationTrace:
    protocol = _protocol(protocol)
    p = default_populations(protocol) if p0 is None else np.asarray(p0, dtype=float)
    r = rate_matrix(protocol, epsilon)
    if p.shape != (r.shape[0],) or np.any(p < -1e-15) or abs(p.sum() - 1) > 1e-12:
        raise DephaseError("p0 must be a probability vector of matching dimension")
    out = np.empty((n_cycles + 1, p.size))
    out[0] = p
    for n in range(n_cycles):
        p = r @ p
        out[n + 1] = p
    return PopulationTrace(protocol, float(epsilon), out)


def rate_table(protocol, epsilons: Sequence[float]) -> list[tuple[float, float, float]]:
    """Rows ``(epsilon, gamma, epsilon^2 / 2)``."""
    eps = list(epsilons)
    if not eps:
        raise DephaseError("epsilon grid is empty")
    return [(float(e), subharmonic_decay_rate(protocol, e), 0.5 * float(e) ** 2) for e in eps]
