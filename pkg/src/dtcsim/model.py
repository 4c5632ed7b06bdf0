"""Spin models and drive protocols.

Covers the three experimental effective Hamiltonians (lab frame and their
toggling-frame averages), the all-to-all random toy model, dipolar coupling
sampling, and the single-particle coefficient tables used by the mean-field
solver.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import spinops
from .seeding import derive_seed
from .spinops import ManyBodyOperator, embed, site_diagonals, transition, two_site_term


class Protocol(str, enum.Enum):
    Z2_ISING = "Z2Ising"
    Z2 = "Z2"
    Z3 = "Z3"
    TOY = "ToyModel"

    @property
    def local_dim(self) -> int:
        return 3 if self is Protocol.Z3 else 2

    @property
    def order(self) -> int:
        """Subharmonic order m of the period-m response."""
        return 3 if self is Protocol.Z3 else 2


LAB_PROTOCOLS = (Protocol.Z2_ISING, Protocol.Z2, Protocol.Z3)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class CouplingTable:
    """Pair couplings ``(i, j, strength)`` with ``i < j``."""

    n: int
    entries: tuple[tuple[int, int, float], ...]
    positions: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        seen = set()
        clean = []
        for i, j, s in self.entries:
            i, j, s = int(i), int(j), float(s)
            if not (0 <= i < j < self.n):
                raise ModelError(f"coupling ({i}, {j}) needs 0 <= i < j < {self.n}")
            if (i, j) in seen:
                raise ModelError(f"duplicate coupling ({i}, {j})")
            if not math.isfinite(s):
                raise ModelError(f"coupling ({i}, {j}) is not finite")
            seen.add((i, j))
            clean.append((i, j, s))
        object.__setattr__(self, "entries", tuple(clean))

    @classmethod
    def from_matrix(cls, jmat: np.ndarray, positions=None) -> "CouplingTable":
        jmat = np.asarray(jmat, dtype=float)
        n = jmat.shape[0]
        return cls(n, tuple((i, j, jmat[i, j]) for i, j in combinations(range(n), 2)), positions)

    def matrix(self) -> np.ndarray:
        """Symmetric n x n coupling matrix with zero diagonal."""
        m = np.zeros((self.n, self.n))
        for i, j, s in self.entries:
            m[i, j] = m[j, i] = s
        return m

    def mean_field(self) -> np.ndarray:
        """Per-site mean-field sum ``sum_j J_ij``."""
        return self.matrix().sum(axis=1)

    def scaled(self, c: float) -> "CouplingTable":
        return CouplingTable(self.n, tuple((i, j, c * s) for i, j, s in self.entries), self.positions)

    def to_list(self) -> list:
        return [[i, j, s] for i, j, s in self.entries]


@dataclass(frozen=True)
class DisorderField:
    """On-site detunings.  Shape ``(n,)`` for spin-1/2, ``(n, 2)`` for spin-1
    where column 0 is the lower (0 <-> -1) and column 1 the upper (0 <-> +1)
    transition detuning."""

    values: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zero(cls, n: int, local_dim: int = 2) -> "DisorderField":
        return cls(np.zeros((n,) if local_dim == 2 else (n, 2)), 0.0)

    @classmethod
    def gaussian(cls, n: int, sigma: float, seed: int, local_dim: int = 2) -> "DisorderField":
        # Upper and lower spin-1 detunings are drawn independently.
        gen = np.random.default_rng(seed)
        shape = (n,) if local_dim == 2 else (n, 2)
        return cls(gen.normal(0.0, sigma, size=shape), float(sigma))


@dataclass(frozen=True)
class ModelSpec:
    protocol: Protocol
    n: int
    couplings: CouplingTable
    disorder: DisorderField
    epsilon: float
    period: float
    alpha: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if self.n < 1:
            raise ModelError("n must be >= 1")
        if self.couplings.n != self.n:
            raise ModelError(f"coupling table is for {self.couplings.n} sites, spec has {self.n}")
        if self.disorder.n != self.n:
            raise ModelError(f"disorder field has {self.disorder.n} sites, spec has {self.n}")
        expected = (self.n,) if self.local_dim == 2 else (self.n, 2)
        if self.disorder.values.shape != expected:
            raise ModelError(f"disorder shape {self.disorder.values.shape} != {expected}")
        if not -math.pi < self.epsilon < math.pi:
            raise ModelError(f"epsilon must lie in (-pi, pi), got {self.epsilon}")
        if not self.period > 0:
            raise ModelError(f"period must be positive, got {self.period}")
        if self.protocol is not Protocol.TOY and self.alpha != 0.0:
            raise ModelError("alpha is only meaningful for the toy model")

    @property
    def local_dim(self) -> int:
        return self.protocol.local_dim

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol.value,
            "n": self.n,
            "couplings": self.couplings.to_list(),
            "disorder": self.disorder.values.tolist(),
            "disorder_sigma": self.disorder.sigma,
            "epsilon": self.epsilon,
            "period": self.period,
            "alpha": self.alpha,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        n = int(d["n"])
        return cls(
            protocol=Protocol(d["protocol"]),
            n=n,
            couplings=CouplingTable(n, tuple(tuple(e) for e in d.get("couplings", ()))),
            disorder=DisorderField(np.asarray(d["disorder"], dtype=float), float(d.get("disorder_sigma", 0.0))),
            epsilon=float(d["epsilon"]),
            period=float(d["period"]),
            alpha=float(d.get("alpha", 0.0)),
            seed=int(d.get("seed", 0)),
        )


# --------------------------------------------------------------------------
# toy model

def sample_toy_couplings(n: int, seed: int) -> CouplingTable:
    """Raw couplings J_ij ~ U[-1, 1] for every pair i < j."""
    gen = np.random.default_rng(seed)
    pairs = list(combinations(range(n), 2))
    vals = gen.uniform(-1.0, 1.0, size=len(pairs))
    return CouplingTable(n, tuple((i, j, v) for (i, j), v in zip(pairs, vals)))


def toy_coupling_scale(couplings: CouplingTable) -> float:
    """J = max |J_ij| / sqrt(N)."""
    if not couplings.entries:
        return 0.0
    return max(abs(s) for _, _, s in couplings.entries) / math.sqrt(couplings.n)


def toy_model_spec(n: int, alpha: float, epsilon: float, jt: float, seed: int) -> ModelSpec:
    """Toy-model spec whose period is fixed through ``J T = jt``."""
    couplings = sample_toy_couplings(n, seed)
    j = toy_coupling_scale(couplings)
    return ModelSpec(Protocol.TOY, n, couplings, DisorderField.zero(n), epsilon, jt / j, alpha, seed)


def _bit_masks(n: int) -> np.ndarray:
    return 1 << (n - 1 - np.arange(n))


def _xxz_pairs(n: int, couplings: CouplingTable, jxy: float, jzz: float) -> sp.csr_matrix:
    """sum_{i<j} c_ij [jxy (SxSx + SySy) + jzz SzSz] assembled directly on bits."""
    dim = 2**n
    idx = np.arange(dim)
    sz = site_diagonals([0.5, -0.5], n)
    diag = np.zeros(dim)
    rows, cols, vals = [], [], []
    masks = _bit_masks(n)
    for i, j, c in couplings.entries:
        if jzz:
            diag += jzz * c * sz[:, i] * sz[:, j]
        if jxy:
            flip = sz[:, i] != sz[:, j]
            src = idx[flip]
            rows.append(src ^ (masks[i] | masks[j]))
            cols.append(src)
            vals.append(np.full(src.size, 0.5 * jxy * c))
    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    return sp.csr_matrix(
        (np.concatenate(vals).astype(complex), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    )


def build_toy_hamiltonian(spec: ModelSpec) -> tuple[ManyBodyOperator, float]:
    """Return ``(H_int, J)`` for the all-to-all toy model.

    ``H_int = sum_{i<j} J_ij/sqrt(N) [alpha (SxSx + SySy) - SzSz]`` and
    ``J = max |J_ij| / sqrt(N)``.
    """
    if spec.protocol is not Protocol.TOY:
        raise ModelError(f"build_toy_hamiltonian needs the toy model, got {spec.protocol.value}")
    scaled = spec.couplings.scaled(1.0 / math.sqrt(spec.n))
    m = _xxz_pairs(spec.n, scaled, spec.alpha, -1.0)
    m.eliminate_zeros()
    return ManyBodyOperator(spec.n, 2, m), toy_coupling_scale(spec.couplings)


# --------------------------------------------------------------------------
# experimental protocols

def _spin_half():
    sx, sy, sz, _, _ = spinops.spin_half_ops()
    return sx, sy, sz


def _disorder_terms(spec: ModelSpec) -> ManyBodyOperator:
    n = spec.n
    if spec.local_dim == 2:
        diag = site_diagonals([0.5, -0.5], n) @ spec.disorder.values
    else:
        # columns: lower (-1 level), upper (+1 level)
        lower = site_diagonals([0, 0, 1], n) @ spec.disorder.values[:, 0]
        upper = site_diagonals([1, 0, 0], n) @ spec.disorder.values[:, 1]
        diag = lower + upper
    return ManyBodyOperator(n, spec.local_dim, sp.diags(diag.astype(complex), format="csr"))


def _z3_lab_pair(i: int, j: int, n: int) -> ManyBodyOperator:
    flip = (
        two_site_term(transition(+1, 0), i, transition(0, +1), j, n)
        + two_site_term(transition(-1, 0), i, transition(0, -1), j, n)
    )
    flip = flip + flip.H
    zi = transition(+1, +1) - transition(-1, -1)
    return two_site_term(zi, i, zi, j, n) - 0.5 * flip


def _z3_average_pair(i: int, j: int, n: int) -> ManyBodyOperator:
    acc = ManyBodyOperator.zeros(n, 3)
    for a in spinops.SPIN_ONE_LEVELS:
        for b in spinops.SPIN_ONE_LEVELS:
            # a = b Ising; a = b +- 1 (mod 3) spin exchange -- every a != b pair
            weight = 1.0 if a == b else -1.0 / 3.0
            acc = acc + weight * two_site_term(transition(a, b), i, transition(b, a), j, n)
    return acc


def _z3_field_op() -> spinops.SpinOperator:
    r = transition(+1, 0) + transition(-1, 0) + 1j * transition(+1, -1)
    return r + r.H


def _interaction_terms(spec: ModelSpec, average: bool) -> ManyBodyOperator:
    n = spec.n
    acc = ManyBodyOperator.zeros(n, spec.local_dim)
    if spec.protocol is Protocol.Z2_ISING:
        return ManyBodyOperator(n, 2, _xxz_pairs_x(n, spec.couplings))
    if spec.protocol is Protocol.Z2:
        return ManyBodyOperator(n, 2, _xxz_pairs(n, spec.couplings, 1.0, -1.0))
    pair = _z3_average_pair if average else _z3_lab_pair
    for i, j, c in spec.couplings.entries:
        if c:
            acc = acc + c * pair(i, j, n)
    return acc


def _xxz_pairs_x(n: int, couplings: CouplingTable) -> sp.csr_matrix:
    sx, _, _ = _spin_half()
    acc = sp.csr_matrix((2**n, 2**n), dtype=complex)
    for i, j, c in couplings.entries:
        if c:
            acc = acc + c * two_site_term(sx, i, sx, j, n).matrix
    return acc


def _require_lab(spec: ModelSpec, what: str):
    if spec.protocol not in LAB_PROTOCOLS:
        raise ModelError(f"{what} is defined for {[p.value for p in LAB_PROTOCOLS]}, got {spec.protocol.value}")


def build_lab_hamiltonian(spec: ModelSpec, phase: str = "interaction") -> ManyBodyOperator:
    """Lab-frame generator for one phase of the Floquet cycle.

    ``phase="interaction"`` gives the interaction Hamiltonian including on-site
    disorder.  Pulse phases return the integrated generator ``G`` with
    ``P = exp(-i G)``: ``"pulse"`` for the spin-1/2 protocols and
    ``"pulse_lower"`` / ``"pulse_upper"`` for the two spin-1 transitions.
    """
    _require_lab(spec, "build_lab_hamiltonian")
    theta = math.pi + spec.epsilon
    n = spec.n
    if phase == "interaction":
        return _interaction_terms(spec, average=False) + _disorder_terms(spec)
    if phase == "pulse" and spec.local_dim == 2:
        _, sy, _ = _spin_half()
        return theta * spinops.total(sy, n)
    if phase in ("pulse_lower", "pulse_upper") and spec.local_dim == 3:
        level = -1 if phase == "pulse_lower" else +1
        gen = transition(level, 0) + transition(0, level)
        return (theta / 2) * spinops.total(gen, n)
    raise ModelError(f"phase {phase!r} is not supported for protocol {spec.protocol.value}")


def build_average_hamiltonian(spec: ModelSpec) -> ManyBodyOperator:
    """Leading-order toggling-frame average Hamiltonian ``D``."""
    if spec.protocol is Protocol.TOY:
        raise ModelError("the toy model has no separate average Hamiltonian")
    _require_lab(spec, "build_average_hamiltonian")
    n = spec.n
    inter = _interaction_terms(spec, average=True)
    if spec.local_dim == 2:
        _, sy, _ = _spin_half()
        return inter + (spec.epsilon / spec.period) * spinops.total(sy, n)
    return inter + (spec.epsilon / (3 * spec.period)) * spinops.total(_z3_field_op(), n)


# --------------------------------------------------------------------------
# dipolar couplings

def dipolar_coupling(r_vec: Sequence[float], j0: float = 1.0, axis: Sequence[float] = (0, 0, 1)) -> float:
    """Secular dipolar coupling ``j0 (1 - 3 cos^2 theta) / r^3``."""
    r_vec = np.asarray(r_vec, dtype=float)
    axis = np.asarray(axis, dtype=float)
    r = np.linalg.norm(r_vec)
    cos = r_vec @ axis / (r * np.linalg.norm(axis))
    return j0 * (1 - 3 * cos**2) / r**3


def sample_dipolar_couplings(
    n: int,
    density: float,
    seed: int,
    j0: float = 1.0,
    axis: Sequence[float] = (0, 0, 1),
    exclusion_radius: Optional[float] = None,
    max_tries: int = 1000,
) -> CouplingTable:
    """Place ``n`` spins uniformly in an open cube at number ``density``.

    Configurations with a pair closer than ``exclusion_radius`` (default: 5%
    of the mean spacing) are redrawn.  Positions are kept on the table.
    """
    if n < 2:
        raise ModelError("need at least two spins")
    if not density > 0:
        raise ModelError("density must be positive")
    side = (n / density) ** (1 / 3)
    if exclusion_radius is None:
        exclusion_radius = 0.05 * density ** (-1 / 3)
    gen = np.random.default_rng(seed)
    axis = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    iu = np.triu_indices(n, 1)
    for _ in range(max_tries):
        pos = gen.uniform(0.0, side, size=(n, 3))
        d = pos[:, None, :] - pos[None, :, :]
        r = np.linalg.norm(d, axis=-1)
        if r[iu].min() < exclusion_radius:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            cos = (d @ axis) / r
            jmat = j0 * (1 - 3 * cos**2) / r**3
        np.fill_diagonal(jmat, 0.0)
        return CouplingTable.from_matrix(jmat, positions=pos)
    raise ModelError(f"could not place {n} spins outside exclusion radius in {max_tries} tries")


# --------------------------------------------------------------------------
# ensemble templates

@dataclass(frozen=True)
class ModelTemplate:
    """Recipe from which per-realization ``ModelSpec``s are drawn.

    For the toy model the period follows from ``jt`` and the realization's
    coupling scale; lab protocols use ``period`` directly with dipolar
    couplings at ``density`` and Gaussian disorder of width ``disorder_sigma``.
    """

    protocol: Protocol
    n: int
    epsilon: float
    jt: Optional[float] = None
    period: Optional[float] = None
    alpha: float = 0.0
    density: float = 1.0
    j0: float = 1.0
    disorder_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if self.protocol is Protocol.TOY and self.jt is None:
            raise ModelError("toy-model templates need jt")
        if self.protocol is not Protocol.TOY and self.period is None:
            raise ModelError("lab-protocol templates need period")

    def realize(self, seed: int) -> ModelSpec:
        if self.protocol is Protocol.TOY:
            return toy_model_spec(self.n, self.alpha, self.epsilon, self.jt, seed)
        couplings = sample_dipolar_couplings(self.n, self.density, derive_seed(seed, 0), self.j0)
        disorder = DisorderField.gaussian(
            self.n, self.disorder_sigma, derive_seed(seed, 1), self.protocol.local_dim
        )
        return ModelSpec(self.protocol, self.n, couplings, disorder, self.epsilon, self.period, 0.0, seed)


# --------------------------------------------------------------------------
# mean-field coefficient tables

@dataclass(frozen=True)
class MeanFieldSpec:
    """Single-particle problem ``H_MF = sum_mu (J_MF sum_nu C_mu_nu <O_nu> + h_mu) O_mu``."""

    protocol: Protocol
    C: np.ndarray
    h: np.ndarray
    jmf: float

    def __post_init__(self):
        c = np.array(self.C, dtype=float)
        h = np.array(self.h, dtype=float)
        if c.ndim == 1:
            c = np.diag(c)
        if c.shape != (h.size, h.size) or h.size not in (3, 8):
            raise ModelError(f"inconsistent mean-field dimensions C{c.shape}, h{h.shape}")
        if np.any(c != np.diag(np.diag(c))):
            raise ModelError("C must be diagonal")
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "protocol", Protocol(self.protocol))

    @property
    def basis_dim(self) -> int:
        return self.h.size

    def with_field(self, field_strength: float) -> "MeanFieldSpec":
        """Same spec with ``epsilon / T`` replaced by ``field_strength``."""
        return meanfield_spec(self.protocol, field_strength, 1.0, self.jmf)


def meanfield_spec(protocol, epsilon: float, period: float = 1.0, jmf: float = 1.0) -> MeanFieldSpec:
    protocol = Protocol(protocol)
    e = epsilon / period
    if protocol is Protocol.Z2_ISING:
        # transverse field along x so that the ordered branch tilts along rho_x
        return MeanFieldSpec(protocol, np.diag([0.0, 0.0, 1.0]), np.array([e, 0.0, 0.0]), jmf)
    if protocol is Protocol.Z2:
        return MeanFieldSpec(protocol, np.diag([-1.0, -1.0, 1.0]), np.array([0.0, e, 0.0]), jmf)
    if protocol is Protocol.Z3:
        c = np.diag([-1 / 6] * 6 + [0.5, 0.5])
        h = (e / 3) * np.array([1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0])
        return MeanFieldSpec(protocol, c, h, jmf)
    raise ModelError("the toy model has no mean-field description")
