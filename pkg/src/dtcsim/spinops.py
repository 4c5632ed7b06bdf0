"""Single-site spin operators and their embedding into many-body spaces.

Many-body basis states are indexed in base ``local_dim`` with site 0 as the
most significant digit.  Spin-1/2 states are ordered (up, down); spin-1
states are ordered (+1, 0, -1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

SPIN_ONE_LEVELS = (+1, 0, -1)


@dataclass(frozen=True)
class SpinOperator:
    """A dense single-site operator."""

    matrix: np.ndarray
    label: str = ""
    dim: int = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] not in (2, 3):
            raise ValueError(f"single-site operator must be 2x2 or 3x3, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dim", m.shape[0])

    def is_hermitian(self, tol: float = 1e-14) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T)) <= tol)

    def __matmul__(self, other: "SpinOperator") -> "SpinOperator":
        return SpinOperator(self.matrix @ other.matrix, f"{self.label}{other.label}")

    def __add__(self, other: "SpinOperator") -> "SpinOperator":
        return SpinOperator(self.matrix + other.matrix, f"({self.label}+{other.label})")

    def __sub__(self, other: "SpinOperator") -> "SpinOperator":
        return SpinOperator(self.matrix - other.matrix, f"({self.label}-{other.label})")

    def __mul__(self, c) -> "SpinOperator":
        return SpinOperator(c * self.matrix, self.label)

    __rmul__ = __mul__

    @property
    def H(self) -> "SpinOperator":
        return SpinOperator(self.matrix.conj().T, f"{self.label}^dag")


def spin_half_ops() -> list[SpinOperator]:
    """Return ``[Sx, Sy, Sz, S+, S-]`` for a spin-1/2 in the (up, down) basis."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex) / 2
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex) / 2
    sz = np.array([[1, 0], [0, -1]], dtype=complex) / 2
    return [
        SpinOperator(sx, "Sx"),
        SpinOperator(sy, "Sy"),
        SpinOperator(sz, "Sz"),
        SpinOperator(sx + 1j * sy, "S+"),
        SpinOperator(sx - 1j * sy, "S-"),
    ]


def spin_one_index(level: int) -> int:
    """Matrix index of the spin-1 level ``m`` in {+1, 0, -1}."""
    try:
        return SPIN_ONE_LEVELS.index(level)
    except ValueError:
        raise ValueError(f"spin-1 level must be one of {SPIN_ONE_LEVELS}, got {level!r}") from None


def transition(a: int, b: int) -> SpinOperator:
    """The spin-1 transition operator |a><b| for levels a, b in {+1, 0, -1}."""
    m = np.zeros((3, 3), dtype=complex)
    m[spin_one_index(a), spin_one_index(b)] = 1.0
    return SpinOperator(m, f"sigma[{a:+d},{b:+d}]")


@dataclass(frozen=True)
class GellMannBasis:
    """Eight trace-orthonormal su(3) generators, tr[l_mu l_nu] = 2 delta_mu_nu.

    Levels are ordered (+1, 0, -1) = indices (0, 1, 2).  The six off-diagonal
    generators come first, symmetric ones for the pairs (+1,0), (0,-1), (+1,-1)
    and then the antisymmetric ones for the same pairs; the two diagonal
    generators (population imbalances) are last.
    """

    matrices: tuple[np.ndarray, ...]

    def __len__(self):
        return len(self.matrices)

    def __getitem__(self, mu: int) -> np.ndarray:
        return self.matrices[mu]

    def coefficients(self, op: np.ndarray) -> np.ndarray:
        """Expansion coefficients c_mu = tr[l_mu op] / 2 (traceless part only)."""
        op = np.asarray(op)
        return np.array([np.trace(lam @ op) / 2 for lam in self.matrices])

    def expand(self, coeffs: Sequence[complex]) -> np.ndarray:
        return np.tensordot(np.asarray(coeffs), np.array(self.matrices), axes=1)


_GM_PAIRS = ((0, 1), (1, 2), (0, 2))


def gell_mann_basis() -> GellMannBasis:
    mats = []
    for a, b in _GM_PAIRS:
        m = np.zeros((3, 3), dtype=complex)
        m[a, b] = m[b, a] = 1
        mats.append(m)
    for a, b in _GM_PAIRS:
        m = np.zeros((3, 3), dtype=complex)
        m[a, b] = -1j
        m[b, a] = 1j
        mats.append(m)
    mats.append(np.diag([1, -1, 0]).astype(complex))
    mats.append(np.diag([1, 1, -2]).astype(complex) / np.sqrt(3))
    for m in mats:
        m.setflags(write=False)
    return GellMannBasis(tuple(mats))


@dataclass
class ManyBodyOperator:
    """Sparse operator on ``local_dim ** n_sites`` dimensional Hilbert space."""

    n_sites: int
    local_dim: int
    matrix: sp.csr_matrix

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix, dtype=complex)
        d = self.local_dim**self.n_sites
        if self.matrix.shape != (d, d):
            raise ValueError(f"matrix shape {self.matrix.shape} does not match {d}x{d}")

    @classmethod
    def zeros(cls, n_sites: int, local_dim: int) -> "ManyBodyOperator":
        d = local_dim**n_sites
        return cls(n_sites, local_dim, sp.csr_matrix((d, d), dtype=complex))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        diff = self.matrix - self.matrix.getH()
        return diff.nnz == 0 or bool(np.max(np.abs(diff.data)) <= tol)

    def _check(self, other: "ManyBodyOperator"):
        if (self.n_sites, self.local_dim) != (other.n_sites, other.local_dim):
            raise ValueError("operators act on different Hilbert spaces")

    def __add__(self, other):
        self._check(other)
        return ManyBodyOperator(self.n_sites, self.local_dim, self.matrix + other.matrix)

    def __sub__(self, other):
        self._check(other)
        return ManyBodyOperator(self.n_sites, self.local_dim, self.matrix - other.matrix)

    def __neg__(self):
        return ManyBodyOperator(self.n_sites, self.local_dim, -self.matrix)

    def __mul__(self, c):
        return ManyBodyOperator(self.n_sites, self.local_dim, c * self.matrix)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, ManyBodyOperator):
            self._check(other)
            return ManyBodyOperator(self.n_sites, self.local_dim, self.matrix @ other.matrix)
        return self.matrix @ other

    @property
    def H(self) -> "ManyBodyOperator":
        return ManyBodyOperator(self.n_sites, self.local_dim, self.matrix.getH())


def embed(op: SpinOperator, site: int, n: int) -> ManyBodyOperator:
    """Return I^{(x) site} (x) op (x) I^{(x) n-site-1} as a sparse operator."""
    if not 0 <= site < n:
        raise IndexError(f"site {site} out of range for {n} sites")
    d = op.dim
    left = sp.identity(d**site, dtype=complex, format="csr")
    right = sp.identity(d ** (n - site - 1), dtype=complex, format="csr")
    m = sp.kron(sp.kron(left, sp.csr_matrix(op.matrix)), right, format="csr")
    m.eliminate_zeros()
    return ManyBodyOperator(n, d, m)


def two_site_term(
    op_a: SpinOperator, site_a: int, op_b: SpinOperator, site_b: int, n: int
) -> ManyBodyOperator:
    """Product embed(op_a, site_a) @ embed(op_b, site_b) for distinct sites."""
    if site_a == site_b:
        raise ValueError(f"two_site_term needs distinct sites, got {site_a} twice")
    if op_a.dim != op_b.dim:
        raise ValueError("operators have different local dimensions")
    return embed(op_a, site_a, n) @ embed(op_b, site_b, n)


def total(op: SpinOperator, n: int) -> ManyBodyOperator:
    """Sum over sites of the embedded single-site operator."""
    acc = ManyBodyOperator.zeros(n, op.dim)
    for i in range(n):
        acc = acc + embed(op, i, n)
    return acc


def site_diagonals(local_diag: Sequence[float], n: int) -> np.ndarray:
    """Values of a diagonal single-site operator on every site, shape (d**n, n).

    Column ``i`` holds the diagonal of ``embed(diag(local_diag), i, n)``.
    """
    local_diag = np.asarray(local_diag)
    d = len(local_diag)
    idx = np.arange(d**n)
    digits = (idx[:, None] // d ** (n - 1 - np.arange(n))) % d
    return local_diag[digits]
