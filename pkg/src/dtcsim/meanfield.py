"""Self-consistent stationary mean-field states of the average Hamiltonians.

A spin-1/2 state is ``rho = I/2 + sum_mu rho_mu S^mu`` with
``<S^mu> = rho_mu / 2``; a spin-1 state is ``rho = I/3 + sum_mu rho_mu l^mu``
in the Gell-Mann basis with ``<l^mu> = 2 rho_mu``.  The mean-field
Hamiltonian is linear in the expectations, and stationarity means
``[rho, H_MF(rho)] = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .model import MeanFieldSpec, Protocol, meanfield_spec
from .spinops import SpinOperator, gell_mann_basis, spin_half_ops


class MeanFieldError(RuntimeError):
    """Raised when the root finder fails to converge (as opposed to no root existing)."""


class BracketError(MeanFieldError):
    pass


def _operator_basis(dim: int) -> np.ndarray:
    if dim == 3:
        return np.array([op.matrix for op in spin_half_ops()[:3]])
    if dim == 8:
        return np.array(gell_mann_basis().matrices)
    raise ValueError(f"basis dimension must be 3 or 8, got {dim}")


def _conventions(dim: int) -> tuple[float, float, float]:
    """(identity weight, expectation factor, norm bound) for the basis."""
    if dim == 3:
        return 0.5, 0.5, 1.0
    return 1 / 3, 2.0, 1 / 3


def norm_bound(dim: int) -> float:
    """Upper bound on sum_mu rho_mu^2 implied by tr[rho^2] <= 1."""
    return _conventions(dim)[2]


def density_matrix(rho: Sequence[float]) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    basis = _operator_basis(rho.size)
    ident_w, _, _ = _conventions(rho.size)
    d = basis.shape[1]
    return ident_w * np.eye(d) + np.tensordot(rho, basis, axes=1)


def expectations(rho: Sequence[float]) -> np.ndarray:
    """tr[O^mu rho] evaluated from the density matrix."""
    rho = np.asarray(rho, dtype=float)
    mat = density_matrix(rho)
    return np.real(np.einsum("mij,ji->m", _operator_basis(rho.size), mat))


def field_vector(spec: MeanFieldSpec, rho: Sequence[float]) -> np.ndarray:
    """Coefficients b_mu of H_MF = sum_mu b_mu O^mu."""
    rho = np.asarray(rho, dtype=float)
    _, factor, _ = _conventions(spec.basis_dim)
    return spec.jmf * spec.C @ (factor * rho) + spec.h


def mf_hamiltonian(spec: MeanFieldSpec, rho: Sequence[float]) -> SpinOperator:
    rho = np.asarray(rho, dtype=float)
    if rho.size != spec.basis_dim:
        raise ValueError(f"rho has {rho.size} components, spec needs {spec.basis_dim}")
    b = field_vector(spec, rho)
    return SpinOperator(np.tensordot(b, _operator_basis(spec.basis_dim), axes=1), f"H_MF[{spec.protocol.value}]")


def _coord(mat: np.ndarray, dim: int) -> np.ndarray:
    """Real coordinates of a traceless Hermitian matrix in the operator basis."""
    basis = _operator_basis(dim)
    norm = 0.5 if dim == 3 else 2.0  # tr[O_mu O_mu]
    return np.real(np.einsum("mij,ji->m", basis, mat)) / norm


def commutator_residual(spec: MeanFieldSpec, rho: Sequence[float]) -> np.ndarray:
    """Coordinates of i[rho, H_MF(rho)] in the operator basis."""
    rho = np.asarray(rho, dtype=float)
    r = density_matrix(rho)
    h = mf_hamiltonian(spec, rho).matrix
    return _coord(1j * (r @ h - h @ r), spec.basis_dim)


def self_consistency_residual(rho: Sequence[float]) -> float:
    rho = np.asarray(rho, dtype=float)
    _, factor, _ = _conventions(rho.size)
    return float(np.max(np.abs(expectations(rho) - factor * rho)))


# --------------------------------------------------------------------------
# stationary solutions

# smallest imbalance amplitude that still counts as an ordered solution
MIN_IMBALANCE = 1e-7


def _polarization_axes(dim: int) -> np.ndarray:
    """Indices of the population-imbalance components."""
    return np.array([2]) if dim == 3 else np.array([6, 7])


@dataclass
class MeanFieldSolution:
    rho: np.ndarray
    residual: float
    self_consistency: float
    exists: bool
    order_parameter: float
    branch: str
    iterations: int = 0
    boundary_ratio: Optional[float] = None

    @property
    def norm2(self) -> float:
        return float(self.rho @ self.rho)


def _default_direction(dim: int, polarization) -> np.ndarray:
    if polarization is None:
        u = np.array([1.0]) if dim == 3 else np.array([-1.0, 1 / np.sqrt(3)])
    else:
        u = np.atleast_1d(np.asarray(polarization, dtype=float))
    if u.size != _polarization_axes(dim).size or not np.any(u):
        raise ValueError("polarization direction must be a nonzero vector on the imbalance components")
    return u / np.linalg.norm(u)


def _unpack(x, dim, pol_idx, u, branch):
    rho = np.zeros(dim)
    free = np.setdiff1d(np.arange(dim), pol_idx)
    rho[free] = x[:-1]
    if branch == "ordered":
        rho[pol_idx] = x[-1] * u
    return rho


def _residuals(x, spec, pol_idx, u, branch, target):
    rho = _unpack(x, spec.basis_dim, pol_idx, u, branch)
    com = commutator_residual(spec, rho)
    if branch == "ordered":
        return np.concatenate([com, [rho @ rho - target]])
    # trivial branch: x[-1] is a dummy unknown pinned to zero
    return np.concatenate([com, [rho @ rho - target, x[-1]]])


def _jacobian(fun, x, r):
    jac = np.empty((r.size, x.size))
    for k in range(x.size):
        dx = 1e-6 * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += dx
        xm[k] -= dx
        jac[:, k] = (fun(xp) - fun(xm)) / (2 * dx)
    return jac


def _newton(fun, x0, tol, max_iter):
    """Damped Gauss-Newton with minimum-norm steps and backtracking.

    Returns ``(x, residual_norm, iterations, status)`` with status one of
    ``"converged"``, ``"stalled"`` (no descent left: a local minimum of the
    residual norm) or ``"maxiter"``.
    """
    x = np.array(x0, dtype=float)
    r = fun(x)
    cost = r @ r
    for it in range(1, max_iter + 1):
        if np.sqrt(cost) < tol:
            return x, float(np.sqrt(cost)), it, "converged"
        jac = _jacobian(fun, x, r)
        step = np.linalg.lstsq(jac, -r, rcond=1e-12)[0]
        t = 1.0
        while t > 1e-10:
            xn = x + t * step
            rn = fun(xn)
            cn = rn @ rn
            if cn < cost:
                break
            t /= 2
        else:
            return x, float(np.sqrt(cost)), it, "stalled"
        if cost - cn < 1e-30 and np.sqrt(cn) > tol:
            x, r, cost = xn, rn, cn
            return x, float(np.sqrt(cost)), it, "stalled"
        x, r, cost = xn, rn, cn
    if np.sqrt(cost) < tol:
        return x, float(np.sqrt(cost)), max_iter, "converged"
    return x, float(np.sqrt(cost)), max_iter, "maxiter"


def _scaled(spec: MeanFieldSpec, lam: float) -> MeanFieldSpec:
    return MeanFieldSpec(spec.protocol, spec.C, lam * spec.h, spec.jmf)


def _aligned_root(spec: MeanFieldSpec, pol_idx, u, target):
    """Ordered root with the Bloch vector parallel to its own mean field.

    ``rho = kappa * b(rho)`` implies ``[rho, H_MF] = 0``.  With the imbalance
    sector an eigenspace of C (eigenvalue c along ``u``), ``kappa = 1/(J f c)``
    and the remaining components follow from one linear solve.  Returns
    ``(rho, s2)`` where ``s2`` is the squared imbalance left by the purity
    gauge, or ``None`` when the coupling matrix lacks that structure.
    """
    dim = spec.basis_dim
    _, factor, _ = _conventions(dim)
    C, h, jmf = spec.C, spec.h, spec.jmf
    free = np.setdiff1d(np.arange(dim), pol_idx)
    cu = C[np.ix_(pol_idx, pol_idx)] @ u
    c = float(u @ cu)
    if (abs(c) < 1e-12 or np.linalg.norm(cu - c * u) > 1e-12
            or np.abs(C[np.ix_(free, pol_idx)] @ u).max(initial=0) > 1e-12
            or np.abs(u @ C[np.ix_(pol_idx, free)]).max(initial=0) > 1e-12
            or abs(u @ h[pol_idx]) > 1e-14):
        return None
    kappa = 1.0 / (jmf * factor * c)
    a = np.eye(free.size) - kappa * jmf * factor * C[np.ix_(free, free)]
    try:
        rho_f = np.linalg.solve(a, kappa * h[free])
    except np.linalg.LinAlgError:
        return None
    rho = np.zeros(dim)
    rho[free] = rho_f
    s2 = target - rho_f @ rho_f
    rho[pol_idx] = np.sqrt(max(s2, 0.0)) * u
    return rho, s2


def solve_stationary(
    spec: MeanFieldSpec,
    branch: str = "ordered",
    polarization=None,
    purity: float = 1.0,
    tol: float = 1e-12,
    max_iter: int = 100,
    continuation_steps: int = 8,
    restarts: int = 10,
    seed: int = 0,
) -> MeanFieldSolution:
    """Find a self-consistent stationary state.

    The stationarity conditions leave the population-imbalance components
    partly free; they are pinned by requiring ``tr[rho^2] = purity`` with the
    imbalance pointing along ``polarization`` (spin-1/2: sign of rho_z;
    spin-1: a direction in the (rho_7, rho_8) plane).  The ordered branch is
    the root whose Bloch vector is parallel to its own mean field; it is
    obtained in closed form when the coupling matrix allows it.  Otherwise
    the root connected to the polarized state at zero field is followed by
    continuation in the field strength, with random restarts as a fallback.
    ``branch="trivial"`` forces zero imbalance.

    ``exists`` is false when no root satisfies both stationarity and the norm
    constraint.  :class:`MeanFieldError` signals a solver failure instead.
    """
    if not spec.jmf > 0:
        raise ValueError("jmf must be positive")
    if branch not in ("ordered", "trivial"):
        raise ValueError(f"unknown branch {branch!r}")
    dim = spec.basis_dim
    pol_idx = _polarization_axes(dim)
    u = _default_direction(dim, polarization)
    bound = norm_bound(dim)
    ident_w = _conventions(dim)[0]
    # tr[rho^2] = ident_w + tr[O O] sum rho^2 for either basis
    target = min((purity - ident_w) / (0.5 if dim == 3 else 2.0), bound)
    free = np.setdiff1d(np.arange(dim), pol_idx)

    def run(s, x0):
        fun = lambda x: _residuals(x, s, pol_idx, u, branch, target)  # noqa: E731
        x, res, it, status = _newton(fun, x0, tol, max_iter)
        if status == "converged" and branch == "ordered" and x[-1] < 0:
            # mirror root: retry with the imbalance along +u
            x2, res2, it2, status2 = _newton(fun, np.concatenate([x[:-1], [-x[-1]]]), tol, max_iter)
            if status2 == "converged" and x2[-1] >= 0:
                return x2, res2, it + it2, status2
            status = "wrong-sign"
        return x, res, it, status

    if branch == "ordered":
        aligned = _aligned_root(spec, pol_idx, u, target)
        if aligned is not None:
            rho, s2 = aligned
            resid = float(np.max(np.abs(commutator_residual(spec, rho))))
            exists = bool(s2 > MIN_IMBALANCE**2 and resid < 1e-10 and rho @ rho <= bound + 1e-12)
            return MeanFieldSolution(rho, resid, self_consistency_residual(rho), exists,
                                     float(np.linalg.norm(rho[pol_idx])), branch, 0)

    attempts = []
    if branch == "ordered":
        x = np.concatenate([np.zeros(free.size), [np.sqrt(target)]])
        total_it = 0
        status = "converged"
        for lam in np.linspace(0, 1, continuation_steps + 1)[1:]:
            x, res, it, status = run(_scaled(spec, lam), x)
            total_it += it
            if status != "converged":
                break
        attempts.append((x, res, total_it, status))
    gen = np.random.default_rng(seed)
    n_extra = restarts if not attempts or attempts[-1][3] != "converged" else 0
    for k in range(n_extra + (1 if branch == "trivial" else 0)):
        if k == 0:
            x0 = np.concatenate([spec.h[free] / spec.jmf, [np.sqrt(target)]])
        else:
            x0 = np.concatenate([gen.normal(scale=np.sqrt(target / dim), size=free.size),
                                 [np.sqrt(target) * gen.uniform(0.1, 1.0)]])
        if branch == "trivial":
            x0[-1] = 0.0
        attempts.append(run(spec, x0))
        if attempts[-1][3] == "converged":
            break

    ok = [a for a in attempts if a[3] == "converged"]
    if ok:
        x, res, it, status = ok[0]
    else:
        if all(a[3] == "maxiter" for a in attempts):
            raise MeanFieldError(f"mean-field root finder did not converge in {max_iter} iterations")
        x, res, it, status = min(attempts, key=lambda a: a[1])
    rho = _unpack(x, dim, pol_idx, u, branch)
    resid = float(np.max(np.abs(commutator_residual(spec, rho))))
    norm_ok = rho @ rho <= bound + 1e-12
    ordered_ok = branch == "trivial" or x[-1] > MIN_IMBALANCE
    exists = status == "converged" and resid < 1e-10 and norm_ok and ordered_ok
    order = float(np.linalg.norm(rho[pol_idx]))
    return MeanFieldSolution(rho, resid, self_consistency_residual(rho), exists, order, branch, it)


def existence_boundary(
    protocol,
    tol: float = 1e-8,
    jmf: float = 1.0,
    period: float = 1.0,
    upper: float = 10.0,
) -> float:
    """Critical ``(epsilon/T) / J_MF`` above which no ordered solution exists."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    protocol = Protocol(protocol)

    def exists(ratio):
        spec = meanfield_spec(protocol, ratio * jmf * period, period, jmf)
        return solve_stationary(spec, "ordered").exists

    lo, hi = 0.0, upper
    if not exists(lo + tol) or exists(hi):
        raise BracketError(f"no existence transition for {protocol.value} in [0, {upper}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if exists(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def boundary_table(protocol, jmf: float, periods: Sequence[float], coefficient: Optional[float] = None):
    """Rows ``(T, epsilon_critical)`` with ``epsilon_critical = a J_MF T``."""
    a = existence_boundary(protocol) if coefficient is None else coefficient
    return [(float(t), a * jmf * float(t)) for t in periods]


# --------------------------------------------------------------------------
# dynamics

def integrate_mf_dynamics(
    spec: MeanFieldSpec,
    rho0: Sequence[float],
    duration: float,
    step: float,
    rtol: float = 1e-12,
    atol: float = 1e-14,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate d rho/dt = i[rho, H_MF(rho)]; returns ``(times, trajectory)``."""
    if not step > 0:
        raise ValueError("step must be positive")
    rho0 = np.asarray(rho0, dtype=float)
    times = np.arange(0.0, duration + 0.5 * step, step)
    sol = solve_ivp(
        lambda t, y: commutator_residual(spec, y),
        (0.0, times[-1]),
        rho0,
        method="DOP853",
        t_eval=times,
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise MeanFieldError(f"integration failed: {sol.message}")
    return sol.t, sol.y.T
