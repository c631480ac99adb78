"""Principal eigenpair of m*Laplacian + (b - d) with Neumann ends.

The second-order stencil uses mirrored ghost nodes, so the boundary rows are
2*(f[1]-f[0])/h^2 and 2*(f[n-2]-f[n-1])/h^2.  With trapezoid weights
w = (1/2, 1, ..., 1, 1/2)*h the operator is self-adjoint, and the similarity
transform W^(1/2) A W^(-1/2) is a symmetric tridiagonal matrix: its interior
off-diagonals are m/h^2 and the two boundary ones are sqrt(2)*m/h^2.

The positive eigenfunction g is normalized so that the self-competition
integral int c(u,y,u) g(y) dy equals the eigenvalue H whenever H > 0; this
makes kappa(u,u) = H / mass(g) an exact discrete identity.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal, solveh_banded

from .config import ModelSpec
from .domain import GridMeasure, trapezoid_weights, uniform_grid
from .errors import NumericalError


def sym_tridiag(m: float, q: np.ndarray, h: float):
    """(diag, offdiag) of the symmetrized discrete operator."""
    n = len(q)
    diag = q - 2.0 * m / h ** 2
    off = np.full(n - 1, m / h ** 2)
    off[0] *= np.sqrt(2.0)
    off[-1] *= np.sqrt(2.0)
    return diag, off


def apply_operator(m: float, q: np.ndarray, h: float, f: np.ndarray) -> np.ndarray:
    """m * D2 f + q * f with the mirrored-ghost Neumann stencil."""
    out = np.empty_like(f)
    out[1:-1] = m * (f[:-2] - 2.0 * f[1:-1] + f[2:]) / h ** 2
    out[0] = m * 2.0 * (f[1] - f[0]) / h ** 2
    out[-1] = m * 2.0 * (f[-2] - f[-1]) / h ** 2
    return out + q * f


def principal_eigen_grid(m: float, q: np.ndarray, grid: np.ndarray,
                         tol: float = 1e-12, max_iter: int = 300):
    """Largest eigenvalue and positive eigenvector of m*D2 + diag(q).

    Shifted inverse power iteration on the symmetric tridiagonal form; the
    shift sits above max(q) >= lambda_max, so the shifted matrix is positive
    definite.  Falls back to a direct tridiagonal eigensolve if the gap is
    too small for the iteration to converge.
    """
    h = grid[1] - grid[0]
    diag, off = sym_tridiag(m, q, h)
    shift = float(np.max(q)) + 1.0
    opscale = abs(shift) + 2.0 * m / h ** 2

    ab = np.zeros((2, len(q)))
    ab[0, 1:] = -off
    ab[1, :] = shift - diag
    v = np.ones(len(q))
    v /= np.linalg.norm(v)
    lam = None
    converged = False
    for _ in range(max_iter):
        v = solveh_banded(ab, v)
        v /= np.linalg.norm(v)
        Sv = diag * v
        Sv[:-1] += off * v[1:]
        Sv[1:] += off * v[:-1]
        lam = float(v @ Sv)
        if np.max(np.abs(Sv - lam * v)) <= tol * opscale:
            converged = True
            break
    if not converged:
        # small spectral gap relative to the shift: use the direct solve
        lam_arr, vecs = eigh_tridiagonal(diag, off, select="i",
                                         select_range=(len(q) - 1, len(q) - 1))
        lam, v = float(lam_arr[0]), vecs[:, 0]

    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    # back to nodal values: g = W^(-1/2) v (relative weights 1/2 at the ends)
    g = v.copy()
    g[0] *= np.sqrt(2.0)
    g[-1] *= np.sqrt(2.0)
    if g.min() < 0:
        if g.min() < -1e-10 * g.max():
            raise NumericalError(
                "principal eigenvector is not positive", residual=float(g.min()))
        g = np.maximum(g, 0.0)
    return lam, g


@dataclass
class EigenSolution:
    """Growth eigenvalue H and equilibrium profile g for one trait."""

    trait: float
    H: float
    g: GridMeasure
    viable: bool
    normalization_residual: float
    residual_inf: float

    @property
    def mass(self) -> float:
        return self.g.mass


def principal_eigen(spec: ModelSpec, u: float, n_nodes: int = 512) -> EigenSolution:
    """Eigen solution for trait u on an n_nodes uniform grid.

    If H > 0 the profile is scaled so the self-competition integral equals H;
    otherwise the eigenvector is returned with unit L2 norm and viable=False.
    """
    if n_nodes < 16:
        raise ValueError("n_nodes must be >= 16")
    grid = uniform_grid(spec.domain, n_nodes)
    q = np.asarray(spec.b(grid, u) - spec.d(grid, u), dtype=float)
    m = float(spec.m(u))
    H, g = principal_eigen_grid(m, q, grid)
    w = trapezoid_weights(grid)
    viable = H > 0.0
    if viable:
        self_comp = float(np.sum(w * np.asarray(spec.c(u, grid, u)) * g))
        if self_comp <= 0:
            raise NumericalError(
                f"cannot normalize equilibrium: int c(u,y,u) g dy = {self_comp}")
        g = g * (H / self_comp)
        norm_res = abs(float(np.sum(w * np.asarray(spec.c(u, grid, u)) * g)) - H)
    else:
        g = g / np.sqrt(float(np.sum(w * g ** 2)))
        norm_res = float("nan")
    h = grid[1] - grid[0]
    res = float(np.max(np.abs(apply_operator(m, q, h, g) - H * g)))
    return EigenSolution(trait=float(u), H=H, g=GridMeasure(grid, g),
                         viable=viable, normalization_residual=norm_res,
                         residual_inf=res)


def kappa(spec: ModelSpec, v: float, eig_u: EigenSolution) -> float:
    """Mean competition felt by a v individual from the u equilibrium:
    int c(v,y,u) g(y) dy / int g(y) dy."""
    if not eig_u.viable:
        raise ValueError("kappa needs a viable resident equilibrium (H > 0)")
    grid = eig_u.g.grid
    w = trapezoid_weights(grid)
    denom = float(np.sum(w * eig_u.g.density))
    if denom <= 0:
        raise NumericalError("degenerate equilibrium: zero mass")
    num = float(np.sum(w * np.asarray(spec.c(v, grid, eig_u.trait))
                       * eig_u.g.density))
    return num / denom


def competition_pressure(spec: ModelSpec, v: float, eig_u: EigenSolution) -> float:
    """int c(v,y,u) g(y) dy — the constant background pressure a v mutant
    feels inside the u equilibrium."""
    grid = eig_u.g.grid
    w = trapezoid_weights(grid)
    return float(np.sum(w * np.asarray(spec.c(v, grid, eig_u.trait))
                        * eig_u.g.density))


def invasion_fitness(spec: ModelSpec, v: float, u: float, n_nodes: int = 512,
                     eig_u: EigenSolution | None = None,
                     eig_v: EigenSolution | None = None) -> float:
    """H^v * kappa(u,u) - H^u * kappa(v,u); positive sign is necessary for a
    v mutant to invade a u resident."""
    eig_u = eig_u or principal_eigen(spec, u, n_nodes)
    eig_v = eig_v or principal_eigen(spec, v, n_nodes)
    if not eig_u.viable:
        raise ValueError("resident must be viable (H^u > 0)")
    return eig_v.H * kappa(spec, u, eig_u) - eig_u.H * kappa(spec, v, eig_u)


class PairCase(enum.Enum):
    CASE1_NO_INVASION = "case1_no_invasion"
    CASE2_FIXATION = "case2_fixation"
    COEXISTENCE_VIOLATION = "coexistence_violation"
    MUTANT_NONVIABLE_ALONE = "mutant_nonviable_alone"


@dataclass
class PairClassification:
    case: PairCase
    fitness_vu: float
    fitness_uv: float | None
    degenerate: bool
    tie_tol: float


def classify_pair(spec: ModelSpec, u: float, v: float,
                  n_nodes: int = 512,
                  eig_u: EigenSolution | None = None,
                  eig_v: EigenSolution | None = None) -> PairClassification:
    """Invasion-implies-fixation trichotomy for the ordered pair (u, v).

    Fitness values within tie_tol of zero are treated as non-invading and
    flagged degenerate (exact ties are measure-zero in the trait law).
    """
    eig_u = eig_u or principal_eigen(spec, u, n_nodes)
    if not eig_u.viable:
        raise ValueError("resident must be viable (H^u > 0)")
    eig_v = eig_v or principal_eigen(spec, v, n_nodes)
    if not eig_v.viable:
        return PairClassification(PairCase.MUTANT_NONVIABLE_ALONE,
                                  fitness_vu=float("-inf"), fitness_uv=None,
                                  degenerate=False, tie_tol=0.0)
    tie_tol = 1e-7 * spec.bounds.c_max * max(eig_u.H, eig_v.H)
    f_vu = invasion_fitness(spec, v, u, n_nodes, eig_u=eig_u, eig_v=eig_v)
    if f_vu <= tie_tol:
        return PairClassification(PairCase.CASE1_NO_INVASION, f_vu, None,
                                  degenerate=abs(f_vu) <= tie_tol,
                                  tie_tol=tie_tol)
    f_uv = invasion_fitness(spec, u, v, n_nodes, eig_u=eig_v, eig_v=eig_u)
    if f_uv < -tie_tol:
        return PairClassification(PairCase.CASE2_FIXATION, f_vu, f_uv,
                                  degenerate=False, tie_tol=tie_tol)
    if f_uv <= tie_tol:
        return PairClassification(PairCase.CASE2_FIXATION, f_vu, f_uv,
                                  degenerate=True, tie_tol=tie_tol)
    return PairClassification(PairCase.COEXISTENCE_VIOLATION, f_vu, f_uv,
                              degenerate=False, tie_tol=tie_tol)
