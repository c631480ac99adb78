"""Branching-survival and invasion probabilities via the elliptic equation

    m * phi'' + (b_eff - d_eff) * phi - b_eff * phi^2 = 0,   Neumann ends.

A positive solution in (0,1] exists iff the principal eigenvalue of
m*D2 + (b_eff - d_eff) is positive; the zero function always solves the
equation, so viability is decided by the eigenvalue sign, never by where the
Newton iteration happens to land.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .config import ModelSpec
from .errors import NumericalError
from .spectral import (EigenSolution, apply_operator, competition_pressure,
                       principal_eigen_grid)


@dataclass
class SurvivalProfile:
    """Grid function phi with values in [0,1]; phi == 0 iff not viable."""

    grid: np.ndarray
    phi: np.ndarray
    viable: bool
    residual_inf: float
    degenerate: bool = False
    info: dict = field(default_factory=dict)

    def __call__(self, x):
        return np.interp(x, self.grid, self.phi)


def _newton_elliptic(m, b_eff, d_eff, grid, phi0, tol, max_iter=60):
    h = grid[1] - grid[0]
    n = len(grid)
    q = b_eff - d_eff
    phi = phi0.copy()
    F = apply_operator(m, q, h, phi) - b_eff * phi ** 2
    res = float(np.max(np.abs(F)))
    for _ in range(max_iter):
        if res <= tol:
            return phi, res
        # tridiagonal Jacobian m*D2 + diag(q - 2 b phi), banded solve
        ab = np.zeros((3, n))
        ab[1, :] = -2.0 * m / h ** 2 + q - 2.0 * b_eff * phi
        ab[0, 1:] = m / h ** 2
        ab[2, :-1] = m / h ** 2
        ab[0, 1] = 2.0 * m / h ** 2
        ab[2, n - 2] = 2.0 * m / h ** 2
        try:
            delta = solve_banded((1, 1), ab, -F)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular Jacobian: {exc}", residual=res)
        step = 1.0
        while step >= 1e-6:
            cand = phi + step * delta
            Fc = apply_operator(m, q, h, cand) - b_eff * cand ** 2
            res_c = float(np.max(np.abs(Fc)))
            if res_c < res:
                phi, F, res = cand, Fc, res_c
                break
            step /= 2.0
        else:
            raise NumericalError("Newton stagnated (no descent step)",
                                 residual=res)
    if res <= tol:
        return phi, res
    raise NumericalError("Newton did not converge", residual=res)


def solve_phi_star(m: float, b_eff, d_eff, grid,
                   tol_factor: float = 1e-10) -> SurvivalProfile:
    """Survival probability profile of the branching diffusion with birth
    b_eff(x), death d_eff(x), diffusivity m.

    Returns phi == 0 (viable=False) when the growth eigenvalue is <= 0.
    """
    grid = np.asarray(grid, dtype=float)
    b_eff = np.broadcast_to(np.asarray(b_eff, dtype=float), grid.shape).copy()
    d_eff = np.broadcast_to(np.asarray(d_eff, dtype=float), grid.shape).copy()
    if np.any(b_eff < 0):
        raise ValueError("b_eff must be nonnegative")
    H, _ = principal_eigen_grid(m, b_eff - d_eff, grid)
    if H <= 0.0:
        return SurvivalProfile(grid, np.zeros_like(grid), viable=False,
                               residual_inf=0.0, info={"H": H})
    scale = max(float(np.max(b_eff)), 1.0)
    tol = tol_factor * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        init_ratio = np.where(b_eff > 0,
                              np.maximum(b_eff - d_eff, 0.0) / b_eff, 1.0)
        init_h = np.where(b_eff > 0, np.minimum(H / b_eff, 1.0), 1.0)
    last_exc = None
    for phi0 in (np.clip(init_ratio, 1e-6, 1.0),
                 np.clip(init_h, 1e-6, 1.0),
                 np.full_like(grid, 0.5)):
        try:
            phi, res = _newton_elliptic(m, b_eff, d_eff, grid, phi0, tol)
        except NumericalError as exc:
            last_exc = exc
            continue
        if float(np.max(phi)) > 1e-8:   # refuse the trivial branch
            break
        last_exc = NumericalError("Newton collapsed onto phi == 0 "
                                  "although H > 0", residual=res)
    else:
        raise last_exc
    if phi.min() < -1e-6 or phi.max() > 1.0 + 1e-6:
        raise NumericalError(
            f"solution left the [0,1] band: [{phi.min():.3e}, {phi.max():.3e}]",
            residual=res)
    phi = np.clip(phi, 0.0, 1.0)
    if phi.min() <= 0.0:
        # positivity can only fail by roundoff where b-d is very negative
        phi = np.maximum(phi, np.finfo(float).tiny)
    return SurvivalProfile(grid, phi, viable=True, residual_inf=res,
                           info={"H": H})


def solve_phi_vu(spec: ModelSpec, v: float, eig_u: EigenSolution,
                 eig_v: EigenSolution | None = None) -> SurvivalProfile:
    """Probability that a single v mutant born at x founds a surviving
    lineage inside the u equilibrium.

    The background pressure C_vu = int c(v,y,u) g_u(y) dy enters as a
    constant addition to the mutant death rate; the profile is identically 0
    whenever the invasion fitness is non-positive.
    """
    if not eig_u.viable:
        raise ValueError("resident equilibrium must be viable")
    grid = eig_u.g.grid
    C_vu = competition_pressure(spec, v, eig_u)
    b_v = np.broadcast_to(np.asarray(spec.b(grid, v), dtype=float), grid.shape)
    d_v = np.broadcast_to(np.asarray(spec.d(grid, v), dtype=float), grid.shape)
    if eig_v is None:
        H_v, _ = principal_eigen_grid(float(spec.m(v)), b_v - d_v, grid)
    else:
        H_v = eig_v.H
    kappa_uu = eig_u.H / eig_u.mass
    fitness = kappa_uu * (H_v - C_vu)
    tie_tol = 1e-7 * spec.bounds.c_max * max(eig_u.H, H_v, 0.0)
    info = {"C_vu": C_vu, "fitness": fitness, "H_v": H_v, "H_u": eig_u.H}
    if fitness <= tie_tol:
        return SurvivalProfile(grid, np.zeros_like(grid), viable=False,
                               residual_inf=0.0,
                               degenerate=abs(fitness) <= tie_tol, info=info)
    prof = solve_phi_star(float(spec.m(v)), b_v, d_v + C_vu, grid)
    prof.info.update(info)
    return prof
