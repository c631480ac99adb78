"""Spatial geometry, measure representations, and the flat metric.

The flat (bounded-Lipschitz / Kantorovich-Rubinstein) distance between two
finite measures on an interval is

    sup { |int f dmu - int f dnu| : |f| <= 1, Lip(f) <= 1 },

equivalently the optimal value of a transport program where moving mass costs
distance and creating/destroying mass costs 1 per unit.  For atomic measures
both formulations are finite LPs and are solved exactly here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import CapacityError, NumericalError


# -- geometry ----------------------------------------------------------------

def reflect(x, domain=(0.0, 1.0)):
    """Mirror-fold any real x into [lo, hi] (period-2L sawtooth).

    Idempotent on interior points; exact in law for reflected Brownian
    increments of any size.
    """
    lo, hi = domain
    span = hi - lo
    y = np.mod(np.asarray(x, dtype=float) - lo, 2.0 * span)
    y = np.where(y > span, 2.0 * span - y, y)
    out = lo + y
    return float(out) if np.ndim(x) == 0 else out


def brownian_step(x, m, dt, rng, domain=(0.0, 1.0)):
    """One reflected Euler step: fold(x + sqrt(2 m dt) * N(0,1))."""
    x = np.asarray(x, dtype=float)
    xi = rng.standard_normal(x.shape) if x.ndim else rng.standard_normal()
    return reflect(x + np.sqrt(2.0 * np.asarray(m) * dt) * xi, domain)


def uniform_grid(domain, n: int) -> np.ndarray:
    return np.linspace(domain[0], domain[1], n)


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    h = grid[1] - grid[0]
    w = np.full(len(grid), h)
    w[0] = w[-1] = h / 2.0
    return w


# -- measures ----------------------------------------------------------------

@dataclass
class EmpiricalMeasure:
    """(1/K) * sum of point masses at particle coordinates (x, u)."""

    x: np.ndarray
    u: np.ndarray
    K: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.x.shape != self.u.shape:
            raise ValueError("x and u must have equal length")

    @property
    def mass(self) -> float:
        return len(self.x) / self.K

    def spatial_atoms(self, trait_filter=None):
        """Atoms (locations, weights) of the spatial marginal, optionally
        restricted to a trait window (lo, hi)."""
        if trait_filter is None:
            xs = self.x
        else:
            lo, hi = trait_filter
            xs = self.x[(self.u >= lo) & (self.u <= hi)]
        return xs, np.full(len(xs), 1.0 / self.K)


@dataclass
class GridMeasure:
    """Density values on a uniform grid; mass is the trapezoid integral."""

    grid: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.density = np.asarray(self.density, dtype=float)
        if self.grid.shape != self.density.shape:
            raise ValueError("grid and density must have equal length")
        if np.any(self.density < -1e-12):
            raise ValueError(
                f"negative density: min={self.density.min():.3e}")
        self.density = np.maximum(self.density, 0.0)

    @property
    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def spatial_atoms(self, trait_filter=None):
        return self.grid, self.density * trapezoid_weights(self.grid)


def empirical_to_grid(emp: EmpiricalMeasure, grid: np.ndarray,
                      trait_filter=None) -> GridMeasure:
    """Cloud-in-cell deposition: each particle's weight is split linearly
    between its two neighboring nodes.  Total mass is preserved exactly."""
    xs, w = emp.spatial_atoms(trait_filter)
    return deposit_atoms(xs, w, grid)


def deposit_atoms(xs, weights, grid) -> GridMeasure:
    n = len(grid)
    h = grid[1] - grid[0]
    mass = np.zeros(n)
    if len(xs):
        pos = np.clip((np.asarray(xs) - grid[0]) / h, 0.0, n - 1 - 1e-12)
        idx = pos.astype(np.int64)
        frac = pos - idx
        np.add.at(mass, idx, np.asarray(weights) * (1.0 - frac))
        np.add.at(mass, idx + 1, np.asarray(weights) * frac)
    return GridMeasure(grid, mass / trapezoid_weights(grid))


def sample_from_grid_density(grid, density, size, rng) -> np.ndarray:
    """Inverse-CDF sampling from a grid density with linear interpolation."""
    dens = np.maximum(np.asarray(density, dtype=float), 0.0)
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2.0
                                           * np.diff(grid))])
    if cdf[-1] <= 0:
        raise ValueError("cannot sample from a zero density")
    return np.interp(rng.random(size) * cdf[-1], cdf, grid)


# -- flat metric --------------------------------------------------------------

def _as_atoms(measure, trait_filter=None):
    if isinstance(measure, (EmpiricalMeasure, GridMeasure)):
        return measure.spatial_atoms(trait_filter)
    xs, w = measure
    return np.asarray(xs, dtype=float), np.asarray(w, dtype=float)


def _merge_signed(xa, wa, xb, wb):
    z = np.concatenate([xa, xb])
    w = np.concatenate([wa, -wb])
    zu, inv = np.unique(z, return_inverse=True)
    wu = np.zeros(len(zu))
    np.add.at(wu, inv, w)
    return zu, wu


def _flat_dual_lp(z, w):
    """Exact flat distance: LP over potentials f at the atom locations,
    with box bound |f| <= 1 and adjacent-gap Lipschitz constraints (which
    imply all pairwise constraints on a line)."""
    m = len(z)
    if m == 0:
        return 0.0
    if m == 1:
        return abs(float(w[0]))  # optimal f = sign(w), |f| <= 1 binds
    dz = np.diff(z)
    D = sparse.diags([-np.ones(m - 1), np.ones(m - 1)], offsets=[0, 1],
                     shape=(m - 1, m), format="csr")
    A = sparse.vstack([D, -D], format="csr")
    b = np.concatenate([dz, dz])
    res = linprog(-w, A_ub=A, b_ub=b, bounds=[(-1.0, 1.0)] * m, method="highs")
    if res.status != 0:
        raise NumericalError(f"flat-metric LP failed: {res.message}")
    return float(-res.fun)


def _flat_primal_lp(xa, wa, xb, wb):
    """Transport LP with unit-cost mass destruction/creation arcs.  Used as
    the authoritative cross-check; equals the dual formulation exactly."""
    na, nb = len(xa), len(xb)
    if na == 0 and nb == 0:
        return 0.0
    if na == 0 or nb == 0:
        return float(np.sum(wa) + np.sum(wb))
    cost = np.abs(xa[:, None] - xb[None, :]).ravel()
    c = np.concatenate([cost, np.ones(na), np.ones(nb)])
    rows_pi = np.repeat(np.arange(na), nb)
    cols_pi = np.arange(na * nb)
    rows_sig = na + np.tile(np.arange(nb), na)
    A = sparse.coo_matrix(
        (np.ones(2 * na * nb + na + nb),
         (np.concatenate([rows_pi, rows_sig,
                          np.arange(na), na + np.arange(nb)]),
          np.concatenate([cols_pi, cols_pi,
                          na * nb + np.arange(na),
                          na * nb + na + np.arange(nb)]))),
        shape=(na + nb, na * nb + na + nb)).tocsr()
    beq = np.concatenate([wa, wb])
    res = linprog(c, A_eq=A, b_eq=beq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericalError(f"flat-metric primal LP failed: {res.message}")
    return float(res.fun)


def _flat_equal_mass_cdf(z, w):
    """Equal-mass fast path: W1 via the CDF integral, valid only when the
    optimal potential fits inside the +-1 band.  Returns None otherwise."""
    G = np.cumsum(w)[:-1]
    dz = np.diff(z)
    value = float(np.sum(np.abs(G) * dz))
    if value > 2.0:
        return None
    pot = np.concatenate([[0.0], np.cumsum(np.sign(G) * dz)])
    if pot.max() - pot.min() > 2.0:
        return None
    return value


def flat_distance(mu, nu, method="auto", atom_cap=2000, trait_filter=None):
    """Flat distance between two measures on the same interval.

    method: "auto" uses the equal-mass CDF shortcut when admissible and the
    dual LP otherwise; "dual"/"primal" force one exact LP formulation.
    """
    xa, wa = _as_atoms(mu, trait_filter)
    xb, wb = _as_atoms(nu, trait_filter)
    if len(xa) + len(xb) > atom_cap:
        raise CapacityError(
            f"flat_distance support has {len(xa) + len(xb)} atoms "
            f"(cap {atom_cap}); coarsen with flat_distance_coarse")
    if method == "primal":
        return _flat_primal_lp(xa, wa, xb, wb)
    z, w = _merge_signed(xa, wa, xb, wb)
    if method == "auto" and abs(np.sum(wa) - np.sum(wb)) <= 1e-12 and len(z) >= 2:
        value = _flat_equal_mass_cdf(z, w)
        if value is not None:
            return value
    return _flat_dual_lp(z, w)


def flat_distance_coarse(mu, nu, n_nodes=512, domain=(0.0, 1.0),
                         trait_filter=None):
    """Deposit both measures on a common grid, then compare exactly.

    Returns (value, error_bound); the bound is the CIC transport slack,
    half a grid spacing per unit of total mass.
    """
    grid = uniform_grid(domain, n_nodes)
    ga = _coarsen(mu, grid, trait_filter)
    gb = _coarsen(nu, grid, trait_filter)
    value = flat_distance(ga, gb)
    h = grid[1] - grid[0]
    return value, 0.5 * h * (ga.mass + gb.mass)


def _coarsen(measure, grid, trait_filter=None):
    xs, w = _as_atoms(measure, trait_filter)
    return deposit_atoms(xs, w, grid)
