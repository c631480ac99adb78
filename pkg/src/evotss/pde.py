"""Deterministic large-population limit for finitely many traits.

Each active trait u carries a spatial density xi_u(t,x) evolving by

    d/dt xi_u = m(u) * xi_u'' + [b(x,u) - d(x,u) - comp_u(t)] * xi_u,

with Neumann ends, where comp_u = sum_v int c(u,y,v) xi_v(y) dy is the
nonlocal competition (a scalar per trait: the kernel reads the competitor's
location y, not the focal one).  Time stepping is IMEX: Crank-Nicolson for
diffusion, explicit Euler for the reaction, which is stable for
dt <= 0.25 / (b_max + d_max + c_max * total_mass).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .config import ModelSpec
from .domain import GridMeasure, trapezoid_weights
from .errors import NumericalError
from .spectral import apply_operator

MASS_FLOOR = 1e-10   # traits below this total mass are dropped (0 is absorbing)


@dataclass
class PdeState:
    grid: np.ndarray
    traits: list[float]
    densities: np.ndarray          # shape (n_traits, n_nodes)
    time: float = 0.0
    removed: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.densities = np.atleast_2d(np.asarray(self.densities, dtype=float))
        if self.densities.shape != (len(self.traits), len(self.grid)):
            raise ValueError("densities must be (n_traits, n_nodes)")

    def mass(self, trait=None) -> float:
        w = trapezoid_weights(self.grid)
        if trait is None:
            return float(np.sum(self.densities @ w))
        i = self.traits.index(trait)
        return float(self.densities[i] @ w)

    def measure(self, trait) -> GridMeasure:
        i = self.traits.index(trait)
        return GridMeasure(self.grid, self.densities[i].copy())


def competition_fields(state: PdeState, spec: ModelSpec) -> np.ndarray:
    """comp_u for each active trait (scalar each; the kernel has no
    dependence on the focal location)."""
    w = trapezoid_weights(state.grid)
    out = np.zeros(len(state.traits))
    for i, u in enumerate(state.traits):
        for j, v in enumerate(state.traits):
            cvals = np.asarray(spec.c(u, state.grid, v), dtype=float)
            out[i] += float(np.sum(w * cvals * state.densities[j]))
    return out


def dt_max(state: PdeState, spec: ModelSpec) -> float:
    bnd = spec.bounds
    return 0.25 / (bnd.b_max + bnd.d_max + bnd.c_max * max(state.mass(), 0.0)
                   + 1e-300)


def step(state: PdeState, dt: float, spec: ModelSpec) -> PdeState:
    """One IMEX step; raises NumericalError on instability."""
    if dt > dt_max(state, spec) * (1.0 + 1e-9):
        raise ValueError(f"dt={dt} exceeds stability bound {dt_max(state, spec)}")
    grid = state.grid
    h = grid[1] - grid[0]
    n = len(grid)
    if np.any(~np.isfinite(state.densities)):
        raise NumericalError("PDE state diverged (non-finite density)")
    comp = competition_fields(state, spec)
    new = np.empty_like(state.densities)
    for i, u in enumerate(state.traits):
        m = float(spec.m(u))
        r = np.asarray(spec.b(grid, u) - spec.d(grid, u), dtype=float) - comp[i]
        xi = state.densities[i]
        rhs = xi + 0.5 * dt * _d2(xi, m, h) + dt * r * xi
        alpha = 0.5 * dt * m / h ** 2
        ab = np.zeros((3, n))
        ab[1, :] = 1.0 + 2.0 * alpha
        ab[0, 1:] = -alpha
        ab[2, :-1] = -alpha
        ab[0, 1] = -2.0 * alpha
        ab[2, n - 2] = -2.0 * alpha
        new[i] = solve_banded((1, 1), ab, rhs)
    if np.any(np.isnan(new)):
        raise NumericalError("PDE step diverged (NaN density)")
    worst = float(new.min())
    if worst < -1e-12:
        raise NumericalError(
            f"negative density {worst:.3e} beyond tolerance; reduce dt",
            residual=worst)
    new = np.maximum(new, 0.0)
    out = PdeState(grid, list(state.traits), new, state.time + dt,
                   list(state.removed))
    return _drop_extinct(out)


def _d2(f, m, h):
    out = np.empty_like(f)
    out[1:-1] = f[:-2] - 2.0 * f[1:-1] + f[2:]
    out[0] = 2.0 * (f[1] - f[0])
    out[-1] = 2.0 * (f[-2] - f[-1])
    return m / h ** 2 * out


def _drop_extinct(state: PdeState) -> PdeState:
    w = trapezoid_weights(state.grid)
    masses = state.densities @ w
    keep = masses >= MASS_FLOOR
    if np.all(keep):
        return state
    removed = list(state.removed)
    removed.extend((state.traits[i], state.time)
                   for i in np.nonzero(~keep)[0])
    return PdeState(state.grid,
                    [t for t, k in zip(state.traits, keep) if k],
                    state.densities[keep] if np.any(keep)
                    else np.zeros((0, len(state.grid))),
                    state.time, removed)


def steady_residual(state: PdeState, spec: ModelSpec) -> dict:
    """Sup-norm of the stationary equation residual, per trait."""
    comp = competition_fields(state, spec)
    h = state.grid[1] - state.grid[0]
    out = {}
    for i, u in enumerate(state.traits):
        q = np.asarray(spec.b(state.grid, u) - spec.d(state.grid, u),
                       dtype=float) - comp[i]
        res = apply_operator(float(spec.m(u)), q, h, state.densities[i])
        out[u] = float(np.max(np.abs(res)))
    return out


def integrate(state: PdeState, spec: ModelSpec, t_end: float, dt: float,
              observe_every: float | None = None, observer=None):
    """Step with fixed dt until t_end (shorter final step to land exactly).

    Returns (final_state, log); the log holds one row per observation with
    time, per-trait masses, and whatever the optional observer adds.
    """
    if t_end < state.time:
        raise ValueError("t_end must be >= current time")
    log = []

    def observe(s):
        row = {"t": s.time,
               "mass": {u: s.mass(u) for u in s.traits}}
        if observer is not None:
            row.update(observer(s))
        log.append(row)

    next_obs = state.time if observe_every is not None else np.inf
    while state.time < t_end - 1e-12:
        if state.time >= next_obs - 1e-12:
            observe(state)
            next_obs += observe_every
        state = step(state, min(dt, t_end - state.time), spec)
        if not state.traits:
            break
    if observe_every is not None:
        observe(state)
    return state, log
