import json

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from evotss.config import load_preset, parse_config, preset_doc
from evotss.domain import uniform_grid
from evotss.errors import NumericalError
from evotss.pde import (PdeState, dt_max, integrate, step, steady_residual)
from evotss.spectral import principal_eigen


def flat_state(n=101, mass=0.05, trait=0.5):
    grid = uniform_grid((0, 1), n)
    return PdeState(grid, [trait], np.full((1, n), mass))


def test_equilibrium_is_fixed_point():
    spec = load_preset("parabolic_niche")
    eig = principal_eigen(spec, 0.6, 512)
    st = PdeState(eig.g.grid, [0.6], eig.g.density[None, :].copy())
    st1 = step(st, 0.01, spec)
    assert np.max(np.abs(st1.densities - st.densities)) <= (
        1e-8 * eig.g.density.max())


def test_flat_world_logistic_closed_form():
    spec = load_preset("flat")
    st, _ = integrate(flat_state(mass=0.05), spec, 1.0, 5e-4)
    exact = 0.05 * np.e / (1.0 + 0.05 * 10.0 * (np.e - 1.0))
    assert st.mass() == pytest.approx(exact, abs=1e-4)


def test_zero_density_absorbing():
    spec = load_preset("flat")
    st = flat_state(mass=0.0)
    st1, _ = integrate(st, spec, 2.0, 0.01)
    assert not st1.traits or st1.mass() == 0.0


def test_integrate_identity():
    spec = load_preset("flat")
    st = flat_state(mass=0.05)
    st1, _ = integrate(st, spec, st.time, 0.01)
    assert st1.time == st.time
    assert np.array_equal(st1.densities, st.densities)


def test_dt_above_bound_rejected():
    spec = load_preset("flat")
    st = flat_state(mass=0.05)
    with pytest.raises(ValueError, match="stability"):
        step(st, 2 * dt_max(st, spec), spec)


def test_steady_residual_examples():
    spec = load_preset("flat")
    eig = principal_eigen(spec, 0.5, 256)
    # at the equilibrium
    st = PdeState(eig.g.grid, [0.5], eig.g.density[None, :].copy())
    res = steady_residual(st, spec)[0.5]
    assert res <= 1e-6 * spec.bounds.b_max * eig.mass
    # at zero
    st0 = PdeState(eig.g.grid, [0.5], np.zeros((1, len(eig.g.grid))))
    assert steady_residual(st0, spec)[0.5] == 0.0
    # doubled equilibrium: residual = |(1 - 2)| * 0.2 in the flat world
    st2 = PdeState(eig.g.grid, [0.5], 2.0 * eig.g.density[None, :])
    assert steady_residual(st2, spec)[0.5] == pytest.approx(0.2, rel=1e-6)


def test_mass_growth_bounded_per_step():
    spec = load_preset("parabolic_niche")
    grid = uniform_grid((0, 1), 128)
    rng = np.random.default_rng(0)
    st = PdeState(grid, [0.6], (0.1 + 0.2 * rng.random(128))[None, :])
    dt = 0.5 * dt_max(st, spec)
    for _ in range(200):
        m0 = st.mass()
        st = step(st, dt, spec)
        assert st.mass() <= m0 * (1.0 + dt * spec.bounds.b_max) + 1e-12


def test_two_traits_fixation_matches_ode_oracle():
    # flat world, traits with growth 1 and 2: the spatially uniform system
    # reduces to two coupled logistic ODEs
    doc = preset_doc("flat")
    doc["birth"] = {"type": "trait_table", "traits": [0.2, 0.8],
                    "values": [2.0, 3.0]}
    spec = parse_config(json.dumps(doc))
    grid = uniform_grid((0, 1), 101)
    st = PdeState(grid, [0.2, 0.8], np.full((2, 101), 0.05))
    st, _ = integrate(st, spec, 100.0, 0.002)

    def rhs(t, n):
        tot = 10.0 * (n[0] + n[1])
        return [n[0] * (1.0 - tot), n[1] * (2.0 - tot)]

    ode = solve_ivp(rhs, (0, 100.0), [0.05, 0.05], rtol=1e-10, atol=1e-14)
    n_u, n_v = ode.y[:, -1]
    assert n_u <= 1e-6
    assert st.mass(0.8) == pytest.approx(n_v, abs=1e-3)
    assert 0.2 not in st.traits          # dropped once below the mass floor
    assert np.allclose(st.densities[st.traits.index(0.8)], 0.2, atol=1e-3)


def test_trait_removed_below_floor():
    spec = load_preset("flat")
    grid = uniform_grid((0, 1), 64)
    st = PdeState(grid, [0.3, 0.5], np.vstack([np.full(64, 1e-11),
                                               np.full(64, 0.05)]))
    st1 = step(st, 0.01, spec)
    assert st1.traits == [0.5]
    assert st1.removed and st1.removed[0][0] == 0.3


def test_divergence_detected():
    spec = load_preset("flat")
    grid = uniform_grid((0, 1), 32)
    st = PdeState(grid, [0.5], np.full((1, 32), np.nan))
    with pytest.raises(NumericalError):
        step(st, 1e-3, spec)


def test_resolution_order_niche_preset():
    spec = load_preset("parabolic_niche")
    sols = {}
    for n in (256, 512, 1024):
        grid = uniform_grid((0, 1), n)
        bump = np.exp(-0.5 * ((grid - 0.5) / 0.05) ** 2)
        bump *= 0.2 / np.trapezoid(bump, grid)
        st = PdeState(grid, [0.6], bump[None, :])
        st, _ = integrate(st, spec, 20.0, 0.005)
        sols[n] = (grid, st.densities[0])
    d1 = np.max(np.abs(sols[256][1]
                       - np.interp(sols[256][0], *sols[512])))
    d2 = np.max(np.abs(sols[512][1]
                       - np.interp(sols[512][0], *sols[1024])))
    assert 2.0 <= d1 / d2 <= 8.0
