import json

import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal

from evotss.config import load_preset, parse_config, preset_doc
from evotss.domain import trapezoid_weights, uniform_grid
from evotss.spectral import (PairCase, classify_pair, invasion_fitness,
                             kappa, principal_eigen, principal_eigen_grid,
                             sym_tridiag)


def two_trait_spec(b_u=2.0, b_v=3.0, c=10.0):
    doc = preset_doc("flat")
    doc["birth"] = {"type": "trait_table", "traits": [0.2, 0.8],
                    "values": [b_u, b_v]}
    if c != 10.0:
        doc["competition"] = {"type": "constant", "value": c}
    return parse_config(json.dumps(doc))


def test_constant_world_closed_form():
    spec = load_preset("flat")
    eig = principal_eigen(spec, 0.5, 256)
    assert eig.viable
    assert eig.H == pytest.approx(1.0, rel=1e-9)
    assert np.allclose(eig.g.density, 0.1, rtol=1e-6)
    assert eig.mass == pytest.approx(0.1, rel=1e-8)
    assert eig.normalization_residual < 1e-8
    # operator residual at the normalized profile
    assert eig.residual_inf <= 1e-6 * eig.g.density.max()


def test_negative_growth_not_viable():
    doc = preset_doc("flat")
    doc["birth"] = {"type": "constant", "value": 1.0}
    doc["death"] = {"type": "constant", "value": 2.0}
    spec = parse_config(json.dumps(doc))
    eig = principal_eigen(spec, 0.5, 128)
    assert not eig.viable
    assert eig.H == pytest.approx(-1.0, rel=1e-9)
    # nonviable profile is the unit-L2 eigenvector
    w = trapezoid_weights(eig.g.grid)
    assert np.sum(w * eig.g.density ** 2) == pytest.approx(1.0, rel=1e-9)


def test_matches_direct_tridiagonal_solve():
    # oracle: full symmetric tridiagonal eigensolve of the same stencil
    spec = load_preset("parabolic_niche")
    grid = uniform_grid((0, 1), 512)
    q = spec.b(grid, 0.6) - spec.d(grid, 0.6)
    H, g = principal_eigen_grid(0.003, q, grid)
    diag, off = sym_tridiag(0.003, q, grid[1] - grid[0])
    lam, _ = eigh_tridiagonal(diag, off, select="i", select_range=(511, 511))
    assert H == pytest.approx(float(lam[0]), rel=1e-12, abs=1e-10)


def test_grid_convergence_second_order():
    spec = load_preset("parabolic_niche")
    H = {n: principal_eigen(spec, 0.6, n).H for n in (256, 512, 1024)}
    ratio = (H[256] - H[512]) / (H[512] - H[1024])
    assert 3.5 <= ratio <= 4.5


def test_positive_eigenfunction():
    spec = load_preset("parabolic_niche")
    eig = principal_eigen(spec, 0.6, 512)
    assert np.all(eig.g.density > 0)


def test_rayleigh_quotient_consistency():
    spec = load_preset("parabolic_niche")
    eig = principal_eigen(spec, 0.6, 512)
    g = eig.g.density
    grid = eig.g.grid
    h = grid[1] - grid[0]
    w = trapezoid_weights(grid)
    q = np.asarray(spec.b(grid, 0.6) - spec.d(grid, 0.6))
    grad = np.sum((np.diff(g) / h) ** 2 * h)
    rq = (-0.003 * grad + np.sum(w * q * g ** 2)) / np.sum(w * g ** 2)
    assert rq == pytest.approx(eig.H, rel=1e-8)


def test_kappa_constant_kernel():
    spec = load_preset("flat")
    eig = principal_eigen(spec, 0.5, 256)
    assert kappa(spec, 0.9, eig) == pytest.approx(10.0, rel=1e-12)


def test_kappa_linear_in_y():
    # c(u,y,v) = y with a flat equilibrium: kappa is the mean location 0.5
    doc = preset_doc("flat")
    doc["competition"] = {"type": "affine", "arg": "y",
                          "intercept": 0.0, "slope": 1.0}
    spec = parse_config(json.dumps(doc))
    eig = principal_eigen(spec, 0.5, 256)
    assert eig.viable
    assert kappa(spec, 0.3, eig) == pytest.approx(0.5, rel=1e-9)


def test_invasion_fitness_constant_world():
    spec = two_trait_spec(2.0, 3.0)
    assert invasion_fitness(spec, 0.8, 0.2, 256) == pytest.approx(10.0,
                                                                  rel=1e-9)
    assert invasion_fitness(spec, 0.2, 0.2, 256) == pytest.approx(0.0,
                                                                  abs=1e-9)
    spec_del = two_trait_spec(2.0, 1.5)
    assert invasion_fitness(spec_del, 0.8, 0.2, 256) == pytest.approx(
        -5.0, rel=1e-9)


def test_classify_cases():
    spec = two_trait_spec(2.0, 3.0)
    assert classify_pair(spec, 0.2, 0.8, 256).case is PairCase.CASE2_FIXATION
    assert classify_pair(spec, 0.8, 0.2, 256).case is (
        PairCase.CASE1_NO_INVASION)


def test_classify_mutant_nonviable():
    doc = preset_doc("flat")
    doc["birth"] = {"type": "trait_table", "traits": [0.2, 0.8],
                    "values": [2.0, 0.5]}
    spec = parse_config(json.dumps(doc))
    cls = classify_pair(spec, 0.2, 0.8, 128)
    assert cls.case is PairCase.MUTANT_NONVIABLE_ALONE


def test_classify_coexistence_violation():
    doc = preset_doc("flat")
    doc["competition"] = {"type": "trait_matrix", "traits": [0.2, 0.8],
                          "matrix": [[10.0, 1.0], [1.0, 10.0]]}
    spec = parse_config(json.dumps(doc))
    cls = classify_pair(spec, 0.2, 0.8, 128)
    assert cls.case is PairCase.COEXISTENCE_VIOLATION
    # both cross-fitnesses equal H*(kappa_self - kappa_cross) = 1*(10-1)
    assert cls.fitness_vu == pytest.approx(9.0, rel=1e-9)
    assert cls.fitness_uv == pytest.approx(9.0, rel=1e-9)


def test_neutral_tie_flagged_degenerate():
    spec = two_trait_spec(2.0, 2.0)
    cls = classify_pair(spec, 0.2, 0.8, 128)
    assert cls.case is PairCase.CASE1_NO_INVASION
    assert cls.degenerate


def test_competition_scaling_covariance():
    # c -> lambda*c: kappa scales by lambda, gbar by 1/lambda, the
    # classification is unchanged
    lam = 3.0
    spec1 = two_trait_spec(2.0, 3.0, c=10.0)
    spec2 = two_trait_spec(2.0, 3.0, c=10.0 * lam)
    e1 = principal_eigen(spec1, 0.2, 256)
    e2 = principal_eigen(spec2, 0.2, 256)
    assert e2.H == pytest.approx(e1.H, rel=1e-12)
    assert np.allclose(e2.g.density, e1.g.density / lam, rtol=1e-9)
    assert kappa(spec2, 0.8, e2) == pytest.approx(
        lam * kappa(spec1, 0.8, e1), rel=1e-9)
    f1 = invasion_fitness(spec1, 0.8, 0.2, 256)
    f2 = invasion_fitness(spec2, 0.8, 0.2, 256)
    assert f2 == pytest.approx(lam * f1, rel=1e-9)
    assert classify_pair(spec2, 0.2, 0.8, 256).case is (
        classify_pair(spec1, 0.2, 0.8, 256).case)
