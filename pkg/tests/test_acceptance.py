"""End-to-end acceptance checks linking the four model levels.

One test per criterion; each prints a single [PASS]/[FAIL] line with the
measured numbers so the suite output doubles as a verification report.
Tolerances are fixed here, not tuned at runtime: statistical checks use
3-sigma bands at their stated replicate counts with fixed seeds.
"""

import json
import time

import numpy as np
import pytest
from scipy.optimize import linprog

from evotss.cli import constant_world_suite
from evotss.config import (FunctionHandle, load_preset, parse_config,
                           preset_doc, with_scaling)
from evotss.domain import (EmpiricalMeasure, deposit_atoms, flat_distance,
                           flat_distance_coarse, sample_from_grid_density,
                           uniform_grid)
from evotss.ibm import (Population, dimorphic_invasion_experiment,
                        equilibrium_population, estimate_survival_mc,
                        first_mutation_law_experiment, growth_time_experiment,
                        residence_time_experiment, simulate)
from evotss.pde import PdeState, integrate
from evotss.spectral import principal_eigen
from evotss.survival import solve_phi_star, solve_phi_vu
from evotss.tss import TraitCache, simulate_tss

pytestmark = pytest.mark.acceptance


def report(name, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def two_trait_doc(b_u=2.0, b_v=3.0, K=2000, q=0.0):
    doc = preset_doc("flat")
    doc["birth"] = {"type": "trait_table", "traits": [0.2, 0.8],
                    "values": [b_u, b_v]}
    doc["mutation_kernel"] = {"type": "discrete_point_set",
                              "traits": [0.2, 0.8],
                              "weights": [0.5, 0.5], "exclude_self": True}
    doc["scaling"] = {"K": K, "q_K": q}
    return doc


def test_constant_world_analytic_suite():
    t0 = time.time()
    checks = constant_world_suite()
    elapsed = time.time() - t0
    bad = [c for c in checks if not c[3]]
    report("constant-world analytic suite",
           not bad and elapsed < 1.0,
           f"{len(checks)} closed-form identities at 1e-6 relative, "
           f"{elapsed:.2f}s" + (f"; failed: {bad}" if bad else ""))


def test_eigen_and_elliptic_grid_convergence():
    t0 = time.time()
    spec = load_preset("parabolic_niche")
    H = {}
    phi = {}
    for n in (512, 1024, 2048):
        eig = principal_eigen(spec, 0.6, n)
        H[n] = eig.H
        phi[n] = solve_phi_vu(spec, 0.515, eig)
    r_h = (H[512] - H[1024]) / (H[1024] - H[2048])
    d1 = np.max(np.abs(phi[512].phi
                       - np.interp(uniform_grid((0, 1), 512),
                                   phi[1024].grid, phi[1024].phi)))
    d2 = np.max(np.abs(phi[1024].phi
                       - np.interp(uniform_grid((0, 1), 1024),
                                   phi[2048].grid, phi[2048].phi)))
    r_phi = d1 / d2
    elapsed = time.time() - t0
    report("eigen/elliptic grid convergence",
           3.5 <= r_h <= 4.5 and 3.0 <= r_phi <= 5.0 and elapsed < 10.0,
           f"H ratio {r_h:.3f} in [3.5,4.5], phi ratio {r_phi:.3f} "
           f"in [3,5], {elapsed:.1f}s")


def test_survival_cross_validation():
    t0 = time.time()
    grid = uniform_grid((0, 1), 512)
    prof = solve_phi_star(0.01, 2.0 + grid, np.ones(512), grid)
    b_fn = FunctionHandle("affine", {"intercept": 2.0, "slope": 1.0,
                                     "arg": "x",
                                     "_role_args": ("x", "u")})
    lines = []
    ok = True
    for i, x0 in enumerate((0.25, 0.5, 0.75)):
        p, ci = estimate_survival_mc(x0, b_fn, 1.0, 0.01, 10000, 10000,
                                     0.1, 150.0, 1000 + i)
        want = float(prof(x0))
        ok &= abs(p - want) <= ci
        lines.append(f"x0={x0}: mc {p:.4f}+-{ci:.4f} vs elliptic {want:.4f}")
    elapsed = time.time() - t0
    report("branching survival vs elliptic solution",
           ok and elapsed < 300.0,
           "; ".join(lines) + f"; {elapsed:.0f}s (3-sigma, 1e4 replicates)")


def test_growth_time_law():
    t0 = time.time()
    out = growth_time_experiment(2.0, 1.0, 0.01, [1000, 10000, 100000],
                                 0.1, 400, 100.0, 314)
    elapsed = time.time() - t0
    slope = out["slope"]
    report("threshold hitting-time growth law",
           0.8 <= slope <= 1.2 and elapsed < 300.0,
           f"slope of mean hitting time vs log(eps*K) = {slope:.3f}, "
           f"target 1/H = 1 within +-20%; {elapsed:.0f}s")


def test_fixation_probability():
    t0 = time.time()
    spec = parse_config(json.dumps(two_trait_doc(K=5000)))
    res = dimorphic_invasion_experiment(spec, 0.2, 0.8, 0.5, 2000, 2025)
    band = 3.0 * np.sqrt((1.0 / 3.0) * (2.0 / 3.0) / 2000)
    elapsed = time.time() - t0
    report("dimorphic fixation probability",
           abs(res.freq_v - 1.0 / 3.0) <= band and res.unresolved == 0
           and elapsed < 600.0,
           f"v-fixation {res.freq_v:.4f} vs 1/3 +- {band:.4f} "
           f"(2000 replicates, K=5000); {elapsed:.0f}s")


def test_first_mutation_law():
    t0 = time.time()
    doc = preset_doc("flat")
    doc["scaling"] = {"K": 2000, "q_K": 1e-3}
    spec = parse_config(json.dumps(doc))
    res = first_mutation_law_experiment(spec, 0.5, 500, 313, t_max=300.0)
    elapsed = time.time() - t0
    report("first-mutation exponential law",
           abs(res.beta - 0.02) < 1e-6 and res.ks_pvalue > 0.01
           and res.censoring_fraction < 0.05 and elapsed < 600.0,
           f"KS vs Exp({res.beta:.3g}): p={res.ks_pvalue:.3f} > 0.01 "
           f"(500 replicates, {res.censored} censored); {elapsed:.0f}s")


def test_limit_pde_consistency():
    t0 = time.time()
    spec = with_scaling(load_preset("parabolic_niche"), K=5000, q_K=0.0)
    grid = uniform_grid((0, 1), 256)
    bump = np.exp(-0.5 * ((grid - 0.5) / 0.05) ** 2)
    bump *= 0.3 / np.trapezoid(bump, grid)
    st = PdeState(grid, [0.6], bump[None, :].copy())
    st, _ = integrate(st, spec, 10.0, 0.005)
    ref = st.measure(0.6)
    xs_all = []
    for s in range(10):
        rng = np.random.default_rng(1000 + s)
        n0 = int(round(5000 * 0.3))
        x0 = sample_from_grid_density(grid, bump, n0, rng)
        pop = Population(x0, np.full(n0, 0.6), 5000)
        res = simulate(pop, spec, 10.0, int(rng.integers(2 ** 32)))
        xs_all.append(res.population.x)
    xs = np.concatenate(xs_all)
    avg = EmpiricalMeasure(xs, np.full(len(xs), 0.6), 10 * 5000)
    val, _ = flat_distance_coarse(avg, ref, n_nodes=256)
    elapsed = time.time() - t0
    report("stochastic-vs-PDE consistency at t=10",
           val <= 0.05 * ref.mass and elapsed < 600.0,
           f"flat distance {val:.4f} <= 0.05*mass = {0.05 * ref.mass:.4f} "
           f"(10-seed average, K=5000); {elapsed:.0f}s")


def test_exit_time_monotonicity():
    t0 = time.time()
    spec = load_preset("flat")
    out = residence_time_experiment(spec, 0.5, gamma=0.03,
                                    K_list=[500, 1000, 2000], rng=99,
                                    seeds_per_K=20, t_max=300.0,
                                    cadence=0.25, n_grid=256)
    med = [out["medians"][K] for K in (500, 1000, 2000)]
    elapsed = time.time() - t0
    report("equilibrium residence time grows with K",
           med[0] < med[1] < med[2],
           f"median exit times {med} strictly increasing over "
           f"K=500,1000,2000 (gamma=0.03, 20 seeds each); {elapsed:.0f}s")


def test_tss_vs_microscopic():
    t0 = time.time()
    # jump-rate check on the substitution chain itself
    spec_tss = parse_config(json.dumps(two_trait_doc()))
    cache = TraitCache(spec_tss, 256)
    rng = np.random.default_rng(11)
    firsts = []
    for _ in range(1000):
        traj = simulate_tss(0.2, spec_tss, 3000.0, rng, cache=cache)
        assert traj.jumps
        firsts.append(traj.jumps[0].t)
        assert all(j.u_to == 0.8 for j in traj.jumps)
    mean = float(np.mean(firsts))
    band = 3.0 * 150.0 / np.sqrt(len(firsts))
    ok_rate = abs(mean - 150.0) <= band

    # microscopic runs substitute in the same direction only
    spec_mic = parse_config(json.dumps(two_trait_doc(K=2000, q=1e-3)))
    flips_uv = flips_vu = completed = 0
    seeds = iter(np.random.SeedSequence(77).generate_state(200))
    while completed < 100:
        child = np.random.default_rng(int(next(seeds)))
        pop = equilibrium_population(spec_mic, 0.2, 2000, child)
        res = simulate(pop, spec_mic, 200.0,
                       int(child.integers(2 ** 32)), observe_every=1.0)
        resident = 0.2
        had = False
        for row in res.log.observations:
            alive = [t for t, m in row["trait_mass"].items() if m > 0]
            if len(alive) == 1 and abs(alive[0] - resident) > 1e-9:
                if resident == 0.2:
                    flips_uv += 1
                else:
                    flips_vu += 1
                resident = alive[0]
                had = True
        completed += had
    frac = flips_uv / (flips_uv + flips_vu)
    elapsed = time.time() - t0
    report("substitution chain vs microscopic runs",
           ok_rate and frac >= 0.95,
           f"mean first-jump {mean:.1f} vs 150 +- {band:.1f} (1000 runs); "
           f"microscopic flips u->v {flips_uv}, v->u {flips_vu} "
           f"({100 * frac:.0f}% forward, 100 completed runs); {elapsed:.0f}s")


def test_niche_shift_phenomenology():
    t0 = time.time()
    spec = with_scaling(load_preset("parabolic_niche"), K=20000, q_K=1e-4)
    pop = Population.point(0.5, 0.6, 20000, 20000)
    res = simulate(pop, spec, 1600.0, 42, observe_every=2.0,
                   snapshot_every=100.0)
    # first substitution: dominant trait change along the observation path
    first_change = None
    for row in res.log.observations:
        tm = row["trait_mass"]
        dom = max(tm, key=tm.get)
        if abs(dom - 0.6) > 1e-9:
            first_change = (row["t"], dom)
            break
    ok_down = first_change is not None and first_change[1] < 0.6

    # support width per near-monomorphic regime (>=90% in the dominant trait)
    grid = uniform_grid((0, 1), 201)
    regimes = {}
    for (t, xs, us) in res.log.snapshots:
        if t == 0.0 or len(us) == 0:
            continue
        traits, counts = np.unique(np.round(us, 3), return_counts=True)
        dom = float(traits[np.argmax(counts)])
        if counts.max() / len(us) < 0.9:
            continue
        sel = np.abs(us - dom) <= 0.05
        gm = deposit_atoms(xs[sel], np.full(int(sel.sum()), 1 / 20000), grid)
        width = int(np.sum(gm.density >= 0.05 * gm.density.max()))
        regimes.setdefault(dom, []).append(width)
    order = sorted(regimes, key=lambda d: -d)   # traits decrease over time
    w_first = float(np.mean(regimes[order[0]]))
    w_last = float(np.mean(regimes[order[-1]]))
    elapsed = time.time() - t0
    report("niche-shift phenomenology at desk scale",
           ok_down and len(order) >= 2 and w_last > w_first,
           f"first substitution 0.6 -> {first_change[1]:.3f} at "
           f"t={first_change[0]:.0f} (smaller trait); mean support "
           f"{w_first:.1f} -> {w_last:.1f} nodes across "
           f"{[round(d, 3) for d in order]}; {elapsed:.0f}s")


def flat_dense_dual_oracle(xa, wa, xb, wb):
    z = np.concatenate([xa, xb])
    w = np.concatenate([wa, -wb])
    m = len(z)
    rows, rhs = [], []
    for i in range(m):
        for j in range(i + 1, m):
            row = np.zeros(m)
            row[i], row[j] = 1.0, -1.0
            rows.append(row.copy())
            rhs.append(abs(z[i] - z[j]))
            rows.append(-row)
            rhs.append(abs(z[i] - z[j]))
    res = linprog(-w, A_ub=np.array(rows), b_ub=np.array(rhs),
                  bounds=[(-1, 1)] * m, method="highs")
    return float(-res.fun)


def test_flat_metric_oracle_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(200):
        na, nb = rng.integers(1, 11, size=2)
        xa, xb = rng.random(na), rng.random(nb)
        wa, wb = rng.random(na), rng.random(nb)
        want = flat_dense_dual_oracle(xa, wa, xb, wb)
        got = flat_distance((xa, wa), (xb, wb))
        worst = max(worst, abs(got - want))
    elapsed = time.time() - t0
    report("flat metric vs brute-force dual LP",
           worst <= 1e-9 and elapsed < 10.0,
           f"200 random atom pairs, worst |diff| = {worst:.2e} <= 1e-9; "
           f"{elapsed:.1f}s")
