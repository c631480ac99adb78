"""Canned replicate experiments built on the stochastic engine.

Each experiment owns a master seed and derives one child stream per
replicate, so results are reproducible and replicates are independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy import stats

from ..config import ModelSpec, with_scaling
from ..domain import trapezoid_weights
from ..errors import ConfigError
from ..spectral import principal_eigen
from .engine import (Population, StopOnFlatExit, StopOnMonomorphic,
                     StopOnMutation, equilibrium_population, run_branching,
                     simulate)


def _child_seeds(seed, n):
    return np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)


def _map_replicates(fn, seeds, n_jobs=1):
    """Replicates are independent given their seeds; with n_jobs > 1 they
    fan out over a process pool (each worker owns its random stream, so the
    result is reproducible regardless of scheduling)."""
    if n_jobs == 1:
        return [fn(int(s)) for s in seeds]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=n_jobs)(delayed(fn)(int(s)) for s in seeds)


def _branching_verdict(x0, b_fn, d_fn, m, K, epsilon, t_max, domain,
                       d_shift, seed):
    return run_branching(x0, b_fn, d_fn, m, K, epsilon, t_max, seed,
                         domain=domain, d_shift=d_shift).verdict


# -- branching / survival ------------------------------------------------------

def estimate_survival_mc(x0, b_fn, d_fn, m, replicates: int, K: int,
                         epsilon: float, t_max: float, rng,
                         domain=(0.0, 1.0), d_shift: float = 0.0,
                         n_jobs: int = 1):
    """Monte-Carlo frequency of reaching size epsilon*K before extinction,
    with a 3-sigma binomial half-width.  The threshold event is the finite
    proxy for lineage survival: once a supercritical population holds that
    many individuals, extinction has vanishing probability."""
    if replicates < 100:
        raise ConfigError("need at least 100 replicates")
    seeds = _child_seeds(rng, replicates)
    fn = partial(_branching_verdict, x0, b_fn, d_fn, m, K, epsilon, t_max,
                 domain, d_shift)
    outs = _map_replicates(fn, seeds, n_jobs)
    hits = sum(v == "reached_threshold" for v in outs)
    p_hat = hits / replicates
    ci = 3.0 * math.sqrt(max(p_hat * (1.0 - p_hat), 1.0 / replicates)
                         / replicates)
    return p_hat, ci


def growth_time_experiment(b_fn, d_fn, m, K_list, epsilon: float,
                           replicates: int, t_max: float, rng,
                           x0: float = 0.5, domain=(0.0, 1.0)):
    """Conditional-on-survival hitting times of the epsilon*K threshold for
    several K, plus the regression slope of their means against log(eps*K).
    For a supercritical population the slope estimates 1/H."""
    seeds = _child_seeds(rng, replicates * len(K_list))
    times = {}
    it = iter(seeds)
    for K in K_list:
        hit = []
        for _ in range(replicates):
            out = run_branching(x0, b_fn, d_fn, m, K, epsilon, t_max,
                                int(next(it)), domain=domain)
            if out.verdict == "reached_threshold":
                hit.append(out.hitting_time)
        times[K] = np.asarray(hit)
    logs = np.array([math.log(epsilon * K) for K in K_list])
    means = np.array([times[K].mean() for K in K_list])
    slope = float(np.polyfit(logs, means, 1)[0])
    return {"times": times, "log_thresholds": logs, "means": means,
            "slope": slope}


# -- dimorphic fixation ---------------------------------------------------------

@dataclass
class FixationResult:
    replicates: int
    fixed_v: int
    fixed_u: int
    unresolved: int
    theta0: np.ndarray
    phi_prediction: float | None = None

    @property
    def freq_v(self) -> float:
        return self.fixed_v / self.replicates

    def theta0_quantiles(self, qs=(0.25, 0.5, 0.75)):
        return {q: float(np.quantile(self.theta0, q)) for q in qs}


def dimorphic_invasion_experiment(spec: ModelSpec, u: float, v: float,
                                  x0: float, replicates: int, rng,
                                  K: int | None = None,
                                  t_max: float = 1000.0,
                                  n_grid: int = 512) -> FixationResult:
    """One v mutant at x0 inside an equilibrium-sampled u resident; mutations
    are disabled so each replicate runs the pure dimorphic phase until the
    population is monomorphic again (time theta0, surviving trait V0)."""
    if K is not None:
        spec = with_scaling(spec, K=K)
    K = spec.scaling.K
    eig = principal_eigen(spec, u, n_grid)
    seeds = _child_seeds(rng, replicates)
    fixed_v = fixed_u = unresolved = 0
    theta0 = []
    for s in seeds:
        child = np.random.default_rng(int(s))
        pop = equilibrium_population(spec, u, K, child, eig=eig)
        pop = Population(np.append(pop.x, x0), np.append(pop.u, v), K)
        res = simulate(pop, spec, t_max, int(child.integers(2 ** 32)),
                       stop_rules=(StopOnMonomorphic(),), q_override=0.0)
        if res.stop_reason not in ("monomorphic", "extinction"):
            unresolved += 1
            continue
        theta0.append(res.time)
        survivors = set(np.unique(res.population.u))
        if survivors == {v}:
            fixed_v += 1
        else:
            fixed_u += 1
    return FixationResult(replicates=replicates, fixed_v=fixed_v,
                          fixed_u=fixed_u, unresolved=unresolved,
                          theta0=np.asarray(theta0))


# -- first mutation --------------------------------------------------------------

@dataclass
class FirstMutationResult:
    rescaled_times: np.ndarray
    censored: int
    replicates: int
    beta: float
    ks_stat: float
    ks_pvalue: float

    @property
    def censoring_fraction(self) -> float:
        return self.censored / self.replicates


def attempted_mutation_intensity(spec: ModelSpec, eig) -> float:
    """int p(x,u) b(x,u) g_u(x) dx: the mutation intensity per rescaled time
    unit at the u equilibrium."""
    grid = eig.g.grid
    w = trapezoid_weights(grid)
    u = eig.trait
    return float(np.sum(w * np.asarray(spec.p(grid, u))
                        * np.asarray(spec.b(grid, u)) * eig.g.density))


def first_mutation_law_experiment(spec: ModelSpec, u: float, replicates: int,
                                  rng, t_max: float = 500.0,
                                  n_grid: int = 512) -> FirstMutationResult:
    """Distribution of the rescaled first-mutation time K*q_K*S1 started from
    the u equilibrium, compared against Exp(beta) by a KS test."""
    if spec.scaling.q_K <= 0:
        raise ConfigError("needs q_K > 0")
    eig = principal_eigen(spec, u, n_grid)
    beta = attempted_mutation_intensity(spec, eig)
    K, qK = spec.scaling.K, spec.scaling.q_K
    seeds = _child_seeds(rng, replicates)
    rescaled = []
    censored = 0
    for s in seeds:
        child = np.random.default_rng(int(s))
        pop = equilibrium_population(spec, u, K, child, eig=eig)
        res = simulate(pop, spec, t_max, int(child.integers(2 ** 32)),
                       stop_rules=(StopOnMutation(),))
        if res.stop_reason == "mutation":
            rescaled.append(K * qK * res.time)
        else:
            censored += 1
    rescaled = np.asarray(rescaled)
    if len(rescaled) and beta > 0:
        ks = stats.kstest(rescaled, "expon", args=(0.0, 1.0 / beta))
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
    else:
        ks_stat, ks_p = float("nan"), float("nan")
    return FirstMutationResult(rescaled_times=rescaled, censored=censored,
                               replicates=replicates, beta=beta,
                               ks_stat=ks_stat, ks_pvalue=ks_p)


# -- residence time ---------------------------------------------------------------

def residence_time_experiment(spec: ModelSpec, u: float, gamma: float,
                              K_list, rng, seeds_per_K: int = 20,
                              t_max: float = 200.0, cadence: float = 0.25,
                              n_grid: int = 256):
    """First time the flat distance between the u population and its
    equilibrium profile reaches gamma, per K; exits are detected on the
    observation cadence and truncated at t_max."""
    eig = principal_eigen(spec, u, max(n_grid, 256))
    seeds = _child_seeds(rng, seeds_per_K * len(K_list))
    it = iter(seeds)
    exit_times = {}
    for K in K_list:
        spec_K = with_scaling(spec, K=int(K))
        rule = StopOnFlatExit(reference=eig.g, gamma=gamma, n_grid=n_grid)
        vals = []
        for _ in range(seeds_per_K):
            child = np.random.default_rng(int(next(it)))
            pop = equilibrium_population(spec_K, u, int(K), child, eig=eig)
            res = simulate(pop, spec_K, t_max,
                           int(child.integers(2 ** 32)),
                           observe_every=cadence, stop_rules=(rule,),
                           q_override=0.0)
            vals.append(res.time if res.stop_reason == "flat_exit" else t_max)
        exit_times[int(K)] = np.asarray(vals)
    medians = {K: float(np.median(v)) for K, v in exit_times.items()}
    return {"exit_times": exit_times, "medians": medians, "gamma": gamma}
