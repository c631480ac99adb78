"""Trajectory-level driver for the stochastic engine.

Two interchangeable backends run the same exact-thinning event chain:

* a compiled one (kernels.run_segment) for models whose coefficients fall in
  the closed variant family and whose competition kernel is constant -- this
  covers every built-in experiment and is ~50x faster;
* a pure-Python reference that accepts arbitrary coefficient functions and
  spatially dependent competition, advancing all particles by reflected Euler
  substeps of size dt_motion between candidate events.

A trajectory owns its random stream; identical (seed, config) pairs give
bit-identical event logs for a given backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..config import ModelSpec
from ..domain import (GridMeasure, EmpiricalMeasure, flat_distance_coarse,
                      reflect, sample_from_grid_density)
from ..errors import CapacityError, ConfigError
from ..spectral import EigenSolution, principal_eigen
from . import kernels
from .encode import encode_function, encode_model

HARD_CAP = 10_000_000

KIND_NAMES = {0: "birth", 1: "mutant_birth", 2: "death"}


# -- populations ---------------------------------------------------------------

@dataclass
class Population:
    x: np.ndarray
    u: np.ndarray
    K: int
    time: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.u = np.asarray(self.u, dtype=float)

    def __len__(self):
        return len(self.x)

    @property
    def mass(self) -> float:
        return len(self.x) / self.K

    def measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.x.copy(), self.u.copy(), self.K)

    def trait_masses(self) -> dict:
        traits, counts = np.unique(self.u, return_counts=True)
        return {float(t): c / self.K for t, c in zip(traits, counts)}

    @classmethod
    def point(cls, x0: float, u0: float, n: int, K: int, time: float = 0.0):
        return cls(np.full(n, float(x0)), np.full(n, float(u0)), K, time)


def equilibrium_population(spec: ModelSpec, u: float, K: int, rng,
                           eig: EigenSolution | None = None,
                           n_grid: int = 512) -> Population:
    """round(K * mass) individuals drawn from the equilibrium profile."""
    eig = eig or principal_eigen(spec, u, n_grid)
    if not eig.viable:
        raise ValueError(f"trait {u} is not viable (H = {eig.H})")
    n = int(round(K * eig.mass))
    xs = sample_from_grid_density(eig.g.grid, eig.g.density, n, rng)
    return Population(xs, np.full(n, float(u)), K)


# -- stop rules ----------------------------------------------------------------

@dataclass
class StopOnMutation:
    pass


@dataclass
class StopOnTraitMass:
    trait: float
    mass: float


@dataclass
class StopOnPopSize:
    count: int


@dataclass
class StopOnMonomorphic:
    """Dimorphic initial state: stop when either initial trait dies out."""


@dataclass
class StopOnFlatExit:
    """Stop when the flat distance to a reference profile reaches gamma
    (checked on the observation cadence)."""

    reference: GridMeasure
    gamma: float
    n_grid: int = 256


# -- results -------------------------------------------------------------------

@dataclass
class EventLog:
    events: dict = field(default_factory=dict)
    observations: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    @property
    def n_events(self) -> int:
        return len(self.events.get("t", ()))


@dataclass
class SimResult:
    population: Population
    log: EventLog
    stop_reason: str
    time: float


@dataclass
class BranchingOutcome:
    verdict: str              # extinct | reached_threshold | timed_out
    hitting_time: float
    peak_size: int


_STATUS_REASON = {
    kernels.ST_TIME: "t_end",
    kernels.ST_EXTINCT: "extinction",
    kernels.ST_THRESHOLD: "threshold",
    kernels.ST_MUTATION: "mutation",
    kernels.ST_MONOMORPHIC: "monomorphic",
}


def _as_seed(rng) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng) % 2 ** 32
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2 ** 32))
    raise ConfigError("rng must be an integer seed or numpy Generator")


# -- compiled backend ----------------------------------------------------------

class _JitBackend:
    def __init__(self, pop: Population, spec: ModelSpec, seed: int,
                 stop_rules, record_events: bool, q_K: float,
                 d_shift: float = 0.0, hard_cap: int = HARD_CAP):
        enc = encode_model(spec)
        if enc is None:
            raise ConfigError("model not expressible on the compiled engine")
        self.enc = enc
        self.spec = spec
        self.hard_cap = hard_cap
        self.record = record_events
        self.q_K = q_K
        self.d_shift = d_shift
        n0 = len(pop)
        cap = max(2 * n0 + 64, 1024)
        self._alloc(cap)
        self.xs[:n0] = pop.x
        self.us[:n0] = pop.u
        mvals = np.asarray(spec.m(pop.u), dtype=float)
        self.sq2m[:n0] = np.sqrt(2.0 * np.broadcast_to(mvals, (n0,)))
        self.tlast[:n0] = pop.time
        traits, inv = np.unique(pop.u, return_inverse=True)
        tcap = max(4 * len(traits) + 64, 256)
        self.utraits = np.zeros(tcap)
        self.ucounts = np.zeros(tcap, dtype=np.int64)
        self.utraits[:len(traits)] = traits
        counts = np.bincount(inv, minlength=len(traits))
        self.ucounts[:len(traits)] = counts
        self.tidx[:n0] = inv
        self.istate = np.array([n0, len(traits), n0], dtype=np.int64)
        self.fstate = np.array([pop.time], dtype=np.float64)
        self._setup_stops(stop_rules)
        kernels.seed_stream(seed % 2 ** 32)

    def _alloc(self, cap):
        self.xs = np.zeros(cap)
        self.us = np.zeros(cap)
        self.sq2m = np.zeros(cap)
        self.tlast = np.zeros(cap)
        self.tidx = np.zeros(cap, dtype=np.int64)

    def _grow(self):
        if self.istate[1] >= self.utraits.shape[0]:   # trait registry full
            old = self.utraits.shape[0]
            for name in ("utraits", "ucounts"):
                arr = getattr(self, name)
                bigger = np.zeros(2 * old, dtype=arr.dtype)
                bigger[:old] = arr
                setattr(self, name, bigger)
            return
        old = self.xs.shape[0]
        if old >= self.hard_cap:
            raise CapacityError(
                f"population exceeded the hard cap of {self.hard_cap}")
        new = min(2 * old, self.hard_cap)
        for name in ("xs", "us", "sq2m", "tlast", "tidx"):
            arr = getattr(self, name)
            bigger = np.zeros(new, dtype=arr.dtype)
            bigger[:old] = arr
            setattr(self, name, bigger)

    def _slot_of(self, trait: float) -> int:
        n = self.istate[1]
        hits = np.nonzero(self.utraits[:n] == trait)[0]
        if len(hits) == 0:
            raise ConfigError(f"stop rule refers to absent trait {trait}")
        return int(hits[0])

    def _setup_stops(self, rules):
        self.stop_on_mut = 0
        self.stop_n_ge = -1
        self.stop_slot = -1
        self.stop_slot_count = 0
        self.watch_a = self.watch_b = -1
        for rule in rules:
            if isinstance(rule, StopOnMutation):
                self.stop_on_mut = 1
            elif isinstance(rule, StopOnPopSize):
                self.stop_n_ge = int(rule.count)
            elif isinstance(rule, StopOnTraitMass):
                self.stop_slot = self._slot_of(rule.trait)
                self.stop_slot_count = int(math.ceil(rule.mass * self.enc.K))
            elif isinstance(rule, StopOnMonomorphic):
                if self.istate[1] != 2:
                    raise ConfigError("StopOnMonomorphic needs exactly 2 traits")
                self.watch_a, self.watch_b = 0, 1
            elif isinstance(rule, StopOnFlatExit):
                pass      # handled by the driver on the observation cadence
            else:
                raise ConfigError(f"unknown stop rule {rule!r}")

    def run(self, t_until: float, max_events: int, ev_buffers):
        enc = self.enc
        st, n_ev, n_log = kernels.run_segment(
            self.xs, self.us, self.sq2m, self.tlast, self.tidx,
            self.utraits, self.ucounts,
            self.istate, self.fstate,
            enc.xlo, enc.xhi, enc.ulo, enc.uhi,
            enc.b.code, enc.b.par, enc.b.grid, enc.b.vals,
            enc.d.code, enc.d.par, enc.d.grid, enc.d.vals,
            enc.p.code, enc.p.par, enc.p.grid, enc.p.vals,
            enc.mfn.code, enc.mfn.par, enc.mfn.grid, enc.mfn.vals,
            enc.kernel.code, enc.kernel.par, enc.kernel.traits,
            enc.kernel.cumw,
            enc.c0, self.d_shift, self.q_K, float(enc.K),
            enc.b.vmax, enc.d.vmax + self.d_shift, enc.c0,
            t_until, max_events,
            self.stop_on_mut, self.stop_n_ge,
            self.stop_slot, self.stop_slot_count,
            self.watch_a, self.watch_b,
            1 if self.record else 0,
            *ev_buffers)
        return st, n_ev, n_log

    def sync(self):
        kernels.sync_positions(self.xs, self.sq2m, self.tlast,
                               self.istate[0], self.fstate[0],
                               self.enc.xlo, self.enc.xhi)

    @property
    def n(self) -> int:
        return int(self.istate[0])

    @property
    def t(self) -> float:
        return float(self.fstate[0])

    def population(self) -> Population:
        n = self.n
        return Population(self.xs[:n].copy(), self.us[:n].copy(),
                          self.enc.K, self.t)

    def trait_masses(self) -> dict:
        n = int(self.istate[1])
        return {float(self.utraits[k]): int(self.ucounts[k]) / self.enc.K
                for k in range(n) if self.ucounts[k] > 0}

    @property
    def peak(self) -> int:
        return int(self.istate[2])


# -- reference backend ---------------------------------------------------------

class _PyBackend:
    """Spec-literal loop: all particles advance by reflected Euler substeps
    up to each candidate time; competition is summed over the population."""

    def __init__(self, pop: Population, spec: ModelSpec, seed: int,
                 stop_rules, record_events: bool, q_K: float,
                 d_shift: float = 0.0, dt_motion: float = 1e-3,
                 hard_cap: int = HARD_CAP):
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.xs = list(map(float, pop.x))
        self.us = list(map(float, pop.u))
        self.q_K = q_K
        self.d_shift = d_shift
        self.dt_motion = dt_motion
        self.hard_cap = hard_cap
        self.record = record_events
        self.t_now = pop.time
        self.K = spec.scaling.K
        self.events = []
        self.peak = len(self.xs)
        self.stop_rules = list(stop_rules)
        self._mono_traits = sorted(set(self.us)) if any(
            isinstance(r, StopOnMonomorphic) for r in stop_rules) else None

    @property
    def n(self):
        return len(self.xs)

    @property
    def t(self):
        return self.t_now

    def _advance_all(self, t_target):
        remaining = t_target - self.t_now
        if remaining <= 0 or not self.xs:
            self.t_now = t_target
            return
        spec = self.spec
        xs = np.asarray(self.xs)
        mvals = np.asarray(spec.m(np.asarray(self.us)), dtype=float)
        mvals = np.broadcast_to(mvals, xs.shape)
        n_sub = max(1, int(math.ceil(remaining / self.dt_motion)))
        dt = remaining / n_sub
        for _ in range(n_sub):
            xs = reflect(xs + np.sqrt(2.0 * mvals * dt)
                         * self.rng.standard_normal(len(xs)), spec.domain)
        self.xs = list(map(float, xs))
        self.t_now = t_target

    def _comp(self, u):
        cvals = self.spec.c(u, np.asarray(self.xs), np.asarray(self.us))
        return float(np.sum(np.broadcast_to(cvals, (self.n,)))) / self.K

    def run(self, t_until, max_events, _ev_buffers=None):
        spec, rng = self.spec, self.rng
        bnd = spec.bounds
        for _ in range(max_events):
            n = self.n
            if n == 0:
                return kernels.ST_EXTINCT, 0, 0
            if n >= self.hard_cap:
                raise CapacityError(
                    f"population exceeded the hard cap of {self.hard_cap}")
            ub = bnd.b_max + bnd.d_max + self.d_shift + bnd.c_max * n / self.K
            t_cand = self.t_now + rng.exponential(1.0 / (n * ub))
            if t_cand >= t_until:
                self._advance_all(t_until)
                return kernels.ST_TIME, 0, 0
            self._advance_all(t_cand)
            i = int(rng.integers(n))
            x, u = self.xs[i], self.us[i]
            r = rng.random() * ub
            bi = float(spec.b(x, u))
            if r < bi:
                mutant = (self.q_K > 0
                          and rng.random() < self.q_K * float(spec.p(x, u)))
                child_u = (spec.mutation_kernel.sample(x, u, spec.trait_space,
                                                       rng)
                           if mutant else u)
                self.xs.append(x)
                self.us.append(child_u)
                self.peak = max(self.peak, self.n)
                if self.record:
                    self.events.append((t_cand, 1 if mutant else 0, i, x, u,
                                        child_u))
                st = self._check_stops(mutant)
                if st is not None:
                    return st, 0, 0
            elif r < bi + float(spec.d(x, u)) + self.d_shift + self._comp(u):
                if self.record:
                    self.events.append((t_cand, 2, i, x, u, float("nan")))
                self.xs.pop(i)
                self.us.pop(i)
                if self.n == 0:
                    return kernels.ST_EXTINCT, 0, 0
                st = self._check_stops(False)
                if st is not None:
                    return st, 0, 0
        return kernels.ST_BUDGET, 0, 0

    def _check_stops(self, mutated):
        for rule in self.stop_rules:
            if isinstance(rule, StopOnMutation) and mutated:
                return kernels.ST_MUTATION
            if isinstance(rule, StopOnPopSize) and self.n >= rule.count:
                return kernels.ST_THRESHOLD
            if isinstance(rule, StopOnTraitMass):
                cnt = sum(1 for u in self.us if u == rule.trait)
                if cnt / self.K >= rule.mass:
                    return kernels.ST_THRESHOLD
            if isinstance(rule, StopOnMonomorphic):
                alive = set(self.us)
                if any(tr not in alive for tr in self._mono_traits):
                    return kernels.ST_MONOMORPHIC
        return None

    def sync(self):
        pass      # positions are already current after every event

    def population(self) -> Population:
        return Population(np.asarray(self.xs), np.asarray(self.us),
                          self.K, self.t_now)

    def trait_masses(self) -> dict:
        out = {}
        for u in self.us:
            out[u] = out.get(u, 0.0) + 1.0 / self.K
        return out


# -- driver ----------------------------------------------------------------------

_SEGMENT_EVENTS = 4_000_000
_SEGMENT_EVENTS_LOGGED = 250_000


def simulate(pop0: Population, spec: ModelSpec, t_end: float, rng,
             observe_every: float | None = None,
             snapshot_every: float | None = None,
             stop_rules=(), record_events: bool = False,
             engine: str = "auto", dt_motion: float = 1e-3,
             q_override: float | None = None,
             d_shift: float = 0.0,
             hard_cap: int = HARD_CAP) -> SimResult:
    """Run the exact event chain from pop0 until t_end or a stop rule.

    engine: "auto" compiles the model when possible, "jit"/"python" force a
    backend.  dt_motion only affects the python backend; the compiled one
    folds whole Brownian increments, which is the same chain in law.
    """
    seed = _as_seed(rng)
    q_K = spec.scaling.q_K if q_override is None else q_override
    use_jit = engine in ("auto", "jit") and encode_model(spec) is not None
    if engine == "jit" and not use_jit:
        raise ConfigError("model not expressible on the compiled engine")
    if dt_motion <= 0:
        raise ConfigError("dt_motion must be positive")
    if use_jit:
        backend = _JitBackend(pop0, spec, seed, stop_rules, record_events,
                              q_K, d_shift, hard_cap)
    else:
        backend = _PyBackend(pop0, spec, seed, stop_rules, record_events,
                             q_K, d_shift, dt_motion, hard_cap)

    flat_rule = next((r for r in stop_rules if isinstance(r, StopOnFlatExit)),
                     None)
    if flat_rule is not None and observe_every is None:
        raise ConfigError("StopOnFlatExit needs an observation cadence")

    log = EventLog(events={k: [] for k in
                           ("t", "kind", "parent", "x", "u", "child_u")})
    budget = _SEGMENT_EVENTS_LOGGED if record_events else _SEGMENT_EVENTS
    if use_jit and record_events:
        ev_buffers = (np.zeros(budget + 2), np.zeros(budget + 2, np.int64),
                      np.zeros(budget + 2, np.int64), np.zeros(budget + 2),
                      np.zeros(budget + 2), np.zeros(budget + 2))
    else:
        ev_buffers = (np.zeros(2), np.zeros(2, np.int64),
                      np.zeros(2, np.int64), np.zeros(2), np.zeros(2),
                      np.zeros(2))

    def flush_events(n_log):
        if not record_events:
            return
        if use_jit:
            for key, buf in zip(("t", "kind", "parent", "x", "u", "child_u"),
                                ev_buffers):
                log.events[key].extend(buf[:n_log].tolist())
        else:
            for ev in backend.events:
                for key, val in zip(("t", "kind", "parent", "x", "u",
                                     "child_u"), ev):
                    log.events[key].append(val)
            backend.events.clear()

    def observe():
        row = {"t": backend.t, "n": backend.n,
               "mass": backend.n / spec.scaling.K,
               "trait_mass": backend.trait_masses()}
        if flat_rule is not None:
            backend.sync()
            pop = backend.population()
            val, _ = flat_distance_coarse(pop.measure(), flat_rule.reference,
                                          n_nodes=flat_rule.n_grid,
                                          domain=spec.domain)
            row["flat"] = val
        log.observations.append(row)
        return row

    def snapshot():
        backend.sync()
        pop = backend.population()
        log.snapshots.append((backend.t, pop.x.copy(), pop.u.copy()))

    next_obs = pop0.time if observe_every is not None else math.inf
    next_snap = pop0.time if snapshot_every is not None else math.inf
    stop_reason = "t_end"
    while True:
        t_until = min(t_end, next_obs, next_snap)
        st, _, n_log = backend.run(t_until, budget, ev_buffers)
        flush_events(n_log)
        if st == kernels.ST_CAPACITY:
            backend._grow()
            continue
        if st == kernels.ST_BUDGET:
            continue
        if st != kernels.ST_TIME:
            stop_reason = _STATUS_REASON[st]
            break
        # reached t_until: emit due observations, then continue
        if backend.t >= next_snap - 1e-12:
            snapshot()
            next_snap += snapshot_every
        if backend.t >= next_obs - 1e-12:
            row = observe()
            next_obs += observe_every
            if flat_rule is not None and row["flat"] >= flat_rule.gamma:
                stop_reason = "flat_exit"
                break
        if backend.t >= t_end - 1e-12:
            stop_reason = "t_end"
            break
    backend.sync()
    for key in log.events:
        log.events[key] = np.asarray(log.events[key])
    return SimResult(population=backend.population(), log=log,
                     stop_reason=stop_reason, time=backend.t)


# -- branching mode ---------------------------------------------------------------

def _as_handle(fn):
    from ..config import FunctionHandle
    if isinstance(fn, FunctionHandle):
        return fn
    if isinstance(fn, (int, float)):
        return FunctionHandle("constant", {"value": float(fn)})
    return None


def run_branching(x0: float, b_fn, d_fn, m: float, K: int, epsilon: float,
                  t_max: float, rng, domain=(0.0, 1.0),
                  d_shift: float = 0.0,
                  threshold_count: int | None = None) -> BranchingOutcome:
    """Branching diffusion from one individual at x0: birth b(x), death
    d(x) + d_shift, no competition.  Stops at extinction, at population size
    ceil(epsilon*K) (or threshold_count), or at t_max.
    """
    seed = _as_seed(rng)
    thresh = (int(threshold_count) if threshold_count is not None
              else int(math.ceil(epsilon * K)))
    if thresh < 2:
        raise ConfigError("threshold must be at least 2 individuals")
    b_h, d_h = _as_handle(b_fn), _as_handle(d_fn)
    if b_h is None or d_h is None:
        raise ConfigError("run_branching needs FunctionHandle or scalar rates")

    class _Dom:
        pass

    dom = _Dom()
    dom.domain = domain
    dom.trait_space = (0.0, 1.0)
    b_enc = encode_function(b_h, dom)
    d_enc = encode_function(d_h, dom)
    if b_enc is None or d_enc is None:
        raise ConfigError("branching rates must be compiled variants")

    cap = max(2 * thresh + 64, 1024)
    xs = np.zeros(cap)
    us = np.zeros(cap)
    sq2m = np.full(cap, math.sqrt(2.0 * m))
    tlast = np.zeros(cap)
    tidx = np.zeros(cap, dtype=np.int64)
    utraits = np.zeros(8)
    ucounts = np.zeros(8, dtype=np.int64)
    ucounts[0] = 1
    xs[0] = x0
    istate = np.array([1, 1, 1], dtype=np.int64)
    fstate = np.array([0.0])
    empty = np.zeros(0)
    zero1 = np.array([0.0])
    ev = (np.zeros(2), np.zeros(2, np.int64), np.zeros(2, np.int64),
          np.zeros(2), np.zeros(2), np.zeros(2))
    kernels.seed_stream(seed % 2 ** 32)
    while True:
        st, _, _ = kernels.run_segment(
            xs, us, sq2m, tlast, tidx, utraits, ucounts, istate, fstate,
            domain[0], domain[1], 0.0, 1.0,
            b_enc.code, b_enc.par, b_enc.grid, b_enc.vals,
            d_enc.code, d_enc.par, d_enc.grid, d_enc.vals,
            0, zero1, empty, empty,          # p == 0, mutations off
            0, np.array([m]), empty, empty,  # constant diffusivity
            0, zero1, empty, empty,          # kernel unused
            0.0, d_shift, 0.0, float(K),
            b_enc.vmax, d_enc.vmax + d_shift, 0.0,
            t_max, 50_000_000,
            0, thresh, -1, 0, -1, -1,
            0, *ev)
        if st == kernels.ST_CAPACITY:
            if 2 * xs.shape[0] > HARD_CAP:
                raise CapacityError("branching population exceeded hard cap")
            xs = np.concatenate([xs, np.zeros(xs.shape[0])])
            us = np.concatenate([us, np.zeros(us.shape[0])])
            sq2m = np.concatenate([sq2m, np.full(sq2m.shape[0],
                                                 math.sqrt(2.0 * m))])
            tlast = np.concatenate([tlast, np.zeros(tlast.shape[0])])
            tidx = np.concatenate([tidx, np.zeros(tidx.shape[0], np.int64)])
            continue
        if st == kernels.ST_BUDGET:
            continue
        break
    verdict = {kernels.ST_EXTINCT: "extinct",
               kernels.ST_THRESHOLD: "reached_threshold",
               kernels.ST_TIME: "timed_out"}[st]
    return BranchingOutcome(verdict=verdict, hitting_time=float(fstate[0]),
                            peak_size=int(istate[2]))
