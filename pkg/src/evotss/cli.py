"""Command-line front end: experiment orchestration and file output.

Subcommands: eigen | survival | pde | ibm | branching | tss | verify | figure1.
Every run writes its outputs (CSV tables, JSON summaries) plus a manifest
copy and a metadata record into --out, so reruns with the same manifest are
byte-reproducible in the CSV bodies.

Exit codes: 0 ok, 2 configuration, 3 numerical, 4 capacity,
5 model-assumption violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ModelSpec, load_preset, parse_config, preset_doc,
                     render_config, with_scaling)
from .domain import flat_distance_coarse, uniform_grid
from .errors import ConfigError, EvotssError, NumericalError
from .ibm import (Population, StopOnMutation, StopOnPopSize,
                  equilibrium_population, estimate_survival_mc, simulate)
from .pde import PdeState, integrate
from .spectral import principal_eigen
from .survival import solve_phi_star, solve_phi_vu
from .tss import TraitCache, simulate_tss


@dataclass
class ExperimentManifest:
    experiment: str
    params: dict
    seeds: list
    out_dir: str
    argv: list
    config_doc: dict | None = None
    snapshot_every: float | None = None

    def validate(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("manifest seeds must be distinct")


def _config_hash(doc) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _load_spec(args) -> ModelSpec:
    if getattr(args, "config", None):
        spec = parse_config(Path(args.config).read_text())
    else:
        spec = load_preset(getattr(args, "preset", None) or "flat")
    k = getattr(args, "k", None)
    qk = getattr(args, "qk", None)
    if k is not None or qk is not None:
        spec = with_scaling(spec, K=k, q_K=qk)
    return spec


def _prepare_out(args, name, params, seeds, spec=None):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = json.loads(render_config(spec)) if spec is not None else None
    manifest = ExperimentManifest(
        experiment=name, params=params, seeds=list(seeds),
        out_dir=str(out), argv=list(getattr(args, "_argv", []) or []),
        config_doc=doc, snapshot_every=params.get("snapshot_every"))
    manifest.validate()
    _write_json(out / "manifest.json", asdict(manifest))
    return out, manifest


def _finish(out: Path, manifest, t0: float, extra=None):
    meta = {"version": __version__,
            "numpy": np.__version__,
            "config_hash": _config_hash(manifest.config_doc or {}),
            "seeds": manifest.seeds,
            "wall_time_s": round(time.time() - t0, 3)}
    if extra:
        meta.update(extra)
    _write_json(out / "run_meta.json", meta)


def _warn_scaling_window(spec: ModelSpec):
    K, qK = spec.scaling.K, spec.scaling.q_K
    if qK <= 0:
        return
    if K * qK * math.log(K) < 1.0 or qK > K ** -0.5:
        print(f"warning: (K={K}, q_K={qK}) sits outside the rare-mutation "
              f"window (need K*q_K*log(K) >= 1 and q_K <= K^-1/2); "
              f"time-scale separation may be poor", file=sys.stderr)


# -- subcommands -----------------------------------------------------------------

def cmd_eigen(args) -> int:
    t0 = time.time()
    spec = _load_spec(args)
    out, manifest = _prepare_out(args, "eigen",
                                 {"trait": args.trait, "nodes": args.nodes},
                                 [], spec)
    eig = principal_eigen(spec, args.trait, args.nodes)
    _write_csv(out / "eigen.csv", ["x", "g"],
               zip(eig.g.grid, eig.g.density))
    _write_json(out / "eigen.json",
                {"trait": eig.trait, "H": eig.H, "mass": eig.mass,
                 "normalization_residual": eig.normalization_residual,
                 "residual_inf": eig.residual_inf, "viable": eig.viable})
    _finish(out, manifest, t0)
    return 0


def cmd_survival(args) -> int:
    t0 = time.time()
    spec = _load_spec(args)
    out, manifest = _prepare_out(
        args, "survival",
        {"resident_u": args.resident_u, "mutant_v": args.mutant_v,
         "nodes": args.nodes}, [], spec)
    eig = principal_eigen(spec, args.resident_u, args.nodes)
    prof = solve_phi_vu(spec, args.mutant_v, eig)
    _write_csv(out / "survival.csv", ["x", "phi"], zip(prof.grid, prof.phi))
    _write_json(out / "survival.json",
                {"C_vu": prof.info.get("C_vu"),
                 "fitness": prof.info.get("fitness"),
                 "viable": prof.viable, "degenerate": prof.degenerate,
                 "residual_inf": prof.residual_inf})
    _finish(out, manifest, t0)
    return 0


def _initial_pde_state(spec, traits, grid, init, rng):
    dens = np.zeros((len(traits), len(grid)))
    for i, u in enumerate(traits):
        if init == "equilibrium":
            eig = principal_eigen(spec, u, len(grid))
            dens[i] = eig.g.density
        elif init.startswith("uniform:"):
            mass = float(init.split(":", 1)[1])
            dens[i] = mass / (grid[-1] - grid[0])
        elif init.startswith("bump:"):
            x0, mass = map(float, init.split(":", 1)[1].split(","))
            w = 0.05 * (grid[-1] - grid[0])
            prof = np.exp(-0.5 * ((grid - x0) / w) ** 2)
            prof /= np.trapezoid(prof, grid)
            dens[i] = mass * prof
        else:
            raise ConfigError(f"unknown --init {init!r}")
    return PdeState(grid, list(traits), dens)


def cmd_pde(args) -> int:
    t0 = time.time()
    spec = _load_spec(args)
    traits = [float(v) for v in args.traits.split(",")]
    out, manifest = _prepare_out(
        args, "pde",
        {"traits": traits, "t_end": args.t_end, "dt": args.dt,
         "nodes": args.nodes, "snapshot_every": args.snapshot_every,
         "init": args.init}, [], spec)
    grid = uniform_grid(spec.domain, args.nodes)
    state = _initial_pde_state(spec, traits, grid, args.init, None)
    rows = []

    def observer(s):
        for u in s.traits:
            i = s.traits.index(u)
            for x, dv in zip(s.grid, s.densities[i]):
                rows.append((s.time, u, x, dv))
        return {}

    state, log = integrate(state, spec, args.t_end, args.dt,
                           observe_every=args.snapshot_every,
                           observer=observer)
    _write_csv(out / "pde_snapshots.csv", ["t", "trait", "x", "density"], rows)
    _write_json(out / "pde.json",
                {"final_time": state.time,
                 "final_mass": {str(u): state.mass(u) for u in state.traits},
                 "removed": state.removed})
    _finish(out, manifest, t0)
    return 0


def _parse_stop_rules(arg, spec):
    rules = []
    for token in (arg or "").split(","):
        token = token.strip()
        if not token or token == "extinction":
            continue      # extinction always terminates the run
        if token == "s1":
            rules.append(StopOnMutation())
        elif token.startswith("mass:"):
            mass = float(token.split(":", 1)[1])
            rules.append(StopOnPopSize(int(math.ceil(mass * spec.scaling.K))))
        else:
            raise ConfigError(f"unknown stop rule {token!r}")
    return rules


def _initial_population(spec, init, rng):
    K = spec.scaling.K
    if init.startswith("point:"):
        x0, u0 = map(float, init.split(":", 1)[1].split(","))
        return Population.point(x0, u0, K, K)
    if init.startswith("equilibrium:"):
        u0 = float(init.split(":", 1)[1])
        return equilibrium_population(spec, u0, K, rng)
    raise ConfigError(f"unknown --init {init!r}")


def cmd_ibm(args) -> int:
    t0 = time.time()
    spec = _load_spec(args)
    _warn_scaling_window(spec)
    out, manifest = _prepare_out(
        args, "ibm",
        {"t_end": args.t_end, "init": args.init, "dt_motion": args.dt_motion,
         "snapshot_every": args.snapshot_every,
         "observe_every": args.observe_every, "stop_on": args.stop_on,
         "record_events": args.record_events}, [args.seed], spec)
    rng = np.random.default_rng(args.seed)
    pop = _initial_population(spec, args.init, rng)
    res = simulate(pop, spec, args.t_end, args.seed,
                   observe_every=args.observe_every,
                   snapshot_every=args.snapshot_every,
                   stop_rules=_parse_stop_rules(args.stop_on, spec),
                   record_events=args.record_events,
                   dt_motion=args.dt_motion)
    snap_rows = [(t, x, u) for (t, xs, us) in res.log.snapshots
                 for x, u in zip(xs, us)]
    _write_csv(out / "snapshots.csv", ["t", "x", "u"], snap_rows)
    obs_rows = [(r["t"], r["n"], r["mass"]) for r in res.log.observations]
    _write_csv(out / "observations.csv", ["t", "n", "mass"], obs_rows)
    if args.record_events:
        from .ibm.engine import KIND_NAMES
        ev = res.log.events
        _write_csv(out / "events.csv",
                   ["t", "kind", "parent", "x", "u", "child_u"],
                   zip(ev["t"], (KIND_NAMES[int(k)] for k in ev["kind"]),
                       ev["parent"], ev["x"], ev["u"], ev["child_u"]))
    _write_json(out / "ibm.json",
                {"stop_reason": res.stop_reason, "final_time": res.time,
                 "final_n": len(res.population),
                 "final_trait_mass": res.population.trait_masses()})
    _finish(out, manifest, t0)
    return 0


def cmd_branching(args) -> int:
    t0 = time.time()
    out, manifest = _prepare_out(
        args, "branching",
        {"b": args.b, "d": args.d, "m": args.m, "x0": args.x0,
         "k": args.k, "epsilon": args.epsilon, "t_max": args.t_max,
         "replicates": args.replicates}, [args.seed])
    p_hat, ci = estimate_survival_mc(args.x0, args.b, args.d, args.m,
                                     args.replicates, args.k, args.epsilon,
                                     args.t_max, args.seed,
                                     n_jobs=args.jobs)
    _write_csv(out / "branching.csv",
               ["x0", "replicates", "p_hat", "ci3sigma"],
               [(args.x0, args.replicates, p_hat, ci)])
    _write_json(out / "branching.json",
                {"p_hat": p_hat, "ci3sigma": ci,
                 "replicates": args.replicates})
    _finish(out, manifest, t0)
    return 0


def cmd_tss(args) -> int:
    t0 = time.time()
    spec = _load_spec(args)
    out, manifest = _prepare_out(
        args, "tss",
        {"u0": args.u0, "t_end": args.t_end,
         "trait_round": args.trait_round, "nodes": args.nodes},
        [args.seed], spec)
    traj = simulate_tss(args.u0, spec, args.t_end, args.seed,
                        trait_round=args.trait_round, n_grid=args.nodes)
    _write_csv(out / "tss.csv",
               ["t_jump", "u_from", "u_to", "x0", "phi", "fitness"],
               [(j.t, j.u_from, j.u_to, j.x0, j.phi, j.fitness)
                for j in traj.jumps])
    _write_json(out / "tss.json",
                {"initial_trait": traj.initial_trait,
                 "final_trait": traj.traits[-1],
                 "n_jumps": len(traj.jumps), "attempts": traj.attempts,
                 "final_time": traj.final_time})
    _finish(out, manifest, t0)
    return 0


# -- verification suite ------------------------------------------------------------

def constant_world_suite() -> list[tuple[str, float, float, bool]]:
    """Closed-form checks in the flat world: (name, got, want, ok)."""
    import json as _json
    checks = []

    def check(name, got, want, rel=1e-6):
        scale = max(abs(want), 1e-12)
        ok = abs(got - want) <= rel * scale
        checks.append((name, float(got), float(want), bool(ok)))

    spec = load_preset("flat")
    eig = principal_eigen(spec, 0.5, 256)
    check("H = b - d", eig.H, 1.0)
    check("gbar = (b-d)/(c|X|)", float(eig.g.density[10]), 0.1)
    check("mass = H/c", eig.mass, 0.1)
    from .spectral import kappa as _kappa
    check("kappa = c0", _kappa(spec, 0.25, eig), 10.0)

    grid = eig.g.grid
    prof = solve_phi_star(0.01, np.full(len(grid), 2.0),
                          np.full(len(grid), 1.0), grid)
    check("phi* = (b-d)/b", float(prof.phi[17]), 0.5)

    sub = solve_phi_star(0.01, np.full(len(grid), 1.0),
                         np.full(len(grid), 2.0), grid)
    check("subcritical phi* = 0", float(np.max(sub.phi)), 0.0)

    doc = preset_doc("flat")
    doc["birth"] = {"type": "trait_table", "traits": [0.2, 0.8],
                    "values": [2.0, 3.0]}
    spec2 = parse_config(_json.dumps(doc))
    eig_u = principal_eigen(spec2, 0.2, 256)
    prof_vu = solve_phi_vu(spec2, 0.8, eig_u)
    check("phi_vu = (Hv-Hu)/bv", float(prof_vu.phi[33]), 1.0 / 3.0)

    doc["birth"]["values"] = [2.0, 1.5]
    spec3 = parse_config(_json.dumps(doc))
    prof_del = solve_phi_vu(spec3, 0.8, principal_eigen(spec3, 0.2, 256))
    check("deleterious phi_vu = 0", float(np.max(prof_del.phi)), 0.0)
    return checks


def cmd_verify(args) -> int:
    t0 = time.time()
    if args.suite != "constant-world":
        raise ConfigError(f"unknown suite {args.suite!r}")
    checks = constant_world_suite()
    all_ok = True
    for name, got, want, ok in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: got {got:.9g}, "
              f"want {want:.9g}")
        all_ok &= ok
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "verify.json",
                    [{"name": n, "got": g, "want": w, "ok": ok}
                     for n, g, w, ok in checks])
    print(f"suite finished in {time.time() - t0:.2f}s: "
          f"{'all passed' if all_ok else 'FAILURES'}")
    if not all_ok:
        raise NumericalError("constant-world suite failed")
    return 0


# -- desk-scale reproduction of the niche-shift experiment ---------------------------

def cmd_figure1(args) -> int:
    t0 = time.time()
    spec = _load_spec(args)
    _warn_scaling_window(spec)
    if args.epochs:
        epochs = [float(e) for e in args.epochs.split(",")]
    else:
        epochs = [args.t_end * (i + 1) / 6.0 for i in range(6)]
    out, manifest = _prepare_out(
        args, "figure1",
        {"t_end": args.t_end, "u0": args.u0, "epochs": epochs}, [args.seed],
        spec)

    # one simulation leg per epoch (the chain is Markov, so restarting from
    # the current population with a fresh child stream is the same process)
    leg_seeds = np.random.SeedSequence(args.seed).generate_state(len(epochs))
    pop = Population.point(0.5, args.u0, spec.scaling.K, spec.scaling.K)
    snaps = []
    observations = []
    t_prev = 0.0
    for te, leg_seed in zip(epochs, leg_seeds):
        res = simulate(pop, spec, te, int(leg_seed),
                       observe_every=max((te - t_prev) / 20.0, 0.5))
        observations.extend(res.log.observations)
        snaps.append((res.time, res.population.x.copy(),
                      res.population.u.copy()))
        pop = res.population
        t_prev = te

    snap_rows = [(t, x, u) for (t, xs, us) in snaps
                 for x, u in zip(xs, us)]
    _write_csv(out / "snapshots.csv", ["t", "x", "u"], snap_rows)
    _write_csv(out / "observations.csv", ["t", "n", "mass"],
               [(r["t"], r["n"], r["mass"]) for r in observations])

    # per-epoch overlay data: dominant trait, its equilibrium profile, and
    # the flat distance between the trait-filtered snapshot and the profile
    cache = TraitCache(spec, n_grid=256, granularity=1e-3)
    overlay = []
    for (t, xs, us) in snaps:
        if len(us) == 0:
            continue
        traits, counts = np.unique(np.round(us, 3), return_counts=True)
        dom = float(traits[np.argmax(counts)])
        eig = cache.eig(dom)
        if not eig.viable:
            continue
        from .domain import EmpiricalMeasure
        emp = EmpiricalMeasure(xs, us, spec.scaling.K)
        val, _ = flat_distance_coarse(
            emp, eig.g, n_nodes=256, domain=spec.domain,
            trait_filter=(dom - 0.05, dom + 0.05))
        fname = f"eigen_{dom:.3f}.csv"
        _write_csv(out / fname, ["x", "g"], zip(eig.g.grid, eig.g.density))
        overlay.append({"t": t, "trait": dom, "flat_distance": val,
                        "eigen_csv": fname,
                        "empirical_mass": float(np.sum(
                            np.abs(us - dom) <= 0.05)) / spec.scaling.K})
    _write_csv(out / "overlay.csv",
               ["t", "trait", "flat_distance", "eigen_csv",
                "empirical_mass"],
               [(r["t"], r["trait"], r["flat_distance"], r["eigen_csv"],
                 r["empirical_mass"]) for r in overlay])
    _write_json(out / "figure1.json",
                {"overlay": overlay,
                 "epochs": [t for (t, _, _) in snaps],
                 "domain": list(spec.domain),
                 "trait_space": list(spec.trait_space),
                 "K": spec.scaling.K, "q_K": spec.scaling.q_K})
    _finish(out, manifest, t0)
    return 0


# -- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="evotss",
        description="spatial birth-death-mutation laboratory")
    ap.add_argument("--jobs", type=int,
                    default=int(os.environ.get("EVO_TSS_JOBS", "1")),
                    help="worker pool size for replicate fan-out")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, preset_default=None):
        p.add_argument("--config", help="path to a JSON model document")
        p.add_argument("--preset", default=preset_default,
                       choices=["flat", "parabolic_niche"])
        p.add_argument("--k", type=int, default=None,
                       help="override the population scale K")
        p.add_argument("--qk", type=float, default=None,
                       help="override the mutation scale q_K")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("eigen", help="equilibrium profile for one trait")
    common(p)
    p.add_argument("--trait", type=float, required=True)
    p.add_argument("--nodes", type=int, default=512)

    p = sub.add_parser("survival", help="invasion probability profile")
    common(p)
    p.add_argument("--resident-u", type=float, required=True,
                   dest="resident_u")
    p.add_argument("--mutant-v", type=float, required=True, dest="mutant_v")
    p.add_argument("--nodes", type=int, default=512)

    p = sub.add_parser("pde", help="deterministic limit for fixed traits")
    common(p)
    p.add_argument("--traits", required=True,
                   help="comma-separated trait values")
    p.add_argument("--t-end", type=float, required=True, dest="t_end")
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--nodes", type=int, default=256)
    p.add_argument("--snapshot-every", type=float, default=1.0,
                   dest="snapshot_every")
    p.add_argument("--init", default="equilibrium",
                   help="equilibrium | uniform:MASS | bump:X0,MASS")

    p = sub.add_parser("ibm", help="stochastic engine run")
    common(p)
    p.add_argument("--t-end", type=float, required=True, dest="t_end")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt-motion", type=float, default=1e-3,
                   dest="dt_motion")
    p.add_argument("--init", default="point:0.5,0.5")
    p.add_argument("--snapshot-every", type=float, default=None,
                   dest="snapshot_every")
    p.add_argument("--observe-every", type=float, default=1.0,
                   dest="observe_every")
    p.add_argument("--stop-on", default="", dest="stop_on",
                   help="comma list: extinction, s1, mass:X")
    p.add_argument("--record-events", action="store_true",
                   dest="record_events")

    p = sub.add_parser("branching", help="branching survival Monte Carlo")
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--m", type=float, default=0.01)
    p.add_argument("--x0", type=float, default=0.5)
    p.add_argument("--k", type=int, default=10000)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--t-max", type=float, default=200.0, dest="t_max")
    p.add_argument("--replicates", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")

    p = sub.add_parser("tss", help="trait substitution sequence")
    common(p)
    p.add_argument("--u0", type=float, required=True)
    p.add_argument("--t-end", type=float, required=True, dest="t_end")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trait-round", type=float, default=1e-4,
                   dest="trait_round")
    p.add_argument("--nodes", type=int, default=512)

    p = sub.add_parser("verify", help="closed-form verification suites")
    p.add_argument("--suite", default="constant-world")
    p.add_argument("--out", default=None)

    p = sub.add_parser("figure1",
                       help="desk-scale niche-shift reproduction")
    common(p, preset_default="parabolic_niche")
    p.add_argument("--t-end", type=float, default=600.0, dest="t_end")
    p.add_argument("--u0", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", default=None,
                   help="comma-separated snapshot times (default: 6 evenly)")
    return ap


def run(manifest, out_dir=None) -> int:
    """Replay a recorded manifest (a path, dict, or ExperimentManifest);
    identical seeds reproduce byte-identical CSV bodies."""
    if isinstance(manifest, (str, Path)):
        manifest = json.loads(Path(manifest).read_text())
    if isinstance(manifest, ExperimentManifest):
        manifest = asdict(manifest)
    argv = list(manifest.get("argv") or [])
    if not argv:
        raise ConfigError("manifest does not carry its command line")
    if out_dir is not None:
        try:
            i = argv.index("--out")
            argv[i + 1] = str(out_dir)
        except ValueError:
            argv += ["--out", str(out_dir)]
    return main(argv)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    args._argv = list(argv) if argv is not None else list(sys.argv[1:])
    handler = {
        "eigen": cmd_eigen, "survival": cmd_survival, "pde": cmd_pde,
        "ibm": cmd_ibm, "branching": cmd_branching, "tss": cmd_tss,
        "verify": cmd_verify, "figure1": cmd_figure1,
    }[args.command]
    try:
        return handler(args)
    except EvotssError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
