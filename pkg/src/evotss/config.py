"""Model parameter functions, scaling constants, and configuration parsing.

A model is defined by six coefficient functions on the spatial domain X and
trait space U (both closed intervals):

    birth b(x,u), death d(x,u), competition c(u,y,v), diffusivity m(u),
    mutation probability p(x,u), mutation kernel k(x,u,.)

plus the scaling pair (K, q_K).  Functions are restricted to a closed set of
variants so that configurations are serializable, analytically boundable, and
compilable into the fast stochastic engine.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigError, ValidationError

# roles -> argument names of the coefficient functions
ROLE_ARGS = {
    "birth": ("x", "u"),
    "death": ("x", "u"),
    "mutation_prob": ("x", "u"),
    "competition": ("u", "y", "v"),
    "diffusion": ("u",),
}

_FUNCTION_KINDS = (
    "constant",
    "truncated_parabola",
    "affine",
    "trait_table",
    "table",
    "trait_matrix",
)


@dataclass(frozen=True)
class FunctionHandle:
    """One coefficient function, tagged by variant.

    kind:
      constant           value
      truncated_parabola max(A - B*u*(x-u)^2, 0), a niche of width ~1/sqrt(B*u)
      affine             intercept + slope * <arg>
      trait_table        nearest-trait lookup: values[argmin |u - traits|]
      table              piecewise-linear interpolation in <arg>
      trait_matrix       competition only: matrix[i(u), j(v)], nearest match
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _FUNCTION_KINDS:
            raise ConfigError(f"unknown function type {self.kind!r}")

    def __call__(self, *args):
        return self.evaluate(*args)

    def evaluate(self, *args):
        p = self.params
        if self.kind == "constant":
            v = float(p["value"])
            shape = np.broadcast_shapes(*(np.shape(a) for a in args)) if args else ()
            return v if shape == () else np.full(shape, v)
        if self.kind == "truncated_parabola":
            x, u = args[0], args[1]
            val = p["A"] - p["B"] * np.asarray(u) * (np.asarray(x) - np.asarray(u)) ** 2
            return np.maximum(val, 0.0)
        if self.kind == "affine":
            t = args[self._arg_index()]
            return p["intercept"] + p["slope"] * np.asarray(t)
        if self.kind == "trait_table":
            u = args[self._arg_index("u")]
            traits = np.asarray(p["traits"], dtype=float)
            vals = np.asarray(p["values"], dtype=float)
            idx = np.argmin(np.abs(np.asarray(u)[..., None] - traits), axis=-1)
            return vals[idx]
        if self.kind == "table":
            t = args[self._arg_index()]
            return np.interp(np.asarray(t), p["grid"], p["values"])
        if self.kind == "trait_matrix":
            u, _, v = args
            traits = np.asarray(p["traits"], dtype=float)
            mat = np.asarray(p["matrix"], dtype=float)
            i = np.argmin(np.abs(np.asarray(u)[..., None] - traits), axis=-1)
            j = np.argmin(np.abs(np.asarray(v)[..., None] - traits), axis=-1)
            return mat[i, j]
        raise AssertionError(self.kind)

    def _arg_index(self, default: str = "") -> int:
        name = self.params.get("arg", default)
        role_args = self.params.get("_role_args")
        if role_args is None or name not in role_args:
            raise ConfigError(
                f"function {self.kind!r} needs a valid 'arg' among {role_args}")
        return role_args.index(name)

    def value_range(self, spec: "ModelSpec") -> tuple[float, float]:
        """Analytic (min, max) over the declared domains."""
        p = self.params
        if self.kind == "constant":
            v = float(p["value"])
            return v, v
        if self.kind == "truncated_parabola":
            return 0.0, max(float(p["A"]), 0.0)
        if self.kind == "affine":
            name = p.get("arg", "")
            lo, hi = (spec.domain if name in ("x", "y") else spec.trait_space)
            a, b = p["intercept"] + p["slope"] * lo, p["intercept"] + p["slope"] * hi
            return min(a, b), max(a, b)
        if self.kind in ("trait_table", "table"):
            vals = np.asarray(p["values"], dtype=float)
            return float(vals.min()), float(vals.max())
        if self.kind == "trait_matrix":
            mat = np.asarray(p["matrix"], dtype=float)
            return float(mat.min()), float(mat.max())
        raise AssertionError(self.kind)

    def to_doc(self) -> dict:
        doc = {"type": self.kind}
        doc.update({k: v for k, v in self.params.items() if not k.startswith("_")})
        return doc


@dataclass(frozen=True)
class KernelHandle:
    """Mutation kernel k(x,u,.): law of the child trait given parent (x,u).

    truncated_gaussian(sigma): Gaussian centered at the parent trait,
    conditioned on the trait space (density w.r.t. Lebesgue, mass 1).
    discrete_point_set(traits, weights): atoms; with exclude_self=True the
    parent's own atom is removed and the rest renormalized.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("truncated_gaussian", "discrete_point_set"):
            raise ConfigError(f"unknown kernel type {self.kind!r}")

    def conditioning_mass(self, u, trait_space) -> np.ndarray:
        sigma = self.params["sigma"]
        lo, hi = trait_space
        u = np.asarray(u, dtype=float)
        return ndtr((hi - u) / sigma) - ndtr((lo - u) / sigma)

    def density(self, x, u, w, trait_space):
        """Density at child trait w (Lebesgue reference for the Gaussian
        variant, counting reference for the discrete one)."""
        if self.kind == "truncated_gaussian":
            sigma = self.params["sigma"]
            lo, hi = trait_space
            z = self.conditioning_mass(u, trait_space)
            w = np.asarray(w, dtype=float)
            pdf = np.exp(-0.5 * ((w - u) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
            inside = (w >= lo) & (w <= hi)
            return np.where(inside, pdf / z, 0.0)
        traits = np.asarray(self.params["traits"], dtype=float)
        weights = np.asarray(self.params["weights"], dtype=float)
        w = np.asarray(w, dtype=float)
        out = np.zeros_like(w, dtype=float)
        for t, wt in zip(traits, weights):
            out = np.where(np.isclose(w, t, atol=1e-12), wt, out)
        return out

    def sample(self, x, u, trait_space, rng) -> float:
        if self.kind == "truncated_gaussian":
            sigma = self.params["sigma"]
            lo, hi = trait_space
            a = ndtr((lo - u) / sigma)
            b = ndtr((hi - u) / sigma)
            return float(u + sigma * ndtri(a + rng.random() * (b - a)))
        traits = np.asarray(self.params["traits"], dtype=float)
        weights = np.asarray(self.params["weights"], dtype=float)
        if self.params.get("exclude_self", False):
            keep = ~np.isclose(traits, u, atol=self.params.get("self_tol", 1e-9))
            traits, weights = traits[keep], weights[keep]
            if traits.size == 0:
                return float(u)
            weights = weights / weights.sum()
        return float(rng.choice(traits, p=weights / weights.sum()))

    def k_max(self, trait_space) -> float:
        """Analytic sup of the kernel density over its domain."""
        if self.kind == "truncated_gaussian":
            sigma = self.params["sigma"]
            ugrid = np.linspace(*trait_space, 101)
            z_min = float(self.conditioning_mass(ugrid, trait_space).min())
            return 1.0 / (sigma * math.sqrt(2 * math.pi) * z_min)
        return float(np.max(self.params["weights"]))

    def to_doc(self) -> dict:
        doc = {"type": self.kind}
        doc.update({k: v for k, v in self.params.items() if not k.startswith("_")})
        return doc


@dataclass(frozen=True)
class Bounds:
    b_max: float
    b_min: float
    d_max: float
    c_max: float
    c_min: float
    m_max: float
    k_max: float


@dataclass(frozen=True)
class Scaling:
    K: int
    q_K: float


@dataclass(frozen=True)
class ModelSpec:
    """Immutable, validated model definition.  Safe to share across workers."""

    domain: tuple[float, float] = (0.0, 1.0)
    trait_space: tuple[float, float] = (0.0, 1.0)
    birth: FunctionHandle = None
    death: FunctionHandle = None
    competition: FunctionHandle = None
    diffusion: FunctionHandle = None
    mutation_prob: FunctionHandle = None
    mutation_kernel: KernelHandle = None
    scaling: Scaling = Scaling(K=1000, q_K=0.0)
    bounds: Bounds = None
    validation: Optional[dict] = None

    # -- evaluation ---------------------------------------------------------

    def eval(self, which: str, *args):
        """Evaluate one coefficient function at the given coordinates.

        Pure and deterministic; raises ConfigError if a coordinate falls
        outside its declared interval.
        """
        if which not in ROLE_ARGS:
            raise ConfigError(f"unknown function selector {which!r}")
        self._check_domains(which, args)
        return getattr(self, which).evaluate(*args)

    def kernel_density(self, x, u, w):
        self._check_domains("mutation_prob", (x, u))
        return self.mutation_kernel.density(x, u, w, self.trait_space)

    def _check_domains(self, which, args):
        names = ROLE_ARGS[which]
        if len(args) != len(names):
            raise ConfigError(f"{which} expects args {names}, got {len(args)}")
        for name, val in zip(names, args):
            lo, hi = self.domain if name in ("x", "y") else self.trait_space
            arr = np.asarray(val, dtype=float)
            if np.any(arr < lo - 1e-12) or np.any(arr > hi + 1e-12):
                raise ConfigError(
                    f"argument {name}={arr} outside [{lo}, {hi}] for {which}")

    def b(self, x, u):
        return self.birth.evaluate(x, u)

    def d(self, x, u):
        return self.death.evaluate(x, u)

    def c(self, u, y, v):
        return self.competition.evaluate(u, y, v)

    def m(self, u):
        return self.diffusion.evaluate(u)

    def p(self, x, u):
        return self.mutation_prob.evaluate(x, u)

    def to_doc(self) -> dict:
        return {
            "domain": list(self.domain),
            "trait_space": list(self.trait_space),
            "birth": self.birth.to_doc(),
            "death": self.death.to_doc(),
            "competition": self.competition.to_doc(),
            "diffusion": self.diffusion.to_doc(),
            "mutation_prob": self.mutation_prob.to_doc(),
            "mutation_kernel": self.mutation_kernel.to_doc(),
            "scaling": {"K": self.scaling.K, "q_K": self.scaling.q_K},
            "bounds": {"b_min": self.bounds.b_min},
        }


# -- parsing ----------------------------------------------------------------

_REQUIRED_KEYS = ("birth", "death", "competition", "diffusion",
                  "mutation_kernel", "scaling")


def _parse_function(doc, role) -> FunctionHandle:
    if not isinstance(doc, dict) or "type" not in doc:
        raise ConfigError(f"{role}: expected a sub-document with a 'type' key")
    kind = doc["type"]
    params = {k: v for k, v in doc.items() if k != "type"}
    params["_role_args"] = ROLE_ARGS[role]
    needed = {
        "constant": ("value",),
        "truncated_parabola": ("A", "B"),
        "affine": ("intercept", "slope", "arg"),
        "trait_table": ("traits", "values"),
        "table": ("grid", "values", "arg"),
        "trait_matrix": ("traits", "matrix"),
    }.get(kind)
    if needed is None:
        raise ConfigError(f"{role}: unknown function type {kind!r}")
    for key in needed:
        if key not in params:
            raise ConfigError(f"{role}: missing key {key!r} for type {kind!r}")
    if kind == "trait_matrix" and role != "competition":
        raise ConfigError("trait_matrix is only valid for competition")
    if kind == "truncated_parabola" and role not in ("birth", "death"):
        raise ConfigError("truncated_parabola is only valid for birth/death")
    if kind == "table":
        grid = np.asarray(params["grid"], dtype=float)
        if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
            raise ConfigError(f"{role}: table grid must be strictly increasing")
    return FunctionHandle(kind, params)


def _parse_kernel(doc) -> KernelHandle:
    if not isinstance(doc, dict) or "type" not in doc:
        raise ConfigError("mutation_kernel: expected a sub-document with 'type'")
    kind = doc["type"]
    params = {k: v for k, v in doc.items() if k != "type"}
    if kind == "truncated_gaussian":
        if "sigma" not in params or params["sigma"] <= 0:
            raise ConfigError("truncated_gaussian kernel needs sigma > 0")
    elif kind == "discrete_point_set":
        for key in ("traits", "weights"):
            if key not in params:
                raise ConfigError(f"discrete_point_set kernel missing {key!r}")
        w = np.asarray(params["weights"], dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
            raise ValidationError(
                "discrete kernel weights must be nonnegative and sum to 1")
    else:
        raise ConfigError(f"unknown kernel type {kind!r}")
    return KernelHandle(kind, params)


def parse_config(text: str) -> ModelSpec:
    """Parse and validate a JSON configuration document into a ModelSpec."""
    try:
        doc = json.loads(text) if isinstance(text, str) else dict(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
    for key in _REQUIRED_KEYS:
        if key not in doc:
            raise ConfigError(f"missing top-level key {key!r}")

    domain = tuple(float(v) for v in doc.get("domain", (0.0, 1.0)))
    trait_space = tuple(float(v) for v in doc.get("trait_space", (0.0, 1.0)))
    for name, iv in (("domain", domain), ("trait_space", trait_space)):
        if len(iv) != 2 or not iv[0] < iv[1]:
            raise ConfigError(f"{name} must be an interval [lo, hi] with lo < hi")

    scal = doc["scaling"]
    if "K" not in scal or "q_K" not in scal:
        raise ConfigError("scaling needs both 'K' and 'q_K'")
    K = int(scal["K"])
    q_K = float(scal["q_K"])
    if K < 1 or not 0.0 <= q_K <= 1.0:
        raise ConfigError("need K >= 1 and q_K in [0, 1]")

    def check_table_span(fn, role):
        if fn.kind != "table":
            return
        lo, hi = domain if fn.params.get("arg") in ("x", "y") else trait_space
        grid = np.asarray(fn.params["grid"], dtype=float)
        if grid[0] > lo + 1e-12 or grid[-1] < hi - 1e-12:
            raise ConfigError(
                f"{role}: table grid [{grid[0]}, {grid[-1]}] must span "
                f"[{lo}, {hi}]")

    mut_doc = doc.get("mutation_prob", {"type": "constant", "value": 1.0})
    spec = ModelSpec(
        domain=domain,
        trait_space=trait_space,
        birth=_parse_function(doc["birth"], "birth"),
        death=_parse_function(doc["death"], "death"),
        competition=_parse_function(doc["competition"], "competition"),
        diffusion=_parse_function(doc["diffusion"], "diffusion"),
        mutation_prob=_parse_function(mut_doc, "mutation_prob"),
        mutation_kernel=_parse_kernel(doc["mutation_kernel"]),
        scaling=Scaling(K=K, q_K=q_K),
    )
    for role in ("birth", "death", "competition", "diffusion",
                 "mutation_prob"):
        check_table_span(getattr(spec, role), role)
    bounds = _derive_bounds(spec, doc.get("bounds", {}))
    object.__setattr__(spec, "bounds", bounds)
    report = validate_spec(spec)
    object.__setattr__(spec, "validation", report)
    return spec


def render_config(spec: ModelSpec) -> str:
    """Serialize back to a document accepted by parse_config (round-trips)."""
    return json.dumps(spec.to_doc(), indent=2)


def _derive_bounds(spec: ModelSpec, overrides: dict) -> Bounds:
    b_lo, b_hi = spec.birth.value_range(spec)
    _, d_hi = spec.death.value_range(spec)
    c_lo, c_hi = spec.competition.value_range(spec)
    _, m_hi = spec.diffusion.value_range(spec)
    # strict lower bound on b: default just below the analytic minimum so
    # that b == 0 at isolated points still satisfies b > b_min
    b_min = float(overrides.get("b_min", b_lo - 1e-12))
    return Bounds(
        b_max=float(overrides.get("b_max", b_hi)),
        b_min=b_min,
        d_max=float(overrides.get("d_max", d_hi)),
        c_max=float(overrides.get("c_max", c_hi)),
        c_min=float(overrides.get("c_min", c_lo)),
        m_max=float(overrides.get("m_max", m_hi)),
        k_max=float(overrides.get("k_max", spec.mutation_kernel.k_max(spec.trait_space))),
    )


def _lipschitz_estimate(values: np.ndarray, h: float, axis: int = 0) -> float:
    """Max secant slope along the spatial axis (the regularity the model
    requires is in the location arguments only)."""
    if values.shape[axis] < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(values, axis=axis))) / h)


def validate_spec(spec: ModelSpec, n_sample: int = 101) -> dict:
    """Check the sampled invariants; returns an informational report.

    Raises ValidationError naming the violated bound and a witness point.
    """
    xg = np.linspace(*spec.domain, n_sample)
    ug = np.linspace(*spec.trait_space, n_sample)
    X, U = np.meshgrid(xg, ug, indexing="ij")
    bnd = spec.bounds
    report = {"lipschitz": {}, "kernel_mass_error": 0.0}

    def witness(mask):
        i = np.unravel_index(np.argmax(mask), mask.shape)
        return float(X[i]), float(U[i])

    bvals = spec.b(X, U)
    if np.any(bvals <= bnd.b_min) or np.any(bvals > bnd.b_max + 1e-12):
        bad = (bvals <= bnd.b_min) | (bvals > bnd.b_max + 1e-12)
        raise ValidationError(
            f"birth bound violated at (x,u)={witness(bad)}: "
            f"need {bnd.b_min} < b <= {bnd.b_max}")
    dvals = spec.d(X, U)
    if np.any(dvals < 0) or np.any(dvals > bnd.d_max + 1e-12):
        bad = (dvals < 0) | (dvals > bnd.d_max + 1e-12)
        raise ValidationError(
            f"death bound violated at (x,u)={witness(bad)}: "
            f"need 0 <= d <= {bnd.d_max}")
    pvals = spec.p(X, U)
    if np.any(pvals < 0) or np.any(pvals > 1):
        bad = (pvals < 0) | (pvals > 1)
        raise ValidationError(
            f"mutation probability outside [0,1] at (x,u)={witness(bad)}")

    nc = 41
    uc = np.linspace(*spec.trait_space, nc)
    yc = np.linspace(*spec.domain, nc)
    Uc, Yc, Vc = np.meshgrid(uc, yc, uc, indexing="ij")
    cvals = spec.c(Uc, Yc, Vc)
    if np.any(cvals < max(bnd.c_min, 0.0) - 1e-12) or np.any(cvals > bnd.c_max + 1e-12):
        i = np.unravel_index(
            np.argmax((cvals < max(bnd.c_min, 0.0) - 1e-12) | (cvals > bnd.c_max + 1e-12)),
            cvals.shape)
        raise ValidationError(
            f"competition bound violated at (u,y,v)="
            f"({float(Uc[i])}, {float(Yc[i])}, {float(Vc[i])}): "
            f"need max(c_min,0)={max(bnd.c_min, 0.0)} <= c <= {bnd.c_max}")
    mvals = np.asarray(spec.m(ug), dtype=float)
    if np.any(mvals <= 0) or np.any(mvals > bnd.m_max + 1e-15):
        raise ValidationError(
            f"diffusivity bound violated at u={float(ug[np.argmax((mvals <= 0) | (mvals > bnd.m_max + 1e-15))])}: "
            f"need 0 < m <= {bnd.m_max}")

    # kernel normalization: Simpson on 2001 points, every sampled u
    if spec.mutation_kernel.kind == "truncated_gaussian":
        from scipy.integrate import simpson
        wg = np.linspace(*spec.trait_space, 2001)
        dens = spec.mutation_kernel.density(0.0, ug[:, None], wg[None, :], spec.trait_space)
        masses = simpson(dens, x=wg, axis=1)
        err = float(np.max(np.abs(masses - 1.0)))
        report["kernel_mass_error"] = err
        if err > 1e-8:
            raise ValidationError(
                f"mutation kernel mass deviates from 1 by {err:.2e} "
                f"(worst u={float(ug[np.argmax(np.abs(masses - 1.0))])})")
    else:
        w = np.asarray(spec.mutation_kernel.params["weights"], dtype=float)
        report["kernel_mass_error"] = float(abs(w.sum() - 1.0))

    hx = xg[1] - xg[0]
    report["lipschitz"]["birth"] = _lipschitz_estimate(bvals, hx, axis=0)
    report["lipschitz"]["death"] = _lipschitz_estimate(dvals, hx, axis=0)
    report["lipschitz"]["competition"] = _lipschitz_estimate(
        np.asarray(cvals, dtype=float), yc[1] - yc[0], axis=1)
    return report


def with_scaling(spec: ModelSpec, K: int | None = None,
                 q_K: float | None = None) -> ModelSpec:
    """Copy of spec with the scaling pair changed (everything else shared)."""
    import dataclasses
    scal = Scaling(K=spec.scaling.K if K is None else int(K),
                   q_K=spec.scaling.q_K if q_K is None else float(q_K))
    return dataclasses.replace(spec, scaling=scal)


# -- presets ----------------------------------------------------------------

def preset_doc(name: str, **overrides) -> dict:
    """Built-in experiment configurations.

    flat:            constant coefficients, every observable has a closed form
    parabolic_niche: trait-indexed niche b(x,u) = max(A - B*u*(x-u)^2, 0);
                     small traits are generalists (wide niche)
    """
    if name == "flat":
        doc = {
            "domain": [0.0, 1.0],
            "trait_space": [0.0, 1.0],
            "birth": {"type": "constant", "value": 2.0},
            "death": {"type": "constant", "value": 1.0},
            "competition": {"type": "constant", "value": 10.0},
            "diffusion": {"type": "constant", "value": 0.01},
            "mutation_prob": {"type": "constant", "value": 0.1},
            "mutation_kernel": {"type": "truncated_gaussian", "sigma": 0.05},
            "scaling": {"K": 10000, "q_K": 1e-3},
        }
    elif name == "parabolic_niche":
        doc = {
            "domain": [0.0, 1.0],
            "trait_space": [0.0, 1.0],
            "birth": {"type": "truncated_parabola", "A": 4.0, "B": 160.0},
            "death": {"type": "constant", "value": 1.0},
            "competition": {"type": "constant", "value": 10.0},
            "diffusion": {"type": "constant", "value": 0.003},
            "mutation_prob": {"type": "constant", "value": 1.0},
            "mutation_kernel": {"type": "truncated_gaussian", "sigma": 0.05},
            "scaling": {"K": 100000, "q_K": 1e-5},
        }
    else:
        raise ConfigError(f"unknown preset {name!r}")
    for key, val in overrides.items():
        if key in ("K", "q_K"):
            doc["scaling"][key] = val
        else:
            doc[key] = val
    return doc


def load_preset(name: str, **overrides) -> ModelSpec:
    return parse_config(json.dumps(preset_doc(name, **overrides)))
