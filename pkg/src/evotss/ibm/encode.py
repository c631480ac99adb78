"""Lowering of the closed function variants into flat arrays for the
compiled event loop.  Only models expressible here run on the fast engine;
anything else falls back to the pure-Python one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import FunctionHandle, KernelHandle, ModelSpec

F_CONST = 0
F_PARABOLA = 1
F_AFFINE_X = 2
F_TRAIT_TABLE = 3
F_TABLE_X = 4
F_AFFINE_U = 5

K_GAUSS = 0
K_DISCRETE = 1

_EMPTY = np.zeros(0, dtype=np.float64)


@dataclass
class EncodedFn:
    code: int
    par: np.ndarray
    grid: np.ndarray
    vals: np.ndarray
    vmax: float


def encode_function(fn: FunctionHandle, spec_like) -> EncodedFn | None:
    """Returns None when the variant cannot run on the compiled engine."""
    p = fn.params
    if fn.kind == "constant":
        v = float(p["value"])
        return EncodedFn(F_CONST, np.array([v]), _EMPTY, _EMPTY, v)
    if fn.kind == "truncated_parabola":
        return EncodedFn(F_PARABOLA, np.array([float(p["A"]), float(p["B"])]),
                         _EMPTY, _EMPTY, max(float(p["A"]), 0.0))
    if fn.kind == "affine":
        code = {"x": F_AFFINE_X, "u": F_AFFINE_U}.get(p.get("arg"))
        if code is None:
            return None
        lo, hi = fn.value_range(spec_like)
        return EncodedFn(code, np.array([float(p["intercept"]),
                                         float(p["slope"])]),
                         _EMPTY, _EMPTY, hi)
    if fn.kind == "trait_table":
        vals = np.asarray(p["values"], dtype=np.float64)
        return EncodedFn(F_TRAIT_TABLE, _EMPTY,
                         np.asarray(p["traits"], dtype=np.float64),
                         vals, float(vals.max()))
    if fn.kind == "table" and p.get("arg") == "x":
        vals = np.asarray(p["values"], dtype=np.float64)
        return EncodedFn(F_TABLE_X, _EMPTY,
                         np.asarray(p["grid"], dtype=np.float64),
                         vals, float(vals.max()))
    return None


@dataclass
class EncodedKernel:
    code: int
    par: np.ndarray        # gauss: [sigma]; discrete: [exclude_self, tol]
    traits: np.ndarray
    cumw: np.ndarray


def encode_kernel(k: KernelHandle) -> EncodedKernel | None:
    if k.kind == "truncated_gaussian":
        return EncodedKernel(K_GAUSS, np.array([float(k.params["sigma"])]),
                             _EMPTY, _EMPTY)
    if k.kind == "discrete_point_set":
        w = np.asarray(k.params["weights"], dtype=np.float64)
        return EncodedKernel(
            K_DISCRETE,
            np.array([1.0 if k.params.get("exclude_self", False) else 0.0,
                      float(k.params.get("self_tol", 1e-9))]),
            np.asarray(k.params["traits"], dtype=np.float64),
            np.cumsum(w / w.sum()))
    return None


@dataclass
class EncodedModel:
    """Everything the jit kernel needs, or None when not encodable."""

    xlo: float
    xhi: float
    ulo: float
    uhi: float
    b: EncodedFn
    d: EncodedFn
    p: EncodedFn
    c0: float              # constant competition kernel
    mfn: EncodedFn         # diffusivity as a function of the trait
    kernel: EncodedKernel
    q_K: float
    K: int


def encode_model(spec: ModelSpec) -> EncodedModel | None:
    if spec.competition.kind != "constant":
        return None
    b = encode_function(spec.birth, spec)
    d = encode_function(spec.death, spec)
    p = encode_function(spec.mutation_prob, spec)
    mfn = encode_function(spec.diffusion, spec)
    kernel = encode_kernel(spec.mutation_kernel)
    if any(e is None for e in (b, d, p, mfn, kernel)):
        return None
    return EncodedModel(
        xlo=spec.domain[0], xhi=spec.domain[1],
        ulo=spec.trait_space[0], uhi=spec.trait_space[1],
        b=b, d=d, p=p,
        c0=float(spec.competition.params["value"]),
        mfn=mfn, kernel=kernel,
        q_K=spec.scaling.q_K, K=spec.scaling.K)
