"""Render simulation CSV outputs into figures.

Consumes only the tabular contracts of the simulation CLI:

  snapshots.csv     t, x, u            particle snapshots
  eigen_*.csv       x, g               equilibrium profile
  overlay.csv       t, trait, flat_distance, eigen_csv, empirical_mass
  survival.csv      x, phi
  tss.csv           t_jump, u_from, u_to, x0, phi, fitness
  *.json            run metadata (domain, trait_space, K, ...)

Four figure kinds: snapshot_heatmap (trait-by-location montage across
epochs), profile_overlay (equilibrium curve vs empirical density, annotated
with the logged flat distance), survival_curve, tss_staircase.  Rendering is
read-only and deterministic: color scales are pinned to data quantiles and
recorded in the caption.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

KINDS = ("snapshot_heatmap", "profile_overlay", "survival_curve",
         "tss_staircase")


class SchemaError(ValueError):
    pass


@dataclass
class FigureRequest:
    kind: str
    inputs: dict                 # role -> path
    out: str
    epochs: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        for role, path in self.inputs.items():
            if not Path(path).exists():
                raise SchemaError(f"input {role}={path} does not exist")


def read_table(path, required):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(
                    f"{path}: missing column {col!r} (found {header})")
        rows = list(reader)
    return {col: np.array([float(r[col]) if r[col] != "" else np.nan
                           for r in rows])
            for col in header if all(_floatable(r[col]) for r in rows)} | {
        col: np.array([r[col] for r in rows])
        for col in header if not all(_floatable(r[col]) for r in rows)}


def _floatable(s):
    try:
        float(s)
        return True
    except (TypeError, ValueError):
        return False


def read_meta(path):
    return json.loads(Path(path).read_text())


def _pick_epochs(times, wanted):
    uniq = np.unique(times)
    if not wanted:
        return list(uniq)
    return [float(uniq[np.argmin(np.abs(uniq - w))]) for w in wanted]


def render_snapshot_heatmap(req: FigureRequest):
    tab = read_table(req.inputs["snapshots"], ("t", "x", "u"))
    meta = read_meta(req.inputs["meta"]) if "meta" in req.inputs else {}
    domain = meta.get("domain", [0.0, 1.0])
    traits = meta.get("trait_space", [0.0, 1.0])
    K = meta.get("K", 1)
    epochs = _pick_epochs(tab["t"], req.epochs)
    n = len(epochs)
    ncols = 3
    nrows = max((n + ncols - 1) // ncols, 1)
    fig, axes = plt.subplots(nrows, ncols,
                             figsize=(3.2 * ncols, 2.8 * nrows),
                             squeeze=False)
    xe = np.linspace(domain[0], domain[1], 101)
    ue = np.linspace(traits[0], traits[1], 101)
    hists = []
    for t in epochs:
        sel = tab["t"] == t
        h, _, _ = np.histogram2d(tab["x"][sel], tab["u"][sel],
                                 bins=[xe, ue],
                                 weights=np.full(int(sel.sum()), 1.0 / K))
        hists.append(h)
    vmax = max(float(np.quantile(h, 0.995)) for h in hists) or 1.0
    for ax, t, h in zip(axes.ravel(), epochs, hists):
        ax.imshow(h.T, origin="lower", aspect="auto", vmin=0.0, vmax=vmax,
                  extent=(domain[0], domain[1], traits[0], traits[1]),
                  cmap="viridis")
        ax.set_title(f"t = {t:g}", fontsize=9)
        ax.set_xlabel("location x", fontsize=8)
        ax.set_ylabel("trait u", fontsize=8)
    for ax in axes.ravel()[n:]:
        ax.set_visible(False)
    caption = f"color scale 0..{vmax:.3g} (99.5% quantile), weights 1/K"
    fig.suptitle(caption, fontsize=8)
    fig.tight_layout()
    fig.savefig(req.out, dpi=110)
    plt.close(fig)
    return {"out": req.out, "epochs": epochs, "panels": n, "vmax": vmax}


def _sig3(x):
    return float(f"{x:.3g}")


def render_profile_overlay(req: FigureRequest):
    eig = read_table(req.inputs["eigen"], ("x", "g"))
    tab = read_table(req.inputs["snapshots"], ("t", "x", "u"))
    over = read_table(req.inputs["overlay"],
                      ("t", "trait", "flat_distance", "eigen_csv"))
    meta = read_meta(req.inputs["meta"]) if "meta" in req.inputs else {}
    K = meta.get("K", 1)
    domain = meta.get("domain", [0.0, 1.0])
    epoch = req.epochs[0] if req.epochs else float(np.max(over["t"]))
    i = int(np.argmin(np.abs(over["t"] - epoch)))
    t0, trait, flat = (float(over["t"][i]), float(over["trait"][i]),
                       float(over["flat_distance"][i]))
    sel = (tab["t"] == t0) & (np.abs(tab["u"] - trait) <= 0.05)
    edges = np.linspace(domain[0], domain[1], 65)
    h, _ = np.histogram(tab["x"][sel], bins=edges)
    dens = h / (K * np.diff(edges))
    centers = (edges[:-1] + edges[1:]) / 2.0

    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(centers, dens, drawstyle="steps-mid",
            label=f"population at t={t0:g}")
    ax.plot(eig["x"], eig["g"], lw=2.0,
            label=f"equilibrium profile (trait {trait:g})")
    ax.set_xlim(domain)
    ax.set_xlabel("location x")
    ax.set_ylabel("density")
    annotation = f"flat distance {_sig3(flat):.3g}"
    ax.annotate(annotation, xy=(0.02, 0.95), xycoords="axes fraction",
                fontsize=9, va="top")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(req.out, dpi=110)
    plt.close(fig)
    return {"out": req.out, "t": t0, "trait": trait,
            "annotation": annotation, "flat_distance": _sig3(flat)}


def render_survival_curve(req: FigureRequest):
    tab = read_table(req.inputs["survival"], ("x", "phi"))
    meta = read_meta(req.inputs["meta"]) if "meta" in req.inputs else {}
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(tab["x"], tab["phi"], lw=2.0)
    ax.set_ylim(0.0, max(1.05 * float(np.max(tab["phi"])), 0.01))
    ax.set_xlabel("founding location x")
    ax.set_ylabel("survival probability")
    bits = []
    if "fitness" in meta:
        bits.append(f"fitness {meta['fitness']:.3g}")
    if "C_vu" in meta and meta["C_vu"] is not None:
        bits.append(f"background pressure {meta['C_vu']:.3g}")
    if bits:
        ax.set_title(", ".join(bits), fontsize=9)
    fig.tight_layout()
    fig.savefig(req.out, dpi=110)
    plt.close(fig)
    return {"out": req.out, "max_phi": float(np.max(tab["phi"]))}


def render_tss_staircase(req: FigureRequest):
    tab = read_table(req.inputs["tss"],
                     ("t_jump", "u_from", "u_to"))
    meta = read_meta(req.inputs["meta"]) if "meta" in req.inputs else {}
    t = np.concatenate([[0.0], tab["t_jump"]])
    u = np.concatenate([[tab["u_from"][0] if len(tab["u_from"])
                         else meta.get("initial_trait", np.nan)],
                        tab["u_to"]])
    if meta.get("final_time") is not None:
        t = np.append(t, meta["final_time"])
        u = np.append(u, u[-1])
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.step(t, u, where="post", lw=2.0)
    ax.set_xlabel("rescaled time")
    ax.set_ylabel("resident trait")
    fig.tight_layout()
    fig.savefig(req.out, dpi=110)
    plt.close(fig)
    return {"out": req.out, "n_jumps": len(tab["t_jump"])}


_RENDERERS = {
    "snapshot_heatmap": render_snapshot_heatmap,
    "profile_overlay": render_profile_overlay,
    "survival_curve": render_survival_curve,
    "tss_staircase": render_tss_staircase,
}


def render(req: FigureRequest) -> dict:
    """Render one figure; returns a summary of what was drawn."""
    return _RENDERERS[req.kind](req)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="evotss-plots",
        description="render evotss CSV outputs into figures")
    ap.add_argument("--kind", required=True, choices=KINDS)
    ap.add_argument("--inputs", required=True, nargs="+",
                    metavar="ROLE=PATH",
                    help="e.g. snapshots=out/snapshots.csv meta=out/figure1.json")
    ap.add_argument("--out", required=True)
    ap.add_argument("--epochs", default="",
                    help="comma-separated epoch times")
    args = ap.parse_args(argv)
    inputs = {}
    for item in args.inputs:
        if "=" not in item:
            print(f"error: --inputs items must be ROLE=PATH, got {item!r}",
                  file=sys.stderr)
            return 2
        role, path = item.split("=", 1)
        inputs[role] = path
    epochs = [float(e) for e in args.epochs.split(",") if e]
    try:
        info = render(FigureRequest(kind=args.kind, inputs=inputs,
                                    out=args.out, epochs=epochs))
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(info))
    return 0


if __name__ == "__main__":
    sys.exit(main())
