import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from evotss_plots.render import FigureRequest, SchemaError, main, render


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


@pytest.fixture()
def snapshot_fixture(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for t in (1.0, 2.0, 3.0):
        for _ in range(200):
            rows.append((t, rng.random(), 0.4 + 0.1 * rng.random()))
    snap = tmp_path / "snapshots.csv"
    write_csv(snap, ["t", "x", "u"], rows)
    meta = tmp_path / "meta.json"
    meta.write_text(json.dumps({"domain": [0, 1], "trait_space": [0, 1],
                                "K": 200}))
    return snap, meta


def test_single_particle_heatmap(tmp_path):
    snap = tmp_path / "snap.csv"
    write_csv(snap, ["t", "x", "u"], [(5.0, 0.5, 0.6)])
    out = tmp_path / "one.png"
    info = render(FigureRequest("snapshot_heatmap", {"snapshots": snap},
                                str(out)))
    assert out.exists()
    assert info["panels"] == 1


def test_heatmap_montage_epochs(snapshot_fixture, tmp_path):
    snap, meta = snapshot_fixture
    out = tmp_path / "montage.png"
    info = render(FigureRequest("snapshot_heatmap",
                                {"snapshots": snap, "meta": meta},
                                str(out), epochs=[1.0, 3.0]))
    assert out.exists()
    assert info["panels"] == 2
    assert info["epochs"] == [1.0, 3.0]


def test_missing_column_named(tmp_path):
    bad = tmp_path / "bad.csv"
    write_csv(bad, ["time", "x", "u"], [(1, 0.5, 0.5)])
    with pytest.raises(SchemaError, match="'t'"):
        render(FigureRequest("snapshot_heatmap", {"snapshots": bad},
                             str(tmp_path / "x.png")))


def test_rendering_is_read_only(snapshot_fixture, tmp_path):
    snap, meta = snapshot_fixture
    before = hashlib.sha256(snap.read_bytes()).hexdigest()
    render(FigureRequest("snapshot_heatmap",
                         {"snapshots": snap, "meta": meta},
                         str(tmp_path / "m.png")))
    assert hashlib.sha256(snap.read_bytes()).hexdigest() == before


def test_survival_curve(tmp_path):
    x = np.linspace(0, 1, 33)
    write_csv(tmp_path / "survival.csv", ["x", "phi"],
              zip(x, 0.3 + 0.1 * x))
    (tmp_path / "survival.json").write_text(
        json.dumps({"fitness": 0.4, "C_vu": 1.0}))
    out = tmp_path / "phi.png"
    info = render(FigureRequest("survival_curve",
                                {"survival": tmp_path / "survival.csv",
                                 "meta": tmp_path / "survival.json"},
                                str(out)))
    assert out.exists()
    assert info["max_phi"] == pytest.approx(0.4)


def test_tss_staircase(tmp_path):
    write_csv(tmp_path / "tss.csv",
              ["t_jump", "u_from", "u_to", "x0", "phi", "fitness"],
              [(10.0, 0.6, 0.52, 0.5, 0.01, 0.3),
               (40.0, 0.52, 0.45, 0.4, 0.02, 0.2)])
    (tmp_path / "tss.json").write_text(
        json.dumps({"initial_trait": 0.6, "final_time": 100.0}))
    out = tmp_path / "stairs.png"
    info = render(FigureRequest("tss_staircase",
                                {"tss": tmp_path / "tss.csv",
                                 "meta": tmp_path / "tss.json"},
                                str(out)))
    assert out.exists()
    assert info["n_jumps"] == 2


def test_cli_entrypoint(snapshot_fixture, tmp_path):
    snap, meta = snapshot_fixture
    out = tmp_path / "cli.png"
    rc = main(["--kind", "snapshot_heatmap",
               "--inputs", f"snapshots={snap}", f"meta={meta}",
               "--out", str(out), "--epochs", "1,2"])
    assert rc == 0
    assert out.exists()


def test_cli_bad_inputs_exit_2(tmp_path):
    rc = main(["--kind", "snapshot_heatmap", "--inputs", "nope",
               "--out", str(tmp_path / "x.png")])
    assert rc == 2


# -- acceptance: renders a real desk-scale run end to end ------------------------

@pytest.fixture(scope="module")
def figure1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig1run")
    proc = subprocess.run(
        [sys.executable, "-m", "evotss.cli", "figure1", "--k", "400",
         "--qk", "2e-3", "--t-end", "36", "--seed", "8",
         "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return out


def test_acceptance_montage_six_panels(figure1_run, tmp_path):
    out = tmp_path / "montage.png"
    info = render(FigureRequest(
        "snapshot_heatmap",
        {"snapshots": figure1_run / "snapshots.csv",
         "meta": figure1_run / "figure1.json"},
        str(out)))
    print(f"\n[{'PASS' if info['panels'] == 6 else 'FAIL'}] montage: "
          f"{info['panels']} panels at epochs {info['epochs']}")
    assert out.exists()
    assert info["panels"] == 6


def test_acceptance_overlay_annotation_matches_log(figure1_run, tmp_path):
    overlay_rows = list(csv.DictReader(open(figure1_run / "overlay.csv")))
    assert overlay_rows, "primary run produced no overlay data"
    last = overlay_rows[-1]
    out = tmp_path / "overlay.png"
    info = render(FigureRequest(
        "profile_overlay",
        {"snapshots": figure1_run / "snapshots.csv",
         "eigen": figure1_run / last["eigen_csv"],
         "overlay": figure1_run / "overlay.csv",
         "meta": figure1_run / "figure1.json"},
        str(out), epochs=[float(last["t"])]))
    logged = float(f"{float(last['flat_distance']):.3g}")
    ok = info["flat_distance"] == logged
    print(f"\n[{'PASS' if ok else 'FAIL'}] overlay annotation "
          f"{info['annotation']!r} vs logged {logged}")
    assert out.exists()
    assert ok
