import json

import numpy as np
import pytest
from scipy.integrate import simpson

from evotss.config import parse_config, preset_doc, render_config
from evotss.errors import ConfigError, ValidationError

NICHE_DOC = json.dumps(preset_doc("parabolic_niche"))


def test_parse_niche_preset_fields():
    spec = parse_config(NICHE_DOC)
    assert spec.birth.kind == "truncated_parabola"
    assert spec.birth.params["A"] == 4.0
    assert spec.birth.params["B"] == 160.0
    assert spec.death.params["value"] == 1.0
    assert spec.diffusion.params["value"] == 0.003
    assert spec.competition.params["value"] == 10.0
    assert spec.mutation_kernel.params["sigma"] == 0.05
    assert spec.scaling.K == 100000
    assert spec.scaling.q_K == 1e-5


def test_parse_constant_world():
    doc = {
        "birth": {"type": "constant", "value": 2.0},
        "death": {"type": "constant", "value": 1.0},
        "competition": {"type": "constant", "value": 10.0},
        "diffusion": {"type": "constant", "value": 0.01},
        "mutation_kernel": {"type": "truncated_gaussian", "sigma": 0.05},
        "scaling": {"K": 100, "q_K": 0.0},
    }
    spec = parse_config(json.dumps(doc))
    assert spec.birth.kind == "constant"
    assert spec.bounds.b_max == 2.0
    assert spec.bounds.d_max == 1.0


def test_negative_competition_rejected():
    doc = json.loads(NICHE_DOC)
    doc["competition"] = {"type": "constant", "value": -1.0}
    with pytest.raises(ValidationError, match="competition bound violated"):
        parse_config(json.dumps(doc))


def test_missing_key_named():
    doc = json.loads(NICHE_DOC)
    del doc["death"]
    with pytest.raises(ConfigError, match="death"):
        parse_config(json.dumps(doc))


def test_malformed_json():
    with pytest.raises(ConfigError, match="JSON"):
        parse_config("{not json")


def test_eval_truncated_parabola():
    spec = parse_config(NICHE_DOC)
    assert spec.eval("birth", 0.6, 0.6) == pytest.approx(4.0)
    # truncation active: 4 - 160*0.6*0.36 < 0
    assert spec.eval("birth", 0.0, 0.6) == 0.0
    assert spec.eval("competition", 0.1, 0.9, 0.4) == 10.0


def test_eval_pure():
    spec = parse_config(NICHE_DOC)
    vals = {spec.eval("birth", 0.37, 0.52) for _ in range(5)}
    assert len(vals) == 1


def test_eval_domain_error():
    spec = parse_config(NICHE_DOC)
    with pytest.raises(ConfigError, match="outside"):
        spec.eval("birth", 1.5, 0.5)
    with pytest.raises(ConfigError, match="unknown function selector"):
        spec.eval("nonsense", 0.5, 0.5)


def test_roundtrip():
    spec = parse_config(NICHE_DOC)
    again = parse_config(render_config(spec))
    assert again.to_doc() == spec.to_doc()
    assert again.bounds == spec.bounds


def test_kernel_mass_simpson():
    # conditioned Gaussian integrates to 1 for every parent trait
    spec = parse_config(NICHE_DOC)
    wg = np.linspace(0.0, 1.0, 2001)
    for u in np.linspace(0.0, 1.0, 101):
        dens = spec.mutation_kernel.density(0.0, u, wg, (0.0, 1.0))
        assert abs(simpson(dens, x=wg) - 1.0) < 1e-6


def test_kernel_kmax_truncated_gaussian():
    spec = parse_config(NICHE_DOC)
    sigma = 0.05
    # worst conditioning is at the corners of the trait interval
    z_min = 0.5  # half the Gaussian mass lies inside at the boundary
    assert spec.bounds.k_max == pytest.approx(
        1.0 / (sigma * np.sqrt(2 * np.pi) * z_min), rel=1e-6)


def test_discrete_kernel_weights_validated():
    doc = json.loads(NICHE_DOC)
    doc["mutation_kernel"] = {"type": "discrete_point_set",
                              "traits": [0.2, 0.8], "weights": [0.7, 0.7]}
    with pytest.raises(ConfigError):
        parse_config(json.dumps(doc))


def test_table_grid_must_increase():
    doc = json.loads(NICHE_DOC)
    doc["birth"] = {"type": "table", "arg": "x",
                    "grid": [0.0, 0.5, 0.4, 1.0],
                    "values": [1.0, 2.0, 2.0, 1.0]}
    with pytest.raises(ConfigError, match="strictly increasing"):
        parse_config(json.dumps(doc))


def test_table_grid_must_span_domain():
    doc = json.loads(NICHE_DOC)
    doc["birth"] = {"type": "table", "arg": "x",
                    "grid": [0.1, 0.9], "values": [1.0, 2.0]}
    with pytest.raises(ConfigError, match="span"):
        parse_config(json.dumps(doc))


def test_table_birth_evaluates():
    doc = json.loads(NICHE_DOC)
    doc["birth"] = {"type": "table", "arg": "x",
                    "grid": [0.0, 1.0], "values": [2.0, 3.0]}
    spec = parse_config(json.dumps(doc))
    assert spec.eval("birth", 0.5, 0.5) == pytest.approx(2.5)
    assert spec.bounds.b_max == 3.0


def test_affine_competition_in_y():
    doc = json.loads(NICHE_DOC)
    doc["competition"] = {"type": "affine", "arg": "y",
                          "intercept": 0.0, "slope": 1.0}
    spec = parse_config(json.dumps(doc))
    assert spec.eval("competition", 0.3, 0.25, 0.9) == pytest.approx(0.25)
    assert spec.bounds.c_max == 1.0


def test_bounds_overrides():
    doc = json.loads(NICHE_DOC)
    doc["bounds"] = {"b_max": 5.0}
    spec = parse_config(json.dumps(doc))
    assert spec.bounds.b_max == 5.0


def test_validation_report_has_lipschitz():
    spec = parse_config(NICHE_DOC)
    lip = spec.validation["lipschitz"]["birth"]
    # sup |d/dx b| = 320 u |x-u| at the truncation edge: 640 sqrt(u/160) <= ~51
    assert 30.0 < lip < 100.0
