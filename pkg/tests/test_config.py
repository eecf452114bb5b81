import numpy as np
import pytest

from faultflow.config import SECONDS_PER_YEAR, ConfigError, load_config, parse_config
from faultflow.scenario import ADJACENT, Affine, Profile

CONFIGS = sorted((__import__("pathlib").Path(__file__).parents[1] / "configs").glob("*.toml"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.scenario.name == path.stem
    cfg.scenario.mesh.build()


def test_defaults():
    cfg = parse_config({})
    assert cfg.solver.kind == "direct" and cfg.solver.mode == "virtual"
    assert cfg.scenario.mesh.kind == "cartesian"
    assert cfg.scenario.transient is None


def test_fault_profiles():
    cfg = parse_config({"fault": {"thickness": 0.02, "lam_n": {"default": 1.0, "bands": [[0.25, 0.75, 0.01]]},
                                  "lam_tau": [1.0, "adjacent"]}})
    f = cfg.scenario.fault
    assert f.thickness == 0.02
    assert f.lam_n == Profile(1.0, ((0.25, 0.75, 0.01),))
    assert f.layer_profile("lam_tau", 2) == ADJACENT
    np.testing.assert_allclose(f.lam_n(np.array([0.1, 0.5, 0.75])), [1.0, 0.01, 1.0])


def test_boundary_conditions():
    cfg = parse_config({"bc": {"left": 0.0, "right": {"type": "neumann", "value": -1.0},
                               "top": {"value": {"gradient": [1.0, 2.0], "value": 0.5}}}})
    bc = cfg.scenario.bc
    assert bc["left"].is_dirichlet and not bc["right"].is_dirichlet
    assert isinstance(bc["top"].value, Affine)
    assert bc["top"].evaluate(np.array([[1.0, 1.0]]))[0] == pytest.approx(3.5)


def test_transient_schedule():
    cfg = parse_config({"transient": {"time_unit": "My", "t_start": -0.05, "t_end": 0.3, "steps": 35,
                                      "offset_end": 350.0, "initial_bc": {"bottom": 1e7}}})
    tr = cfg.scenario.transient
    assert len(tr.dt) == 35
    assert sum(tr.dt) == pytest.approx(0.35e6 * SECONDS_PER_YEAR)
    assert tr.offsets[0] == pytest.approx(10.0) and tr.offsets[-1] == pytest.approx(350.0)
    assert tr.initial_bc["bottom"].value == 1e7


def test_explicit_schedule():
    cfg = parse_config({"transient": {"dt": [1.0, 2.0], "offsets": [0.0, 0.5]}})
    assert cfg.scenario.transient.dt == (1.0, 2.0)


@pytest.mark.parametrize("doc, match", [
    ({"fault": {"thickness": -1.0}}, "thickness"),
    ({"fault": {"lam_n": 0.0}}, "lam_n"),
    ({"fault": {"lam_n": "sideways"}}, "keyword"),
    ({"fault": {"lam_tau": [1.0, 2.0, 3.0]}}, "two"),
    ({"mesh": {"nx": 0}}, "at least"),
    ({"mesh": {"kind": "hexagonal"}}, "mesh kind"),
    ({"mesh": {"kind": "two_block", "nx_left": 2}}, "ny_left"),
    ({"bc": {"front": 0.0}}, "boundary tags"),
    ({"bc": {"left": {"type": "robin"}}}, "robin"),
    ({"bc": {"left": "zero"}}, "number or a table"),
    ({"solver": {"kind": "magic"}}, "solver"),
    ({"solver": {"mode": "coupled"}}, "mode"),
    ({"solver": {"alpha": -1.0}}, "stabilization"),
    ({"materials": {"viscosity": 0.0}}, "viscosity"),
    ({"materials": {"perm": [1.0, 2.0, 3.0]}}, "permeability"),
    ({"transient": {"dt": [1.0], "offsets": [0.0, 1.0]}}, "offsets"),
    ({"transient": {"dt": [0.0]}}, "positive"),
    ({"convergence": {"factors": [0, 1]}}, "factors"),
])
def test_invalid_configs(doc, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(doc)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[mesh\nnx = 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)
