import pytest
from hypothesis import given, settings, strategies as st

from dpw_forge.config import DEFAULT_THRESHOLDS, ExperimentConfig
from dpw_forge.errors import ConfigError, ParameterWindowError


def test_defaults_per_family():
    assert ExperimentConfig().params == {"n": 2, "c": 0.05}
    assert ExperimentConfig(family="torus").params == {"c": 0.001}
    assert ExperimentConfig(family="delaunay_chain").params == {"n": 3, "w": -1.0}
    assert ExperimentConfig().thresholds == DEFAULT_THRESHOLDS


@pytest.mark.parametrize("kw", [
    {"family": "genus_g", "n": 3},
    {"family": "genus_g", "n": 0},
    {"family": "genus_g", "c": 0.0},
    {"family": "torus", "c": 0.0},
    {"family": "torus", "omega1": -1.0},
    {"family": "delaunay_chain", "w": 1.0},
    {"family": "delaunay_chain", "w": 0.0},
    {"family": "delaunay_chain", "n": 3, "w": -24.5},
    {"family": "delaunay_chain", "n": 2},
])
def test_parameter_windows(kw):
    with pytest.raises(ParameterWindowError):
        ExperimentConfig(**kw)


@pytest.mark.parametrize("kw", [
    {"family": "nope"},
    {"grid_n": 500},
    {"laurent_k": 400},
    {"radius": 0.0},
    {"radius": 0.9, "stages": ["analyze", "unitarize"]},
    {"stages": ["analyze", "paint"]},
    {"formats": ["stl"]},
    {"H": 0.0},
    {"family": "custom", "entries": ["0", "1"], "loop": [[0, 0], [1, 0], [0, 1]]},
    {"family": "custom", "entries": ["0", "1", "z", "0"], "loop": [[0, 0], [1, 0], [0, 1]], "stages": ["unitarize"]},
])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kw)


def test_radius_below_one_for_analyze():
    cfg = ExperimentConfig(radius=0.9, stages=["analyze"])
    assert cfg.radius == 0.9


def test_toml_round_trip(tmp_path):
    cfg = ExperimentConfig(family="delaunay_chain", n=4, w=-2.0, grid_n=256, stages=["analyze"], out="x")
    p = tmp_path / "c.toml"
    p.write_text(cfg.to_toml())
    back = ExperimentConfig.load(p)
    assert back == cfg
    assert back.to_toml() == cfg.to_toml()


def test_tables_and_unknown_keys():
    cfg = ExperimentConfig.from_toml('family = "torus"\n[params]\nc = 0.002\n[thresholds]\nclosing = 1e-7\n')
    assert cfg.c == 0.002 and cfg.thresholds["closing"] == 1e-7 and cfg.thresholds["unitarity"] == 1e-5
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml("colour = 3\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml("family = \n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load("/nonexistent/dpw.toml")


def test_replace_overrides_and_family_switch():
    cfg = ExperimentConfig(family="genus_g", n=4, c=0.1)
    assert cfg.replace(c=0.2, n=None).params == {"n": 4, "c": 0.2}
    switched = cfg.replace(family="delaunay_chain")
    assert switched.params == {"n": 3, "w": -1.0}


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(["genus_g", "torus", "delaunay_chain"]),
    st.floats(-0.5, 0.5).filter(lambda c: abs(c) > 1e-6),
    st.sampled_from([64, 128, 512]),
    st.integers(2, 80),
    st.lists(st.sampled_from(["analyze", "unitarize", "build", "export", "verify"]), min_size=1, unique=True),
)
def test_round_trip_property(family, c, grid_n, resolution, stages):
    kw = {"family": family, "grid_n": grid_n, "resolution": resolution, "stages": stages}
    if family != "delaunay_chain":
        kw["c"] = c
    else:
        kw["w"] = -abs(c) * 10 - 1e-3
    cfg = ExperimentConfig(**kw)
    assert ExperimentConfig.from_toml(cfg.to_toml()) == cfg
