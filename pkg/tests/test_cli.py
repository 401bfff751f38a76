import csv
import io
import json

import pytest

from dpw_forge.cli import _plan, _values, admissible_interval, main, run, sweep
from dpw_forge.config import ExperimentConfig


def test_run_analyze_unitarize(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["run", "--family", "genus_g", "--n", "2", "--c", "0.05", "--stages", "analyze,unitarize",
                 "--out", str(out)])
    assert code == 0
    for name in ("config.toml", "monodromy.json", "monodromy.csv", "unitarizer.csv", "unitarizer.json", "summary.json"):
        assert (out / name).exists(), name
    text = capsys.readouterr().out
    assert "FAIL" not in text and "PASS [analyze] closing condition M0(1) = Id" in text
    summary = json.loads((out / "summary.json").read_text())
    assert summary["exit_code"] == 0 and summary["checks"]


def test_invalid_window_exit_code(tmp_path, capsys):
    code = main(["run", "--family", "delaunay_chain", "--w", "1.0", "--out", str(tmp_path)])
    assert code == 2
    assert "window" in capsys.readouterr().err


def test_check_failure_maps_to_stage_code(tmp_path):
    cfg = ExperimentConfig(stages=["analyze"], out=str(tmp_path), thresholds={"closing": 1e-30})
    res = run(cfg)
    assert res.exit_code == 4
    assert "closing condition" in res.error
    cfg = ExperimentConfig(stages=["unitarize"], out=str(tmp_path), thresholds={"unitarity": 1e-30})
    assert run(cfg).exit_code == 5


def test_io_error_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    res = run(ExperimentConfig(stages=["analyze"], out=str(blocker / "sub")))
    assert res.exit_code == 7


@pytest.mark.parametrize("family", ["genus_g", "delaunay_chain", "torus"])
def test_verify(tmp_path, capsys, family):
    code = main(["verify", "--family", family, "--out", str(tmp_path)])
    text = capsys.readouterr().out
    assert code == 0, text
    assert "FAIL" not in text
    data = json.loads((tmp_path / "verify.json").read_text())
    assert data["family"] == family


def test_export_small_mesh(tmp_path):
    code = main(["export", "--family", "genus_g", "--resolution", "6", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "surface.obj").exists() and (tmp_path / "surface.ply").exists()
    meta = json.loads((tmp_path / "mesh.json").read_text())
    assert meta["vertices"] > 0


def test_custom_analyze(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('family = "custom"\nentries = ["0", "1/lam", "z", "0"]\n'
                   'loop = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]\nstages = ["analyze"]\n'
                   f'out = "{tmp_path / "o"}"\n')
    assert main(["run", "--config", str(cfg)]) == 0
    data = json.loads((tmp_path / "o" / "monodromy.json").read_text())
    assert data["trace_free"] and data["det_drift"] < 1e-9


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(ExperimentConfig(c=0.1, out=str(tmp_path / "a")).to_toml())
    assert main(["run", "--config", str(cfg), "--c", "0.025", "--stages", "analyze", "--out", str(tmp_path / "b")]) == 0
    written = ExperimentConfig.load(tmp_path / "b" / "config.toml")
    assert written.c == 0.025


def test_deterministic_reports(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--stages", "analyze,unitarize", "--out", str(tmp_path / d)]) == 0
    for name in ("monodromy.json", "monodromy.csv", "unitarizer.csv", "unitarizer.json", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_sweep_c_margin(tmp_path, capsys):
    code = main(["sweep", "--family", "genus_g", "--param", "c", "--values", "0.4,0.2,0.1,0.05,0.025",
                 "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "sweep.csv").read_text())))
    assert all(r["passed"] == "True" for r in rows)
    margins = {float(r["value"]): float(r["trace_margin"]) for r in rows}
    # the margin 1 - max|tau| is positive throughout and shrinks like c^2
    assert all(m > 0 for m in margins.values())
    ratios = [m / c ** 2 for c, m in margins.items()]
    assert max(ratios) / min(ratios) < 1.01
    assert "admissible interval: [0.025, 0.4]" in capsys.readouterr().out


def test_sweep_w_goldman_edges():
    cfg = ExperimentConfig(family="delaunay_chain", n=3, w=-1.0)
    res = sweep(cfg, "w", [-24.5, -24.0, -12.0, -0.001, 0.5])
    passed = {r["value"]: r["passed"] for r in res["rows"]}
    assert passed == {-24.5: False, -24.0: True, -12.0: True, -0.001: True, 0.5: False}
    assert all(r["in_window"] == r["passed"] for r in res["rows"])
    assert res["admissible"] == [-24.0, -0.001]


def test_sweep_empty(tmp_path, capsys):
    assert main(["sweep", "--param", "c", "--values", "", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(text) == 1
    assert "admissible interval: None" in capsys.readouterr().out


def test_sweep_bad_parameter():
    from dpw_forge.errors import ConfigError

    with pytest.raises(ConfigError):
        sweep(ExperimentConfig(), "H", [1.0])


def test_helpers():
    assert _values("") == [] and _values("1,2") == [1.0, 2.0]
    assert _values("0:1:3") == [0.0, 0.5, 1.0]
    assert _plan(["export"]) == ["analyze", "unitarize", "build", "export"]
    assert _plan(["verify"]) == ["analyze", "unitarize", "verify"]
    rows = [{"value": v, "passed": p} for v, p in [(1, True), (2, False), (3, True), (4, True)]]
    assert admissible_interval(rows) == [3, 4]
