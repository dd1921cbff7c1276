"""Command line behavior: config parsing, file outputs, exit codes, determinism."""

import numpy as np
import pytest

from geocount import cli, continuation, solver, weights

ELLIPSOID_CFG = """\
[metric]
family = ellipsoid
axes = 1.05, 1.0, 0.95

[run]
mesh = 128
planes = 24
seed = 7
length_bound = 7.0
"""

COUNT_CFG = """\
[metric]
family = ellipsoid
axes = 1.05, 1.0, 0.95

[run]
mesh = 128
planes = 24
seed = 7
window = 0.0, 7.0
probes = 5.0, 7.0
"""

FOLD_CFG = """\
[metric.start]
family = revolution
profile = poly
coefficients = 1.0, -0.02, 0.0, 0.033333333333333333
band = -1.0, 1.0

[metric.end]
family = revolution
profile = poly
coefficients = 1.0, 0.02, 0.0, 0.033333333333333333
band = -1.0, 1.0

[run]
mesh = 128
seed = 7

[continue]
start = parallel
z = 0.55
"""

PD_CFG = """\
[metric.start]
family = conformal_sphere
terms = 1,1,0.05; 2,0,0.16; 2,2,0.08; 3,3,0.03

[metric.end]
family = conformal_sphere
terms = 1,1,0.05; 2,0,0.26; 2,2,0.08; 3,3,0.03

[run]
mesh = 128
seed = 7

[continue]
start = great_circle
plane = 0, 1
"""

STALL_CFG = """\
[metric.start]
family = revolution
profile = poly
coefficients = 0.8, 0.0, -0.4
band = -0.6, 0.6

[metric.end]
family = revolution
profile = poly
coefficients = 0.8, 0.56, -0.4
band = -0.6, 0.6

[run]
mesh = 128
seed = 7

[continue]
start = parallel
z = 0.0
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _run(tmp_path, command, cfg_text, outname="out", extra=()):
    cfg = _write(tmp_path, f"{command.replace('-', '_')}.cfg", cfg_text)
    out = tmp_path / outname
    code = cli.main([command, "--config", cfg, "--out", str(out), *extra])
    return code, out


def test_exit_code_mapping():
    assert cli.exit_code_for(cli.ConfigError("bad")) == 2
    assert cli.exit_code_for(solver.StallError("stuck")) == 3
    assert cli.exit_code_for(weights.AmbiguousWeight("split", [])) == 4
    assert cli.exit_code_for(continuation.UnresolvedClusterError("close")) == 5
    assert cli.exit_code_for(RuntimeError("other")) == 1


def test_load_config_round_trip(tmp_path):
    cfg = cli.load_config(_write(tmp_path, "a.cfg", ELLIPSOID_CFG), "census")
    assert cfg.metric.family == "ellipsoid"
    assert cfg.metric.data == (1.05, 1.0, 0.95)
    assert cfg.mesh == 128
    assert cfg.planes == 24
    assert cfg.seed == 7
    assert cfg.length_bound == 7.0


def test_load_config_continue_builds_path(tmp_path):
    cfg = cli.load_config(_write(tmp_path, "c.cfg", FOLD_CFG), "continue")
    assert cfg.path is not None
    assert cfg.path.start.family == "revolution"
    assert cfg.start_kind == "parallel"
    assert cfg.start_z == 0.55


def test_config_errors(tmp_path):
    with pytest.raises(cli.ConfigError):
        cli.load_config(str(tmp_path / "missing.cfg"), "census")
    with pytest.raises(cli.ConfigError):
        cli.load_config(
            _write(tmp_path, "k.cfg", ELLIPSOID_CFG + "typo_key = 3\n"), "census")
    with pytest.raises(cli.ConfigError):
        cli.load_config(
            _write(tmp_path, "m.cfg", ELLIPSOID_CFG.replace("mesh = 128", "mesh = 200")),
            "census")
    with pytest.raises(cli.ConfigError):
        # census requires a length bound
        cli.load_config(
            _write(tmp_path, "lb.cfg", ELLIPSOID_CFG.replace("length_bound = 7.0", "")),
            "census")
    with pytest.raises(cli.ConfigError):
        # count requires a window
        cli.load_config(
            _write(tmp_path, "w.cfg", COUNT_CFG.replace("window = 0.0, 7.0", "")),
            "count")
    with pytest.raises(cli.ConfigError):
        # continuation requires both endpoint metrics
        cli.load_config(_write(tmp_path, "e.cfg", ELLIPSOID_CFG), "continue")
    with pytest.raises(cli.ConfigError):
        cli.load_config(
            _write(tmp_path, "f.cfg", ELLIPSOID_CFG.replace("ellipsoid", "torus")),
            "census")


def test_cli_reports_config_error_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, "census", ELLIPSOID_CFG + "typo_key = 3\n")
    assert code == 2
    assert "typo_key" in capsys.readouterr().err


def test_census_outputs(tmp_path):
    code, out = _run(tmp_path, "census", ELLIPSOID_CFG)
    assert code == 0
    lines = (out / "geodesics.csv").read_text().strip().splitlines()
    assert lines[0] == "id,d,length,residual,partner"
    assert len(lines) == 7  # three classes, two orientations each
    body = "\n".join(lines)
    for frozen in ("6.1344978839180992", "6.3028700871907368", "6.4495922490578668"):
        assert body.count(frozen) == 2
    ids = [ln.split(",")[0] for ln in lines[1:]]
    assert ids == ["g000.1+", "g000.1-", "g001.1+", "g001.1-", "g002.1+", "g002.1-"]
    loop_files = sorted(p.name for p in (out / "loops").iterdir())
    assert len(loop_files) == 6
    first = (out / "loops" / loop_files[0]).read_text().splitlines()
    assert int(first[0]) == 128
    assert len(first) == 129
    summary = (out / "summary.txt").read_text()
    assert "coverage (every class hit twice): PASS" in summary
    assert (out / "warnings.txt").exists()


def test_census_outputs_are_byte_identical(tmp_path):
    _, out1 = _run(tmp_path, "census", ELLIPSOID_CFG, outname="out1")
    _, out2 = _run(tmp_path, "census", ELLIPSOID_CFG, outname="out2")
    files1 = sorted(p.relative_to(out1) for p in out1.rglob("*") if p.is_file())
    files2 = sorted(p.relative_to(out2) for p in out2.rglob("*") if p.is_file())
    assert files1 == files2
    for rel in files1:
        assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes()


def test_census_below_bound_is_empty_but_clean(tmp_path):
    code, out = _run(tmp_path, "census", ELLIPSOID_CFG.replace("7.0", "0.5"))
    assert code == 0
    lines = (out / "geodesics.csv").read_text().strip().splitlines()
    assert lines == ["id,d,length,residual,partner"]


def test_jacobi_output_blocks(tmp_path):
    code, out = _run(tmp_path, "jacobi", ELLIPSOID_CFG)
    assert code == 0
    text = (out / "jacobi.txt").read_text()
    for ident in ("g000", "g001", "g002"):
        assert f"geodesic {ident}" in text
    assert "multipliers" in text
    assert "routes_agree=yes" in text


def test_weights_csv(tmp_path):
    code, out = _run(tmp_path, "weights", ELLIPSOID_CFG)
    assert code == 0
    lines = (out / "weights.csv").read_text().strip().splitlines()
    assert lines[0].startswith("ident,length,orientations,iota_1,iota_2,nu_1,nu_2")
    rows = [ln.split(",") for ln in lines[1:]]
    assert len(rows) == 3
    n1_col = lines[0].split(",").index("n_1")
    assert [r[n1_col] for r in rows] == ["-1", "1", "-1"]


def test_count_outputs(tmp_path):
    code, out = _run(tmp_path, "count", COUNT_CFG)
    assert code == 0
    lines = (out / "count.csv").read_text().strip().splitlines()
    assert lines[0] == "length,weight,cumulative"
    assert [ln.split(",")[2] for ln in lines[1:]] == ["-2", "0", "-2"]
    summary = (out / "summary.txt").read_text()
    assert "pi(5) = 0" in summary
    assert "pi(7) = -2" in summary
    assert "count over (0, 7): -2" in summary
    step = (out / "step.csv").read_text().strip().splitlines()
    assert step[0] == "x,y"
    assert len(step) > 4


def test_continue_fold_run(tmp_path):
    code, out = _run(tmp_path, "continue", FOLD_CFG)
    assert code == 0
    events = (out / "events.csv").read_text().strip().splitlines()
    assert len(events) == 2
    fields = events[1].split(",")
    assert fields[1] == "fold"
    assert abs(float(fields[2]) - 0.5) < 1e-6
    summary = (out / "summary.txt").read_text()
    assert "invariance event 1: PASS" in summary
    assert "overall: PASS" in summary
    inv = (out / "invariance.txt").read_text()
    assert "local invariance: PASS" in inv


def test_continue_period_doubling_run(tmp_path):
    code, out = _run(tmp_path, "continue", PD_CFG)
    assert code == 0
    events = (out / "events.csv").read_text().strip().splitlines()
    fields = events[1].split(",")
    assert fields[1] == "period_doubling"
    assert abs(float(fields[2]) - 0.798186551) < 1e-6
    summary = (out / "summary.txt").read_text()
    assert "overall: PASS" in summary
    traces = (out / "traces.csv").read_text().strip().splitlines()
    assert traces[0].startswith("branch_id,s,t,length")
    assert len(traces) > 5


def test_degenerate_family_census_warns(tmp_path):
    sphere_cfg = ELLIPSOID_CFG.replace("1.05, 1.0, 0.95", "1.0, 1.0, 1.0")
    sphere_cfg = sphere_cfg.replace("planes = 24", "planes = 64")
    code, out = _run(tmp_path, "census", sphere_cfg)
    assert code == 0
    warnings_text = (out / "warnings.txt").read_text()
    assert "degenerate" in warnings_text


def test_stall_exit_code_and_partial_outputs(tmp_path, capsys):
    code, out = _run(tmp_path, "continue", STALL_CFG)
    assert code == 3
    traces = (out / "traces.csv").read_text().strip().splitlines()
    assert len(traces) > 5  # partial branch data still lands on disk
    summary = (out / "summary.txt").read_text()
    assert "stalled" in summary
    assert "underflow" in capsys.readouterr().err


def test_ambiguous_weight_exit_code(tmp_path, monkeypatch, capsys):
    def fake(*args, **kwargs):
        raise weights.AmbiguousWeight(
            "strategies disagree",
            [("axis_jitter", -2), ("conformal_noise", 0)])

    monkeypatch.setattr(weights, "degenerate_weight", fake)
    sphere_cfg = COUNT_CFG.replace("1.05, 1.0, 0.95", "1.0, 1.0, 1.0")
    code, out = _run(tmp_path, "degenerate-weight", sphere_cfg)
    assert code == 4
    err = capsys.readouterr().err
    assert "trial values" in err
    assert "-2" in err and "0" in err


def test_unresolved_cluster_exit_code(tmp_path, monkeypatch):
    def fake(*args, **kwargs):
        raise continuation.UnresolvedClusterError("events too close to separate")

    monkeypatch.setattr(continuation, "continue_branch", fake)
    code, _ = _run(tmp_path, "continue", FOLD_CFG)
    assert code == 5


def test_count_grid_along_a_path(tmp_path):
    path_cfg = """\
[metric.start]
family = ellipsoid
axes = 1.05, 1.0, 0.95

[metric.end]
family = ellipsoid
axes = 1.06, 1.0, 0.94

[run]
mesh = 128
planes = 24
seed = 7
length_bound = 7.0
window = 0.0, 7.0

[continue]
start = census
grid = 3
"""
    code, out = _run(tmp_path, "continue", path_cfg)
    assert code == 0
    grid = (out / "count_grid.csv").read_text().strip().splitlines()
    assert grid[0] == "s,count"
    assert [ln.split(",")[1] for ln in grid[1:]] == ["-2", "-2", "-2"]
    assert "count grid: PASS" in (out / "summary.txt").read_text()
