import json
import math
from pathlib import Path

import pytest

from mesorates import config as C
from mesorates.cli import EXIT_CAP, EXIT_COMPILE, EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from mesorates.experiments import mapk_channels
from mesorates.io import ResultBundle, Table, write_outputs

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

PAIR = """
[parameters]
sigma = 2e-9
D = 2e-12
k_r = 1e-18
dim = 3
"""


def _write(tmp_path, text, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _rebind(values, n=5, trajectories=200):
    return f"""
[experiment]
kind = "rebind"
trajectories = {trajectories}

[experiment.sweep]
axis = "h"
values = {values}
relative = "h_star_inf"
{PAIR}
[lattice]
n = {n}
"""


def _run(cfg, out, *extra):
    return main(["--config", str(cfg), "--seed", "11", "--out", str(out), "--no-plot", *extra])


def test_rates_report_preset(tmp_path):
    assert _run(CONFIGS / "fig6.toml", tmp_path) == EXIT_OK
    assert sorted(p.name for p in tmp_path.iterdir()) == ["rates-report-D.csv", "summary.json"]
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["channel"]["eps_max"] == pytest.approx(0.95213, rel=1e-4)
    header = (tmp_path / "rates-report-D.csv").read_text().splitlines()[0]
    assert header == "D,F,eps_max,flags"


def test_rates_subcommand(capsys):
    assert main(["rates", "--k-r", "inf", "--D", "2e-12", "--sigma", "2e-9"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["h_star_inf"] / 2e-9 == pytest.approx(3.17594, rel=1e-5)
    assert main(["rates", "--k-r", "1e-18", "--D", "-1", "--sigma", "2e-9"]) == EXIT_CONFIG


def test_rebind_two_values_two_csvs(tmp_path):
    cfg = _write(tmp_path, _rebind("[1.0, 2.0]"))
    out = tmp_path / "out"
    assert _run(cfg, out) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["rebind-1.csv", "rebind-2.csv", "summary.json"]
    rows = (out / "rebind-1.csv").read_text().splitlines()
    assert rows[0] == "trajectory,meso_time_s" and len(rows) == 201


def test_empty_sweep_summary_only(tmp_path):
    cfg = _write(tmp_path, _rebind("[]"))
    out = tmp_path / "out"
    assert _run(cfg, out) == EXIT_OK
    assert [p.name for p in out.iterdir()] == ["summary.json"]


def test_rerun_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, _rebind("[1.0]") + "\n[micro]\ndt = 1e-7\nsamples = 50\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(cfg, a, "--threads", "1") == EXIT_OK
    assert _run(cfg, b, "--threads", "3") == EXIT_OK
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_summary_echoes_resolved_rates(tmp_path):
    cfg = _write(tmp_path, _rebind("[1.5]"))
    assert _run(cfg, tmp_path / "o") == EXIT_OK
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    ch = s["runs"][0]["channel"]
    for key in ("h_star_kr", "h_star_inf", "rho", "kd_meso", "F_eps"):
        assert key in ch
    assert s["config"]["parameters"]["k_r"] == 1e-18
    assert s["seed"] == 11 and "version" in s


def test_sweep_point_without_valid_rate_is_flagged(tmp_path):
    cfg = _write(tmp_path, _rebind("[0.8, 1.0]"))
    out = tmp_path / "out"
    assert _run(cfg, out) == EXIT_CAP
    s = json.loads((out / "summary.json").read_text())
    assert "error" in s["runs"][0] and s["unreliable"]
    assert sorted(p.name for p in out.iterdir()) == ["rebind-1.csv", "summary.json"]


def test_config_errors(tmp_path):
    assert _run(tmp_path / "missing.toml", tmp_path) == EXIT_CONFIG
    assert _run(_write(tmp_path, "[experiment]\nkind = 'nope'\n"), tmp_path) == EXIT_CONFIG
    assert _run(_write(tmp_path, "not toml ["), tmp_path) == EXIT_CONFIG
    bad = _rebind("[1.0, -2.0]")
    assert _run(_write(tmp_path, bad), tmp_path) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["--config", str(CONFIGS / "fig6.toml")])   # no seed
    assert exc.value.code == EXIT_CONFIG


def test_mapk_placeholder_requires_parameters(tmp_path, capsys):
    assert _run(CONFIGS / "mapk-placeholder.toml", tmp_path) == EXIT_CONFIG
    assert "k1" in capsys.readouterr().err


def test_mapk_model_file_matches_builtin_topology():
    cfg = C.load(CONFIGS / "mapk.toml")
    assert C.reactions(cfg) == mapk_channels()


def _simulate(h, max_events=None):
    cap = f"max_events = {max_events}" if max_events else ""
    return f"""
[experiment]
kind = "simulate"
trajectories = 3
horizon = 0.01
interval = 0.001
event_log = true
{cap}

[parameters]
k_on = 1e-18

[lattice]
n = 4
h = {h}

[[species]]
name = "A"
gamma = 1e-12
radius = 1e-9

[[species]]
name = "B"
gamma = 1e-12
radius = 1e-9

[[species]]
name = "C"

[[reactions]]
name = "bind"
reactants = ["A", "B"]
products = ["C"]
rate = "k_on"
mode = "hhp"

[initial]
counts = {{ A = 5, B = 5 }}
"""


def test_simulate_outputs(tmp_path):
    assert _run(_write(tmp_path, _simulate(1e-8)), tmp_path / "o") == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert names == ["simulate-1e-08-events.csv", "simulate-1e-08.csv", "summary.json"]
    ev = (tmp_path / "o" / "simulate-1e-08-events.csv").read_text().splitlines()
    assert ev[0] == "time,voxel,channel,species_deltas"
    ts = (tmp_path / "o" / "simulate-1e-08.csv").read_text().splitlines()
    assert ts[0] == "time,A,B,C" and len(ts) == 12


def test_compile_error_exit_code(tmp_path, capsys):
    # h below h*(k_r) = 6.05e-9 m for this pair
    assert _run(_write(tmp_path, _simulate(4e-9)), tmp_path / "o") == EXIT_COMPILE
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "compile" and err["channel"] == "bind"
    assert not (tmp_path / "o").exists()


def test_cap_exit_code(tmp_path):
    assert _run(_write(tmp_path, _simulate(1e-8, max_events=5)), tmp_path / "o") == EXIT_CAP
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["cap_exceeded"] and s["runs"][0]["capped"] == 3


def test_io_failure_removes_partial_files(tmp_path):
    t = Table(["x"])
    t.add(1.0)
    out = tmp_path / "o"
    (out / "summary.json").mkdir(parents=True)    # summary cannot be written
    bundle = ResultBundle("demo", {"a": 1}, {"1": t, "2": t})
    with pytest.raises(OSError):
        write_outputs(bundle, out)
    assert [p.name for p in out.iterdir()] == ["summary.json"]
    assert not any(p.suffix in (".csv", ".part") for p in out.rglob("*"))


def test_io_failure_exit_code(tmp_path):
    target = tmp_path / "file"
    target.write_text("")
    assert _run(CONFIGS / "fig6.toml", target / "sub") == EXIT_IO


def test_figures_written_next_to_tables(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", str(CONFIGS / "fig2a.toml"), "--seed", "1", "--out", str(out)]) == EXIT_OK
    assert (out / "rates-report-h.png").stat().st_size > 1000


def test_full_overrides_and_trajectory_override():
    cfg = C.load(CONFIGS / "rebind.toml", full=True, trajectories=7)
    assert cfg.section("lattice")["n"] == 81 and cfg.trajectories == 7
    assert C.load(CONFIGS / "rebind.toml").section("lattice")["n"] == 21


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_presets_parse(name):
    if name == "mapk-model.toml":
        pytest.skip("model file, not an experiment")
    cfg = C.load(CONFIGS / name)
    assert cfg.kind in C.KINDS
    if cfg.sweep:
        assert all(v > 0 and math.isfinite(v) for v in cfg.sweep.values)
