import json

import numpy as np
import pytest
import yaml

from atomsort import cli
from atomsort.config import ConfigError, RunConfig, config_from_dict, dump_config, load_config
from atomsort.lattice import (
    ArrayState,
    GridGeometry,
    TargetPattern,
    make_pattern,
    pattern_to_ascii,
    state_from_ascii,
    write_state,
)


SMALL = {
    "width": 10, "height": 10,
    "pattern": {"kind": "checkerboard", "size": [4, 4]},
    "n_cycles": 3, "trials": 6,
    "loss": {"eta_pick": 0.97, "q_image_same": 0.98},
}


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(SMALL))
    return p


def test_defaults_encode_setup():
    cfg = RunConfig()
    assert (cfg.width, cfg.height, cfg.pitch_um) == (20, 20, 5.4)
    assert cfg.loss.tau_vacuum_s == 29.0
    assert (cfg.loss.t_pick_ms, cfg.loss.t_move_ms, cfg.loss.t_release_ms) == (0.2, 0.8, 0.2)
    assert cfg.build_pattern().n_targets == 120


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"widht": 10})
    with pytest.raises(ConfigError):
        config_from_dict({"loss": {"eta_pik": 0.9}})
    with pytest.raises(ConfigError):
        config_from_dict({"rules": {"directions": 6}})
    with pytest.raises(ConfigError):
        config_from_dict({"algorithm": "astar"})
    with pytest.raises(ConfigError):
        config_from_dict({"pattern": {"kind": "checkerboard", "size": [30, 30]}})


def test_config_roundtrip_and_hash(small_config):
    cfg = load_config(small_config)
    again = config_from_dict(yaml.safe_load(dump_config(cfg)))
    assert again == cfg and again.hash() == cfg.hash()
    assert cfg.with_overrides(seed=3).hash() != cfg.hash()
    assert cfg.with_overrides(out="elsewhere").hash() == cfg.hash()


def test_invalid_config_never_runs(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("trials: 5\nbogus: 1\n")
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", str(bad), "--out", str(out)]) == cli.EXIT_ERROR
    assert not out.exists()


def _defect_free_files(tmp_path):
    g = GridGeometry(10, 10)
    pat = make_pattern(g, "checkerboard", (3, 3, 4, 4))
    state = ArrayState(g, pat.demand.copy())
    write_state(state, tmp_path / "state.txt")
    (tmp_path / "pattern.txt").write_text(pattern_to_ascii(pat))
    return tmp_path / "state.txt", tmp_path / "pattern.txt"


def test_plan_defect_free_input_empty_plan(tmp_path, small_config):
    state, pattern = _defect_free_files(tmp_path)
    out = tmp_path / "plan.txt"
    rc = cli.main(["plan", str(state), "--pattern", str(pattern), "--config", str(small_config), "--out", str(out)])
    assert rc == cli.EXIT_OK
    lines = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
    assert lines == []
    stats = json.loads((tmp_path / "plan.txt.stats.json").read_text())
    assert stats["n_moves"] == 0 and stats["config_hash"]


def test_plan_and_validate_solvable_instance(tmp_path):
    from atomsort.lattice import load_random
    g = GridGeometry(20, 20)
    write_state(load_random(g, 0.6, 0.5, 7), tmp_path / "s.txt")
    plan = tmp_path / "p.txt"
    assert cli.main(["plan", str(tmp_path / "s.txt"), "--out", str(plan)]) == cli.EXIT_OK
    report = tmp_path / "v.json"
    assert cli.main(["validate", str(tmp_path / "s.txt"), str(plan), "--out", str(report)]) == cli.EXIT_OK
    rep = json.loads(report.read_text())
    assert rep["legal"] and rep["defect_free"] and rep["filling_fraction"] == 1.0


def test_plan_hha4_surrounded_void_partial_exit(tmp_path):
    state = state_from_ascii("""
    .......
    .......
    ..BAB..
    ..A.A..
    ..BAB..
    A.....B
    .......
    """)
    demand = np.zeros((7, 7), np.int8)
    demand[2:5, 2:5] = [[2, 1, 2], [1, 2, 1], [2, 1, 2]]
    write_state(state, tmp_path / "s.txt")
    (tmp_path / "t.txt").write_text(pattern_to_ascii(TargetPattern(state.geometry, demand)))
    args = ["plan", str(tmp_path / "s.txt"), "--pattern", str(tmp_path / "t.txt"), "--out", str(tmp_path / "p.txt")]
    assert cli.main(args + ["--algorithm", "hha4"]) == cli.EXIT_PARTIAL
    assert cli.main(args + ["--algorithm", "hha8"]) == cli.EXIT_OK


def test_validate_defect_free_empty_plan(tmp_path):
    state, pattern = _defect_free_files(tmp_path)
    (tmp_path / "empty.txt").write_text("# algorithm: hha8\n")
    out = tmp_path / "v.json"
    rc = cli.main(["validate", str(state), str(tmp_path / "empty.txt"), "--pattern", str(pattern), "--out", str(out)])
    rep = json.loads(out.read_text())
    assert rc == cli.EXIT_OK and rep["legal"] and rep["defect_free"]


def test_validate_occupied_destination_is_illegal_at_k(tmp_path):
    state = state_from_ascii("A.B.\n....\n")
    write_state(state, tmp_path / "s.txt")
    (tmp_path / "t.txt").write_text("....\n....\n")
    (tmp_path / "p.txt").write_text("0,0 -> 1,0 via E1 [A]\n1,0 -> 2,0 via E1 [A]\n")
    out = tmp_path / "v.json"
    rc = cli.main(["validate", str(tmp_path / "s.txt"), str(tmp_path / "p.txt"),
                   "--pattern", str(tmp_path / "t.txt"), "--out", str(out)])
    rep = json.loads(out.read_text())
    assert rc == cli.EXIT_ILLEGAL and rep["failed_at"] == 1 and "occupied" in rep["reason"]


def test_bad_state_file_is_error(tmp_path):
    (tmp_path / "s.txt").write_text("AXB\n")
    assert cli.main(["plan", str(tmp_path / "s.txt")]) == cli.EXIT_ERROR


def test_simulate_outputs(tmp_path, small_config):
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(small_config), "--out", str(out), "--raw"]) == 0
    assert {p.name for p in out.iterdir()} == {"config.yaml", "cycles.csv", "summary.json", "trials.jsonl"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config_hash"] == load_config(small_config).hash()


def test_simulate_lossless_single_trial(tmp_path):
    cfgp = tmp_path / "c.yaml"
    cfgp.write_text(yaml.safe_dump({"trials": 1, "n_cycles": 1, "seed": 2,
                                    "loss": {"tau_vacuum_s": 1e12}}))
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(cfgp), "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["first_cycle_defect_free"] == 1.0


def test_sweep_array_size_has_ratio(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["sweep", "--variable", "array_size", "--values", "4", "6", "--trials", "5",
                     "--out", str(out)]) == 0
    text = (out / "sweep_array_size.csv").read_text()
    header = [ln for ln in text.splitlines() if not ln.startswith("#")][0]
    assert "ratio" in header.split(",")


def test_sweep_loss_requires_values(tmp_path, small_config):
    assert cli.main(["sweep", "--variable", "loss", "--config", str(small_config),
                     "--out", str(tmp_path)]) == cli.EXIT_ERROR
    assert cli.main(["sweep", "--variable", "loss", "--values", "eta_pick=0.9", "--config", str(small_config),
                     "--out", str(tmp_path)]) == cli.EXIT_OK
