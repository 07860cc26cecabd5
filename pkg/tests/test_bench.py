import math
import random
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atomsort import bench
from atomsort.bench import AggregateResult, SweepSpec
from atomsort.config import PatternSpec, RunConfig
from atomsort.physics import LossModel


def small_cfg(**kw):
    base = RunConfig(width=10, height=10, pattern=PatternSpec(size=(4, 4)), n_cycles=3, trials=8)
    return replace(base, **kw)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=50))
def test_aggregate_order_independent(vals):
    a = AggregateResult.of("x", vals)
    shuffled = list(vals)
    random.Random(0).shuffle(shuffled)
    b = AggregateResult.of("x", shuffled)
    assert (a.n, a.total, a.total_sq) == (b.n, b.total, b.total_sq)


def test_aggregate_statistics():
    a = AggregateResult.of(1, [1.0, 2.0, 3.0, 4.0])
    assert a.mean == 2.5
    assert a.std == pytest.approx(np.std([1, 2, 3, 4], ddof=1))
    assert a.se == pytest.approx(a.std / 2)
    assert AggregateResult.of(0, [5.0]).se == 0.0


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec("array_size", (), 10, RunConfig())
    with pytest.raises(ValueError):
        SweepSpec("array_size", (4,), 0, RunConfig())
    with pytest.raises(ValueError):
        SweepSpec("colour", (4,), 1, RunConfig())


def test_parse_size_and_grid():
    assert bench.parse_size("12x10") == (12, 10)
    assert bench.parse_size(8) == (8, 8)
    assert bench.grid_for(12, 10) == 20


def test_lossless_cycle_sweep_all_defect_free():
    cfg = small_cfg(loss=LossModel.lossless(p_load=0.9))
    table = bench.sweep_cycles(cfg)
    assert table.column("defect_free_prob") == [1.0] * 3
    assert table.column("filling_fraction") == [1.0] * 3


def test_csv_deterministic_with_provenance():
    cfg = small_cfg(loss=LossModel(eta_pick=0.95))
    a = bench.sweep_cycles(cfg).to_csv()
    b = bench.sweep_cycles(cfg).to_csv()
    assert a == b
    assert a.startswith("# config_hash: ")
    assert "# seed: 0" in a and "# version: " in a


def test_workers_do_not_change_results():
    cfg = small_cfg(loss=LossModel(eta_pick=0.95, q_image_same=0.97))
    serial = bench.run_trials(cfg, workers=1)
    parallel = bench.run_trials(cfg, workers=2)
    assert [r.to_record() for r in serial] == [r.to_record() for r in parallel]


def test_raw_records_reaggregate_exactly():
    cfg = small_cfg(loss=LossModel(eta_pick=0.97, q_image_same=0.98))
    reports = bench.run_trials(cfg)
    streamed = bench.cycle_table(reports, cfg)
    lines = bench.raw_records(reports, cfg)
    assert len(lines.splitlines()) == cfg.trials
    rebuilt = bench.records_table(lines, cfg)
    assert rebuilt.rows == streamed.rows


def test_defect_free_bounded_by_species_subarrays():
    cfg = small_cfg(loss=LossModel(eta_pick=0.95, q_image_same=0.97, q_image_cross=0.97), trials=30)
    t = bench.sweep_cycles(cfg)
    for df, a, b in zip(t.column("defect_free_prob"), t.column("defect_free_A"), t.column("defect_free_B")):
        assert df <= min(a, b)


def test_moves_vs_size_small_points():
    t = bench.sweep_moves_vs_size(["2", "4"], trials=15, seed=1)
    assert t.column("size") == ["2x2", "4x4"]
    # each void needs at least one move
    assert all(v >= 0 for v in t.column("min_moves_minus_defects"))
    assert t.column("solvable_rate_hha8") == [1.0, 1.0]


def test_identical_single_defect_equal_traversal():
    from atomsort.lattice import ArrayState, GridGeometry, SiteCoord, Species, make_pattern
    from atomsort.planner import plan_cycle
    g = GridGeometry(8, 8)
    pat = make_pattern(g, "zebra", (2, 2, 4, 4))
    occ = pat.demand.copy()
    occ[2, 3] = 0
    occ[0, 3] = Species.A
    s = ArrayState(g, occ)
    p8, pg = plan_cycle(s, pat, algorithm="hha8"), plan_cycle(s, pat, algorithm="greedy")
    assert [m.path.traversed_sites for m in p8.moves] == [m.path.traversed_sites for m in pg.moves] == [2]
    assert p8.moves[0].source == SiteCoord(3, 0)


def test_defect_histogram_lossless():
    cfg = replace(RunConfig(), loss=LossModel.lossless())
    table, summary = bench.defect_histogram(cfg, trials=10)
    assert table.rows == [[0, 10, 1.0]]
    assert summary["defect_free_prob"] == 1.0 and summary["filling_fraction"] == 1.0


def test_calibrate_lossless_targets_returns_all_ones():
    cfg = small_cfg(loss=LossModel.lossless())
    res = bench.calibrate(cfg, {"single_cycle_filling": 1.0, "saturation_filling": 1.0},
                          grid=3, trials=6, saturation_window=(2, 3))
    assert res.move_success == 1.0 and res.image_survival == 1.0
    assert res.loss.eta_pick == res.loss.eta_release == res.loss.q_image_same == res.loss.q_image_cross == 1.0
    assert res.converged


def test_calibrate_initial_guess_already_matching():
    cfg = small_cfg()
    ach = bench._evaluate(cfg, 0.97, 0.98, 6, 0, 2, 3)
    res = bench.calibrate(cfg, ach, trials=6, initial=(0.97, 0.98), saturation_window=(2, 3))
    assert res.refinement_steps == 0 and res.evaluations == 1 and res.converged
    assert res.move_success == 0.97


def test_calibrate_unreachable_is_flagged():
    cfg = small_cfg()
    res = bench.calibrate(cfg, {"single_cycle_filling": 0.2, "saturation_filling": 0.2},
                          grid=2, trials=4, max_steps=2, saturation_window=(2, 3))
    assert not res.converged
    assert set(res.residuals) == {"single_cycle_filling", "saturation_filling"}
    d = res.to_dict()
    assert d["seed"] == 0 and "loss" in d and math.isfinite(d["move_success"])
