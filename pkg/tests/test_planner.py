import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atomsort.lattice import (
    ArrayState,
    GridGeometry,
    SiteCoord,
    Species,
    TargetPattern,
    centered_region,
    feasibility,
    filling_fraction,
    load_random,
    make_pattern,
    state_from_ascii,
)
from atomsort.pathing import Move, MoveRules, Path
from atomsort.planner import (
    PROXY_LABEL,
    MovePlan,
    PlanError,
    PlanStats,
    check_move,
    compute_depths,
    greedy_baseline,
    moves_per_defect,
    plan_cached,
    plan_cycle,
    plan_from_text,
    plan_single_species,
    plan_to_text,
    replay,
)


def n_defects(state, pattern):
    return int(np.count_nonzero((pattern.demand != 0) & (state.occ != pattern.demand)))


def depth_oracle(demand):
    """Chebyshev distance to the nearest site outside the region, minus one."""
    h, w = demand.shape
    out = np.full((h, w), -1)
    outside = [(r, c) for r in range(-1, h + 1) for c in range(-1, w + 1)
               if not (0 <= r < h and 0 <= c < w) or demand[r, c] == 0]
    for r in range(h):
        for c in range(w):
            if demand[r, c]:
                out[r, c] = min(max(abs(r - a), abs(c - b)) for a, b in outside) - 1
    return out


@given(st.lists(st.integers(0, 2), min_size=36, max_size=36))
def test_depths_match_chebyshev_oracle(vals):
    demand = np.array(vals, np.int8).reshape(6, 6)
    if not demand.any():
        with pytest.raises(PlanError):
            compute_depths(TargetPattern(GridGeometry(6, 6), demand))
        return
    pat = TargetPattern(GridGeometry(6, 6), demand)
    assert np.array_equal(compute_depths(pat), depth_oracle(demand))


def test_depths_of_block():
    g = GridGeometry(10, 10)
    pat = make_pattern(g, "zebra", (1, 1, 8, 8))
    d = compute_depths(pat)
    assert d.max() == 3 and d[1, 1] == 0 and d[4, 4] == 3


def random_instance(seed, pattern="checkerboard", size=(12, 10), grid=20, p=0.6):
    g = GridGeometry(grid, grid)
    pat = make_pattern(g, pattern, centered_region(g, *size))
    return load_random(g, p, 0.5, seed), pat


@pytest.mark.parametrize("algorithm", ["hha8", "hha4", "greedy"])
@pytest.mark.parametrize("pattern", ["checkerboard", "zebra"])
def test_plans_replay_legally(algorithm, pattern):
    rules = MoveRules()
    for seed in range(12):
        state, pat = random_instance(seed, pattern)
        plan = plan_cycle(state, pat, rules, algorithm)
        res = replay(state, plan, MoveRules(4, single_drag=True) if algorithm == "hha4" else rules)
        assert res.legal, (seed, res.reason)
        if feasibility(state, pat).solvable and not plan.partial:
            assert filling_fraction(res.final_state, pat) == 1.0
            assert n_defects(res.final_state, pat) == 0
        # moves >= defects: every unfinished target needs a move ending there
        assert len(plan) >= n_defects(state, pat) - len(plan.residual)


def test_hha4_moves_are_single_straight_runs():
    state, pat = random_instance(3, "zebra")
    plan = plan_cycle(state, pat, algorithm="hha4")
    for m in plan.moves:
        if not m.is_discard:
            assert len(m.path.segments) == 1
            assert not m.path.segments[0].direction.diagonal


def test_determinism_and_input_untouched():
    state, pat = random_instance(5)
    before = state.copy()
    a = plan_cycle(state, pat)
    b = plan_cycle(state, pat)
    assert a == b
    assert state == before
    assert plan_cached(state, pat, MoveRules(), "hha8") == a


def test_defect_free_input_gives_empty_plan():
    g = GridGeometry(8, 8)
    pat = make_pattern(g, "checkerboard", (2, 2, 4, 4))
    state = ArrayState(g, pat.demand.copy())
    plan = plan_cycle(state, pat)
    assert len(plan) == 0 and not plan.partial


def test_single_void_single_move():
    g = GridGeometry(6, 6)
    pat = make_pattern(g, "zebra", (1, 1, 4, 4))
    occ = pat.demand.copy()
    occ[1, 2] = 0  # edge void, open to the reservoir
    occ[5, 5] = Species.A
    state = ArrayState(g, occ)
    plan = plan_cycle(state, pat)
    assert len(plan) == 1
    assert plan.moves[0].source == SiteCoord(5, 5) and plan.moves[0].destination == SiteCoord(2, 1)


def test_enclosed_void_filled_by_chain_shift():
    g = GridGeometry(6, 6)
    pat = make_pattern(g, "zebra", (1, 1, 4, 4))
    occ = pat.demand.copy()
    occ[2, 2] = 0  # interior void, every neighbour finished
    occ[0, 0] = Species.B
    state = ArrayState(g, occ)
    plan = plan_cycle(state, pat)
    res = replay(state, plan)
    assert res.legal and n_defects(res.final_state, pat) == 0
    assert len(plan) == 2


def test_surrounded_void_logjam_for_four_directions():
    # the void at the centre is boxed in along rows and columns, open diagonally
    text = """
    .......
    .......
    ..BAB..
    ..A.A..
    ..BAB..
    A......
    .......
    """
    state = state_from_ascii(text)
    g = state.geometry
    demand = np.zeros(g.shape, np.int8)
    demand[2:5, 2:5] = [[2, 1, 2], [1, 2, 1], [2, 1, 2]]
    pat = TargetPattern(g, demand)
    state.occ[6, 6] = Species.B
    p8 = plan_cycle(state, pat, algorithm="hha8")
    assert not p8.partial and replay(state, p8).legal
    p4 = plan_cycle(state, pat, algorithm="hha4")
    assert p4.partial and p4.residual == (SiteCoord(3, 3),)


def test_misplaced_recycled_into_own_void():
    g = GridGeometry(5, 2)
    pat = TargetPattern(g, np.array([[1, 2, 0, 0, 0], [0, 0, 0, 0, 0]], np.int8))
    state = ArrayState(g, np.array([[2, 0, 1, 0, 0], [0, 0, 0, 0, 0]], np.int8))
    plan = plan_cycle(state, pat)
    assert replay(state, plan).legal
    first = plan.moves[0]
    assert first.source == SiteCoord(0, 0) and first.destination == SiteCoord(1, 0)
    assert len(plan) == 2


def test_enclosed_misplaced_atom_is_discarded():
    g = GridGeometry(3, 3)
    demand = np.ones((3, 3), np.int8)
    pat = TargetPattern(g, demand)
    occ = np.ones((3, 3), np.int8)
    occ[1, 1] = Species.B
    state = ArrayState(g, occ)
    plan = plan_cycle(state, pat)
    assert plan.moves[0].is_discard and plan.moves[0].source == SiteCoord(1, 1)
    assert plan.partial  # no spare A atom to refill
    assert PlanStats.of(plan).n_discards == 1


def test_infeasible_gives_partial():
    g = GridGeometry(4, 4)
    pat = make_pattern(g, "zebra", (0, 0, 2, 2))
    state = ArrayState.empty(g)
    state.occ[3, 3] = Species.A
    plan = plan_cycle(state, pat)
    assert plan.partial and len(plan.residual) >= 2
    assert replay(state, plan).legal


def test_single_species_entry_point():
    g = GridGeometry(20, 20)
    pat = make_pattern(g, "mask", mask=np.ones((10, 10), bool))
    state = load_random(g, 0.6, 1.0, 1)
    plan = plan_single_species(state, pat)
    assert not plan.partial
    assert 1.0 <= moves_per_defect(plan, state, pat) < 2.0
    with pytest.raises(PlanError):
        plan_single_species(state, make_pattern(g, "zebra"))


def test_unknown_algorithm():
    state, pat = random_instance(0)
    with pytest.raises(PlanError):
        plan_cycle(state, pat, algorithm="astar")


def test_greedy_proxy():
    state, pat = random_instance(2, "zebra")
    plan = greedy_baseline(state, pat)
    assert plan.algorithm == "greedy" and replay(state, plan).legal
    assert PROXY_LABEL == "HCOA-proxy"


def test_plan_text_roundtrip():
    state, pat = random_instance(4)
    plan = plan_cycle(state, pat)
    text = plan_to_text(plan)
    assert text.splitlines()[3].count("->") == 1
    back = plan_from_text(text)
    assert back == plan
    assert plan_to_text(back) == text


def test_plan_text_discard_line():
    m = Move(SiteCoord(3, 4), None, Path(), Species.B)
    plan = MovePlan((m,), "x", "hha8")
    text = plan_to_text(plan)
    assert "3,4 -> DISCARD [B]" in text
    assert plan_from_text(text).moves == (m,)


def test_check_move_reasons():
    state = state_from_ascii("A.B\n...\n")
    ok = Move(SiteCoord(0, 0), SiteCoord(1, 0), Path.from_string(SiteCoord(0, 0), "E1"), Species.A)
    assert check_move(state, ok) == ""
    occupied = Move(SiteCoord(0, 0), SiteCoord(2, 0), Path.from_string(SiteCoord(0, 0), "E2"), Species.A)
    assert "occupied" in check_move(state, occupied)
    empty = Move(SiteCoord(1, 0), SiteCoord(1, 1), Path.from_string(SiteCoord(1, 0), "S1"), Species.A)
    assert "empty" in check_move(state, empty)
    wrong = Move(SiteCoord(2, 0), SiteCoord(1, 1), Path.from_string(SiteCoord(2, 0), "SW1"), Species.A)
    assert "holds" in check_move(state, wrong)
    diag = Move(SiteCoord(2, 0), SiteCoord(1, 1), Path.from_string(SiteCoord(2, 0), "SW1"), Species.B)
    assert check_move(state, diag, MoveRules(4))
    blocked = Move(SiteCoord(0, 0), SiteCoord(0, 1), Path.from_string(SiteCoord(0, 0), "E2,SW1,W1"), Species.A)
    assert "blocked" in check_move(state, blocked) or "join" in check_move(state, blocked)


def test_replay_stops_at_illegal_move():
    state = state_from_ascii("A.B\n...\n")
    good = Move(SiteCoord(0, 0), SiteCoord(1, 1), Path.from_string(SiteCoord(0, 0), "SE1"), Species.A)
    bad = Move(SiteCoord(2, 0), SiteCoord(1, 1), Path.from_string(SiteCoord(2, 0), "SW1"), Species.B)
    res = replay(state, MovePlan((good, bad), state.fingerprint(), "hha8"))
    assert not res.legal and res.failed_at == 1 and res.moves_applied == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["hha8", "greedy"]))
def test_lossless_plans_finish_feasible_instances(seed, algorithm):
    state, pat = random_instance(seed, size=(6, 6), grid=10)
    plan = plan_cycle(state, pat, algorithm=algorithm)
    res = replay(state, plan)
    assert res.legal
    if feasibility(state, pat).solvable:
        assert not plan.partial
        assert n_defects(res.final_state, pat) == 0
