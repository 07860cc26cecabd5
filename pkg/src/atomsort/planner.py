"""Heuristic heteronuclear rearrangement planning.

``hha8`` is the enhanced planner with diagonal moves, ``hha4`` the
row/column-only baseline, ``greedy`` a nearest-atom proxy for the
connectivity-optimisation baseline (reported as "HCOA-proxy").

All planners work on a private copy of the state and emit moves that are
legal one after another on lossless replay.
"""
from __future__ import annotations

import functools
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .lattice import (
    ArrayState,
    GridGeometry,
    LatticeError,
    SiteCoord,
    Species,
    TargetPattern,
)
from .pathing import (
    Direction,
    Move,
    MoveRules,
    NoPath,
    Path,
    PathError,
    find_path,
    path_allowed,
    reach_map,
    segment_clear,
)

ALGORITHMS = ("hha8", "hha4", "greedy")
PROXY_LABEL = "HCOA-proxy"


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class MovePlan:
    moves: tuple[Move, ...]
    planned_for: str
    algorithm: str
    partial: bool = False
    residual: tuple[SiteCoord, ...] = ()

    def __len__(self) -> int:
        return len(self.moves)


@dataclass(frozen=True)
class PlanStats:
    n_moves: int
    n_traversed_sites: int
    n_discards: int
    partial: bool

    @classmethod
    def of(cls, plan: MovePlan) -> "PlanStats":
        return cls(
            n_moves=len(plan.moves),
            n_traversed_sites=sum(m.path.traversed_sites for m in plan.moves),
            n_discards=sum(1 for m in plan.moves if m.is_discard),
            partial=plan.partial,
        )


def compute_depths(pattern: TargetPattern) -> np.ndarray:
    """Distance of each target site from the region boundary (8-neighbour).

    A target site touching a non-target site or the grid edge has depth 0;
    every other target site is one deeper than its shallowest target
    neighbour. Non-target sites get -1.
    """
    demand = pattern.demand
    h, w = demand.shape
    target = demand != 0
    if not target.any():
        raise PlanError("pattern has no target sites")
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = target
    interior = np.ones((h, w), dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            interior &= padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    depth = np.full((h, w), -1, dtype=np.int64)
    frontier = deque()
    for r, c in zip(*np.nonzero(target & ~interior)):
        depth[r, c] = 0
        frontier.append((r, c))
    while frontier:
        r, c = frontier.popleft()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nr, nc = r + dr, c + dc
                if 0 <= nr < h and 0 <= nc < w and target[nr, nc] and depth[nr, nc] < 0:
                    depth[nr, nc] = depth[r, c] + 1
                    frontier.append((nr, nc))
    return depth


def _rules_for(algorithm: str, rules: MoveRules) -> MoveRules:
    if algorithm == "hha8":
        return replace(rules, directions=8)
    if algorithm == "hha4":
        return replace(rules, directions=4, single_drag=True)
    if algorithm == "greedy":
        return rules
    raise PlanError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


class _Planner:
    def __init__(self, state: ArrayState, pattern: TargetPattern, rules: MoveRules, greedy: bool):
        if state.geometry.shape != pattern.geometry.shape:
            raise LatticeError("state and pattern grids differ")
        self.geometry: GridGeometry = state.geometry
        self.occ = state.occ.copy()
        self.demand = pattern.demand
        self.rules = rules
        self.greedy = greedy
        self.shift_early = not greedy
        self.depth = compute_depths(pattern)
        self.moves: list[Move] = []
        h, w = self.demand.shape
        rr, cc = np.mgrid[0:h, 0:w]
        self._rr = rr
        self._cc = cc
        self._order = rr * w + cc  # row-major rank

    # -- helpers ---------------------------------------------------------
    def _state(self, occ: np.ndarray | None = None) -> ArrayState:
        return ArrayState(self.geometry, self.occ if occ is None else occ)

    def _voids(self) -> np.ndarray:
        return (self.demand != 0) & (self.occ == 0)

    def _misplaced(self) -> np.ndarray:
        return (self.demand != 0) & (self.occ != 0) & (self.occ != self.demand)

    def _pick(self, mask: np.ndarray, dist: np.ndarray, anchor: SiteCoord,
              deep: bool = False) -> SiteCoord | None:
        """Best site in ``mask`` reachable per ``dist``; ranked by path or straight-line distance."""
        cand = mask & (dist > 0)
        if not cand.any():
            return None
        rows, cols = np.nonzero(cand)
        steps = dist[rows, cols]
        d2 = (rows - anchor.row) ** 2 + (cols - anchor.col) ** 2
        order = self._order[rows, cols]
        if self.greedy:
            i = np.lexsort((order, steps, d2))[0]
        elif deep:
            i = np.lexsort((order, d2, steps, -self.depth[rows, cols]))[0]
        else:
            i = np.lexsort((order, d2, steps))[0]
        return SiteCoord(int(cols[i]), int(rows[i]))

    def _move_on(self, occ: np.ndarray, src: SiteCoord, dst: SiteCoord | None) -> list[Move]:
        species = Species(int(occ[src.row, src.col]))
        occ[src.row, src.col] = 0
        if dst is None:
            return [Move(src, None, Path(), species)]
        occ[src.row, src.col] = species
        path = find_path(self._state(occ), src, dst, self.rules)
        occ[src.row, src.col] = 0
        occ[dst.row, dst.col] = species
        if self.rules.single_drag and len(path.segments) > 1:
            return [Move(seg.start, seg.end, Path((seg,)), species) for seg in path.segments]
        return [Move(src, dst, path, species)]

    def _do(self, src: SiteCoord, dst: SiteCoord | None) -> None:
        self.moves.extend(self._move_on(self.occ, src, dst))

    def _source_for(self, void: SiteCoord, occ: np.ndarray | None = None) -> SiteCoord | None:
        occ = self.occ if occ is None else occ
        species = self.demand[void.row, void.col]
        dist = reach_map(occ, void, self.rules)
        movable = (occ == species) & (self.demand != occ)
        return self._pick(movable, dist, void)

    # -- phases ----------------------------------------------------------
    def correct_misplaced(self) -> None:
        """Recycle wrong-species atoms into their own voids, else park them, else discard."""
        progress = True
        while progress:
            progress = False
            for site in self._misplaced_order():
                if not self._misplaced()[site.row, site.col]:
                    continue
                occ = self.occ.copy()
                species = occ[site.row, site.col]
                occ[site.row, site.col] = 0
                dist = reach_map(occ, site, self.rules)
                empty = self.occ == 0
                dst = self._exit_for(site, empty & (self.demand == species), dist, deep=True)
                if dst is None:
                    dst = self._exit_for(site, empty & (self.demand == 0), dist)
                if dst is not None:
                    self._do(site, dst)
                    progress = True
        for site in self._misplaced_order():
            self._do(site, None)

    def _exit_for(self, site: SiteCoord, mask: np.ndarray, dist: np.ndarray,
                  deep: bool = False, tries: int = 8) -> SiteCoord | None:
        """Destination for the atom leaving ``site``.

        Ranked as ``_pick``; among the best few candidates the first that
        leaves ``site`` reachable for a refill is preferred, so a parked atom
        does not plug the only route back in.
        """
        deep = deep and not self.greedy
        mask = mask.copy()
        first = None
        for _ in range(tries):
            dst = self._pick(mask, dist, site, deep)
            if dst is None:
                break
            if first is None:
                first = dst
            if self.greedy:
                return dst
            if not self._blocks(site, dst):
                return dst
            mask[dst.row, dst.col] = False
        return first

    def _blocks(self, site: SiteCoord, dst: SiteCoord) -> bool:
        """True if moving ``site`` to ``dst`` cuts off a refill of ``site`` or of a void next to ``dst``.

        ``site`` only counts when it is a target site.
        """
        occ = self.occ.copy()
        occ[dst.row, dst.col] = occ[site.row, site.col]
        occ[site.row, site.col] = 0
        if self.demand[site.row, site.col] and self._source_for(site, occ) is None:
            return True
        h, w = occ.shape
        r0, r1 = max(dst.row - 2, 0), min(dst.row + 3, h)
        c0, c1 = max(dst.col - 2, 0), min(dst.col + 3, w)
        near = np.zeros_like(occ, dtype=bool)
        near[r0:r1, c0:c1] = True
        rows, cols = np.nonzero(near & self._voids())
        for r, c in zip(rows, cols):
            void = SiteCoord(int(c), int(r))
            if self._source_for(void, occ) is None and self._source_for(void) is not None:
                return True
        return False

    def _misplaced_order(self) -> list[SiteCoord]:
        rows, cols = np.nonzero(self._misplaced())
        if self.greedy:
            idx = np.lexsort((cols, rows))
        else:
            idx = np.lexsort((cols, rows, -self.depth[rows, cols]))
        return [SiteCoord(int(cols[i]), int(rows[i])) for i in idx]

    def sweep(self) -> bool:
        """One pass over the voids, innermost first; True if anything was filled.

        Voids left enclosed at a depth are opened by a chain shift before the
        next shallower depth is filled, while the outer layers still offer
        routes.
        """
        progress = False
        if self.greedy:
            levels = [None]
        else:
            voids = self._voids()
            if not voids.any():
                return False
            levels = range(int(self.depth[voids].max()), -1, -1)
        for level in levels:
            pending = []
            queue = deque(self._level_voids(level))
            deferred = set()
            while queue:
                void = queue.popleft()
                if self.occ[void.row, void.col] != 0:
                    continue
                src = self._source_for(void)
                if src is None:
                    pending.append(void)
                    continue
                if not self.greedy and void not in deferred and self._blocks(src, void):
                    # filling now would seal a neighbouring void; let it go first
                    deferred.add(void)
                    queue.append(void)
                    continue
                self._do(src, void)
                progress = True
            if self.shift_early:
                for void in pending:
                    if self.occ[void.row, void.col] == 0 and self._shift_fill_one(void):
                        progress = True
        return progress

    def _level_voids(self, level: int | None) -> list[SiteCoord]:
        mask = self._voids()
        if level is not None:
            mask &= self.depth == level
        rows, cols = np.nonzero(mask)
        return [SiteCoord(int(c), int(r)) for r, c in zip(rows, cols)]

    def shift_fill(self) -> bool:
        """Fill one enclosed void by shifting a chain of same-species atoms.

        Finished atoms of the void's species step one site inward along the
        chain; the vacated chain end must then be reachable by a reservoir
        atom, which fills it. Innermost voids are tried first.
        """
        rows, cols = np.nonzero(self._voids())
        idx = np.lexsort((cols, rows, -self.depth[rows, cols]))
        for i in idx:
            void = SiteCoord(int(cols[i]), int(rows[i]))
            if self._shift_fill_one(void):
                return True
        return False

    def _shift_fill_one(self, void: SiteCoord) -> bool:
        species = self.demand[void.row, void.col]
        h, w = self.occ.shape
        parent = {void: None}
        queue = deque([void])
        while queue:
            node = queue.popleft()
            for d in self.rules.allowed:
                nb = SiteCoord(node.col + d.dcol, node.row + d.drow)
                if not (0 <= nb.col < w and 0 <= nb.row < h) or nb in parent:
                    continue
                if self.occ[nb.row, nb.col] != species or self.demand[nb.row, nb.col] != species:
                    continue
                parent[nb] = node
                queue.append(nb)
                chain = [nb]
                while parent[chain[-1]] is not None:
                    chain.append(parent[chain[-1]])
                moves = self._try_chain(chain)
                if moves is not None:
                    self.moves.extend(moves)
                    return True
        return False

    def _try_chain(self, chain: list[SiteCoord]) -> list[Move] | None:
        # chain[0] is the end atom, chain[-1] the enclosed void
        occ = self.occ.copy()
        moves = []
        try:
            for k in range(len(chain) - 1, 0, -1):
                moves.extend(self._move_on(occ, chain[k - 1], chain[k]))
            src = self._source_for(chain[0], occ)
            if src is None:
                return None
            moves.extend(self._move_on(occ, src, chain[0]))
        except NoPath:
            return None
        self.occ = occ
        return moves

    def run(self) -> None:
        self.correct_misplaced()
        while True:
            while self.sweep():
                pass
            if not self._voids().any() or not self.shift_fill():
                break

    def residual(self) -> tuple[SiteCoord, ...]:
        rows, cols = np.nonzero(self._voids() | self._misplaced())
        return tuple(SiteCoord(int(c), int(r)) for r, c in zip(rows, cols))


def plan_cycle(state: ArrayState, pattern: TargetPattern, rules: MoveRules = MoveRules(),
               algorithm: str = "hha8") -> MovePlan:
    """Plan one rearrangement cycle.

    Misplaced atoms go first (deepest first) to a reachable void of their own
    species, else to the nearest reachable free reservoir site, else they are
    discarded. Voids are then filled innermost depth first, row-major within a
    depth, from the reservoir atom with the shortest admissible path; sweeps
    repeat until nothing changes. Voids still enclosed are opened by chain
    shifts of same-species atoms. Leftover defects mark the plan partial.
    """
    rules = _rules_for(algorithm, rules)
    planner = _Planner(state, pattern, rules, greedy=(algorithm == "greedy"))
    planner.run()
    residual = planner.residual()
    return MovePlan(tuple(planner.moves), state.fingerprint(), algorithm,
                    partial=bool(residual), residual=residual)


def plan_repair(state: ArrayState, pattern: TargetPattern, rules: MoveRules = MoveRules(),
                algorithm: str = "hha8") -> MovePlan:
    """Repair plan for a post-imaging state; same algorithm as ``plan_cycle``."""
    return plan_cycle(state, pattern, rules, algorithm)


def greedy_baseline(state: ArrayState, pattern: TargetPattern,
                    rules: MoveRules = MoveRules()) -> MovePlan:
    """Nearest-atom greedy without depth ordering (the HCOA proxy).

    Voids are taken in row-major order and each receives the reachable atom
    closest in straight-line distance, so routes are often longer than the
    depth-ordered planner's.
    """
    return plan_cycle(state, pattern, rules, "greedy")


def plan_single_species(state: ArrayState, pattern: TargetPattern,
                        rules: MoveRules = MoveRules()) -> MovePlan:
    if pattern.count(Species.B):
        raise PlanError("single-species planning needs a pattern with species-A targets only")
    return plan_cycle(state, pattern, rules, "hha8")


def moves_per_defect(plan: MovePlan, state: ArrayState, pattern: TargetPattern) -> float:
    """Nm / N with N the number of unfinished target sites before planning."""
    n = int(np.count_nonzero((pattern.demand != 0) & (state.occ != pattern.demand)))
    return len(plan.moves) / n if n else 0.0


@functools.lru_cache(maxsize=4096)
def _plan_from_bytes(occ: bytes, demand: bytes, shape: tuple[int, int], pitch: float,
                     rules: MoveRules, algorithm: str) -> MovePlan:
    g = GridGeometry(shape[1], shape[0], pitch)
    state = ArrayState(g, np.frombuffer(occ, dtype=np.int8).reshape(shape).copy())
    pattern = TargetPattern(g, np.frombuffer(demand, dtype=np.int8).reshape(shape))
    return plan_cycle(state, pattern, rules, algorithm)


def plan_cached(state: ArrayState, pattern: TargetPattern, rules: MoveRules,
                algorithm: str) -> MovePlan:
    """Memoised ``plan_cycle``; plans are pure functions of their inputs."""
    return _plan_from_bytes(state.occ.tobytes(), pattern.demand.tobytes(),
                            state.geometry.shape, state.geometry.pitch, rules, algorithm)


# ---------------------------------------------------------------------------
# Replay validation
# ---------------------------------------------------------------------------

@dataclass
class ReplayResult:
    legal: bool
    final_state: ArrayState
    failed_at: int | None = None
    reason: str = ""
    moves_applied: int = 0


def check_move(state: ArrayState, move: Move, rules: MoveRules | None = None) -> str:
    """Empty string if ``move`` is legal on ``state``, else the reason."""
    g = state.geometry
    src = move.source
    if not g.contains(src):
        return f"source {src} outside grid"
    here = state.occ[src.row, src.col]
    if here == 0:
        return f"source {src} empty"
    if here != move.species:
        return f"source {src} holds {Species(int(here)).name}, move expects {move.species.name}"
    if move.is_discard:
        return ""
    dst = move.destination
    if not g.contains(dst):
        return f"destination {dst} outside grid"
    if state.occ[dst.row, dst.col] != 0:
        return f"destination {dst} occupied"
    if not move.path.segments:
        return "missing path"
    if move.path.start != src or move.path.end != dst:
        return "path does not join source and destination"
    if rules is not None and not path_allowed(move.path, rules):
        return "path violates direction or segment rules"
    probe = state.copy()
    probe.occ[src.row, src.col] = 0
    strict = rules.strict_diagonal if rules is not None else False
    try:
        for seg in move.path.segments:
            if not segment_clear(probe, seg, strict):
                return f"path blocked on segment {seg.direction.name}{seg.length} from {seg.start}"
    except PathError as exc:
        return str(exc)
    return ""


def apply_move(state: ArrayState, move: Move) -> None:
    s = move.source
    if move.destination is not None:
        d = move.destination
        state.occ[d.row, d.col] = state.occ[s.row, s.col]
    state.occ[s.row, s.col] = 0


def replay(state: ArrayState, plan: MovePlan, rules: MoveRules | None = None) -> ReplayResult:
    """Apply ``plan`` losslessly to a copy of ``state``, stopping at the first illegal move."""
    work = state.copy()
    for k, move in enumerate(plan.moves):
        reason = check_move(work, move, rules)
        if reason:
            return ReplayResult(False, work, failed_at=k, reason=reason, moves_applied=k)
        apply_move(work, move)
    return ReplayResult(True, work, moves_applied=len(plan.moves))


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

def plan_to_text(plan: MovePlan) -> str:
    lines = [
        f"# algorithm: {plan.algorithm}",
        f"# planned_for: {plan.planned_for}",
        f"# partial: {'true' if plan.partial else 'false'}",
    ]
    if plan.residual:
        lines.append("# residual: " + " ".join(str(s) for s in plan.residual))
    for m in plan.moves:
        if m.is_discard:
            lines.append(f"{m.source} -> DISCARD [{m.species.name}]")
        else:
            lines.append(f"{m.source} -> {m.destination} via {m.path.to_string()} [{m.species.name}]")
    return "\n".join(lines) + "\n"


def _parse_site(text: str) -> SiteCoord:
    col, row = text.strip().split(",")
    return SiteCoord(int(col), int(row))


def plan_from_text(text: str) -> MovePlan:
    meta = {"algorithm": "hha8", "planned_for": "", "partial": "false", "residual": ""}
    moves = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            if key.strip() in meta:
                meta[key.strip()] = value.strip()
            continue
        try:
            body, _, tag = line.rpartition("[")
            species = Species[tag.rstrip("]").strip()]
            src_txt, _, rest = body.partition("->")
            src = _parse_site(src_txt)
            rest = rest.strip()
            if rest == "DISCARD":
                moves.append(Move(src, None, Path(), species))
                continue
            dst_txt, _, path_txt = rest.partition(" via ")
            dst = _parse_site(dst_txt)
            path = Path.from_string(src, path_txt)
        except (ValueError, KeyError, PathError) as exc:
            raise PlanError(f"line {n}: cannot parse {line!r}: {exc}") from None
        moves.append(Move(src, dst, path, species))
    residual = tuple(_parse_site(s) for s in meta["residual"].split())
    return MovePlan(tuple(moves), meta["planned_for"], meta["algorithm"],
                    partial=meta["partial"] == "true", residual=residual)
