"""Move primitives along eight azimuths, obstacle rules and path search."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import _search
from .lattice import ArrayState, GridGeometry, SiteCoord, Species


class Direction(IntEnum):
    # declaration order is the tie-break order
    E = 0
    NE = 1
    N = 2
    NW = 3
    W = 4
    SW = 5
    S = 6
    SE = 7

    @property
    def dcol(self) -> int:
        return int(_search.DCOL[self])

    @property
    def drow(self) -> int:
        return int(_search.DROW[self])

    @property
    def diagonal(self) -> bool:
        return self.dcol != 0 and self.drow != 0


ORTHOGONAL = (Direction.E, Direction.N, Direction.W, Direction.S)


class NoPath(Exception):
    """No admissible path exists; a potential logjam."""


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class MoveRules:
    directions: int = 8
    max_segments: int = 3
    strict_diagonal: bool = False
    # each straight run is its own pick-and-release, relayed through corner traps
    single_drag: bool = False

    def __post_init__(self):
        if self.directions not in (4, 8):
            raise ValueError(f"directions must be 4 or 8, got {self.directions}")
        if self.max_segments < 1:
            raise ValueError("max_segments must be >= 1")

    @property
    def allowed(self) -> tuple[Direction, ...]:
        return tuple(Direction) if self.directions == 8 else ORTHOGONAL

    def dir_array(self) -> np.ndarray:
        return np.array([int(d) for d in self.allowed], dtype=np.int64)


@dataclass(frozen=True)
class Segment:
    start: SiteCoord
    direction: Direction
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise PathError("segment length must be >= 1")

    @property
    def end(self) -> SiteCoord:
        return SiteCoord(self.start.col + self.length * self.direction.dcol,
                         self.start.row + self.length * self.direction.drow)

    def sites(self) -> list[SiteCoord]:
        """Sites passed over after leaving ``start``, endpoint included."""
        d = self.direction
        return [SiteCoord(self.start.col + i * d.dcol, self.start.row + i * d.drow)
                for i in range(1, self.length + 1)]


@dataclass(frozen=True)
class Path:
    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        for a, b in zip(self.segments, self.segments[1:]):
            if a.end != b.start:
                raise PathError(f"segments not contiguous at {a.end} / {b.start}")

    @property
    def start(self) -> SiteCoord | None:
        return self.segments[0].start if self.segments else None

    @property
    def end(self) -> SiteCoord | None:
        return self.segments[-1].end if self.segments else None

    def sites(self) -> list[SiteCoord]:
        out: list[SiteCoord] = []
        for seg in self.segments:
            out.extend(seg.sites())
        return out

    @property
    def traversed_sites(self) -> int:
        return sum(seg.length for seg in self.segments)

    def to_string(self) -> str:
        return ",".join(f"{seg.direction.name}{seg.length}" for seg in self.segments)

    @classmethod
    def from_string(cls, start: SiteCoord, text: str) -> "Path":
        text = text.strip()
        if not text:
            return cls()
        segs = []
        here = start
        for tok in text.split(","):
            tok = tok.strip()
            name = tok.rstrip("0123456789")
            if name not in Direction.__members__ or name == tok:
                raise PathError(f"bad path token {tok!r}")
            seg = Segment(here, Direction[name], int(tok[len(name):]))
            segs.append(seg)
            here = seg.end
        return cls(tuple(segs))

    @classmethod
    def from_steps(cls, start: SiteCoord, steps) -> "Path":
        """Collapse a sequence of unit-step directions into straight segments."""
        segs = []
        here = start
        run_dir = None
        run_len = 0
        for d in steps:
            d = Direction(int(d))
            if d == run_dir:
                run_len += 1
                continue
            if run_dir is not None:
                seg = Segment(here, run_dir, run_len)
                segs.append(seg)
                here = seg.end
            run_dir, run_len = d, 1
        if run_dir is not None:
            segs.append(Segment(here, run_dir, run_len))
        return cls(tuple(segs))


@dataclass(frozen=True)
class Move:
    source: SiteCoord
    destination: SiteCoord | None  # None means discard in place
    path: Path
    species: Species

    @property
    def is_discard(self) -> bool:
        return self.destination is None


def _check_segment(geometry: GridGeometry, segment: Segment) -> None:
    if not geometry.contains(segment.start) or not geometry.contains(segment.end):
        raise PathError(f"segment {segment} leaves the grid")


def _flanks_clear(occ: np.ndarray, here: SiteCoord, d: Direction) -> bool:
    return occ[here.row, here.col + d.dcol] == 0 and occ[here.row + d.drow, here.col] == 0


def segment_clear(state: ArrayState, segment: Segment, strict: bool = False) -> bool:
    """True if every site after the start, endpoint included, is empty.

    In strict mode each diagonal step also needs both flanking orthogonal
    neighbours empty.
    """
    _check_segment(state.geometry, segment)
    occ = state.occ
    here = segment.start
    for site in segment.sites():
        if occ[site.row, site.col] != 0:
            return False
        if strict and segment.direction.diagonal and not _flanks_clear(occ, here, segment.direction):
            return False
        here = site
    return True


def find_path(state: ArrayState, source: SiteCoord, dest: SiteCoord,
              rules: MoveRules = MoveRules()) -> Path:
    """Shortest admissible path for the atom at ``source`` to reach ``dest``.

    Ordering: fewest traversed sites, then fewest segments, then the
    lexicographically smallest step sequence in ``Direction`` order.
    """
    g = state.geometry
    if not g.contains(source) or not g.contains(dest):
        raise PathError("endpoints must lie inside the grid")
    if source == dest:
        raise PathError("source and destination coincide")
    if state.occ[source.row, source.col] == 0:
        raise PathError(f"source {source} is empty")
    if state.occ[dest.row, dest.col] != 0:
        raise NoPath(f"destination {dest} is occupied")
    occ = state.occ.copy()
    occ[source.row, source.col] = 0
    steps = _search.shortest_path(occ, source.row, source.col, dest.row, dest.col,
                                  rules.dir_array(), rules.max_segments, rules.strict_diagonal)
    if steps.shape[0] == 0:
        raise NoPath(f"no path {source} -> {dest}")
    return Path.from_steps(source, steps)


def reach_map(occ: np.ndarray, site: SiteCoord, rules: MoveRules) -> np.ndarray:
    """Steps needed to connect ``site`` with every other site (``-1``: never)."""
    return _search.reach_steps(occ, site.row, site.col, rules.dir_array(),
                               rules.max_segments, rules.strict_diagonal)


def path_allowed(path: Path, rules: MoveRules) -> bool:
    allowed = set(rules.allowed)
    cap = 1 if rules.single_drag else rules.max_segments
    return len(path.segments) <= cap and all(s.direction in allowed for s in path.segments)


@dataclass(frozen=True)
class PathMetrics:
    traversed_sites: int
    euclidean_length: float  # pitch units
    duration_ms: float


# speed such that a move of DEFAULT_MEAN_MOVE pitches takes t_move
DEFAULT_MEAN_MOVE = 4.0


def path_metrics(path: Path, pitch_um: float = 5.4, t_pick_ms: float = 0.2,
                 t_move_ms: float = 0.8, t_release_ms: float = 0.2,
                 speed_um_per_ms: float | None = None) -> PathMetrics:
    """Traversed sites, geometric length and duration of a transport.

    The empty path (discard in place) costs pick-up plus release only.
    """
    length = sum(seg.length * (math.sqrt(2.0) if seg.direction.diagonal else 1.0)
                 for seg in path.segments)
    if speed_um_per_ms is None:
        speed_um_per_ms = DEFAULT_MEAN_MOVE * pitch_um / t_move_ms
    if path.segments:
        transport = max(t_move_ms, length * pitch_um / speed_um_per_ms)
    else:
        transport = 0.0
    return PathMetrics(path.traversed_sites, length, t_pick_ms + transport + t_release_ms)
