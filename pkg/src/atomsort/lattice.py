"""Grid geometry, occupancy state, target patterns and site classification.

Occupancy and demand are stored as ``int8`` arrays indexed ``[row, col]``.
Public coordinates are ``SiteCoord(col, row)``; row 0 is printed first in the
ASCII dumps.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import NamedTuple

import numpy as np

EMPTY = 0


class Species(IntEnum):
    """Atom species. A is 87Rb, B is 85Rb in every report."""

    A = 1
    B = 2

    @property
    def other(self) -> "Species":
        return Species.B if self is Species.A else Species.A


class Demand(IntEnum):
    NON_TARGET = 0
    TARGET_A = 1
    TARGET_B = 2


class SiteClass(IntEnum):
    FINISHED = 0
    VOID = 1
    MISPLACED = 2
    RESERVOIR_OCCUPIED = 3
    RESERVOIR_EMPTY = 4


class SiteCoord(NamedTuple):
    col: int
    row: int

    def __str__(self) -> str:
        return f"{self.col},{self.row}"


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class GridGeometry:
    width: int
    height: int
    pitch: float = 5.4  # micrometers

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise LatticeError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.pitch > 0:
            raise LatticeError(f"pitch must be positive, got {self.pitch}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def n_sites(self) -> int:
        return self.width * self.height

    @property
    def diagonal_pitch(self) -> float:
        return self.pitch * math.sqrt(2.0)

    def contains(self, site: SiteCoord) -> bool:
        return 0 <= site.col < self.width and 0 <= site.row < self.height

    def sites(self):
        """Row-major iteration over every site."""
        for row in range(self.height):
            for col in range(self.width):
                yield SiteCoord(col, row)


@dataclass
class ArrayState:
    """Occupancy of every static tweezer: 0 empty, 1 species A, 2 species B."""

    geometry: GridGeometry
    occ: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.occ = np.asarray(self.occ, dtype=np.int8)
        if self.occ.shape != self.geometry.shape:
            raise LatticeError(f"occupancy shape {self.occ.shape} does not match grid {self.geometry.shape}")
        if self.occ.min(initial=0) < 0 or self.occ.max(initial=0) > 2:
            raise LatticeError("occupancy values must be 0, 1 or 2")

    @classmethod
    def empty(cls, geometry: GridGeometry) -> "ArrayState":
        return cls(geometry, np.zeros(geometry.shape, dtype=np.int8))

    def copy(self) -> "ArrayState":
        return ArrayState(self.geometry, self.occ.copy())

    def __getitem__(self, site: SiteCoord) -> Species | None:
        v = int(self.occ[site.row, site.col])
        return Species(v) if v else None

    def __setitem__(self, site: SiteCoord, value: Species | None) -> None:
        self.occ[site.row, site.col] = int(value) if value else EMPTY

    def __eq__(self, other) -> bool:
        if not isinstance(other, ArrayState):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.occ, other.occ)

    def count(self, species: Species | None = None) -> int:
        if species is None:
            return int(np.count_nonzero(self.occ))
        return int(np.count_nonzero(self.occ == int(species)))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.geometry.width}x{self.geometry.height}".encode())
        h.update(self.occ.tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class TargetPattern:
    geometry: GridGeometry
    demand: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        d = np.array(self.demand, dtype=np.int8)
        if d.shape != self.geometry.shape:
            raise LatticeError(f"demand shape {d.shape} does not match grid {self.geometry.shape}")
        if d.min(initial=0) < 0 or d.max(initial=0) > 2:
            raise LatticeError("demand values must be 0, 1 or 2")
        d.setflags(write=False)
        object.__setattr__(self, "demand", d)

    def count(self, species: Species) -> int:
        return int(np.count_nonzero(self.demand == int(species)))

    @property
    def n_targets(self) -> int:
        return int(np.count_nonzero(self.demand))

    @property
    def dual_species(self) -> bool:
        return self.count(Species.A) > 0 and self.count(Species.B) > 0

    def target_sites(self) -> list[SiteCoord]:
        rows, cols = np.nonzero(self.demand)
        return [SiteCoord(int(c), int(r)) for r, c in zip(rows, cols)]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.geometry.width}x{self.geometry.height}".encode())
        h.update(self.demand.tobytes())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# Patterns
# ---------------------------------------------------------------------------

def centered_region(geometry: GridGeometry, width: int, height: int,
                    offset: tuple[int, int] = (0, 0)) -> tuple[int, int, int, int]:
    """(col0, row0, width, height) of a region centred in the grid, shifted by ``offset``."""
    col0 = (geometry.width - width) // 2 + offset[0]
    row0 = (geometry.height - height) // 2 + offset[1]
    return (col0, row0, width, height)


def make_pattern(geometry: GridGeometry, kind: str,
                 region: tuple[int, int, int, int] | None = None,
                 mask: np.ndarray | None = None) -> TargetPattern:
    """Build a target pattern.

    ``kind`` is ``checkerboard``, ``zebra`` or ``mask``. ``region`` is
    ``(col0, row0, width, height)``. Checkerboard puts species A where
    ``col + row`` (relative to the region corner) is even; zebra puts A on even
    region rows. A mask (bool array of the region's shape) marks species-A
    targets only.
    """
    if region is None:
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            region = centered_region(geometry, mask.shape[1], mask.shape[0])
        else:
            region = (0, 0, geometry.width, geometry.height)
    col0, row0, w, h = region
    if w < 1 or h < 1 or col0 < 0 or row0 < 0 or col0 + w > geometry.width or row0 + h > geometry.height:
        raise LatticeError(f"region {region} does not fit in {geometry.width}x{geometry.height} grid")

    demand = np.zeros(geometry.shape, dtype=np.int8)
    rr, cc = np.mgrid[0:h, 0:w]
    if kind == "checkerboard":
        block = np.where((rr + cc) % 2 == 0, Demand.TARGET_A, Demand.TARGET_B)
    elif kind == "zebra":
        block = np.where(rr % 2 == 0, Demand.TARGET_A, Demand.TARGET_B)
    elif kind in ("mask", "single-species-mask"):
        if mask is None:
            raise LatticeError("mask pattern requires a mask")
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (h, w):
            raise LatticeError(f"mask shape {mask.shape} does not match region {h}x{w}")
        block = np.where(mask, Demand.TARGET_A, Demand.NON_TARGET)
    else:
        raise LatticeError(f"unknown pattern kind {kind!r}")
    demand[row0:row0 + h, col0:col0 + w] = block
    return TargetPattern(geometry, demand)


def parse_mask(text: str) -> np.ndarray:
    """Read a ``#``/``.`` grid; ``#`` marks a target cell."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith(";")]
    if not lines:
        raise LatticeError("empty mask")
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise LatticeError("mask rows have unequal length")
    bad = set("".join(lines)) - {"#", "."}
    if bad:
        raise LatticeError(f"unexpected mask characters {sorted(bad)}")
    return np.array([[ch == "#" for ch in ln] for ln in lines], dtype=bool)


# ---------------------------------------------------------------------------
# Loading, classification, feasibility
# ---------------------------------------------------------------------------

def load_random(geometry: GridGeometry, p_load: float, r_a: float,
                rng: np.random.Generator | int) -> ArrayState:
    """Stochastic loading: each site filled with ``p_load``, species A with ``r_a``.

    Two uniforms are drawn per site regardless of outcome so that the random
    stream consumption does not depend on the parameters.
    """
    if not (0.0 <= p_load <= 1.0) or not (0.0 <= r_a <= 1.0):
        raise LatticeError(f"invalid loading probabilities p_load={p_load}, r_A={r_a}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    u = rng.random((2,) + geometry.shape)
    occ = np.where(u[0] < p_load, np.where(u[1] < r_a, Species.A, Species.B), EMPTY)
    return ArrayState(geometry, occ.astype(np.int8))


def _check_match(state: ArrayState, pattern: TargetPattern) -> None:
    if state.geometry.shape != pattern.geometry.shape:
        raise LatticeError(f"state grid {state.geometry.shape} does not match pattern grid {pattern.geometry.shape}")


def classify(state: ArrayState, pattern: TargetPattern) -> np.ndarray:
    """Per-site ``SiteClass`` codes as an int8 array indexed ``[row, col]``."""
    _check_match(state, pattern)
    return classify_arrays(state.occ, pattern.demand)


def classify_arrays(occ: np.ndarray, demand: np.ndarray) -> np.ndarray:
    out = np.empty(occ.shape, dtype=np.int8)
    target = demand != 0
    full = occ != 0
    out[target & (occ == demand)] = SiteClass.FINISHED
    out[target & ~full] = SiteClass.VOID
    out[target & full & (occ != demand)] = SiteClass.MISPLACED
    out[~target & full] = SiteClass.RESERVOIR_OCCUPIED
    out[~target & ~full] = SiteClass.RESERVOIR_EMPTY
    return out


def class_counts(state: ArrayState, pattern: TargetPattern) -> dict[SiteClass, int]:
    codes = classify(state, pattern)
    return {c: int(np.count_nonzero(codes == c)) for c in SiteClass}


@dataclass(frozen=True)
class Feasibility:
    available: dict[Species, int]
    required: dict[Species, int]

    def solvable_for(self, species: Species) -> bool:
        return self.available[species] >= self.required[species]

    @property
    def solvable(self) -> bool:
        return all(self.solvable_for(s) for s in Species)


def feasibility(state: ArrayState, pattern: TargetPattern) -> Feasibility:
    _check_match(state, pattern)
    return Feasibility(
        available={s: state.count(s) for s in Species},
        required={s: pattern.count(s) for s in Species},
    )


def filling_fraction(state: ArrayState, pattern: TargetPattern) -> float:
    n = pattern.n_targets
    if n == 0:
        return 1.0
    finished = np.count_nonzero((pattern.demand != 0) & (state.occ == pattern.demand))
    return finished / n


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_OCC_CHARS = {0: ".", 1: "A", 2: "B"}
_CHAR_OCC = {".": 0, "A": 1, "B": 2}


def state_to_ascii(state: ArrayState) -> str:
    return "\n".join("".join(_OCC_CHARS[int(v)] for v in row) for row in state.occ) + "\n"


def state_from_ascii(text: str, pitch: float = 5.4) -> ArrayState:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith(";")]
    if not lines:
        raise LatticeError("empty state grid")
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise LatticeError("state rows have unequal length")
    try:
        occ = np.array([[_CHAR_OCC[ch] for ch in ln] for ln in lines], dtype=np.int8)
    except KeyError as exc:
        raise LatticeError(f"unexpected state character {exc.args[0]!r}") from None
    return ArrayState(GridGeometry(width, len(lines), pitch), occ)


def pattern_to_ascii(pattern: TargetPattern, state: ArrayState | None = None) -> str:
    """Pattern dump; lowercase ``a``/``b`` are unfilled targets, ``.`` non-target.

    With a state, finished targets print as ``A``/``B`` and reservoir atoms as
    ``+``.
    """
    rows = []
    for r in range(pattern.geometry.height):
        chars = []
        for c in range(pattern.geometry.width):
            d = int(pattern.demand[r, c])
            o = int(state.occ[r, c]) if state is not None else 0
            if d == 0:
                chars.append("+" if o else ".")
            elif o == d:
                chars.append(_OCC_CHARS[d])
            else:
                chars.append(_OCC_CHARS[d].lower())
        rows.append("".join(chars))
    return "\n".join(rows) + "\n"


def pattern_from_ascii(text: str, pitch: float = 5.4) -> TargetPattern:
    """Inverse of ``pattern_to_ascii`` without a state: ``a``/``A`` target A, ``b``/``B`` target B."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise LatticeError("pattern rows have unequal length")
    lut = {".": 0, "+": 0, "a": 1, "A": 1, "b": 2, "B": 2}
    try:
        demand = np.array([[lut[ch] for ch in ln] for ln in lines], dtype=np.int8)
    except KeyError as exc:
        raise LatticeError(f"unexpected pattern character {exc.args[0]!r}") from None
    return TargetPattern(GridGeometry(width, len(lines), pitch), demand)


def state_to_dict(state: ArrayState) -> dict:
    g = state.geometry
    return {
        "width": g.width,
        "height": g.height,
        "pitch_um": g.pitch,
        "rows": state_to_ascii(state).split(),
    }


def state_from_dict(doc: dict) -> ArrayState:
    g = GridGeometry(int(doc["width"]), int(doc["height"]), float(doc.get("pitch_um", 5.4)))
    if "rows" in doc:
        st = state_from_ascii("\n".join(doc["rows"]), g.pitch)
        if st.geometry != g:
            raise LatticeError("rows do not match declared width/height")
        return st
    st = ArrayState.empty(g)
    for entry in doc["sites"]:
        site = SiteCoord(int(entry["col"]), int(entry["row"]))
        if not g.contains(site):
            raise LatticeError(f"site {site} outside grid")
        st.occ[site.row, site.col] = _CHAR_OCC[entry["occ"]]
    return st


def pattern_to_dict(pattern: TargetPattern) -> dict:
    g = pattern.geometry
    return {
        "width": g.width,
        "height": g.height,
        "pitch_um": g.pitch,
        "rows": pattern_to_ascii(pattern).split(),
    }


def pattern_from_dict(doc: dict) -> TargetPattern:
    p = pattern_from_ascii("\n".join(doc["rows"]), float(doc.get("pitch_um", 5.4)))
    if (p.geometry.width, p.geometry.height) != (int(doc["width"]), int(doc["height"])):
        raise LatticeError("rows do not match declared width/height")
    return p


def read_state(path: str | Path, pitch: float = 5.4) -> ArrayState:
    """Load a state from a JSON document or an ASCII grid file."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return state_from_dict(json.loads(text))
    return state_from_ascii(text, pitch)


def write_state(state: ArrayState, path: str | Path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(state_to_dict(state), indent=1) + "\n")
    else:
        path.write_text(state_to_ascii(state))
