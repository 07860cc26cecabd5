"""Stochastic execution of rearrangement cycles.

Losses come from three places: the transport itself (pick-up, per-site
transit, release), vacuum lifetime over the cycle duration, and the
fluorescence readout that closes every cycle. The readout also defines the
state the next cycle plans on.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .lattice import (
    ArrayState,
    GridGeometry,
    SiteCoord,
    Species,
    TargetPattern,
    filling_fraction,
    load_random,
)
from .pathing import Move, MoveRules, path_metrics
from .planner import apply_move, check_move, plan_cached


class ModelError(ValueError):
    pass


_PROBABILITIES = (
    "p_load", "r_A", "eta_pick", "eta_release", "eta_transit_per_site",
    "q_image_same", "q_image_cross",
)


@dataclass(frozen=True)
class LossModel:
    p_load: float = 0.6
    r_A: float = 0.5
    eta_pick: float = 1.0
    eta_release: float = 1.0
    eta_transit_per_site: float = 1.0
    q_image_same: float = 1.0
    q_image_cross: float = 1.0
    # survival of species-B atoms under the A probe; None means q_image_cross
    q_image_cross_B: float | None = None
    tau_vacuum_s: float = 29.0
    t_image_ms: float = 20.0
    t_pick_ms: float = 0.2
    t_move_ms: float = 0.8
    t_release_ms: float = 0.2
    move_speed_um_per_ms: float | None = None

    def __post_init__(self):
        for name in _PROBABILITIES:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ModelError(f"{name} must lie in [0, 1], got {v}")
        if self.q_image_cross_B is not None and not (0.0 <= self.q_image_cross_B <= 1.0):
            raise ModelError(f"q_image_cross_B must lie in [0, 1], got {self.q_image_cross_B}")
        for name in ("t_image_ms", "t_pick_ms", "t_move_ms", "t_release_ms"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be positive")
        if not self.tau_vacuum_s > 0:
            raise ModelError("tau_vacuum_s must be positive")
        if self.move_speed_um_per_ms is not None and not self.move_speed_um_per_ms > 0:
            raise ModelError("move_speed_um_per_ms must be positive")

    @property
    def move_success(self) -> float:
        """Success probability of a move that traverses no intermediate loss sites."""
        return self.eta_pick * self.eta_release

    def move_success_for(self, traversed_sites: int) -> float:
        return self.eta_pick * self.eta_transit_per_site ** traversed_sites * self.eta_release

    def image_survival(self, species: Species, dual: bool = True) -> float:
        if not dual:
            return self.q_image_same
        cross = self.q_image_cross
        if species is Species.B and self.q_image_cross_B is not None:
            cross = self.q_image_cross_B
        return self.q_image_same * cross

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "LossModel":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ModelError(f"unknown loss-model keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def lossless(cls, **overrides) -> "LossModel":
        base = dict(tau_vacuum_s=math.inf)
        base.update(overrides)
        return cls(**base)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for ``(seed, stream)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MoveOutcome:
    status: str  # "succeeded", "lost", "aborted", "discarded"
    loss_site: SiteCoord | None = None
    stage: str = ""  # "pick", "transit", "release" for lost atoms
    reason: str = ""
    duration_ms: float = 0.0

    @property
    def succeeded(self) -> bool:
        return self.status == "succeeded"


def move_duration(move: Move, model: LossModel, pitch_um: float) -> float:
    return path_metrics(move.path, pitch_um, model.t_pick_ms, model.t_move_ms,
                        model.t_release_ms, model.move_speed_um_per_ms).duration_ms


def execute_move(state: ArrayState, move: Move, model: LossModel,
                 rng: np.random.Generator, rules: MoveRules | None = None) -> MoveOutcome:
    """Carry out one move on the live state.

    A move that is illegal against the live state (an earlier loss emptied its
    source) is skipped and reported as aborted. Otherwise one uniform draw
    decides whether the atom survives pick-up, each traversed site, and
    release; a lost atom simply disappears.
    """
    reason = check_move(state, move, rules)
    if reason:
        return MoveOutcome("aborted", reason=reason)
    duration = move_duration(move, model, state.geometry.pitch)
    if move.is_discard:
        apply_move(state, move)
        return MoveOutcome("discarded", loss_site=move.source, duration_ms=duration)

    u = rng.random()
    p = model.eta_pick
    src = move.source
    if u >= p:
        state.occ[src.row, src.col] = 0
        return MoveOutcome("lost", src, "pick", duration_ms=duration)
    if model.eta_transit_per_site < 1.0:
        for site in move.path.sites():
            p *= model.eta_transit_per_site
            if u >= p:
                state.occ[src.row, src.col] = 0
                return MoveOutcome("lost", site, "transit", duration_ms=duration)
    p *= model.eta_release
    if u >= p:
        state.occ[src.row, src.col] = 0
        return MoveOutcome("lost", move.destination, "release", duration_ms=duration)
    apply_move(state, move)
    return MoveOutcome("succeeded", duration_ms=duration)


def apply_imaging(state: ArrayState, model: LossModel, rng: np.random.Generator,
                  dual: bool = True) -> int:
    """Readout loss; returns the number of atoms lost.

    In dual-species readout every atom sees its own probe and the other
    species' probe. One uniform is drawn per site whatever its occupancy.
    """
    occ = state.occ
    u = rng.random(occ.shape)
    survive = np.zeros(occ.shape)
    survive[occ == Species.A] = model.image_survival(Species.A, dual)
    survive[occ == Species.B] = model.image_survival(Species.B, dual)
    lost = (occ != 0) & (u >= survive)
    occ[lost] = 0
    return int(np.count_nonzero(lost))


def vacuum_survival(elapsed_ms: float, model: LossModel) -> float:
    if elapsed_ms < 0:
        raise ModelError("elapsed time must be non-negative")
    return math.exp(-elapsed_ms / (model.tau_vacuum_s * 1000.0))


def apply_vacuum_decay(state: ArrayState, elapsed_ms: float, model: LossModel,
                       rng: np.random.Generator) -> int:
    """Background-gas loss over ``elapsed_ms``; returns the number lost."""
    p = vacuum_survival(elapsed_ms, model)
    occ = state.occ
    u = rng.random(occ.shape)
    lost = (occ != 0) & (u >= p)
    occ[lost] = 0
    return int(np.count_nonzero(lost))


# ---------------------------------------------------------------------------
# Cycles and trials
# ---------------------------------------------------------------------------

@dataclass
class CycleReport:
    cycle_index: int
    moves_attempted: int
    moves_succeeded: int
    moves_aborted: int
    discards: int
    atoms_lost_transport: int
    atoms_lost_imaging: int
    atoms_lost_vacuum: int
    traversed_sites: int
    atoms_before: int
    atoms_after: int
    n_defects: int
    filling_fraction_after: float
    defect_free: bool
    defect_free_A: bool
    defect_free_B: bool
    plan_partial: bool
    model_time_elapsed_ms: float

    def conserved(self) -> bool:
        lost = self.atoms_lost_transport + self.atoms_lost_imaging + self.atoms_lost_vacuum + self.discards
        return self.atoms_after == self.atoms_before - lost


@dataclass
class TrialReport:
    seed: int
    stream: int
    cycles: list[CycleReport]
    final_state: ArrayState = field(repr=False)

    def to_record(self) -> dict:
        return {
            "seed": self.seed,
            "stream": self.stream,
            "cycles": [asdict(c) for c in self.cycles],
        }


def _sub_array_defect_free(state: ArrayState, pattern: TargetPattern, species: Species) -> bool:
    mask = pattern.demand == species
    return bool(np.all(state.occ[mask] == species))


def run_cycle(state: ArrayState, pattern: TargetPattern, rules: MoveRules, algorithm: str,
              model: LossModel, rng: np.random.Generator, cycle_index: int = 1) -> CycleReport:
    """Plan on the current (last imaged) state, execute, decay, image, report."""
    plan = plan_cached(state, pattern, rules, algorithm)
    atoms_before = state.count()
    elapsed = 0.0
    succeeded = aborted = discards = lost = traversed = 0
    for move in plan.moves:
        out = execute_move(state, move, model, rng)
        elapsed += out.duration_ms
        if out.status == "succeeded":
            succeeded += 1
            traversed += move.path.traversed_sites
        elif out.status == "lost":
            lost += 1
            traversed += move.path.traversed_sites
        elif out.status == "discarded":
            discards += 1
        else:
            aborted += 1
    dual = pattern.dual_species
    elapsed += model.t_image_ms * (2 if dual else 1)
    vac = apply_vacuum_decay(state, elapsed, model, rng)
    img = apply_imaging(state, model, rng, dual)

    n_defects = int(np.count_nonzero((pattern.demand != 0) & (state.occ != pattern.demand)))
    ff = filling_fraction(state, pattern)
    return CycleReport(
        cycle_index=cycle_index,
        moves_attempted=len(plan.moves),
        moves_succeeded=succeeded,
        moves_aborted=aborted,
        discards=discards,
        atoms_lost_transport=lost,
        atoms_lost_imaging=img,
        atoms_lost_vacuum=vac,
        traversed_sites=traversed,
        atoms_before=atoms_before,
        atoms_after=state.count(),
        n_defects=n_defects,
        filling_fraction_after=ff,
        defect_free=n_defects == 0,
        defect_free_A=_sub_array_defect_free(state, pattern, Species.A),
        defect_free_B=_sub_array_defect_free(state, pattern, Species.B),
        plan_partial=plan.partial,
        model_time_elapsed_ms=elapsed,
    )


def run_trial(geometry: GridGeometry, pattern: TargetPattern, rules: MoveRules, algorithm: str,
              model: LossModel, n_cycles: int, seed: int, stream: int = 0) -> TrialReport:
    """Load once, then run ``n_cycles`` rearrangement cycles on one random stream.

    The loaded state is taken as already imaged: loss during that first
    readout is folded into ``p_load``.
    """
    if n_cycles < 1:
        raise ModelError("n_cycles must be >= 1")
    rng = make_rng(seed, stream)
    state = load_random(geometry, model.p_load, model.r_A, rng)
    reports = [run_cycle(state, pattern, rules, algorithm, model, rng, k)
               for k in range(1, n_cycles + 1)]
    return TrialReport(seed, stream, reports, state)
