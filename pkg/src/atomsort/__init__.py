"""Rearrangement planning and loss simulation for dual-species tweezer arrays."""
from .lattice import (
    ArrayState,
    Demand,
    GridGeometry,
    SiteClass,
    SiteCoord,
    Species,
    TargetPattern,
    centered_region,
    classify,
    filling_fraction,
    load_random,
    make_pattern,
)
from .pathing import Direction, Move, MoveRules, NoPath, Path, Segment, find_path
from .physics import LossModel, make_rng, run_cycle, run_trial
from .planner import MovePlan, plan_cycle, replay

__all__ = [
    "ArrayState", "Demand", "GridGeometry", "SiteClass", "SiteCoord", "Species", "TargetPattern", "centered_region",
    "centered_region", "classify", "filling_fraction", "load_random", "make_pattern",
    "Direction", "Move", "MoveRules", "NoPath", "Path", "Segment", "find_path",
    "LossModel", "make_rng", "run_cycle", "run_trial",
    "MovePlan", "plan_cycle", "replay",
]
