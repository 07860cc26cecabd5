"""Run configuration: schema, validation, YAML ingestion and hashing."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .lattice import GridGeometry, TargetPattern, centered_region, make_pattern, parse_mask
from .pathing import MoveRules
from .physics import LossModel, ModelError
from .planner import ALGORITHMS

PATTERN_KINDS = ("checkerboard", "zebra", "mask")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PatternSpec:
    kind: str = "checkerboard"
    # explicit (col0, row0, width, height); overrides size
    region: tuple[int, int, int, int] | None = None
    # centred (width, height)
    size: tuple[int, int] | None = (12, 10)
    mask: str | None = None  # path to a '#'/'.' file, kind=mask only

    def build(self, geometry: GridGeometry) -> TargetPattern:
        mask = None
        if self.kind == "mask":
            if self.mask is None:
                raise ConfigError("pattern.kind 'mask' needs pattern.mask")
            mask = parse_mask(Path(self.mask).read_text())
        region = self.region
        if region is None and self.size is not None and mask is None:
            region = centered_region(geometry, *self.size)
        return make_pattern(geometry, self.kind, region, mask)


@dataclass(frozen=True)
class RunConfig:
    width: int = 20
    height: int = 20
    pitch_um: float = 5.4
    pattern: PatternSpec = field(default_factory=PatternSpec)
    rules: MoveRules = field(default_factory=MoveRules)
    algorithm: str = "hha8"
    loss: LossModel = field(default_factory=LossModel)
    n_cycles: int = 10
    trials: int = 500
    seed: int = 0
    out: str = "out"
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.pattern.kind not in PATTERN_KINDS:
            raise ConfigError(f"pattern.kind must be one of {PATTERN_KINDS}")
        if self.n_cycles < 1 or self.trials < 1 or self.workers < 1:
            raise ConfigError("n_cycles, trials and workers must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.width, self.height, self.pitch_um)

    def build_pattern(self) -> TargetPattern:
        return self.pattern.build(self.geometry)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("region", "size"):
            if d["pattern"][key] is not None:
                d["pattern"][key] = list(d["pattern"][key])
        return d

    def hash(self) -> str:
        """Hash of the resolved configuration, output location excluded."""
        d = self.to_dict()
        d.pop("out")
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def _strict(cls, doc, where: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return dict(doc)


def config_from_dict(doc: dict | None) -> RunConfig:
    doc = _strict(RunConfig, doc or {}, "config")
    try:
        if "pattern" in doc:
            p = _strict(PatternSpec, doc["pattern"], "pattern")
            for key in ("region", "size"):
                if p.get(key) is not None:
                    p[key] = tuple(int(v) for v in p[key])
            if "region" in p and "size" not in p:
                p["size"] = None
            doc["pattern"] = PatternSpec(**p)
        if "rules" in doc:
            doc["rules"] = MoveRules(**_strict(MoveRules, doc["rules"], "rules"))
        if "loss" in doc:
            doc["loss"] = LossModel.from_dict(_strict(LossModel, doc["loss"], "loss"))
        cfg = RunConfig(**doc)
        # build once so geometry/pattern errors surface before any run
        cfg.build_pattern()
    except ConfigError:
        raise
    except (TypeError, ValueError, ModelError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
