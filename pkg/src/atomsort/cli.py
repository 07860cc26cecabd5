"""Command-line front end.

Exit status: 0 success, 1 error (bad input or config), 3 partial plan
(logjam or infeasible target), 4 plan replay illegal.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import bench
from .config import ConfigError, RunConfig, dump_config, load_config
from .lattice import (
    LatticeError,
    SiteClass,
    class_counts,
    feasibility,
    filling_fraction,
    pattern_from_ascii,
    pattern_to_ascii,
    read_state,
)
from .planner import ALGORITHMS, PlanStats, plan_cycle, plan_from_text, plan_to_text, replay

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 3
EXIT_ILLEGAL = 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--out", help="output directory (or file for plan)")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--directions", type=int, choices=(4, 8))
    p.add_argument("--strict-diagonal", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="atomsort", description="dual-species tweezer array rearrangement")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("plan", help="plan one cycle for a state file")
    _common(p)
    p.add_argument("state", help="state file (ASCII grid or JSON)")
    p.add_argument("--pattern", help="pattern file (ASCII); default: from config")

    p = sub.add_parser("simulate", help="run Monte-Carlo trials")
    _common(p)
    p.add_argument("--cycles", type=int)
    p.add_argument("--raw", action="store_true", help="also write per-trial records")

    p = sub.add_parser("sweep", help="parameter sweeps")
    _common(p)
    p.add_argument("--variable", required=True, choices=bench.SWEEP_VARIABLES + ("histogram",))
    p.add_argument("--values", nargs="*", default=[],
                   help="sizes like 8 or 12x10; cycle counts; algorithms; or key=value loss overrides")

    p = sub.add_parser("calibrate", help="fit per-move success and readout survival")
    _common(p)
    p.add_argument("--single-cycle", type=float, default=bench.DEFAULT_TARGETS["single_cycle_filling"])
    p.add_argument("--saturation", type=float, default=bench.DEFAULT_TARGETS["saturation_filling"])

    p = sub.add_parser("validate", help="replay a plan against a state")
    _common(p)
    p.add_argument("state")
    p.add_argument("plan")
    p.add_argument("--pattern")
    return ap


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.directions is not None or args.strict_diagonal is not None:
        rules = cfg.rules
        if args.directions is not None:
            rules = replace(rules, directions=args.directions)
        if args.strict_diagonal:
            rules = replace(rules, strict_diagonal=True)
        cfg = replace(cfg, rules=rules)
    return cfg.with_overrides(seed=args.seed, trials=args.trials, algorithm=args.algorithm,
                              n_cycles=getattr(args, "cycles", None))


def _out_dir(args, cfg: RunConfig) -> Path:
    d = Path(args.out or cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _pattern(args, cfg: RunConfig):
    if getattr(args, "pattern", None):
        return pattern_from_ascii(Path(args.pattern).read_text(), cfg.pitch_um)
    return cfg.build_pattern()


def cmd_plan(args, cfg: RunConfig) -> int:
    state = read_state(args.state, cfg.pitch_um)
    pattern = _pattern(args, cfg)
    if pattern.geometry.shape != state.geometry.shape:
        raise ConfigError(f"state is {state.geometry.width}x{state.geometry.height}, "
                          f"pattern is {pattern.geometry.width}x{pattern.geometry.height}")
    if not feasibility(state, pattern).solvable:
        print("warning: not enough atoms of some species; plan will be partial", file=sys.stderr)
    plan = plan_cycle(state, pattern, cfg.rules, cfg.algorithm)
    stats = PlanStats.of(plan).__dict__ | {"config_hash": cfg.hash()}
    text = plan_to_text(plan)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write(out, text)
        _write(out.with_suffix(out.suffix + ".stats.json"), _json(stats))
    else:
        sys.stdout.write(text)
    print(_json(stats), end="", file=sys.stderr)
    return EXIT_PARTIAL if plan.partial else EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    reports = bench.run_trials(cfg)
    table = bench.cycle_table(reports, cfg)
    summary = {
        "config_hash": cfg.hash(),
        "trials": cfg.trials,
        "first_cycle_defect_free": table.rows[0][1],
        "first_cycle_filling": table.rows[0][3],
    }
    if cfg.n_cycles >= 4:
        last = min(cfg.n_cycles, 10)
        summary["saturation_defect_free"] = bench.window_mean(table, "defect_free_prob", 4, last)
        summary["saturation_filling"] = bench.window_mean(table, "filling_fraction", 4, last)
    _write(out / "config.yaml", dump_config(cfg))
    _write(out / "cycles.csv", table.to_csv())
    _write(out / "summary.json", _json(summary))
    if args.raw:
        _write(out / "trials.jsonl", bench.raw_records(reports, cfg))
    return EXIT_OK


def _parse_loss_override(text: str) -> tuple[str, float]:
    key, _, val = text.partition("=")
    if not val:
        raise ConfigError(f"loss override must look like key=value, got {text!r}")
    return key, float(val)


def cmd_sweep(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    var = args.variable
    if var == "array_size":
        sizes = args.values or ["4", "6", "8", "10", "12x10", "12", "14", "16"]
        table = bench.sweep_moves_vs_size(sizes, trials=cfg.trials, seed=cfg.seed, p_load=cfg.loss.p_load,
                                          r_a=cfg.loss.r_A, rules=cfg.rules, cfg=cfg)
    elif var == "n_cycles":
        n = max(int(v) for v in args.values) if args.values else cfg.n_cycles
        table = bench.sweep_cycles(replace(cfg, n_cycles=n))
    elif var == "algorithm":
        table = bench.compare_traversal(cfg, trials=cfg.trials, seed=cfg.seed).table
    elif var == "histogram":
        table, _ = bench.defect_histogram(cfg, trials=cfg.trials)
    else:
        overrides = [_parse_loss_override(v) for v in args.values]
        if not overrides:
            raise ConfigError("loss sweep needs --values key=value ...")
        table = bench.Table(["parameter", "value", "saturation_defect_free", "saturation_filling",
                             "first_cycle_filling"], meta=bench.provenance(cfg, cfg.seed, sweep="loss"))
        for key, val in overrides:
            run = replace(cfg, loss=type(cfg.loss).from_dict(cfg.loss.to_dict() | {key: val}))
            t = bench.sweep_cycles(run)
            last = min(run.n_cycles, 10)
            table.rows.append([key, val, bench.window_mean(t, "defect_free_prob", min(4, last), last),
                               bench.window_mean(t, "filling_fraction", min(4, last), last),
                               t.rows[0][3]])
    _write(out / f"sweep_{var}.csv", table.to_csv())
    return EXIT_OK


def cmd_calibrate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    targets = {"single_cycle_filling": args.single_cycle, "saturation_filling": args.saturation}
    trials = args.trials or 200
    res = bench.calibrate(cfg, targets, trials=trials, seed=cfg.seed)
    doc = res.to_dict() | {"config_hash": cfg.hash()}
    _write(out / "calibration.json", _json(doc))
    _write(out / "calibrated.yaml", dump_config(replace(cfg, loss=res.loss)))
    if not res.converged:
        print("warning: calibration did not converge; best-effort values written", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args, cfg: RunConfig) -> int:
    state = read_state(args.state, cfg.pitch_um)
    pattern = _pattern(args, cfg)
    plan = plan_from_text(Path(args.plan).read_text())
    res = replay(state, plan, cfg.rules)
    counts = class_counts(res.final_state, pattern)
    report = {
        "legal": res.legal,
        "failed_at": res.failed_at,
        "reason": res.reason,
        "moves_applied": res.moves_applied,
        "classes": {k.name.lower(): int(v) for k, v in counts.items()},
        "filling_fraction": filling_fraction(res.final_state, pattern),
        "defect_free": res.legal and counts[SiteClass.VOID] == 0 and counts[SiteClass.MISPLACED] == 0,
        "config_hash": cfg.hash(),
    }
    text = _json(report)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write(out, text)
    else:
        sys.stdout.write(text)
        sys.stdout.write(pattern_to_ascii(pattern, res.final_state) + "\n")
    return EXIT_OK if res.legal else EXIT_ILLEGAL


COMMANDS = {
    "plan": cmd_plan,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "calibrate": cmd_calibrate,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.cmd](args, cfg)
    except (ConfigError, LatticeError, ValueError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
