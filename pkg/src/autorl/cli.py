"""Command line entry point: ``autorl run | plot | compare``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from .baselines import PBTConfig, run_pbt, run_random_search
from .envs import ENVIRONMENTS
from .exp import Curve, emit, first_sustained, load_config, plot_comparison, read_curve_csv, read_metrics_csv
from .learners import save_agent, agent_from_dict
from .searl import SearlConfig, run as run_searl

METHODS = ("searl", "pbt", "random")


def default_config_path() -> Path:
    return Path(resources.files("autorl") / "configs" / "searl_td3.yaml")


def split_config(raw: dict) -> tuple[SearlConfig, dict, dict]:
    raw = dict(raw)
    pbt = raw.pop("pbt", {}) or {}
    rs = raw.pop("random_search", {}) or {}
    return SearlConfig.from_dict(raw), pbt, rs


def cmd_run(args) -> int:
    raw = load_config(args.config or default_config_path())
    searl_cfg, pbt_raw, rs_raw = split_config(raw)
    if args.workers:
        searl_cfg = searl_cfg.replace(workers=args.workers)
        pbt_raw = {**pbt_raw, "workers": args.workers}
    out = Path(args.out)
    base_hp = searl_cfg.hyperparams()
    if args.method == "searl":
        record = run_searl(searl_cfg, args.env, args.seed)
    elif args.method == "pbt":
        record = run_pbt(PBTConfig(**pbt_raw), args.env, args.seed, base_hp=base_hp)
    else:
        rs = {"n_trials": 20, "frames_per_trial": 1_000_000, **rs_raw}
        record = run_random_search(rs["n_trials"], rs["frames_per_trial"], args.env, args.seed,
                                   base_hp=base_hp, workers=args.workers or 1)
    paths = emit(record, out)
    if record.best_checkpoint is not None:
        save_agent(agent_from_dict(record.best_checkpoint), out / "best_agent.json")
    summary = {"method": record.method, "env": args.env, "seed": args.seed, "generations": record.generations,
               "total_frames": record.total_frames, "best_fitness": record.best_fitness, "config": raw}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=str))
    print(f"{record.method}: {record.generations} generations, {record.total_frames} frames, "
          f"best fitness {record.best_fitness:.2f} -> {paths['metrics'].parent}")
    return 0


def _curves_under(directory: Path) -> list[tuple[str, Curve]]:
    found = []
    for curve_file in sorted(Path(directory).rglob("curve.csv")):
        rows = read_metrics_csv(curve_file.parent / "metrics.csv") if (curve_file.parent / "metrics.csv").exists() else []
        method = rows[0]["method"] if rows else curve_file.parent.name
        found.append((method, read_curve_csv(curve_file)))
    if not found:
        raise FileNotFoundError(f"no curve.csv found under {directory}")
    return found


def cmd_plot(args) -> int:
    groups: dict[str, list[Curve]] = {}
    for d in args.inputs:
        for method, curve in _curves_under(Path(d)):
            groups.setdefault(method, []).append(curve)
    path = plot_comparison(groups, args.out, args.threshold)
    print(f"wrote {path}")
    return 0


def cmd_compare(args) -> int:
    groups = {}
    for label, d in (("searl", args.searl), ("pbt", args.pbt), ("random_search", args.random)):
        if d is not None:
            groups[label] = [c for _, c in _curves_under(Path(d))]
    if not groups:
        print("nothing to compare", file=sys.stderr)
        return 2
    path = plot_comparison(groups, args.out, args.threshold)
    print(f"wrote {path}")
    if args.threshold is not None:
        import numpy as np

        for label, curves in groups.items():
            frames = [first_sustained(c, args.threshold) for c in curves]
            print(f"{label:>14}: median frames to sustain {args.threshold:g}: {np.median(frames):.0f} "
                  f"over {len(frames)} runs")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autorl", description="Evolutionary and baseline hyperparameter search for off-policy RL")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one method on one environment")
    r.add_argument("--method", choices=METHODS, required=True)
    r.add_argument("--env", choices=sorted(ENVIRONMENTS), required=True)
    r.add_argument("--config", help="YAML config (defaults to the bundled TD3 config)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--workers", type=int, default=0, help="threads for evaluation/training")
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plot", help="mean/std curves from run directories")
    pl.add_argument("--inputs", nargs="+", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--threshold", type=float)
    pl.set_defaults(func=cmd_plot)

    c = sub.add_parser("compare", help="compare methods on the total-frames axis")
    c.add_argument("--searl")
    c.add_argument("--pbt")
    c.add_argument("--random")
    c.add_argument("--out", required=True)
    c.add_argument("--threshold", type=float)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
