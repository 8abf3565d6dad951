"""``deeplcc`` command line: collect, check, run, batch, metrics."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .analysis import analyze
from .config import ConfigError, RunConfig
from .data import (CollisionError, DatasetFormatError, check_dataset,
                   collect_offline, load_dataset, save_dataset)
from .experiments import batch, metrics_from_csv, run_experiment, write_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN = 3
EXIT_IO = 4

# a run whose infeasible-step share exceeds this is reported as failed
INFEASIBLE_SHARE = 0.5


def _load(args) -> RunConfig:
    cfg = RunConfig() if args.config is None else RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _dataset_path(cfg: RunConfig) -> str:
    return cfg.dataset or os.path.join(cfg.out, "dataset.json")


def cmd_collect(cfg: RunConfig, args) -> int:
    cfg.validate()
    ds = collect_offline(cfg.mixed_config(), cfg.v_star, cfg.T, cfg.seed,
                         dt=cfg.dt, hold=cfg.hold)
    path = _dataset_path(cfg)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_dataset(ds, path)
    verdict = check_dataset(ds, cfg.T_ini, cfg.N)
    print(json.dumps({"dataset": path, **verdict}, indent=2))
    return EXIT_OK


def cmd_check(cfg: RunConfig, args) -> int:
    cfg.validate()
    report = analyze(cfg.mixed_config(), cfg.v_star, cfg.dt).to_dict()
    text = json.dumps(report, indent=2)
    print(text)
    if args.out is not None:
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, "analysis.json"), "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_run(cfg: RunConfig, args) -> int:
    cfg.validate(need_dataset=True)
    mixed = cfg.mixed_config()
    ds = None
    if cfg.controller == "deepc":
        if cfg.dataset:
            ds = load_dataset(cfg.dataset)
            if ds.n != mixed.n or ds.cav_indices != mixed.cav_indices:
                raise ConfigError("dataset layout does not match the config")
        else:
            ds = collect_offline(mixed, cfg.v_star, cfg.T, cfg.seed,
                                 dt=cfg.dt, hold=cfg.hold)
    res = run_experiment(cfg.scenario_spec(), cfg.controller, mixed, ds,
                         cfg.seed, cfg.deepc_config(), dt=cfg.dt,
                         mpc_hdv_params=cfg.mpc_hdv_params())
    os.makedirs(cfg.out, exist_ok=True)
    res.write_trajectory(os.path.join(cfg.out, "trajectory.csv"))
    res.decisions.write(os.path.join(cfg.out, "decisions.csv"))
    write_json(os.path.join(cfg.out, "metrics.json"), res.metrics.to_dict())
    print(json.dumps(res.metrics.to_dict(), indent=2))
    m = res.metrics
    if m.collision or (m.steps and m.infeasible_steps > INFEASIBLE_SHARE * m.steps):
        return EXIT_RUN
    return EXIT_OK


def cmd_batch(cfg: RunConfig, args) -> int:
    cfg.validate()
    summary = batch(cfg.scenario_spec(), cfg.controllers, cfg.n_seeds,
                    cfg.mixed_config(), cfg.deepc_config(), T_data=cfg.T,
                    base_seed=cfg.seed, jobs=args.jobs,
                    collect_v_star=cfg.v_star,
                    mpc_hdv_params=cfg.mpc_hdv_params(), dt=cfg.dt,
                    hold=cfg.hold)
    os.makedirs(cfg.out, exist_ok=True)
    write_json(os.path.join(cfg.out, "summary.json"), summary)
    print(json.dumps(summary["summary"], indent=2))
    if any(s["collisions"] for s in summary["summary"].values()):
        return EXIT_RUN
    return EXIT_OK


def cmd_metrics(cfg: RunConfig, args) -> int:
    if args.trajectory is None:
        raise ConfigError("metrics needs a trajectory CSV path")
    res = metrics_from_csv(args.trajectory, cfg.cav_indices, cfg.v_star)
    print(json.dumps(res, indent=2))
    if args.out is not None:
        os.makedirs(cfg.out, exist_ok=True)
        write_json(os.path.join(cfg.out, "metrics.json"), res)
    return EXIT_OK


COMMANDS = {"collect": cmd_collect, "check": cmd_check, "run": cmd_run,
            "batch": cmd_batch, "metrics": cmd_metrics}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="deeplcc",
        description="Data-driven predictive leading cruise control for "
                    "mixed traffic.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("trajectory", nargs="?",
                   help="trajectory CSV (metrics command only)")
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel seeds (batch)")
    p.add_argument("--out", help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetFormatError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CollisionError as exc:
        print(f"collision: {exc}", file=sys.stderr)
        return EXIT_RUN
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
