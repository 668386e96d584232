"""``morphnet`` command-line entry point.

Subcommands: train, tune, eval, morph-check, plot-data.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..morph import Deeper, IdempotencyError, MorphRangeError, apply_op, parse_op, verify_morphism
from ..nncore import forward, normalize_seed
from ..rl import GROWTH_FIELDS, METRIC_FIELDS, evaluate
from ..seeding import derive_seed
from ..tuner import RACING_FIELDS, TUNER_GROWTH_FIELDS, PPOCandidates, race
from . import checkpoint
from .config import ConfigError, load, with_overrides
from .metrics import CsvSink, format_value, read_rows, truncate_after, write_rows
from .runs import build_trainer, load_trainer, save_trainer

log = logging.getLogger("morphnet")

WIDER_TOLERANCE = 1e-6
PLOT_METRICS = ("mean_episode_return", "solve_rate", "eval_return", "eval_solve_rate",
                "policy_loss", "value_loss", "entropy", "approx_kl")
PLOT_FIELDS = ("run_id", "env_step", "metric", "value", "depth")


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    if args.resume:
        out = Path(args.out) if args.out else Path(args.resume).resolve().parent.parent
        out.mkdir(parents=True, exist_ok=True)
        _, _, meta = checkpoint.load(args.resume)
        truncate_after(out / "metrics.csv", meta["env_step"])
        truncate_after(out / "growth_events.csv", meta["env_step"])
        metrics = CsvSink(out / "metrics.csv", METRIC_FIELDS, append=True)
        growth = CsvSink(out / "growth_events.csv", GROWTH_FIELDS, append=True)
        trainer, cfg = load_trainer(args.resume, metrics, growth)
        cfg.out = str(out)
    else:
        cfg = with_overrides(load(args.config), seed=args.seed, out=args.out)
        if args.morph_noise is not None:
            cfg.growth.noise = args.morph_noise
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        metrics = CsvSink(out / "metrics.csv", METRIC_FIELDS)
        growth = CsvSink(out / "growth_events.csv", GROWTH_FIELDS)
        trainer = build_trainer(cfg, metrics, growth)
        _write_json(out / "run.json", {
            "config": cfg.to_dict(),
            "env_spec": trainer.envs.spec.to_dict(),
            "schedule": [[s, op.describe()] for s, op in trainer.schedule.events],
            "initial_depth": cfg.initial_depth,
            "final_depth": cfg.growth.final_depth,
        })
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    interval = cfg.checkpoint_interval
    next_ckpt = (trainer.env_step // interval + 1) * interval if interval > 0 else None
    stop = args.stop_at
    try:
        while not trainer.done and (stop is None or trainer.env_step < stop):
            trainer.step()
            if next_ckpt is not None and trainer.env_step >= next_ckpt and not trainer.done:
                save_trainer(ckpt_dir / f"step_{trainer.env_step:09d}.ckpt", trainer, cfg)
                while next_ckpt <= trainer.env_step:
                    next_ckpt += interval
    finally:
        metrics.close()
        growth.close()
    name = "final.ckpt" if trainer.done else f"step_{trainer.env_step:09d}.ckpt"
    save_trainer(ckpt_dir / name, trainer, cfg)
    last = trainer.metrics.records[-1] if trainer.metrics.records else {}
    print(f"env_step={trainer.env_step} depth={trainer.net.depth()} params={trainer.net.param_count()} "
          f"eval_return={last.get('eval_return')} eval_solve_rate={last.get('eval_solve_rate')}")
    return 0


def cmd_eval(args) -> int:
    trainer, cfg = load_trainer(args.checkpoint)
    seed = derive_seed(cfg.seed if args.seed is None else args.seed, "evaluation")
    res = evaluate(trainer.net, cfg.env_factory(), args.episodes, seed)
    report = {"episodes": args.episodes, "mean_return": res.mean_return, "solve_rate": res.solve_rate,
              "depth": trainer.net.depth(), "env_step": trainer.env_step}
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_morph_check(args) -> int:
    trainer, _ = load_trainer(args.checkpoint)
    net = trainer.net
    op = parse_op(args.op)
    if args.morph_noise and isinstance(op, Deeper):
        op = Deeper(op.position, args.morph_noise)
    try:
        grown = apply_op(net, op, np.random.default_rng(normalize_seed(args.seed or 0)))
    except (IdempotencyError, MorphRangeError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 3
    dev = verify_morphism(net, grown, args.n_samples, args.seed or 0)
    if isinstance(op, Deeper):
        tol = 0.0
    else:
        obs = np.random.default_rng(normalize_seed(args.seed or 0)).uniform(-3, 3, (args.n_samples, net.obs_dim))
        pp, v = forward(net, obs)
        tol = WIDER_TOLERANCE * max(1.0, float(np.max(np.abs(pp))), float(np.max(np.abs(v))))
    ok = dev <= tol
    print(json.dumps({
        "op": op.describe(), "max_deviation": dev, "tolerance": tol, "ok": ok,
        "depth_before": net.depth(), "depth_after": grown.depth(),
        "params_before": net.param_count(), "params_after": grown.param_count(),
    }, sort_keys=True))
    return 0 if ok else 1


def cmd_tune(args) -> int:
    cfg = with_overrides(load(args.config), seed=args.seed, out=args.out)
    if cfg.tune is None:
        raise ConfigError("config has no 'tune' section", None, args.config)
    t = cfg.tune
    if args.seed is not None:
        t.master_seed = args.seed
    if args.threads:
        os.environ["MORPHNET_THREADS"] = str(args.threads)
    growth = t.growth and not args.no_growth
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    backend = PPOCandidates(cfg.env_factory(), cfg.hidden, cfg.activation_kind(), t.eval_episodes)
    incumbent, state = race(cfg.search_space(), t.n, cfg.fidelity(growth), t.eta, t.master_seed,
                            backend, base=cfg.ppo, growth=growth)
    write_rows(out / "racing_log.csv", RACING_FIELDS, state.log)
    write_rows(out / "tuner_growth.csv", TUNER_GROWTH_FIELDS, state.growth_log)
    summary = {
        "index": incumbent.index,
        "score": incumbent.score,
        "config": incumbent.config.to_dict(),
        "depth": incumbent.checkpoint.net.depth(),
        "growth": growth,
        "alive_per_rung": [sum(1 for r in state.log if r["rung"] == k) for k in range(len(t.rung_budgets))],
    }
    _write_json(out / "incumbent.json", summary)
    save_trainer(out / "incumbent.ckpt", incumbent.checkpoint, cfg)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _plot_rows(run_dir: Path) -> List[dict]:
    run_id = run_dir.name
    rows = []
    for r in read_rows(run_dir / "metrics.csv"):
        for m in PLOT_METRICS:
            if r.get(m):
                rows.append({"run_id": run_id, "env_step": int(r["env_step"]), "metric": m,
                             "value": float(r[m]), "depth": int(r["depth"])})
    growth_path = run_dir / "growth_events.csv"
    if growth_path.exists():
        for g in read_rows(growth_path):
            rows.append({"run_id": run_id, "env_step": int(g["env_step"]), "metric": "growth_event",
                         "value": int(g["depth_after"]), "depth": int(g["depth_after"])})
    return rows


def cmd_plot_data(args) -> int:
    rows = []
    for d in args.runs:
        run_dir = Path(d)
        if not (run_dir / "metrics.csv").exists():
            print(f"error: {run_dir} has no metrics.csv", file=sys.stderr)
            return 2
        rows.extend(_plot_rows(run_dir))
    rows.sort(key=lambda r: (r["run_id"], r["env_step"], r["metric"] != "growth_event"))
    if args.out:
        write_rows(args.out, PLOT_FIELDS, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\r\n")
        w.writerow(PLOT_FIELDS)
        for r in rows:
            w.writerow([format_value(r[f]) for f in PLOT_FIELDS])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="morphnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent, growing it on the configured schedule")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--resume", help="continue from a checkpoint written by a previous run")
    p.add_argument("--stop-at", type=int, help="stop once this many env steps are done (for resumable runs)")
    p.add_argument("--morph-noise", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="growth-aware successive-halving hyperparameter race")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out")
    p.add_argument("--no-growth", action="store_true", help="race static networks on the same rungs")
    p.add_argument("--threads", type=int, help="overrides MORPHNET_THREADS")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("morph-check", help="apply a morphism to a checkpoint and measure output drift")
    p.add_argument("checkpoint")
    p.add_argument("--op", default="deeper", help="deeper, deeper@POS, wider@LAYER:WIDTH")
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--morph-noise", type=float, default=0.0)
    p.set_defaults(func=cmd_morph_check)

    p = sub.add_parser("plot-data", help="merge run metrics into long-format CSV for learning curves")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train" and not (args.config or args.resume):
        parser.error("train needs --config or --resume")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (checkpoint.CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
