"""Glue between experiment configs, trainers and checkpoint files."""

from __future__ import annotations

from typing import Callable, Dict, Optional, Tuple

from ..morph import GrowthSchedule, parse_op
from ..rl import PPOConfig, Trainer
from . import checkpoint
from .config import ExperimentConfig, from_dict


def build_trainer(
    cfg: ExperimentConfig,
    sink: Optional[Callable[[Dict], None]] = None,
    growth_sink: Optional[Callable[[Dict], None]] = None,
    schedule: Optional[GrowthSchedule] = None,
    ppo: Optional[PPOConfig] = None,
) -> Trainer:
    """Trainer for ``cfg``; ``schedule`` defaults to the config's evenly spaced plan."""
    return Trainer(
        ppo if ppo is not None else cfg.ppo,
        cfg.env_factory(),
        hidden=cfg.hidden,
        activation=cfg.activation_kind(),
        schedule=cfg.schedule() if schedule is None else schedule,
        eval_interval=cfg.eval_interval,
        eval_episodes=cfg.eval_episodes,
        sink=sink,
        growth_sink=growth_sink,
    )


def trainer_meta(trainer: Trainer, cfg: ExperimentConfig) -> Dict:
    state = trainer.state_dict()
    return {
        "config": cfg.to_dict(),
        "ppo": trainer.cfg.to_dict(),
        "env_spec": trainer.envs.spec.to_dict(),
        "env_step": state["env_step"],
        "iteration": state["iteration"],
        "next_eval": state["next_eval"],
        "schedule": [[s, op.describe()] for s, op in trainer.schedule.events],
        "schedule_index": state["schedule_index"],
        "growth_events": state["growth_events"],
        "rng": state["rng"],
        "envs": state["envs"],
    }


def save_trainer(path, trainer: Trainer, cfg: ExperimentConfig) -> None:
    checkpoint.save(path, trainer.net, trainer.adam, trainer_meta(trainer, cfg))


def load_trainer(
    path,
    sink: Optional[Callable[[Dict], None]] = None,
    growth_sink: Optional[Callable[[Dict], None]] = None,
) -> Tuple[Trainer, ExperimentConfig]:
    """Rebuild a trainer exactly as it was when the checkpoint was written."""
    net, adam, meta = checkpoint.load(path)
    cfg = from_dict(meta["config"])
    schedule = GrowthSchedule([(int(s), parse_op(op)) for s, op in meta["schedule"]])
    trainer = build_trainer(cfg, sink, growth_sink, schedule=schedule, ppo=PPOConfig(**meta["ppo"]))
    state = {k: meta[k] for k in ("rng", "envs", "env_step", "iteration", "next_eval",
                                  "schedule_index", "growth_events")}
    trainer.load_state_dict({"net": net, "adam": adam, **state})
    return trainer, cfg
