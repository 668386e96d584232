"""Experiment configuration files.

Configs are YAML mappings. Every key is checked against the schema below;
unknown keys, wrong types and inconsistent growth plans are reported with the
line they appear on.

Schema (all sections optional except ``env``)::

    seed: 0                      # run seed, overrides ppo.seed
    out: runs/example            # output directory
    eval_interval: 20000         # env steps between greedy evaluations (0: final only)
    eval_episodes: 100
    checkpoint_interval: 0       # env steps between checkpoints (0: final only)
    env: {name: gridroom, size: 10}          # or {name: pointmass}
    network: {hidden: [64], activation: relu}
    growth:
      final_depth: 3             # must equal len(hidden) + growths for deeper ops
      growths: 2
      op: deeper                 # deeper | wider
      position: end              # deeper insertion index, or "end"
      wider_layer: -1            # wider target layer (negative counts from the end)
      wider_add: 16              # units added per wider growth
      noise: 0.0                 # std of noise added to inserted identity layers
    ppo: {gamma: 0.99, lam: 0.95, clip_eps: 0.2, lr: 3.0e-4, ...}   # PPOConfig fields
    tune:
      n: 16
      eta: 2
      rung_budgets: [50000, 50000, 50000]
      master_seed: 0
      eval_episodes: 20
      growth: true
      space:
        lr: {log_uniform: [1.0e-4, 3.0e-3]}
        clip_eps: {uniform: [0.1, 0.3]}
        minibatch_size: {choice: [250, 500]}
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Tuple

import yaml

from ..envs import EnvConfigError, make_factory
from ..morph import Deeper, GrowthSchedule, MorphismOp, Wider, make_even_schedule
from ..nncore import Activation
from ..rl import ConfigError as PPOConfigError
from ..rl import PPOConfig
from ..tuner import Dimension, FidelitySchedule, SearchSpace


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


@dataclass
class GrowthPlan:
    final_depth: Optional[int] = None
    growths: int = 0
    op: str = "deeper"
    position: Any = "end"
    wider_layer: int = -1
    wider_add: int = 16
    noise: float = 0.0


@dataclass
class TuneConfig:
    n: int = 16
    eta: int = 2
    rung_budgets: List[int] = field(default_factory=lambda: [50_000, 50_000, 50_000])
    master_seed: int = 0
    eval_episodes: int = 20
    growth: bool = True
    space: Dict[str, Dict[str, Any]] = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    env: Dict[str, Any]
    hidden: List[int] = field(default_factory=lambda: [64])
    activation: str = "relu"
    growth: GrowthPlan = field(default_factory=GrowthPlan)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    eval_interval: int = 20_000
    eval_episodes: int = 100
    checkpoint_interval: int = 0
    out: str = "runs/default"
    seed: int = 0
    tune: Optional[TuneConfig] = None

    @property
    def initial_depth(self) -> int:
        return len(self.hidden)

    def env_factory(self):
        params = {k: v for k, v in self.env.items() if k != "name"}
        return make_factory(self.env["name"], **params)

    def activation_kind(self) -> Activation:
        return Activation(self.activation)

    def growth_ops(self, count: Optional[int] = None) -> List[MorphismOp]:
        g = self.growth
        count = g.growths if count is None else count
        if g.op == "deeper":
            pos = None if g.position == "end" else int(g.position)
            return [Deeper(pos, g.noise) for _ in range(count)]
        layer = g.wider_layer % self.initial_depth
        base = self.hidden[layer]
        return [Wider(layer, base + g.wider_add * (k + 1)) for k in range(count)]

    def schedule(self) -> GrowthSchedule:
        return make_even_schedule(self.ppo.total_steps, self.growth_ops())

    def search_space(self) -> SearchSpace:
        space = {}
        for name, spec in (self.tune.space if self.tune else {}).items():
            (kind, arg), = spec.items()
            if kind == "choice":
                space[name] = Dimension("choice", values=tuple(arg))
            else:
                space[name] = Dimension(kind, float(arg[0]), float(arg[1]))
        return space

    def fidelity(self, growth: bool = True) -> FidelitySchedule:
        budgets = list(self.tune.rung_budgets)
        if growth and self.growth.growths:
            ops = self.growth_ops(len(budgets) - 1)
        else:
            ops = [None] * (len(budgets) - 1)
        return FidelitySchedule(budgets, ops)

    def to_dict(self) -> Dict[str, Any]:
        d = {
            "seed": self.seed,
            "out": self.out,
            "eval_interval": self.eval_interval,
            "eval_episodes": self.eval_episodes,
            "checkpoint_interval": self.checkpoint_interval,
            "env": dict(self.env),
            "network": {"hidden": list(self.hidden), "activation": self.activation},
            "growth": {f.name: getattr(self.growth, f.name) for f in fields(GrowthPlan)},
            "ppo": {k: v for k, v in self.ppo.to_dict().items() if k != "seed"},
        }
        if self.tune is not None:
            d["tune"] = {f.name: copy.deepcopy(getattr(self.tune, f.name)) for f in fields(TuneConfig)}
        return d


_TOP_SCALARS = {"seed": int, "out": str, "eval_interval": int, "eval_episodes": int, "checkpoint_interval": int}
_SECTIONS = {"env", "network", "growth", "ppo", "tune"}
_PPO_TYPES = {f.name: f.type for f in fields(PPOConfig) if f.name != "seed"}
_GROWTH_TYPES = {"final_depth": int, "growths": int, "op": str, "position": (int, str), "wider_layer": int,
                 "wider_add": int, "noise": float}
_TUNE_TYPES = {"n": int, "eta": int, "rung_budgets": list, "master_seed": int, "eval_episodes": int,
               "growth": bool, "space": dict}


def _key_lines(node, prefix="", out=None) -> Dict[str, int]:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}{k.value}"
            out[path] = k.start_mark.line + 1
            _key_lines(v, path + ".", out)
    return out


class _Reader:
    def __init__(self, source: str, lines: Dict[str, int]):
        self.source = source
        self.lines = lines

    def fail(self, path: str, message: str):
        raise ConfigError(message, self.lines.get(path), self.source)

    def mapping(self, path: str, value) -> dict:
        if not isinstance(value, dict):
            self.fail(path, f"'{path}' must be a mapping")
        return value

    def check_keys(self, path: str, mapping: dict, allowed) -> None:
        for k in mapping:
            if k not in allowed:
                full = f"{path}.{k}" if path else str(k)
                self.fail(full, f"unknown key '{full}'")

    def typed(self, path: str, value, kind):
        if kind in (float, "float"):
            if isinstance(value, str):
                try:
                    return float(value)
                except ValueError:
                    pass
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.fail(path, f"'{path}' must be a number, got {value!r}")
            return float(value)
        if kind in (int, "int"):
            if isinstance(value, bool) or not isinstance(value, int):
                self.fail(path, f"'{path}' must be an integer, got {value!r}")
            return value
        if kind is bool:
            if not isinstance(value, bool):
                self.fail(path, f"'{path}' must be true or false, got {value!r}")
            return value
        if isinstance(kind, tuple):
            if isinstance(value, bool) or not isinstance(value, kind):
                self.fail(path, f"'{path}' has invalid value {value!r}")
            return value
        if not isinstance(value, kind):
            self.fail(path, f"'{path}' must be of type {kind.__name__}, got {value!r}")
        return value


def loads(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else None
        raise ConfigError(f"invalid YAML: {e.problem}", line, source) from None
    r = _Reader(source, _key_lines(node))
    raw = r.mapping("", raw if raw is not None else {})
    r.check_keys("", raw, set(_TOP_SCALARS) | _SECTIONS)

    kw: Dict[str, Any] = {}
    for k, kind in _TOP_SCALARS.items():
        if k in raw:
            kw[k] = r.typed(k, raw[k], kind)

    if "env" not in raw:
        raise ConfigError("missing required section 'env'", None, source)
    env = dict(r.mapping("env", raw["env"]))
    if "name" not in env:
        r.fail("env", "'env.name' is required")
    try:
        make_factory(env["name"], **{k: v for k, v in env.items() if k != "name"})
    except (EnvConfigError, TypeError, ValueError) as e:
        bad = next((f"env.{k}" for k in env if f"env.{k}" in r.lines and k != "name" and k in str(e)), "env.name")
        r.fail(bad, str(e))
    kw["env"] = env

    net = r.mapping("network", raw.get("network", {}))
    r.check_keys("network", net, {"hidden", "activation"})
    if "hidden" in net:
        hidden = net["hidden"]
        if not isinstance(hidden, list) or not hidden or not all(
            isinstance(h, int) and not isinstance(h, bool) and h > 0 for h in hidden
        ):
            r.fail("network.hidden", "'network.hidden' must be a non-empty list of positive integers")
        kw["hidden"] = hidden
    if "activation" in net:
        try:
            Activation(net["activation"])
        except ValueError:
            r.fail("network.activation", f"unknown activation {net['activation']!r} (relu, identity, tanh)")
        kw["activation"] = net["activation"]

    g = r.mapping("growth", raw.get("growth", {}))
    r.check_keys("growth", g, set(_GROWTH_TYPES))
    kw["growth"] = GrowthPlan(**{k: r.typed(f"growth.{k}", v, _GROWTH_TYPES[k]) for k, v in g.items()})

    p = r.mapping("ppo", raw.get("ppo", {}))
    r.check_keys("ppo", p, set(_PPO_TYPES))
    ppo_kw = {k: r.typed(f"ppo.{k}", v, _PPO_TYPES[k]) for k, v in p.items()}
    try:
        kw["ppo"] = PPOConfig(**ppo_kw, seed=kw.get("seed", 0))
    except PPOConfigError as e:
        bad = next((f"ppo.{k}" for k in p if k in str(e)), "ppo")
        r.fail(bad, str(e))

    if "tune" in raw:
        t = r.mapping("tune", raw["tune"])
        r.check_keys("tune", t, set(_TUNE_TYPES))
        tkw = {k: r.typed(f"tune.{k}", v, _TUNE_TYPES[k]) for k, v in t.items()}
        for name, spec in tkw.get("space", {}).items():
            path = f"tune.space.{name}"
            if name not in _PPO_TYPES:
                r.fail(path, f"'{path}' is not a tunable PPO field")
            if not isinstance(spec, dict) or len(spec) != 1:
                r.fail(path, f"'{path}' must be one of {{uniform: [lo, hi]}}, {{log_uniform: [lo, hi]}}, {{choice: [...]}}")
            (kind, arg), = spec.items()
            try:
                if kind == "choice":
                    Dimension("choice", values=tuple(arg))
                else:
                    Dimension(kind, float(arg[0]), float(arg[1]))
            except Exception as e:
                r.fail(path, f"'{path}': {e}")
        budgets = tkw.get("rung_budgets", TuneConfig().rung_budgets)
        if not budgets or not all(isinstance(b, int) and b > 0 for b in budgets):
            r.fail("tune.rung_budgets", "'tune.rung_budgets' must be a list of positive integers")
        kw["tune"] = TuneConfig(**tkw)

    cfg = ExperimentConfig(**kw)
    _validate_growth(cfg, r)
    return cfg


def _validate_growth(cfg: ExperimentConfig, r: _Reader) -> None:
    g = cfg.growth
    if g.op not in ("deeper", "wider"):
        r.fail("growth.op", f"growth.op must be 'deeper' or 'wider', got {g.op!r}")
    if g.growths < 0:
        r.fail("growth.growths", "growth.growths must be non-negative")
    expected = cfg.initial_depth + (g.growths if g.op == "deeper" else 0)
    final = expected if g.final_depth is None else g.final_depth
    if final != expected:
        r.fail("growth.final_depth" if "growth.final_depth" in r.lines else "growth",
               f"final depth {final} != initial depth {cfg.initial_depth} + {g.growths if g.op == 'deeper' else 0} "
               f"{g.op} growths")
    g.final_depth = final
    if g.op == "deeper" and g.growths:
        if g.position != "end":
            if isinstance(g.position, str) or not 0 <= g.position <= cfg.initial_depth:
                r.fail("growth.position", f"growth.position must be 'end' or an index in [0, {cfg.initial_depth}]")
        if not cfg.activation_kind().idempotent:
            r.fail("network.activation" if "network.activation" in r.lines else "growth.op",
                   f"deeper growth needs an idempotent activation, {cfg.activation} is not")
        if g.noise < 0:
            r.fail("growth.noise", "growth.noise must be non-negative")
    if g.op == "wider" and g.growths:
        if not -cfg.initial_depth <= g.wider_layer < cfg.initial_depth:
            r.fail("growth.wider_layer", f"growth.wider_layer outside the {cfg.initial_depth} initial layers")
        if g.wider_add <= 0:
            r.fail("growth.wider_add", "growth.wider_add must be positive")
    if g.growths:
        try:
            cfg.schedule()
        except ValueError as e:
            r.fail("growth.growths", str(e))
    if cfg.tune is not None and cfg.tune.growth and g.growths and g.growths != len(cfg.tune.rung_budgets) - 1:
        r.fail("growth.growths",
               f"tuning grows once per rung boundary: growth.growths ({g.growths}) must equal "
               f"len(tune.rung_budgets) - 1 ({len(cfg.tune.rung_budgets) - 1})")


def load(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), source=str(path))


def from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    return loads(yaml.safe_dump(data, sort_keys=False))


def with_overrides(cfg: ExperimentConfig, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg.seed = seed
        cfg.ppo = replace(cfg.ppo, seed=seed)
    if out is not None:
        cfg.out = out
    return cfg
