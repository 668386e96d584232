"""Function-preserving growth of actor-critic networks.

Two transformations are provided. ``net2deeper`` inserts an identity layer
into the extractor; with an idempotent activation the grown network computes
exactly the same outputs. ``net2wider`` replicates neurons of one extractor
layer and divides their outgoing weights by the replication count, which
preserves outputs up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .nncore import Activation, AdamState, DenseLayer, Network, ShapeError, forward, normalize_seed


class IdempotencyError(ValueError):
    """The activation around an inserted identity layer is not idempotent."""


class MorphRangeError(ValueError):
    """Position, layer index or width is out of range for the network."""


class StructureError(ValueError):
    """Two networks are not related by the claimed transformation."""


@dataclass(frozen=True)
class Deeper:
    position: Optional[int] = None  # None appends after the last extractor layer
    noise: float = 0.0

    def resolve(self, net: Network) -> "Deeper":
        return Deeper(net.depth() if self.position is None else self.position, self.noise)

    def describe(self) -> str:
        pos = "end" if self.position is None else str(self.position)
        return f"deeper@{pos}" + (f"~{self.noise!r}" if self.noise else "")


@dataclass(frozen=True)
class Wider:
    layer: int
    new_width: int

    def describe(self) -> str:
        return f"wider@{self.layer}:{self.new_width}"


MorphismOp = Union[Deeper, Wider]


def parse_op(text: str) -> MorphismOp:
    """Parse ``deeper``, ``deeper@2``, ``deeper@end~0.01``, ``wider@0:32`` style op strings."""
    text = text.strip().lower()
    kind, _, arg = text.partition("@")
    if kind == "deeper":
        arg, _, noise = arg.partition("~")
        noise = float(noise) if noise else 0.0
        if not arg or arg == "end":
            return Deeper(None, noise)
        return Deeper(int(arg), noise)
    if kind == "wider":
        layer, sep, width = arg.partition(":")
        if not sep:
            raise ValueError(f"wider op needs layer and width, e.g. wider@0:32, got {text!r}")
        return Wider(int(layer), int(width))
    raise ValueError(f"unknown morphism op {text!r}")


def apply_op(net: Network, op: MorphismOp, rng: Optional[np.random.Generator] = None) -> Network:
    if isinstance(op, Deeper):
        return net2deeper(net, op.position, noise=op.noise, rng=rng)
    if isinstance(op, Wider):
        return net2wider(net, op.layer, op.new_width)
    raise TypeError(f"not a morphism op: {op!r}")


def net2deeper(
    net: Network,
    position: Optional[int] = None,
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Network:
    """Insert a bias-free identity layer into the extractor.

    The layer is placed after extractor layer ``position - 1``; ``position``
    defaults to ``depth`` (append). It copies the activation of the layer
    before it, which must be idempotent. Inserting at position 0 uses the
    identity activation since raw observations have no activation applied.

    A non-zero ``noise`` perturbs the identity weights with gaussian noise of
    that standard deviation and gives up exactness.
    """
    depth = net.depth()
    if position is None:
        position = depth
    if not 0 <= position <= depth:
        raise MorphRangeError(f"deeper position {position} outside [0, {depth}]")
    if position == 0:
        width, activation = net.obs_dim, Activation.IDENTITY
    else:
        prev = net.extractor[position - 1]
        width, activation = prev.out_dim, prev.activation
        if not activation.idempotent:
            raise IdempotencyError(
                f"extractor layer {position - 1} uses {activation.value}, which is not idempotent"
            )
    weight = np.eye(width)
    if noise:
        if rng is None:
            raise ValueError("noise requires an rng")
        weight = weight + rng.normal(0.0, noise, size=weight.shape)
    grown = net.copy()
    grown.extractor.insert(position, DenseLayer(weight, None, activation))
    grown.check()
    return grown


def replication_sources(width: int, new_width: int) -> np.ndarray:
    """Source neuron for every added unit: round-robin from index 0."""
    return np.arange(new_width - width) % width


def _replication_mapping(width: int, new_width: int) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(index, count)``: new unit -> original unit, and each unit's copy count."""
    index = np.concatenate([np.arange(width), replication_sources(width, new_width)])
    count = np.bincount(index, minlength=width).astype(np.float64)
    return index, count


def net2wider(net: Network, layer: int, new_width: int) -> Network:
    """Widen extractor ``layer`` to ``new_width`` units by neuron replication."""
    depth = net.depth()
    if not 0 <= layer < depth:
        raise MorphRangeError(f"wider layer {layer} outside [0, {depth - 1}]")
    target = net.extractor[layer]
    width = target.out_dim
    if new_width <= width:
        raise MorphRangeError(f"new width {new_width} must exceed current width {width}")
    index, count = _replication_mapping(width, new_width)

    grown = net.copy()
    t = grown.extractor[layer]
    t.weight = target.weight[index].copy()
    if target.bias is not None:
        t.bias = target.bias[index].copy()

    scale = 1.0 / count[index]
    if layer + 1 < depth:
        consumers = [grown.extractor[layer + 1]]
    else:
        consumers = [grown.policy_head, grown.value_head]
    for c in consumers:
        c.weight = np.ascontiguousarray(c.weight[:, index] * scale)
    grown.check()
    return grown


def verify_morphism(old: Network, new: Network, n_samples: int = 100, seed: int = 0) -> float:
    """Max absolute deviation of policy params and values on uniform[-3, 3] inputs."""
    if old.obs_dim != new.obs_dim:
        raise ShapeError(f"input dims differ: {old.obs_dim} vs {new.obs_dim}")
    rng = np.random.default_rng(normalize_seed(seed))
    obs = rng.uniform(-3.0, 3.0, size=(n_samples, old.obs_dim))
    return max_deviation(old, new, obs)


def max_deviation(old: Network, new: Network, obs: np.ndarray) -> float:
    pp_old, v_old = forward(old, obs)
    pp_new, v_new = forward(new, obs)
    if pp_old.shape != pp_new.shape:
        raise ShapeError(f"policy outputs differ in shape: {pp_old.shape} vs {pp_new.shape}")
    dev = max(float(np.max(np.abs(pp_old - pp_new))), float(np.max(np.abs(v_old - v_new))))
    if old.log_std is not None and new.log_std is not None:
        dev = max(dev, float(np.max(np.abs(old.log_std - new.log_std))))
    return dev


def relative_deviation(old: Network, new: Network, obs: np.ndarray) -> float:
    pp_old, v_old = forward(old, obs)
    pp_new, v_new = forward(new, obs)
    a = np.concatenate([pp_old.ravel(), v_old.ravel()])
    b = np.concatenate([pp_new.ravel(), v_new.ravel()])
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(a))), 1e-300))


def _infer_op(old: Network, new: Network) -> MorphismOp:
    if new.depth() == old.depth() + 1:
        old_dims = [(l.out_dim, l.in_dim) for l in old.extractor]
        for p in range(new.depth()):
            layer = new.extractor[p]
            rest = new.extractor[:p] + new.extractor[p + 1:]
            if (
                layer.bias is None
                and layer.in_dim == layer.out_dim
                and [(l.out_dim, l.in_dim) for l in rest] == old_dims
                and all(np.array_equal(a.weight, b.weight) for a, b in zip(old.extractor, rest))
            ):
                return Deeper(p)
    elif new.depth() == old.depth():
        changed = [i for i, (a, b) in enumerate(zip(old.extractor, new.extractor)) if a.out_dim != b.out_dim]
        if len(changed) == 1 and new.extractor[changed[0]].out_dim > old.extractor[changed[0]].out_dim:
            return Wider(changed[0], new.extractor[changed[0]].out_dim)
    raise StructureError(
        f"networks with widths {old.widths()} and {new.widths()} are not related by a single morphism"
    )


def _check_wider_structure(old: Network, new: Network, op: Wider) -> None:
    ow, nw = old.widths(), new.widths()
    expected = list(ow)
    if not 0 <= op.layer < len(ow):
        raise StructureError(f"wider layer {op.layer} outside old network")
    expected[op.layer] = op.new_width
    if nw != expected or old.obs_dim != new.obs_dim:
        raise StructureError(f"widths {nw} are not {ow} widened at layer {op.layer} to {op.new_width}")


def expand_optimizer_state(
    state: AdamState,
    old_net: Network,
    new_net: Network,
    op: Optional[MorphismOp] = None,
) -> AdamState:
    """Carry Adam moments across a morphism.

    Moments of surviving parameters are copied; an inserted layer starts from
    zero moments. For widening, replicated units copy their source's moments
    and the consuming columns are divided by the replication count like the
    weights. ``step_count`` is kept. When ``op`` is omitted it is inferred
    from the two networks.
    """
    state.check_congruent(old_net.params())
    if op is None:
        op = _infer_op(old_net, new_net)
    elif isinstance(op, Deeper):
        op = op.resolve(old_net)
    new_params = new_net.params()
    m: dict = {}
    v: dict = {}

    if isinstance(op, Deeper):
        p = op.position
        if new_net.depth() != old_net.depth() + 1 or not 0 <= p < new_net.depth():
            raise StructureError(f"{new_net.widths()} is not {old_net.widths()} deepened at {p}")
        for name in new_params:
            if name.startswith("extractor."):
                i = int(name.split(".")[1])
                if i == p:
                    m[name] = np.zeros_like(new_params[name])
                    v[name] = np.zeros_like(new_params[name])
                    continue
                old_name = f"extractor.{i - 1 if i > p else i}.{name.split('.')[2]}"
            else:
                old_name = name
            if old_name not in state.m or state.m[old_name].shape != new_params[name].shape:
                raise StructureError(f"parameter {name} has no counterpart {old_name} in the old network")
            m[name] = state.m[old_name].copy()
            v[name] = state.v[old_name].copy()
    elif isinstance(op, Wider):
        _check_wider_structure(old_net, new_net, op)
        index, count = _replication_mapping(old_net.extractor[op.layer].out_dim, op.new_width)
        scale = 1.0 / count[index]
        last = op.layer + 1 == old_net.depth()
        for name in new_params:
            om, ov = state.m[name], state.v[name]
            parts = name.split(".")
            if name.startswith("extractor.") and int(parts[1]) == op.layer:
                m[name], v[name] = om[index].copy(), ov[index].copy()
            elif (
                (name == f"extractor.{op.layer + 1}.weight")
                or (last and name in ("policy.weight", "value.weight"))
            ):
                m[name], v[name] = om[:, index] * scale, ov[:, index] * scale
            else:
                m[name], v[name] = om.copy(), ov.copy()
    else:
        raise TypeError(f"not a morphism op: {op!r}")

    out = AdamState(m, v, state.step_count, state.beta1, state.beta2, state.eps)
    out.check_congruent(new_params)
    return out


@dataclass
class GrowthSchedule:
    """Growth events keyed by environment-interaction count, fired in order."""

    events: List[Tuple[int, MorphismOp]] = field(default_factory=list)
    next_index: int = 0

    def __post_init__(self):
        steps = [s for s, _ in self.events]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"trigger steps must be strictly increasing, got {steps}")

    @property
    def triggers(self) -> List[int]:
        return [s for s, _ in self.events]

    def remaining(self) -> int:
        return len(self.events) - self.next_index


def due_growth(schedule: GrowthSchedule, env_step: int) -> Optional[MorphismOp]:
    """Pop the next event if its trigger has been reached. At most one per call."""
    if schedule.next_index < len(schedule.events):
        trigger, op = schedule.events[schedule.next_index]
        if trigger <= env_step:
            schedule.next_index += 1
            return op
    return None


def make_even_schedule(total_steps: int, growths: Sequence[MorphismOp]) -> GrowthSchedule:
    """Evenly spaced triggers at ``round(total_steps * i / (G + 1))``, i = 1..G."""
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    g = len(growths)
    # integer arithmetic avoids float error before rounding
    events = [((2 * total_steps * i + (g + 1)) // (2 * (g + 1)), op) for i, op in enumerate(growths, start=1)]
    return GrowthSchedule(events)
