"""Dense actor-critic networks in double precision.

Forward pass, exact reverse-mode gradients and Adam for a fixed topology:
a stack of dense extractor layers feeding a linear policy head and a
linear value head. The extractor stack may change between updates, so
parameters are addressed by name rather than by position.

Parameter order (used for flattening and checkpoints)::

    extractor.0.weight, extractor.0.bias, ..., extractor.{d-1}.weight, ...
    policy.weight, policy.bias, value.weight, value.bias, log_std
"""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

Params = Dict[str, np.ndarray]
Gradients = Dict[str, np.ndarray]


class ShapeError(ValueError):
    """Raised when array dimensions do not chain."""


class NumericError(FloatingPointError):
    """Raised when a loss or an intermediate value is not finite."""


class Activation(enum.Enum):
    RELU = "relu"
    IDENTITY = "identity"
    TANH = "tanh"

    @property
    def idempotent(self) -> bool:
        return self is not Activation.TANH

    def apply(self, x):
        if self is Activation.RELU:
            return np.maximum(x, 0.0)
        if self is Activation.TANH:
            return np.tanh(x)
        return x

    def derivative(self, out):
        """Derivative expressed through the activation output."""
        if self is Activation.RELU:
            return (out > 0.0).astype(np.float64)
        if self is Activation.TANH:
            return 1.0 - out * out
        return np.ones_like(out)


class PolicyKind(enum.Enum):
    CATEGORICAL = "categorical"
    GAUSSIAN = "gaussian"


def _matmul_t(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    # einsum keeps each output row independent of the batch it is computed in,
    # so a row evaluated alone is bit-identical to the same row in a minibatch.
    return np.einsum("bi,oi->bo", x, weight)


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def param_count(self) -> int:
        return self.weight.size + (0 if self.bias is None else self.bias.size)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        z = _matmul_t(x, self.weight)
        if self.bias is not None:
            z = z + self.bias
        return self.activation.apply(z)


@dataclass
class Network:
    """Actor-critic MLP. ``extractor`` is the growable part."""

    extractor: List[DenseLayer]
    policy_head: DenseLayer
    value_head: DenseLayer
    policy_kind: PolicyKind
    log_std: Optional[np.ndarray] = None

    def __post_init__(self):
        self.check()

    @property
    def obs_dim(self) -> int:
        return self.extractor[0].in_dim

    @property
    def action_dim(self) -> int:
        return self.policy_head.out_dim

    def depth(self) -> int:
        return len(self.extractor)

    def widths(self) -> List[int]:
        return [layer.out_dim for layer in self.extractor]

    def layer_dims(self) -> List[int]:
        return [self.obs_dim] + self.widths()

    def check(self) -> None:
        if not self.extractor:
            raise ShapeError("network needs at least one extractor layer")
        for i in range(1, len(self.extractor)):
            if self.extractor[i].in_dim != self.extractor[i - 1].out_dim:
                raise ShapeError(
                    f"extractor layer {i} expects {self.extractor[i].in_dim} inputs, "
                    f"layer {i - 1} emits {self.extractor[i - 1].out_dim}"
                )
        feat = self.extractor[-1].out_dim
        for name, head in (("policy", self.policy_head), ("value", self.value_head)):
            if head.in_dim != feat:
                raise ShapeError(f"{name} head expects {head.in_dim} inputs, extractor emits {feat}")
        if self.value_head.out_dim != 1:
            raise ShapeError("value head must have a single output")
        if self.policy_kind is PolicyKind.GAUSSIAN:
            if self.log_std is None or self.log_std.shape != (self.action_dim,):
                raise ShapeError("gaussian policy needs log_std of shape (action_dim,)")
        elif self.log_std is not None:
            raise ShapeError("categorical policy carries no log_std")

    def params(self) -> Params:
        """Named views onto every parameter array, in canonical order."""
        out: Params = {}
        for i, layer in enumerate(self.extractor):
            out[f"extractor.{i}.weight"] = layer.weight
            if layer.bias is not None:
                out[f"extractor.{i}.bias"] = layer.bias
        out["policy.weight"] = self.policy_head.weight
        out["policy.bias"] = self.policy_head.bias
        out["value.weight"] = self.value_head.weight
        out["value.bias"] = self.value_head.bias
        if self.log_std is not None:
            out["log_std"] = self.log_std
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def features(self, obs: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        for layer in self.extractor:
            h = layer(h)
        return h


def _as_batch(net: Network, obs) -> Tuple[np.ndarray, bool]:
    x = np.asarray(obs, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != net.obs_dim:
        raise ShapeError(
            f"extractor layer 0 expects {net.obs_dim} inputs, got observation of shape {np.shape(obs)}"
        )
    return x, single


def forward(net: Network, obs) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(policy_params, value)``.

    ``obs`` may be a single observation or a batch (rows). Policy params are
    logits for categorical policies and action means for gaussian ones.
    """
    x, single = _as_batch(net, obs)
    h = x
    for layer in net.extractor:
        h = layer(h)
    pp = net.policy_head(h)
    value = net.value_head(h)[:, 0]
    if single:
        return pp[0], value[0]
    return pp, value


@dataclass
class ForwardCache:
    inputs: List[np.ndarray] = field(default_factory=list)
    outputs: List[np.ndarray] = field(default_factory=list)
    features: Optional[np.ndarray] = None


def forward_with_cache(net: Network, obs) -> Tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Batched forward that keeps every layer's input/output and checks finiteness."""
    x, _ = _as_batch(net, obs)
    cache = ForwardCache()
    h = x
    for i, layer in enumerate(net.extractor):
        cache.inputs.append(h)
        h = layer(h)
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite activation in extractor layer {i}: {h[~np.isfinite(h)][0]}")
        cache.outputs.append(h)
    cache.features = h
    pp = net.policy_head(h)
    value = net.value_head(h)[:, 0]
    for name, arr in (("policy head", pp), ("value head", value)):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite output in {name}: {arr[~np.isfinite(arr)][0]}")
    return pp, value, cache


def backward(
    net: Network,
    cache: ForwardCache,
    d_policy: np.ndarray,
    d_value: np.ndarray,
    d_log_std: Optional[np.ndarray] = None,
) -> Gradients:
    """Backpropagate output cotangents to every named parameter."""
    grads: Gradients = {}
    h = cache.features
    d_value = np.asarray(d_value, dtype=np.float64).reshape(-1, 1)
    d_policy = np.atleast_2d(np.asarray(d_policy, dtype=np.float64))

    grads["policy.weight"] = d_policy.T @ h
    grads["policy.bias"] = d_policy.sum(axis=0)
    grads["value.weight"] = d_value.T @ h
    grads["value.bias"] = d_value.sum(axis=0)
    dh = d_policy @ net.policy_head.weight + d_value @ net.value_head.weight

    for i in range(net.depth() - 1, -1, -1):
        layer = net.extractor[i]
        dz = dh * layer.activation.derivative(cache.outputs[i])
        grads[f"extractor.{i}.weight"] = dz.T @ cache.inputs[i]
        if layer.bias is not None:
            grads[f"extractor.{i}.bias"] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ layer.weight

    if net.log_std is not None:
        grads["log_std"] = (
            np.zeros_like(net.log_std) if d_log_std is None else np.asarray(d_log_std, dtype=np.float64)
        )
    return {name: grads[name] for name in net.params()}


# loss_fn(policy_params, value, log_std) -> (loss, d_policy, d_value, d_log_std)
LossFn = Callable[[np.ndarray, np.ndarray, Optional[np.ndarray]], Tuple[float, np.ndarray, np.ndarray, Optional[np.ndarray]]]


def gradients(net: Network, obs, loss_fn: LossFn) -> Tuple[float, Gradients]:
    """Evaluate a scalar loss of the network outputs and its exact gradient."""
    pp, value, cache = forward_with_cache(net, obs)
    loss, d_policy, d_value, d_log_std = loss_fn(pp, value, net.log_std)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss: {loss}")
    return float(loss), backward(net, cache, d_policy, d_value, d_log_std)


def global_norm(grads: Gradients) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Gradients, max_norm: float) -> Tuple[Gradients, float]:
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Params, **kwargs) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kwargs,
        )

    def check_congruent(self, params: Params) -> None:
        if list(self.m) != list(params) or list(self.v) != list(params):
            raise ShapeError("optimizer state names differ from network parameters")
        for k, p in params.items():
            if self.m[k].shape != p.shape or self.v[k].shape != p.shape:
                raise ShapeError(f"optimizer state for {k} has shape {self.m[k].shape}, parameter {p.shape}")


def adam_step(params: Params, grads: Gradients, state: AdamState, lr: float) -> Tuple[Params, AdamState]:
    """One bias-corrected Adam step, updating ``params`` and ``state`` in place."""
    state.check_congruent(params)
    if list(grads) != list(params):
        raise ShapeError("gradient names differ from parameters")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    # C order throughout: einsum rounding depends on memory layout
    return np.ascontiguousarray(gain * q)


def normalize_seed(seed: int) -> int:
    return int(seed) & 0xFFFF_FFFF_FFFF_FFFF


def init_network(
    sizes: Sequence[int],
    n_outputs: int,
    policy_kind: PolicyKind = PolicyKind.CATEGORICAL,
    seed: int = 0,
    activation: Activation = Activation.RELU,
) -> Network:
    """Orthogonally initialised actor-critic network.

    Args:
        sizes: ``[obs_dim, hidden_1, ..., hidden_d]``; at least one hidden layer.
        n_outputs: number of discrete actions or continuous action dimensions.
        policy_kind: categorical or diagonal gaussian.
        seed: any integer; reduced modulo 2**64.
        activation: activation of every extractor layer.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ShapeError("sizes must include the input and at least one hidden width")
    if any(s <= 0 for s in sizes) or n_outputs <= 0:
        raise ShapeError(f"layer sizes must be positive, got {sizes} -> {n_outputs}")
    rng = np.random.default_rng(normalize_seed(seed))
    extractor = [
        DenseLayer(orthogonal(rng, sizes[i + 1], sizes[i], np.sqrt(2.0)), np.zeros(sizes[i + 1]), activation)
        for i in range(len(sizes) - 1)
    ]
    feat = sizes[-1]
    policy_head = DenseLayer(orthogonal(rng, n_outputs, feat, 0.01), np.zeros(n_outputs))
    value_head = DenseLayer(orthogonal(rng, 1, feat, 1.0), np.zeros(1))
    log_std = np.zeros(n_outputs) if policy_kind is PolicyKind.GAUSSIAN else None
    return Network(extractor, policy_head, value_head, policy_kind, log_std)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
