"""Action distributions over network policy outputs.

Categorical policies read logits; gaussian policies read action means plus a
state-independent ``log_std``. Each helper accepts batched policy params
(rows) and returns per-row values.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .nncore import Network, PolicyKind, forward, log_softmax, softmax

_LOG_2PI = float(np.log(2.0 * np.pi))


def sample(kind: PolicyKind, pp: np.ndarray, log_std: Optional[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    if kind is PolicyKind.CATEGORICAL:
        probs = softmax(pp)
        cdf = np.cumsum(probs, axis=-1)
        u = rng.random(pp.shape[0])[:, None]
        return np.minimum((u > cdf).sum(axis=-1), pp.shape[1] - 1)
    return pp + np.exp(log_std) * rng.standard_normal(pp.shape)


def greedy(kind: PolicyKind, pp: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Argmax or mean action. With ``rng``, exact argmax ties are broken uniformly at random.

    One uniform is consumed per row whether or not it has a tie, so the
    stream does not depend on the outputs.
    """
    if kind is not PolicyKind.CATEGORICAL:
        return pp.copy()
    if rng is None:
        return np.argmax(pp, axis=-1)
    u = rng.random(pp.shape[0])
    best = pp == pp.max(axis=-1, keepdims=True)
    pick = np.floor(u * best.sum(axis=-1)).astype(np.int64)
    # index of the pick-th maximal entry in each row
    return np.argmax(np.cumsum(best, axis=-1) > pick[:, None], axis=-1)


def log_prob(kind: PolicyKind, pp: np.ndarray, log_std: Optional[np.ndarray], actions: np.ndarray) -> np.ndarray:
    if kind is PolicyKind.CATEGORICAL:
        lsm = log_softmax(pp)
        return lsm[np.arange(pp.shape[0]), actions.astype(np.int64)]
    z = (actions - pp) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * pp.shape[1] * _LOG_2PI


def entropy(kind: PolicyKind, pp: np.ndarray, log_std: Optional[np.ndarray]) -> np.ndarray:
    if kind is PolicyKind.CATEGORICAL:
        lsm = log_softmax(pp)
        return -np.sum(np.exp(lsm) * lsm, axis=-1)
    return np.full(pp.shape[0], np.sum(log_std) + 0.5 * pp.shape[1] * (1.0 + _LOG_2PI))


def log_prob_and_entropy_grads(
    kind: PolicyKind,
    pp: np.ndarray,
    log_std: Optional[np.ndarray],
    actions: np.ndarray,
    d_logp: np.ndarray,
    d_ent: np.ndarray,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Chain per-row cotangents on log-prob and entropy back to (pp, log_std)."""
    if kind is PolicyKind.CATEGORICAL:
        lsm = log_softmax(pp)
        p = np.exp(lsm)
        onehot = np.zeros_like(pp)
        onehot[np.arange(pp.shape[0]), actions.astype(np.int64)] = 1.0
        ent = -np.sum(p * lsm, axis=-1, keepdims=True)
        d_pp = d_logp[:, None] * (onehot - p) + d_ent[:, None] * (-p * (lsm + ent))
        return d_pp, None
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - pp
    d_pp = d_logp[:, None] * diff * inv_var
    d_log_std = np.sum(d_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0) + np.sum(d_ent)
    return d_pp, d_log_std


def kl(kind: PolicyKind, pp_p: np.ndarray, log_std_p, pp_q: np.ndarray, log_std_q) -> np.ndarray:
    """Per-row KL(p || q)."""
    if kind is PolicyKind.CATEGORICAL:
        lp, lq = log_softmax(pp_p), log_softmax(pp_q)
        return np.sum(np.exp(lp) * (lp - lq), axis=-1)
    var_p, var_q = np.exp(2.0 * log_std_p), np.exp(2.0 * log_std_q)
    terms = log_std_q - log_std_p + (var_p + (pp_p - pp_q) ** 2) / (2.0 * var_q) - 0.5
    return np.sum(terms, axis=-1)


def policy_kl(old: Network, new: Network, obs: np.ndarray) -> float:
    """Max per-observation KL(old || new)."""
    pp_old, _ = forward(old, obs)
    pp_new, _ = forward(new, obs)
    return float(np.max(kl(old.policy_kind, pp_old, old.log_std, pp_new, new.log_std)))
