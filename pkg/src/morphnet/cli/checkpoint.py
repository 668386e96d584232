"""Binary checkpoints.

Layout::

    bytes 0..7    magic b"MNETCKPT"
    bytes 8..11   format version, uint32 little-endian
    bytes 12..19  manifest length N, uint64 little-endian
    N bytes       UTF-8 JSON manifest
    rest          float64 little-endian payload

The manifest lists every array under ``arrays`` as ``{"name", "shape"}`` in
payload order: network parameters (``param/<name>`` in canonical network
order), then Adam first moments (``adam_m/<name>``) and second moments
(``adam_v/<name>``). ``layers`` records each extractor layer's dims, bias
flag and activation. Training state that is not an array (RNG and
environment states, counters, growth events, the experiment config) is
stored in the manifest; JSON floats round-trip exactly.
"""

from __future__ import annotations

import json
import struct
from typing import Any, Dict, Tuple

import numpy as np

from ..nncore import Activation, AdamState, DenseLayer, Network, PolicyKind

MAGIC = b"MNETCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _layer_manifest(net: Network):
    return [
        {"in": l.in_dim, "out": l.out_dim, "bias": l.bias is not None, "activation": l.activation.value}
        for l in net.extractor
    ]


def encode(net: Network, adam: AdamState, meta: Dict[str, Any]) -> bytes:
    params = net.params()
    arrays = [(f"param/{k}", v) for k, v in params.items()]
    arrays += [(f"adam_m/{k}", adam.m[k]) for k in params]
    arrays += [(f"adam_v/{k}", adam.v[k]) for k in params]
    manifest = {
        "format_version": FORMAT_VERSION,
        "policy_kind": net.policy_kind.value,
        "obs_dim": net.obs_dim,
        "action_dim": net.action_dim,
        "layers": _layer_manifest(net),
        "adam": {"step_count": adam.step_count, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        **meta,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<Q", len(blob)) + blob + payload


def decode(data: bytes) -> Tuple[Network, AdamState, Dict[str, Any]]:
    if data[:8] != MAGIC:
        raise CheckpointError("not a morphnet checkpoint (bad magic)")
    (version,) = struct.unpack("<I", data[8:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version} (expected {FORMAT_VERSION})")
    (n,) = struct.unpack("<Q", data[12:20])
    manifest = json.loads(data[20:20 + n].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"manifest format version {manifest.get('format_version')} is unsupported")
    offset = 20 + n
    arrays = {}
    for entry in manifest["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"payload truncated while reading {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(entry["shape"])
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes after payload")

    def p(name):
        return arrays[f"param/{name}"]

    extractor = []
    for i, layer in enumerate(manifest["layers"]):
        w = p(f"extractor.{i}.weight")
        if w.shape != (layer["out"], layer["in"]):
            raise CheckpointError(f"extractor layer {i} weight has shape {w.shape}, manifest says {layer}")
        b = p(f"extractor.{i}.bias") if layer["bias"] else None
        extractor.append(DenseLayer(w, b, Activation(layer["activation"])))
    kind = PolicyKind(manifest["policy_kind"])
    net = Network(
        extractor,
        DenseLayer(p("policy.weight"), p("policy.bias")),
        DenseLayer(p("value.weight"), p("value.bias")),
        kind,
        p("log_std") if kind is PolicyKind.GAUSSIAN else None,
    )
    names = list(net.params())
    a = manifest["adam"]
    adam = AdamState(
        {k: arrays[f"adam_m/{k}"] for k in names},
        {k: arrays[f"adam_v/{k}"] for k in names},
        a["step_count"], a["beta1"], a["beta2"], a["eps"],
    )
    adam.check_congruent(net.params())
    meta = {k: v for k, v in manifest.items() if k not in ("arrays", "layers", "adam")}
    return net, adam, meta


def save(path, net: Network, adam: AdamState, meta: Dict[str, Any]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(net, adam, meta))


def load(path) -> Tuple[Network, AdamState, Dict[str, Any]]:
    with open(path, "rb") as fh:
        return decode(fh.read())
