"""Versioned parameter checkpoints: named float64 payloads + Adam state.

The document is JSON: every parameter maps to its shape and a base64 blob of
little-endian float64 bytes, alongside the optimizer moments, the step
counters, both configs, and a hash binding the checkpoint to its config.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict

import numpy as np

from .autodiff import AdamState, Tensor
from .docio import canonical_json, sha256_hex
from .policy import PolicyParams, flat_params, init_policy
from .validation import ParseError, require

CHECKPOINT_VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape),
            "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode_array(doc: dict, name: str) -> np.ndarray:
    try:
        raw = base64.b64decode(doc["data"], validate=True)
        arr = np.frombuffer(raw, dtype="<f8").reshape(doc["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad array payload: {exc}", field=name) from None
    return arr.astype(np.float64).copy()


def _encode_adam(state: AdamState) -> dict:
    return {
        "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
        "eps": state.eps, "step": state.step,
        "m": {k: _encode_array(v) for k, v in state.m.items()},
        "v": {k: _encode_array(v) for k, v in state.v.items()},
    }


def _decode_adam(doc: dict) -> AdamState:
    state = AdamState(lr=doc["lr"], beta1=doc["beta1"], beta2=doc["beta2"],
                      eps=doc["eps"], step=doc["step"])
    state.m = {k: _decode_array(v, f"adam.m.{k}") for k, v in doc["m"].items()}
    state.v = {k: _decode_array(v, f"adam.v.{k}") for k, v in doc["v"].items()}
    return state


def config_hash(train_config, experiment_config) -> str:
    payload = {"train": asdict(train_config),
               "experiment": experiment_config.to_mapping()}
    return sha256_hex(canonical_json(payload))


def checkpoint_document(policy: PolicyParams, adam_actors, adam_critic,
                        train_config, experiment_config, iteration: int) -> str:
    doc = {
        "version": CHECKPOINT_VERSION,
        "iteration": iteration,
        "config_hash": config_hash(train_config, experiment_config),
        "experiment": experiment_config.to_mapping(),
        "train": asdict(train_config),
        "embed_dim": policy.embed_dim,
        "attn_dim": policy.attn_dim,
        "params": {name: _encode_array(p.value)
                   for name, p in sorted(flat_params(policy).items())},
        "adam": {"actors": [_encode_adam(s) for s in adam_actors],
                 "critic": _encode_adam(adam_critic)},
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_checkpoint(path, policy, adam_actors, adam_critic,
                    train_config, experiment_config, iteration: int) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(checkpoint_document(policy, adam_actors, adam_critic,
                                     train_config, experiment_config, iteration))


def load_checkpoint(path):
    """Rebuild (policy, adam_actors, adam_critic, doc) from a checkpoint file."""
    with open(path, encoding="ascii") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"checkpoint is not valid JSON: {exc}") from None
    require(doc.get("version") == CHECKPOINT_VERSION,
            f"unsupported checkpoint version {doc.get('version')!r}")
    num_vehicles = len(doc["experiment"]["capacities"])
    policy = init_policy(num_vehicles, doc["embed_dim"], doc["attn_dim"], seed=0)
    flat = flat_params(policy)
    stored = doc["params"]
    missing = sorted(set(flat) - set(stored))
    extra = sorted(set(stored) - set(flat))
    if missing or extra:
        raise ParseError(f"parameter names mismatch (missing {missing}, extra {extra})",
                         field="params")
    for name, p in flat.items():
        arr = _decode_array(stored[name], name)
        if tuple(arr.shape) != p.value.shape:
            raise ParseError(f"shape {arr.shape} != expected {p.value.shape}", field=name)
        p.value = arr
    adam_actors = [_decode_adam(d) for d in doc["adam"]["actors"]]
    adam_critic = _decode_adam(doc["adam"]["critic"])
    return policy, adam_actors, adam_critic, doc
