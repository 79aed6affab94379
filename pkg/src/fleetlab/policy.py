"""Actor and critic networks for the routing agents.

Each agent owns an actor: linear encoders for customers and vehicles, a GRU
decoder fed with the coordinate of the previous action, and an additive
attention head that scores every node.  A single critic (shared by all
agents) estimates episode cost from the static customer/depot coordinates.

Functions come in two layers: per-state ops on a single environment state,
and batched builders (leading batch axis) used by the trainer so that B
episodes advance through one shared graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter
from .instances import MAX_DEMAND, ProblemInstance, all_coords, _stream_rng
from .validation import require

DEFAULT_EMBED_DIM = 128
DEFAULT_ATTN_DIM = 128

# rng stream namespace for parameter initialization (instance streams live
# below 2^31; training batches below 3e9)
_PARAM_STREAM_BASE = 3_000_000_000

_GRU_KEYS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")


def _uniform_fan_in(rng, fan_in: int, fan_out: int | None = None) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    shape = (fan_in,) if fan_out is None else (fan_in, fan_out)
    return parameter(rng.uniform(-bound, bound, size=shape))


def _zeros(*shape) -> Tensor:
    return parameter(np.zeros(shape))


def init_actor_params(num_vehicles: int, embed_dim: int = DEFAULT_EMBED_DIM,
                      attn_dim: int = DEFAULT_ATTN_DIM, seed: int = 0,
                      agent: int = 1) -> dict[str, Tensor]:
    """Parameters for one agent's actor; deterministic in (seed, agent)."""
    require(num_vehicles >= 1, "need at least one vehicle")
    require(embed_dim >= 1 and attn_dim >= 1, "embedding dims must be positive")
    rng = _stream_rng(seed, _PARAM_STREAM_BASE + agent)
    d, a = embed_dim, attn_dim
    params: dict[str, Tensor] = {
        "enc_cust.W": _uniform_fan_in(rng, 3, d), "enc_cust.b": _zeros(d),
        "enc_veh.W": _uniform_fan_in(rng, 3, d), "enc_veh.b": _zeros(d),
        "dec_in.W": _uniform_fan_in(rng, 2, d), "dec_in.b": _zeros(d),
    }
    for gate in ("z", "r", "h"):
        params[f"gru.W{gate}"] = _uniform_fan_in(rng, d, d)
        params[f"gru.U{gate}"] = _uniform_fan_in(rng, d, d)
        params[f"gru.b{gate}"] = _zeros(d)
    attn_in = d * (1 + num_vehicles) + d
    params["attn.W"] = _uniform_fan_in(rng, attn_in, a)
    params["attn.v"] = _uniform_fan_in(rng, a)
    return params


def init_critic_params(embed_dim: int = DEFAULT_EMBED_DIM, seed: int = 0) -> dict[str, Tensor]:
    require(embed_dim >= 1, "embedding dim must be positive")
    rng = _stream_rng(seed, _PARAM_STREAM_BASE - 1)
    d = embed_dim
    return {
        "embed.W": _uniform_fan_in(rng, 2, d), "embed.b": _zeros(d),
        "layer1.W": _uniform_fan_in(rng, d, d), "layer1.b": _zeros(d),
        "layer2.W": _uniform_fan_in(rng, d, d), "layer2.b": _zeros(d),
        "head.W": _uniform_fan_in(rng, d, 1), "head.b": _zeros(1),
    }


@dataclass
class PolicyParams:
    """One actor per agent plus the shared critic."""

    actors: list  # agent j uses actors[j-1]
    critic: dict
    embed_dim: int
    attn_dim: int

    @property
    def num_vehicles(self) -> int:
        return len(self.actors)


def init_policy(num_vehicles: int, embed_dim: int = DEFAULT_EMBED_DIM,
                attn_dim: int = DEFAULT_ATTN_DIM, seed: int = 0) -> PolicyParams:
    actors = [init_actor_params(num_vehicles, embed_dim, attn_dim, seed, agent=j)
              for j in range(1, num_vehicles + 1)]
    return PolicyParams(actors, init_critic_params(embed_dim, seed), embed_dim, attn_dim)


def flat_params(policy: PolicyParams) -> dict[str, Tensor]:
    """Stable checkpoint naming: actor.<j>.<field>, critic.<field>."""
    out: dict[str, Tensor] = {}
    for j, actor in enumerate(policy.actors, start=1):
        for name, p in actor.items():
            out[f"actor.{j}.{name}"] = p
    for name, p in policy.critic.items():
        out[f"critic.{name}"] = p
    return out


def gru_params(actor: dict) -> dict:
    return {k: actor[f"gru.{k}"] for k in _GRU_KEYS}


# ------------------------------------------------------------- features


def customer_features(state) -> np.ndarray:
    """Rows (x, y, demand/9) for depot + customers; depot demand is 0."""
    inst = state.instance
    feats = np.zeros((inst.num_customers + 1, 3))
    feats[0, :2] = inst.depot
    feats[1:, :2] = inst.coords
    feats[1:, 2] = state.remaining / MAX_DEMAND
    return feats


def vehicle_features(state) -> np.ndarray:
    """Rows (load/capacity, pos_x, pos_y) per vehicle."""
    inst = state.instance
    coords = all_coords(inst)
    feats = np.zeros((inst.num_vehicles, 3))
    feats[:, 0] = state.loads / inst.capacities
    feats[:, 1:] = coords[state.positions]
    return feats


def _embed(feats, W: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(ad.constant(feats), W), b)


def encode_customers(state, actor: dict) -> Tensor:
    """(M+1, D) embedding; recomputed per step since demands are dynamic."""
    return _embed(customer_features(state), actor["enc_cust.W"], actor["enc_cust.b"])


def encode_vehicles(state, actor: dict) -> Tensor:
    """(N, D) embedding; recomputed per step (loads and positions move)."""
    return _embed(vehicle_features(state), actor["enc_veh.W"], actor["enc_veh.b"])


def zero_hidden(embed_dim: int, batch: int | None = None) -> Tensor:
    shape = (embed_dim,) if batch is None else (batch, embed_dim)
    return ad.constant(np.zeros(shape))


def decode_step(prev_action_coord, hidden: Tensor, actor: dict) -> Tensor:
    """Advance the decoder with the coordinate of the action just taken.

    Accepts a single (2,) point with (D,) hidden, or batched (B, 2) with
    (B, D) hidden.
    """
    x = _embed(np.asarray(prev_action_coord, dtype=np.float64),
               actor["dec_in.W"], actor["dec_in.b"])
    return ad.gru_cell(x, hidden, gru_params(actor))


def attention_logits(cust_emb: Tensor, veh_emb: Tensor, hidden: Tensor,
                     actor: dict) -> Tensor:
    """Score u[i] = v . tanh(W [cust_emb[i]; vehicles; hidden]) per node.

    The flattened vehicle block (fixed fleet order) and the decoder hidden
    are shared across nodes; only the customer row varies.
    """
    nodes = cust_emb.value.shape[0]
    shared = ad.concat([ad.flatten(veh_emb), ad.flatten(hidden)])
    tiled = ad.gather(ad.reshape(shared, (1, -1)), np.zeros(nodes, dtype=np.int64))
    joint = ad.concat([cust_emb, tiled], axis=1)
    return ad.matmul(ad.tanh(ad.matmul(joint, actor["attn.W"])), actor["attn.v"])


@dataclass
class StepDistribution:
    """Masked categorical over the M+1 nodes for one decision."""

    log_probs: Tensor  # (M+1,), masked entries hold the sentinel log-prob
    mask: np.ndarray
    action: int | None = None
    chosen_log_prob: Tensor | None = None

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.value)


def action_distribution(logits: Tensor, mask) -> StepDistribution:
    mask = np.asarray(mask, dtype=bool)
    return StepDistribution(ad.masked_log_softmax(logits, mask), mask)


def _record_choice(dist: StepDistribution, action: int) -> int:
    dist.action = action
    dist.chosen_log_prob = ad.gather(dist.log_probs, np.array([action]))
    return action


def sample_action(dist: StepDistribution, rng: np.random.Generator) -> int:
    probs = dist.probs()
    probs = probs / probs.sum()  # exact-zero masked entries stay zero
    return _record_choice(dist, int(rng.choice(probs.size, p=probs)))


def greedy_action(dist: StepDistribution) -> int:
    # argmax over feasible nodes; np.argmax resolves ties to the lowest index
    ranked = np.where(dist.mask, dist.probs(), -1.0)
    return _record_choice(dist, int(np.argmax(ranked)))


def critic_value(instance: ProblemInstance, critic: dict) -> Tensor:
    """Estimated episode cost from static coordinates alone; shape (1,)."""
    emb = _embed(all_coords(instance), critic["embed.W"], critic["embed.b"])
    pooled = ad.mean(emb, axis=0)
    h1 = ad.relu(ad.add(ad.matmul(pooled, critic["layer1.W"]), critic["layer1.b"]))
    h2 = ad.relu(ad.add(ad.matmul(h1, critic["layer2.W"]), critic["layer2.b"]))
    return ad.add(ad.matmul(h2, critic["head.W"]), critic["head.b"])


# ------------------------------------------------------- batched builders
#
# The trainer advances B episodes in lockstep; these builders evaluate one
# decision step (or the critic) for the whole batch in a single graph.


def batched_step_logits(cust_feats: np.ndarray, veh_feats: np.ndarray,
                        hidden: Tensor, actor: dict) -> Tensor:
    """Attention logits (B, M+1) from feature arrays (B, M+1, 3)/(B, N, 3)."""
    batch, nodes, _ = cust_feats.shape
    cust = _embed(cust_feats.reshape(batch * nodes, 3),
                  actor["enc_cust.W"], actor["enc_cust.b"])
    veh = _embed(veh_feats.reshape(batch * veh_feats.shape[1], 3),
                 actor["enc_veh.W"], actor["enc_veh.b"])
    shared = ad.concat([ad.reshape(veh, (batch, -1)), hidden], axis=1)
    rep = np.repeat(np.arange(batch, dtype=np.int64), nodes)
    joint = ad.concat([cust, ad.gather(shared, rep)], axis=1)
    scores = ad.matmul(ad.tanh(ad.matmul(joint, actor["attn.W"])), actor["attn.v"])
    return ad.reshape(scores, (batch, nodes))


def batched_chosen_log_probs(log_probs: Tensor, actions: np.ndarray) -> Tensor:
    """Select log_probs[b, actions[b]] for every batch row; shape (B,)."""
    batch, nodes = log_probs.value.shape
    flat_idx = np.arange(batch, dtype=np.int64) * nodes + np.asarray(actions, dtype=np.int64)
    return ad.gather(ad.reshape(log_probs, (-1,)), flat_idx)


def batched_critic_values(instances, critic: dict) -> Tensor:
    """Critic estimates (B,) for instances sharing a customer count."""
    coords = np.stack([all_coords(inst) for inst in instances])
    batch, nodes, _ = coords.shape
    emb = _embed(coords.reshape(batch * nodes, 2), critic["embed.W"], critic["embed.b"])
    pooled = ad.mean(ad.reshape(emb, (batch, nodes, -1)), axis=1)
    h1 = ad.relu(ad.add(ad.matmul(pooled, critic["layer1.W"]), critic["layer1.b"]))
    h2 = ad.relu(ad.add(ad.matmul(h1, critic["layer2.W"]), critic["layer2.b"]))
    return ad.flatten(ad.add(ad.matmul(h2, critic["head.W"]), critic["head.b"]))
