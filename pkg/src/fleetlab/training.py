"""Advantage actor-critic training over batched round-robin rollouts.

A batch of episodes advances in lockstep: at every decision step the acting
agent's network scores all nodes for every episode at once, actions are
sampled (or taken greedily), and every agent's decoder consumes the chosen
coordinates.  Episodes that finish early idle at the depot, where the forced
single-feasible choice has log-probability exactly zero and therefore zero
gradient, so no masking of finished rows is needed in the loss.

The per-agent surrogate loss is (1/B) sum_k (A_k / T_jk) sum_t log pi_j with
a shared whole-episode advantage A_k = cost_k - V(instance_k); descending it
reduces expected tour length.  Episodes that hit the round cap are charged
``penalty`` length units per undelivered demand unit.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step, zero_grads
from .checkpoint import save_checkpoint
from .docio import fmt17
from .env import (
    feasible_actions,
    finalize,
    is_terminal,
    node_coord,
    reset,
    state_fingerprint,
    step,
)
from .instances import ExperimentConfig, generate_instance, _stream_rng
from .policy import (
    PolicyParams,
    batched_chosen_log_probs,
    batched_critic_values,
    batched_step_logits,
    customer_features,
    decode_step,
    flat_params,
    init_policy,
    vehicle_features,
    zero_hidden,
)
from .validation import ContractViolation, require

VALIDATION_STREAM_BASE = 1_000_000_000
TRAINING_STREAM_BASE = 2_000_000_000
_SAMPLER_STREAM = 3_900_000_000


@dataclass
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 128
    # the critic learns faster than the actors so the advantage baseline
    # settles before the policy commits
    actor_lr: float = 3e-3
    critic_lr: float = 1e-2
    penalty: float = 2.0  # cost units per undelivered demand unit at truncation
    eval_cadence: int = 50
    eval_size: int = 100
    checkpoint_cadence: int = 500
    embed_dim: int = 128
    attn_dim: int = 128
    round_cap: int | None = None  # None -> 2M rounds
    seed: int = 0

    def __post_init__(self):
        require(self.iterations >= 0, "iterations must be >= 0")
        require(self.batch_size >= 1, "batch size must be >= 1")
        require(self.penalty >= 0.0, "penalty must be >= 0")
        require(self.eval_cadence >= 1 and self.checkpoint_cadence >= 1,
                "cadences must be >= 1")
        require(self.eval_size >= 1, "eval size must be >= 1")


@dataclass
class TrajectoryStep:
    agent: int
    state_hash: str
    mask: np.ndarray
    action: int
    log_prob: Tensor  # (1,) node in the rollout graph


@dataclass
class Trajectory:
    instance_id: str
    steps: list  # TrajectoryStep, in cyclic agent order
    agent_log_prob_sums: dict  # agent -> Tensor
    plan: object  # RoutePlan
    cost: float  # length + penalty * residual


@dataclass
class _BatchStep:
    agent: int
    chosen: Tensor  # (B,) chosen log-probs
    log_probs: Tensor  # (B, M+1)
    live: np.ndarray  # episode was undecided before this action
    actions: np.ndarray
    masks: np.ndarray
    hashes: list


@dataclass
class _BatchRollout:
    instances: list
    steps: list
    plans: list
    costs: np.ndarray  # length + penalty * residual
    lengths: np.ndarray
    residuals: np.ndarray
    live_counts: np.ndarray  # (N, B) decision steps per agent per episode


def _sample_rows(probs: np.ndarray, masks: np.ndarray, rng) -> np.ndarray:
    """Inverse-CDF sample per row; masked entries carry exactly zero mass."""
    norm = probs / probs.sum(axis=1, keepdims=True)
    u = rng.random(probs.shape[0])
    cum = np.cumsum(norm, axis=1)
    hit = u[:, None] < cum
    actions = np.argmax(hit, axis=1)
    missed = ~hit[:, -1]  # u beyond the float cumsum: give it to the last feasible
    if np.any(missed):
        last_feasible = masks.shape[1] - 1 - np.argmax(masks[:, ::-1], axis=1)
        actions[missed] = last_feasible[missed]
    return actions


def _greedy_rows(probs: np.ndarray, masks: np.ndarray) -> np.ndarray:
    return np.argmax(np.where(masks, probs, -1.0), axis=1)


def _rollout(instances, policy: PolicyParams, mode: str, rng=None,
             round_cap=None, penalty: float = 0.0,
             record_hashes: bool = False) -> _BatchRollout:
    require(len(instances) >= 1, "empty batch")
    m = instances[0].num_customers
    n = instances[0].num_vehicles
    require(all(i.num_customers == m and i.num_vehicles == n for i in instances),
            "batched rollouts need a homogeneous instance shape")
    require(n == policy.num_vehicles, "policy fleet size does not match instances")
    require(mode in ("sample", "greedy"), "mode must be sample or greedy")
    require(mode != "sample" or rng is not None, "sample mode needs an rng")

    batch = len(instances)
    states = [reset(inst, round_cap=round_cap) for inst in instances]
    hiddens = [zero_hidden(policy.embed_dim, batch) for _ in range(n)]
    prev_coords = np.stack([inst.depot for inst in instances])
    steps: list[_BatchStep] = []
    live_counts = np.zeros((n, batch), dtype=np.int64)

    while not all(is_terminal(s) for s in states):
        agent = states[0].acting_agent
        actor = policy.actors[agent - 1]
        # every decoder consumes the full interleaved action stream
        for a in range(n):
            hiddens[a] = decode_step(prev_coords, hiddens[a], policy.actors[a])
        live = np.array([not is_terminal(s) for s in states])
        cust = np.stack([customer_features(s) for s in states])
        veh = np.stack([vehicle_features(s) for s in states])
        masks = np.stack([feasible_actions(s).feasible for s in states])
        logits = batched_step_logits(cust, veh, hiddens[agent - 1], actor)
        log_probs = ad.masked_log_softmax(logits, masks)
        probs = np.exp(log_probs.value)
        if mode == "sample":
            actions = _sample_rows(probs, masks, rng)
        else:
            actions = _greedy_rows(probs, masks)
        hashes = [state_fingerprint(s) if record_hashes and live[k] else None
                  for k, s in enumerate(states)]
        steps.append(_BatchStep(agent, batched_chosen_log_probs(log_probs, actions),
                                log_probs, live, actions, masks, hashes))
        live_counts[agent - 1] += live
        coords = np.empty((batch, 2))
        for k in range(batch):
            states[k], _ = step(states[k], int(actions[k]))
            coords[k] = node_coord(instances[k], int(actions[k]))
        prev_coords = coords

    plans = [finalize(s) for s in states]
    lengths = np.array([p.total_length for p in plans])
    residuals = np.array([p.residual_demand for p in plans], dtype=np.float64)
    return _BatchRollout(list(instances), steps, plans,
                         lengths + penalty * residuals, lengths, residuals,
                         live_counts)


def rollout_batch(instances, policy: PolicyParams, mode: str = "sample", *,
                  rng=None, round_cap=None, penalty: float = 0.0) -> list:
    """Play each instance to termination; returns order-aligned Trajectories."""
    rec = _rollout(instances, policy, mode, rng=rng, round_cap=round_cap,
                   penalty=penalty, record_hashes=True)
    return _materialize(rec)


def _materialize(rec: _BatchRollout) -> list:
    trajectories = []
    for k, inst in enumerate(rec.instances):
        steps, sums = [], {}
        for s in rec.steps:
            if not s.live[k]:
                continue
            node = ad.gather(s.chosen, np.array([k]))
            steps.append(TrajectoryStep(s.agent, s.hashes[k], s.masks[k].copy(),
                                        int(s.actions[k]), node))
            sums[s.agent] = node if s.agent not in sums else ad.add(sums[s.agent], node)
        trajectories.append(Trajectory(inst.instance_id, steps, sums,
                                       rec.plans[k], float(rec.costs[k])))
    return trajectories


def actor_gradient(trajectories, critic_values, actor: dict, agent: int) -> dict:
    """Gradient of (1/B) sum_k (A_k / T_jk) sum_t log pi_j for one agent."""
    require(len(trajectories) >= 1, "empty batch")
    require(len(critic_values) == len(trajectories),
            "critic values must align with trajectories")
    b = len(trajectories)
    loss = None
    for traj, value in zip(trajectories, critic_values):
        advantage = traj.cost - float(value)
        t_j = sum(1 for s in traj.steps if s.agent == agent)
        term = ad.mul(traj.agent_log_prob_sums[agent], advantage / (b * t_j))
        loss = term if loss is None else ad.add(loss, term)
    zero_grads(actor.values())
    loss.backward()
    return {name: p.grad.copy() for name, p in actor.items()}


def critic_gradient(instances, costs, critic: dict) -> dict:
    """Gradient of the mean squared error between V(instance) and cost."""
    require(len(instances) >= 1, "empty batch")
    require(len(costs) == len(instances), "costs must align with instances")
    values = batched_critic_values(instances, critic)
    diff = ad.sub(values, ad.constant(np.asarray(costs, dtype=np.float64)))
    loss = ad.mean(ad.mul(diff, diff))
    zero_grads(critic.values())
    loss.backward()
    return {name: p.grad.copy() for name, p in critic.items()}


def validation_instances(experiment: ExperimentConfig, size: int) -> list:
    """Held-out set on streams disjoint from both test and training sets."""
    return [generate_instance(experiment, VALIDATION_STREAM_BASE + k)
            for k in range(size)]


def training_batch(experiment: ExperimentConfig, iteration: int, batch_size: int) -> list:
    streams = TRAINING_STREAM_BASE + iteration * batch_size
    return [generate_instance(experiment, streams + k) for k in range(batch_size)]


def greedy_mean_cost(policy: PolicyParams, instances, penalty: float = 0.0,
                     round_cap=None) -> float:
    rec = _rollout(instances, policy, "greedy", round_cap=round_cap, penalty=penalty)
    return float(rec.costs.mean())


def _batch_losses(rec: _BatchRollout, policy: PolicyParams):
    """Surrogate actor losses (one per agent), critic MSE, and advantages."""
    b = len(rec.instances)
    values = batched_critic_values(rec.instances, policy.critic)
    advantages = rec.costs - values.value
    actor_losses = []
    for a in range(policy.num_vehicles):
        scale = advantages / (b * rec.live_counts[a])
        loss = None
        for s in rec.steps:
            if s.agent != a + 1:
                continue
            term = ad.asum(ad.mul(s.chosen, ad.constant(scale * s.live)))
            loss = term if loss is None else ad.add(loss, term)
        actor_losses.append(loss)
    diff = ad.sub(values, ad.constant(rec.costs))
    critic_loss = ad.mean(ad.mul(diff, diff))
    return actor_losses, critic_loss, advantages


def _grad_norm(params: dict) -> float:
    total = 0.0
    for p in params.values():
        g = p.grad if p.grad is not None else 0.0
        total += float(np.sum(np.square(g)))
    return float(np.sqrt(total))


@dataclass
class TrainResult:
    policy: PolicyParams
    adam_actors: list
    adam_critic: AdamState
    log_path: Path
    checkpoint_path: Path
    mean_costs: list = field(default_factory=list)
    val_history: list = field(default_factory=list)  # (iteration, greedy mean cost)


def train(config: TrainConfig, experiment: ExperimentConfig, out_dir, *,
          fixed_clock: bool = False) -> TrainResult:
    """Run the full A2C loop: sample batch, rollout, per-agent policy-gradient
    updates then a critic update, with periodic greedy validation.

    ``fixed_clock`` logs wall_ms as 0 so repeated runs are byte-identical.
    The checkpoint directory honors $FLEETLAB_CHECKPOINT_DIR when set.
    """
    out = Path(out_dir)
    ckpt_dir = Path(os.environ.get("FLEETLAB_CHECKPOINT_DIR") or out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = out / "training_log.txt"
    checkpoint_path = ckpt_dir / "checkpoint.json"

    policy = init_policy(experiment.num_vehicles, config.embed_dim,
                         config.attn_dim, seed=config.seed)
    adam_actors = [AdamState.for_params(actor, lr=config.actor_lr)
                   for actor in policy.actors]
    adam_critic = AdamState.for_params(policy.critic, lr=config.critic_lr)
    sampler = _stream_rng(config.seed, _SAMPLER_STREAM)
    val_set = validation_instances(experiment, config.eval_size)

    result = TrainResult(policy, adam_actors, adam_critic, log_path, checkpoint_path)
    all_params = flat_params(policy)
    val_cost = greedy_mean_cost(policy, val_set, config.penalty, config.round_cap)
    result.val_history.append((0, val_cost))

    def write_checkpoint(iteration):
        save_checkpoint(checkpoint_path, policy, adam_actors, adam_critic,
                        config, experiment, iteration)

    with open(log_path, "w", encoding="ascii") as log:
        for i in range(1, config.iterations + 1):
            t0 = time.perf_counter()
            try:
                instances = training_batch(experiment, i - 1, config.batch_size)
                rec = _rollout(instances, policy, "sample", rng=sampler,
                               round_cap=config.round_cap, penalty=config.penalty)
                actor_losses, critic_loss, advantages = _batch_losses(rec, policy)
                total = critic_loss
                for loss in actor_losses:
                    total = ad.add(total, loss)
                zero_grads(all_params.values())
                total.backward()
                actor_norms = [_grad_norm(actor) for actor in policy.actors]
                critic_norm = _grad_norm(policy.critic)
                for actor, state in zip(policy.actors, adam_actors):
                    adam_step(actor, {k: p.grad for k, p in actor.items()}, state)
                adam_step(policy.critic,
                          {k: p.grad for k, p in policy.critic.items()}, adam_critic)
            except ContractViolation as exc:
                _dump_diagnostics(out, i, exc, result)
                raise
            if i % config.eval_cadence == 0 or i == config.iterations:
                val_cost = greedy_mean_cost(policy, val_set, config.penalty,
                                            config.round_cap)
                result.val_history.append((i, val_cost))
            mean_cost = float(rec.costs.mean())
            result.mean_costs.append(mean_cost)
            wall_ms = 0 if fixed_clock else int(round((time.perf_counter() - t0) * 1000))
            log.write(
                f"iter={i} mean_cost={fmt17(mean_cost)}"
                f" adv_mean={fmt17(advantages.mean())}"
                f" adv_std={fmt17(advantages.std())}"
                f" actor_grad_norms={','.join(fmt17(x) for x in actor_norms)}"
                f" critic_grad_norm={fmt17(critic_norm)}"
                f" val_cost={fmt17(val_cost)} wall_ms={wall_ms}\n")
            log.flush()
            if i % config.checkpoint_cadence == 0:
                write_checkpoint(i)
        write_checkpoint(config.iterations)
    return result


def _dump_diagnostics(out_dir: Path, iteration: int, exc, result: TrainResult) -> None:
    import json

    doc = {
        "iteration": iteration,
        "error": str(exc),
        "mean_costs_tail": result.mean_costs[-20:],
        "val_history": result.val_history,
    }
    with open(Path(out_dir) / "diagnostic_dump.json", "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=1)
