"""Release gate: seven go/no-go checks, one printed verdict line each.

Every check prints ``GATE <n> <name>: PASS|FAIL — <measurements>`` before
asserting, so a failing gate still reports its numbers.  The training check
runs a 500-iteration smoke by default; set ``FLEETLAB_FULL_TRAIN=1`` to also
run the full-budget variant (marked ``full_train``, hours of CPU).
"""

import json
import math
import os
import time

import numpy as np
import pytest

from gradcheck import check_gradients
from test_training import replay_actor_loss, replay_step_features

import fleetlab.autodiff as ad
from fleetlab.baselines import (
    brute_force_optimal,
    clarke_wright,
    random_policy,
    sweep,
)
from fleetlab.cli import main
from fleetlab.env import (
    DEPOT,
    feasible_actions,
    finalize,
    is_terminal,
    plan_length,
    reset,
    step,
)
from fleetlab.instances import (
    ExperimentConfig,
    ProblemInstance,
    generate_instance,
    generate_test_set,
)
from fleetlab.policy import init_policy
from fleetlab.solvers import DrlSolver
from fleetlab.training import TrainConfig, greedy_mean_cost, rollout_batch, train
from fleetlab.validation import ContractViolation

# reference means for the 10-customer, 3-vehicle benchmark configuration;
# the gate checks the shipped heuristics against them at +/-10%
REFERENCE_SWEEP_MEAN = 5.510
REFERENCE_CW_MEAN = 6.884

BENCH_10 = ExperimentConfig("vrp10", 10, 3, (10, 15, 20), test_set_size=1000, seed=0)


def verdict(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"GATE {number} {name}: {'PASS' if ok else 'FAIL'} — {detail}"
    print(line, flush=True)
    assert ok, line


def run_cli(*args) -> int:
    try:
        main([str(a) for a in args])
    except SystemExit as exc:
        return int(exc.code or 0)
    return 0


# ---------------------------------------------------------------------------
# 1. finite-difference gradient checks: every op + full actor/critic passes


def _fixed_proj(rng, shape):
    """Scalar projection with weights fixed up front (FD re-runs the build)."""
    w = ad.constant(rng.normal(size=shape))
    return lambda t: ad.asum(ad.mul(t, w))


def _op_trials(seed: int) -> list:
    """One randomized gradient trial per autodiff op; returns worst errors."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    row = rng.normal(size=(4,))
    left = rng.normal(size=(3, 4))
    right = rng.normal(size=(4, 2))
    idx = rng.integers(0, 3, size=5)
    mask = np.ones((3, 5), dtype=bool)
    mask[rng.integers(0, 3, size=3), rng.integers(0, 5, size=3)] = False
    logits = rng.normal(size=(3, 5))
    pick = ad.constant(rng.normal(size=(3, 5)) * mask)
    x = rng.normal(size=(3, 4))
    h = rng.normal(size=(3, 4))
    gru_names = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")
    gru_arrays = [rng.normal(size=(4,) if n.startswith("b") else (4, 4)) * 0.5
                  for n in gru_names]
    p34 = _fixed_proj(rng, (3, 4))
    p32 = _fixed_proj(rng, (3, 2))
    p38 = _fixed_proj(rng, (3, 8))
    p43 = _fixed_proj(rng, (4, 3))
    p12 = _fixed_proj(rng, (12,))
    p54 = _fixed_proj(rng, (5, 4))
    p31 = _fixed_proj(rng, (3, 1))
    p4 = _fixed_proj(rng, (4,))

    trials = [
        (lambda p, q: p34(ad.add(p, q)), [a, row]),
        (lambda p, q: p34(ad.sub(p, q)), [a, b]),
        (lambda p, q: p34(ad.mul(p, q)), [a, row]),
        (lambda p, q: p32(ad.matmul(p, q)), [left, right]),
        (lambda p, q: p38(ad.concat([p, q], axis=1)), [a, b]),
        (lambda p: p43(ad.reshape(p, (4, 3))), [a]),
        (lambda p: p12(ad.flatten(p)), [a]),
        (lambda p: p54(ad.gather(p, idx)), [a]),
        (lambda p: p31(ad.asum(p, axis=1, keepdims=True)), [a]),
        (lambda p: p4(ad.mean(p, axis=0)), [a]),
        (lambda p: p34(ad.tanh(p)), [a]),
        (lambda p: p34(ad.sigmoid(p)), [a]),
        (lambda p: p34(ad.relu(p)), [a + 0.1]),
        (lambda p: ad.asum(ad.mul(ad.masked_log_softmax(p, mask), pick)), [logits]),
        (lambda *t: p34(ad.gru_cell(t[0], t[1], dict(zip(gru_names, t[2:])))),
         [x, h] + gru_arrays),
    ]
    return [check_gradients(build, arrays, tol=float("inf"))
            for build, arrays in trials]


def _actor_trial(seed: int) -> float:
    config = ExperimentConfig("gate-fd", 4, 2, (10, 11), test_set_size=4, seed=seed)
    policy = init_policy(2, 4, 4, seed=seed)
    instances = [generate_instance(config, k) for k in range(2)]
    rng = np.random.default_rng(seed)
    rec = rollout_and_record(instances, policy, rng)
    advantages = rec.costs - rec.costs.mean() - 0.5
    feats = replay_step_features(instances, rec)
    agent = 1 + seed % 2
    actor = policy.actors[agent - 1]
    names = sorted(actor)
    arrays = [actor[n].value.copy() for n in names]

    def build(*tensors):
        return replay_actor_loss(rec, feats, dict(zip(names, tensors)),
                                 agent, advantages, 4)

    return check_gradients(build, arrays, tol=float("inf"))


def rollout_and_record(instances, policy, rng):
    from fleetlab.training import _rollout

    return _rollout(instances, policy, "sample", rng=rng, record_hashes=True)


def _critic_trial(seed: int) -> float:
    from fleetlab.policy import batched_critic_values

    config = ExperimentConfig("gate-fd", 4, 2, (10, 11), test_set_size=4, seed=seed)
    instances = [generate_instance(config, k) for k in range(3)]
    policy = init_policy(2, 4, 4, seed=100 + seed)
    costs = np.random.default_rng(seed).uniform(2.0, 6.0, size=3)
    critic = policy.critic
    names = sorted(critic)
    arrays = [critic[n].value.copy() for n in names]

    def build(*tensors):
        values = batched_critic_values(instances, dict(zip(names, tensors)))
        diff = ad.sub(values, ad.constant(costs))
        return ad.mean(ad.mul(diff, diff))

    return check_gradients(build, arrays, tol=float("inf"))


def test_gate_1_gradient_finite_differences():
    t0 = time.perf_counter()
    errors = []
    for seed in range(5):
        errors.extend(_op_trials(seed))          # 15 ops x 5 seeds = 75 trials
    for seed in range(15):
        errors.append(_actor_trial(seed))        # full actor pass, M=4 N=2
    for seed in range(15):
        errors.append(_critic_trial(seed))       # full critic pass
    elapsed = time.perf_counter() - t0
    worst = max(errors)
    ok = worst < 1e-4 and elapsed < 60.0
    verdict(1, "gradient-checks", ok,
            f"{len(errors)} trials, worst rel err {worst:.2e} (limit 1e-4), "
            f"{elapsed:.1f}s (limit 60s)")


# ---------------------------------------------------------------------------
# 2. exact oracle dominates every shipped method, instance by instance


def test_gate_2_exact_oracle_dominates():
    # note: the learned policy may split a delivery across visits, which can
    # genuinely undercut the single-visit exhaustive optimum on rare
    # instances (pinned in test_baselines); this seeded set stays inside the
    # single-visit plan class where the dominance claim is meaningful
    t0 = time.perf_counter()
    config = ExperimentConfig("gate-m5", 5, 2, (10, 12), test_set_size=50, seed=12)
    instances = [generate_instance(config, k) for k in range(50)]
    drl = DrlSolver(iterations=0, batch_size=2, eval_cadence=1, eval_size=2,
                    checkpoint_cadence=1, embed_dim=8, attn_dim=8, seed=3,
                    fixed_clock=True).fit(config)
    drl_plans = drl.predict(instances)
    violations = 0
    worst_slack = -math.inf
    for inst, drl_plan in zip(instances, drl_plans):
        optimal = brute_force_optimal(inst).total_length
        for length in (clarke_wright(inst).total_length,
                       sweep(inst).total_length,
                       drl_plan.total_length):
            slack = optimal - length  # oracle must not exceed any method
            worst_slack = max(worst_slack, slack)
            if slack > 1e-9:
                violations += 1
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 120.0
    verdict(2, "oracle-dominance", ok,
            f"50 instances x 3 methods, {violations} violations, "
            f"worst oracle slack {worst_slack:.2e} (limit 1e-9), "
            f"{elapsed:.1f}s (limit 120s)")


# ---------------------------------------------------------------------------
# 3. heuristic means on a fresh 1000-instance 10-customer set


def test_gate_3_heuristic_reference_means():
    t0 = time.perf_counter()
    config = ExperimentConfig("gate-ref10", 10, 3, (10, 15, 20),
                              test_set_size=1000, seed=20260814)
    instances = generate_test_set(config)
    sweep_mean = float(np.mean([sweep(i).total_length for i in instances]))
    cw_mean = float(np.mean([clarke_wright(i).total_length for i in instances]))
    elapsed = time.perf_counter() - t0
    sweep_ok = abs(sweep_mean - REFERENCE_SWEEP_MEAN) <= 0.1 * REFERENCE_SWEEP_MEAN
    cw_ok = abs(cw_mean - REFERENCE_CW_MEAN) <= 0.1 * REFERENCE_CW_MEAN
    ok = sweep_ok and cw_ok and elapsed < 60.0
    verdict(3, "heuristic-reference-means", ok,
            f"sweep {sweep_mean:.3f} vs {REFERENCE_SWEEP_MEAN} +/-10% "
            f"[{'ok' if sweep_ok else 'OUT'}], "
            f"cw {cw_mean:.3f} vs {REFERENCE_CW_MEAN} +/-10% "
            f"[{'ok' if cw_ok else 'OUT'}], {elapsed:.1f}s (limit 60s)")


# ---------------------------------------------------------------------------
# 4. training improves on random play (smoke + optional full budget)


def _train_and_compare(tmp_path, iterations):
    config = TrainConfig(iterations=iterations, batch_size=64, eval_cadence=100,
                         eval_size=100, checkpoint_cadence=max(iterations, 1),
                         embed_dim=64, attn_dim=64, seed=0)
    result = train(config, BENCH_10, tmp_path, fixed_clock=True)
    instances = generate_test_set(BENCH_10)
    greedy_mean = greedy_mean_cost(result.policy, instances)
    random_mean = float(np.mean(
        [random_policy(inst, seed=k).total_length
         for k, inst in enumerate(instances)]))
    return greedy_mean, random_mean, instances


def test_gate_4_training_improves_on_random_smoke(tmp_path):
    t0 = time.perf_counter()
    greedy_mean, random_mean, _ = _train_and_compare(tmp_path, iterations=500)
    elapsed = time.perf_counter() - t0
    below = (1.0 - greedy_mean / random_mean) * 100.0
    ok = greedy_mean <= 0.90 * random_mean and elapsed < 600.0
    verdict(4, "training-smoke", ok,
            f"500 iterations: greedy {greedy_mean:.3f} vs random "
            f"{random_mean:.3f} ({below:.1f}% below, needs >=10%), "
            f"{elapsed:.0f}s (limit 600s)")


@pytest.mark.full_train
@pytest.mark.skipif(os.environ.get("FLEETLAB_FULL_TRAIN") != "1",
                    reason="set FLEETLAB_FULL_TRAIN=1 to run the full budget")
def test_gate_4_training_full_budget(tmp_path):
    t0 = time.perf_counter()
    greedy_mean, random_mean, instances = _train_and_compare(tmp_path,
                                                             iterations=5000)
    cw_mean = float(np.mean([clarke_wright(i).total_length for i in instances]))
    elapsed = time.perf_counter() - t0
    below = (1.0 - greedy_mean / random_mean) * 100.0
    ok = greedy_mean <= 0.75 * random_mean and greedy_mean <= cw_mean
    verdict(4, "training-full-budget", ok,
            f"5000 iterations: greedy {greedy_mean:.3f} vs random "
            f"{random_mean:.3f} ({below:.1f}% below, needs >=25%) and vs "
            f"cw {cw_mean:.3f} (needs <=), {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 5. feasibility invariants across random and greedy rollouts


class _InvariantCounters:
    def __init__(self):
        self.episodes = 0
        self.steps = 0
        self.mask_violations = 0
        self.worst_length_err = 0.0


def _checked_step(state, action, counters):
    """Apply one action, asserting every state invariant along the way."""
    inst = state.instance
    j = state.acting_agent - 1
    mask = feasible_actions(state).feasible
    if not mask[action]:
        counters.mask_violations += 1
    before_remaining = state.remaining.copy()
    before_load = int(state.loads[j])
    at_depot = int(state.positions[j]) == DEPOT
    new_state, leg = step(state, action)
    counters.steps += 1

    if action == DEPOT:
        delivered = 0
        if not at_depot:
            assert int(new_state.loads[j]) == int(inst.capacities[j])  # refill
    else:
        delivered = min(before_load, int(before_remaining[action - 1]))
    assert int(before_remaining.sum() - new_state.remaining.sum()) == delivered
    assert np.all(new_state.remaining >= 0)
    assert np.all(new_state.loads >= 0)
    assert np.all(new_state.loads <= inst.capacities)
    assert abs(new_state.accumulated_cost - state.accumulated_cost - leg) < 1e-12
    return new_state


def _finish_episode(state, counters):
    plan = finalize(state)
    recomputed = plan_length(plan, state.instance)
    err = abs(plan.total_length - recomputed)
    counters.worst_length_err = max(counters.worst_length_err, err)
    assert err <= 1e-9
    assert plan.total_length >= state.accumulated_cost - 1e-12
    counters.episodes += 1
    return plan


_RANDOM_ROLLOUT_CONFIGS = (
    ExperimentConfig("gate-r4", 4, 2, (10, 11), test_set_size=100, seed=21),
    ExperimentConfig("gate-r6", 6, 2, (10, 13), test_set_size=100, seed=22),
    ExperimentConfig("gate-r8", 8, 3, (10, 12, 15), test_set_size=100, seed=23),
    ExperimentConfig("gate-r10", 10, 3, (10, 15, 20), test_set_size=100, seed=24),
)


def test_gate_5_rollout_feasibility_invariants():
    t0 = time.perf_counter()
    counters = _InvariantCounters()

    # the environment refuses masked actions outright
    probe = reset(generate_instance(_RANDOM_ROLLOUT_CONFIGS[0], 0))
    blocked = int(np.flatnonzero(~feasible_actions(probe).feasible)[0])
    with pytest.raises(ContractViolation):
        step(probe, blocked)

    # 10^4 random episodes across four instance shapes
    rng = np.random.default_rng(77)
    for config in _RANDOM_ROLLOUT_CONFIGS:
        instances = [generate_instance(config, k) for k in range(100)]
        for repeat in range(25):
            for inst in instances:
                state = reset(inst)
                while not is_terminal(state):
                    options = np.flatnonzero(feasible_actions(state).feasible)
                    action = int(options[rng.integers(len(options))])
                    state = _checked_step(state, action, counters)
                _finish_episode(state, counters)
    random_episodes = counters.episodes

    # 10^3 greedy episodes, replayed step by step with the same checks
    policy = init_policy(3, 8, 8, seed=42)
    instances = generate_test_set(BENCH_10)
    trajectories = rollout_batch(instances, policy, "greedy")
    for inst, traj in zip(instances, trajectories):
        state = reset(inst)
        for recorded in traj.steps:
            assert recorded.agent == state.acting_agent
            assert np.array_equal(recorded.mask,
                                  feasible_actions(state).feasible)
            state = _checked_step(state, recorded.action, counters)
        plan = _finish_episode(state, counters)
        assert abs(plan.total_length - traj.plan.total_length) <= 1e-9
        assert abs(traj.cost - plan.total_length) <= 1e-9

    elapsed = time.perf_counter() - t0
    ok = (counters.mask_violations == 0
          and random_episodes == 10_000
          and counters.episodes == 11_000)
    verdict(5, "feasibility-invariants", ok,
            f"{random_episodes} random + {counters.episodes - random_episodes} "
            f"greedy episodes, {counters.steps} steps, "
            f"{counters.mask_violations} mask violations, worst length err "
            f"{counters.worst_length_err:.1e} (limit 1e-9), {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 6. bitwise determinism of the train and eval commands


GATE_EXPERIMENT_CFG = """\
name = gate-det
num_customers = 4
num_vehicles = 2
capacities = 10,12
test_set_size = 6
seed = 3
"""

GATE_TRAIN_CFG = """\
iterations = 3
batch_size = 4
eval_cadence = 2
eval_size = 4
checkpoint_cadence = 3
embed_dim = 8
attn_dim = 8
seed = 4
"""


def test_gate_6_bitwise_determinism(tmp_path):
    t0 = time.perf_counter()
    exp = tmp_path / "experiment.cfg"
    trn = tmp_path / "train.cfg"
    exp.write_text(GATE_EXPERIMENT_CFG)
    trn.write_text(GATE_TRAIN_CFG)
    assert run_cli("--out-dir", tmp_path / "sets", "generate", exp) == 0
    set_dir = tmp_path / "sets" / "gate-det"

    train_artifacts = []
    for name in ("train-a", "train-b"):
        out = tmp_path / name
        assert run_cli("--out-dir", out, "--fixed-clock", "--seed", 7,
                       "train", trn, exp) == 0
        train_artifacts.append(((out / "training_log.txt").read_bytes(),
                                (out / "checkpoint.json").read_bytes()))
    trains_match = train_artifacts[0] == train_artifacts[1]

    checkpoint = tmp_path / "train-a" / "checkpoint.json"
    csvs = {}
    for name, jobs in (("eval-a", 1), ("eval-b", 1), ("eval-par", 2)):
        out = tmp_path / name
        assert run_cli("--out-dir", out, "--fixed-clock", "--jobs", jobs,
                       "eval", set_dir, "--methods", "cw,sweep,random,exact,drl",
                       "--checkpoint", checkpoint) == 0
        csvs[name] = (out / "results.csv").read_bytes()
    serial_match = csvs["eval-a"] == csvs["eval-b"]
    parallel_match = csvs["eval-a"] == csvs["eval-par"]

    elapsed = time.perf_counter() - t0
    ok = trains_match and serial_match and parallel_match
    verdict(6, "bitwise-determinism", ok,
            f"train log+checkpoint identical: {trains_match}, serial eval CSV "
            f"identical: {serial_match}, parallel CSV matches serial: "
            f"{parallel_match}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 7. analytic instances with known exact optima


def test_gate_7_analytic_instances_exact(tmp_path):
    # one customer at distance exactly 1: every method is forced out-and-back
    single = ProblemInstance(instance_id="gate-single", depot=(0.0, 0.0),
                             coords=((0.6, 0.8),), demands=(7,), capacities=(12,))
    single_config = ExperimentConfig("gate-one", 1, 1, (12,), test_set_size=2)
    drl = DrlSolver(iterations=0, batch_size=2, eval_cadence=1, eval_size=2,
                    checkpoint_cadence=1, embed_dim=8, attn_dim=8, seed=9,
                    out_dir=tmp_path, fixed_clock=True).fit(single_config)
    single_lengths = {
        "cw": clarke_wright(single).total_length,
        "sweep": sweep(single).total_length,
        "exact": brute_force_optimal(single).total_length,
        "random": random_policy(single, seed=5).total_length,
        "drl": drl.predict([single])[0].total_length,
    }
    single_errs = {m: abs(v - 2.0) for m, v in single_lengths.items()}

    # two unit-distance customers, demands 9+9 vs capacity 10: the refill
    # forces two out-and-back tours for every single-visit-per-customer method
    pair = ProblemInstance(instance_id="gate-pair", depot=(0.0, 0.0),
                           coords=((1.0, 0.0), (0.0, 1.0)), demands=(9, 9),
                           capacities=(10,))
    pair_lengths = {
        "cw": clarke_wright(pair).total_length,
        "sweep": sweep(pair).total_length,
        "exact": brute_force_optimal(pair).total_length,
    }
    pair_errs = {m: abs(v - 4.0) for m, v in pair_lengths.items()}

    worst = max(max(single_errs.values()), max(pair_errs.values()))
    ok = worst <= 1e-9
    verdict(7, "analytic-optima", ok,
            f"single-customer 2.0: {sorted(single_lengths.items())}, "
            f"two-tour 4.0: {sorted(pair_lengths.items())}, "
            f"worst err {worst:.1e} (limit 1e-9)")
