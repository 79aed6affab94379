"""Solver estimators with a common fit/predict surface.

Baselines are stateless predictors; the neural solver trains in ``fit`` and
decodes greedily in ``predict``.  ``evaluate_method`` runs one solver over a
test set with per-instance wall-clock timing, optionally across processes.
"""

from __future__ import annotations

import hashlib
import multiprocessing
import tempfile
import time

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .baselines import brute_force_optimal, clarke_wright, random_policy, sweep
from .checkpoint import load_checkpoint
from .env import RoutePlan
from .instances import ExperimentConfig, check_instance
from .results import ResultRow
from .training import TrainConfig, _rollout, train
from .validation import require


class RoutingSolver(BaseEstimator):
    """Shared surface: fit is a no-op for the classical solvers."""

    method = "base"

    def fit(self, X, y=None):
        return self

    def solve_one(self, instance) -> RoutePlan:
        raise NotImplementedError

    def predict(self, X) -> list:
        return [self.solve_one(check_instance(inst)) for inst in X]


class ClarkeWrightSolver(RoutingSolver):
    method = "cw"

    def solve_one(self, instance):
        return clarke_wright(instance)


class SweepSolver(RoutingSolver):
    method = "sweep"

    def solve_one(self, instance):
        return sweep(instance)


class BruteForceSolver(RoutingSolver):
    method = "exact"

    def solve_one(self, instance):
        return brute_force_optimal(instance)


def _instance_seed(seed: int, instance_id: str) -> int:
    # independent of evaluation order, stable across processes
    digest = hashlib.sha256(f"{seed}:{instance_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class RandomSolver(RoutingSolver):
    method = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def solve_one(self, instance):
        return random_policy(instance, _instance_seed(self.seed, instance.instance_id))


class DrlSolver(RoutingSolver):
    """Attention actor-critic solver: A2C training, greedy decoding."""

    method = "drl"

    def __init__(self, iterations: int = 1000, batch_size: int = 128,
                 actor_lr: float = 3e-3, critic_lr: float = 1e-2,
                 penalty: float = 2.0, eval_cadence: int = 50,
                 eval_size: int = 100, checkpoint_cadence: int = 500,
                 embed_dim: int = 128, attn_dim: int = 128,
                 round_cap=None, seed: int = 0, out_dir=None,
                 fixed_clock: bool = False):
        self.iterations = iterations
        self.batch_size = batch_size
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.penalty = penalty
        self.eval_cadence = eval_cadence
        self.eval_size = eval_size
        self.checkpoint_cadence = checkpoint_cadence
        self.embed_dim = embed_dim
        self.attn_dim = attn_dim
        self.round_cap = round_cap
        self.seed = seed
        self.out_dir = out_dir
        self.fixed_clock = fixed_clock

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations, batch_size=self.batch_size,
            actor_lr=self.actor_lr, critic_lr=self.critic_lr,
            penalty=self.penalty, eval_cadence=self.eval_cadence,
            eval_size=self.eval_size, checkpoint_cadence=self.checkpoint_cadence,
            embed_dim=self.embed_dim, attn_dim=self.attn_dim,
            round_cap=self.round_cap, seed=self.seed)

    def fit(self, X, y=None):
        """X is the experiment configuration describing the training stream."""
        require(isinstance(X, ExperimentConfig),
                "DrlSolver.fit expects an ExperimentConfig")
        if self.out_dir is None:
            with tempfile.TemporaryDirectory() as out:
                result = train(self._train_config(), X, out,
                               fixed_clock=self.fixed_clock)
        else:
            result = train(self._train_config(), X, self.out_dir,
                           fixed_clock=self.fixed_clock)
        self.policy_ = result.policy
        self.train_result_ = result
        self.experiment_ = X
        return self

    @classmethod
    def from_checkpoint(cls, path) -> "DrlSolver":
        policy, adam_actors, adam_critic, doc = load_checkpoint(path)
        t = doc["train"]
        solver = cls(iterations=t["iterations"], batch_size=t["batch_size"],
                     actor_lr=t["actor_lr"], critic_lr=t["critic_lr"],
                     penalty=t["penalty"], eval_cadence=t["eval_cadence"],
                     eval_size=t["eval_size"],
                     checkpoint_cadence=t["checkpoint_cadence"],
                     embed_dim=t["embed_dim"], attn_dim=t["attn_dim"],
                     round_cap=t["round_cap"], seed=t["seed"])
        solver.policy_ = policy
        solver.experiment_ = ExperimentConfig.from_mapping(doc["experiment"])
        solver.checkpoint_doc_ = doc
        return solver

    def _require_fitted(self):
        if not hasattr(self, "policy_"):
            raise NotFittedError("DrlSolver must be fitted or loaded from a "
                                 "checkpoint before predicting")

    def predict(self, X) -> list:
        self._require_fitted()
        instances = [check_instance(inst) for inst in X]
        plans: list = [None] * len(instances)
        groups: dict[tuple, list] = {}
        for idx, inst in enumerate(instances):
            groups.setdefault((inst.num_customers, inst.num_vehicles), []).append(idx)
        for idxs in groups.values():
            rec = _rollout([instances[i] for i in idxs], self.policy_, "greedy",
                           round_cap=self.round_cap)
            for i, plan in zip(idxs, rec.plans):
                plans[i] = plan
        return plans

    def solve_one(self, instance):
        return self.predict([instance])[0]


SOLVERS = {
    "cw": ClarkeWrightSolver,
    "sweep": SweepSolver,
    "random": RandomSolver,
    "exact": BruteForceSolver,
    "drl": DrlSolver,
}


# ---------------------------------------------------------------------------
# timed evaluation harness

_WORKER_STATE = None


def _init_worker(solver, experiment_name, fixed_clock):
    global _WORKER_STATE
    _WORKER_STATE = (solver, experiment_name, fixed_clock)


def _solve_timed(instance):
    solver, experiment_name, fixed_clock = _WORKER_STATE
    t0 = time.perf_counter()
    plan = solver.solve_one(instance)
    wall_ms = 0.0 if fixed_clock else (time.perf_counter() - t0) * 1000.0
    row = ResultRow(experiment_name, solver.method, instance.instance_id,
                    plan.total_length, plan.feasible, wall_ms)
    return row, plan


def evaluate_method(solver, instances, experiment_name: str, *, jobs: int = 1,
                    fixed_clock: bool = False) -> tuple[list, list]:
    """Rows and plans for one solver over a test set, in instance order."""
    require(jobs >= 1, "jobs must be >= 1")
    require(len(instances) > 0, "empty test set")
    if jobs == 1:
        _init_worker(solver, experiment_name, fixed_clock)
        out = [_solve_timed(inst) for inst in instances]
    else:
        with multiprocessing.Pool(
                jobs, initializer=_init_worker,
                initargs=(solver, experiment_name, fixed_clock)) as pool:
            out = pool.map(_solve_timed, instances)
    return [row for row, _ in out], [plan for _, plan in out]
