"""Round-robin multi-vehicle routing environment.

Vehicles take single actions in a fixed cyclic order (vehicle 1, 2, ..., N,
then back to 1); one full cycle is a *round*.  An action is a node index:
moving to a customer delivers ``min(load, remaining demand)`` there (split
deliveries are allowed), moving to the depot refills the vehicle.  The cost
of an action is the Euclidean length of the move.

Feasibility rules for the acting vehicle:
  * a customer is infeasible once its demand is zero,
  * all customers are infeasible while the vehicle's load is zero,
  * the vehicle's current node is infeasible (no zero-cost self-loops),
    except that a vehicle at the depot may idle there once every demand is
    met, which makes the all-served state absorbing,
  * away from the depot, returning to the depot is always feasible.

Episodes end when every demand is met and every vehicle is home, or after
``round_cap`` rounds (default 2M), in which case the extracted plan is
flagged infeasible and carries the residual demand.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .docio import fmt17, fmt_point
from .instances import ProblemInstance, read_instance, write_instance
from .validation import ContractViolation, ParseError

DEPOT = 0


def default_round_cap(instance: ProblemInstance) -> int:
    # one vehicle alone needs at most M customer visits plus M refills
    return 2 * instance.num_customers


@dataclass(frozen=True)
class ActionMask:
    feasible: np.ndarray  # (M+1,) bool, index 0 = depot


@dataclass(frozen=True, eq=False)
class EnvState:
    instance: ProblemInstance
    remaining: np.ndarray   # (M,) int64, demand still to deliver
    loads: np.ndarray       # (N,) int64
    positions: np.ndarray   # (N,) int64 node indices
    acting_agent: int       # 1-based vehicle index
    round: int
    visit_log: tuple        # per vehicle: list of (node, delivered)
    accumulated_cost: float
    round_cap: int

    @property
    def total_remaining(self) -> int:
        return int(self.remaining.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, EnvState):
            return NotImplemented
        return (
            self.instance == other.instance
            and np.array_equal(self.remaining, other.remaining)
            and np.array_equal(self.loads, other.loads)
            and np.array_equal(self.positions, other.positions)
            and self.acting_agent == other.acting_agent
            and self.round == other.round
            and self.visit_log == other.visit_log
            and self.accumulated_cost == other.accumulated_cost
            and self.round_cap == other.round_cap
        )


def node_coord(instance: ProblemInstance, node: int) -> np.ndarray:
    return instance.depot if node == DEPOT else instance.coords[node - 1]


def reset(instance: ProblemInstance, round_cap: int | None = None) -> EnvState:
    """Initial state: full loads, everyone at the depot, vehicle 1 to act."""
    n = instance.num_vehicles
    return EnvState(
        instance=instance,
        remaining=instance.demands.copy(),
        loads=instance.capacities.copy(),
        positions=np.zeros(n, dtype=np.int64),
        acting_agent=1,
        round=0,
        visit_log=tuple([] for _ in range(n)),
        accumulated_cost=0.0,
        round_cap=default_round_cap(instance) if round_cap is None else int(round_cap),
    )


def feasible_actions(state: EnvState) -> ActionMask:
    j = state.acting_agent - 1
    m = state.instance.num_customers
    feasible = np.zeros(m + 1, dtype=bool)
    if state.loads[j] > 0:
        feasible[1:] = state.remaining > 0
    pos = int(state.positions[j])
    feasible[pos] = False
    if pos == DEPOT:
        feasible[DEPOT] = state.total_remaining == 0
    else:
        feasible[DEPOT] = True
    return ActionMask(feasible=feasible)


def step(state: EnvState, action: int) -> tuple[EnvState, float]:
    """Apply one action for the acting vehicle; returns (new state, leg length)."""
    action = int(action)
    if not feasible_actions(state).feasible[action]:
        raise ContractViolation(
            f"action {action} is infeasible for vehicle {state.acting_agent} "
            f"at node {int(state.positions[state.acting_agent - 1])}"
        )
    inst = state.instance
    j = state.acting_agent - 1
    src = node_coord(inst, int(state.positions[j]))
    dst = node_coord(inst, action)
    cost_inc = math.hypot(dst[0] - src[0], dst[1] - src[1])

    remaining = state.remaining
    loads = state.loads.copy()
    visit_log = state.visit_log
    if action == DEPOT:
        if int(state.positions[j]) != DEPOT:
            loads[j] = inst.capacities[j]
            visit_log = _append_visit(visit_log, j, (DEPOT, 0))
        # idling at the depot (terminal only) changes nothing
    else:
        delivered = int(min(loads[j], remaining[action - 1]))
        remaining = remaining.copy()
        remaining[action - 1] -= delivered
        loads[j] -= delivered
        visit_log = _append_visit(visit_log, j, (action, delivered))

    positions = state.positions.copy()
    positions[j] = action
    last_in_round = state.acting_agent == inst.num_vehicles
    new_state = replace(
        state,
        remaining=remaining,
        loads=loads,
        positions=positions,
        acting_agent=1 if last_in_round else state.acting_agent + 1,
        round=state.round + 1 if last_in_round else state.round,
        visit_log=visit_log,
        accumulated_cost=state.accumulated_cost + cost_inc,
    )
    return new_state, cost_inc


def _append_visit(visit_log: tuple, j: int, entry: tuple[int, int]) -> tuple:
    # copy-on-write: only the acting vehicle's list is copied
    logs = list(visit_log)
    logs[j] = logs[j] + [entry]
    return tuple(logs)


def is_terminal(state: EnvState) -> bool:
    if state.round >= state.round_cap:
        return True
    return state.total_remaining == 0 and bool(np.all(state.positions == DEPOT))


def state_fingerprint(state: EnvState) -> str:
    """Cheap deterministic digest of the dynamic state (for trajectory records)."""
    payload = (
        f"{state.remaining.tolist()}|{state.loads.tolist()}|{state.positions.tolist()}"
        f"|{state.acting_agent}|{state.round}"
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Route plans


@dataclass(frozen=True)
class Tour:
    """One depot-to-depot trip: node sequence plus per-customer-visit deliveries."""

    nodes: tuple[int, ...]        # starts and ends at the depot
    deliveries: tuple[int, ...]   # aligned with nodes[1:-1]


@dataclass(frozen=True)
class RoutePlan:
    instance_id: str
    vehicle_tours: tuple[tuple[Tour, ...], ...]  # one tuple of tours per vehicle
    total_length: float
    feasible: bool
    residual_demand: int = 0
    slot_overflow: bool = False


def finalize(state: EnvState) -> RoutePlan:
    """Extract per-vehicle tours from the visit log of a terminal state.

    Vehicles stranded away from the depot (round-cap truncation) get a final
    return leg appended; unserved demand marks the plan infeasible.
    """
    if not is_terminal(state):
        raise ContractViolation("finalize requires a terminal state")
    inst = state.instance
    total = state.accumulated_cost
    vehicle_tours = []
    for j in range(inst.num_vehicles):
        tours = []
        nodes = [DEPOT]
        deliveries = []
        for node, delivered in state.visit_log[j]:
            if node == DEPOT:
                nodes.append(DEPOT)
                tours.append(Tour(tuple(nodes), tuple(deliveries)))
                nodes = [DEPOT]
                deliveries = []
            else:
                nodes.append(node)
                deliveries.append(delivered)
        if len(nodes) > 1:  # stranded mid-tour: close it with a return leg
            pos = node_coord(inst, nodes[-1])
            total += math.hypot(pos[0] - inst.depot[0], pos[1] - inst.depot[1])
            nodes.append(DEPOT)
            tours.append(Tour(tuple(nodes), tuple(deliveries)))
        vehicle_tours.append(tuple(tours))
    residual = state.total_remaining
    return RoutePlan(
        instance_id=inst.instance_id,
        vehicle_tours=tuple(vehicle_tours),
        total_length=total,
        feasible=residual == 0,
        residual_demand=residual,
    )


def episode_cost(plan: RoutePlan) -> float:
    return plan.total_length


def plan_length(plan: RoutePlan, instance: ProblemInstance) -> float:
    """Recompute total length from the tours (consistency checks)."""
    total = 0.0
    for tours in plan.vehicle_tours:
        for tour in tours:
            pts = [node_coord(instance, n) for n in tour.nodes]
            for a, b in zip(pts[:-1], pts[1:]):
                total += math.hypot(b[0] - a[0], b[1] - a[1])
    return total


def make_plan(instance: ProblemInstance, vehicle_tours, *, slot_overflow: bool = False,
              feasible: bool = True, residual_demand: int = 0) -> RoutePlan:
    """Build a RoutePlan from raw per-vehicle tour lists, computing its length."""
    vt = tuple(
        tuple(
            t if isinstance(t, Tour) else Tour(tuple(t[0]), tuple(t[1]))
            for t in tours
        )
        for tours in vehicle_tours
    )
    plan = RoutePlan(
        instance_id=instance.instance_id,
        vehicle_tours=vt,
        total_length=0.0,
        feasible=feasible,
        residual_demand=residual_demand,
        slot_overflow=slot_overflow,
    )
    return replace(plan, total_length=plan_length(plan, instance))


# ---------------------------------------------------------------------------
# Plan documents (self-contained: the instance is embedded for rendering)


def write_plan(plan: RoutePlan, instance: ProblemInstance) -> str:
    tours_doc = []
    for j, tours in enumerate(plan.vehicle_tours):
        tlist = ",\n".join(
            f'      {{"nodes": {list(t.nodes)}, "deliveries": {list(t.deliveries)}}}'
            for t in tours
        )
        body = f"[\n{tlist}\n    ]" if tours else "[]"
        tours_doc.append(f'    {{"vehicle": {j}, "tours": {body}}}')
    instance_doc = "\n".join("  " + line for line in write_instance(instance).strip().splitlines())
    return (
        "{\n"
        f'  "instance_id": {json.dumps(plan.instance_id)},\n'
        f'  "total_length": {fmt17(plan.total_length)},\n'
        f'  "feasible": {json.dumps(plan.feasible)},\n'
        f'  "residual_demand": {plan.residual_demand},\n'
        f'  "slot_overflow": {json.dumps(plan.slot_overflow)},\n'
        f'  "vehicles": [\n' + ",\n".join(tours_doc) + "\n  ],\n"
        f'  "instance":\n{instance_doc}\n'
        "}\n"
    )


def read_plan(text: str) -> tuple[RoutePlan, ProblemInstance]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    for key in ("instance_id", "total_length", "feasible", "residual_demand",
                "slot_overflow", "vehicles", "instance"):
        if key not in data:
            raise ParseError("missing field", field=key)
    instance = read_instance(json.dumps(data["instance"]))
    vehicle_tours = []
    for v in data["vehicles"]:
        if not isinstance(v, dict) or "tours" not in v:
            raise ParseError("vehicle entries need a tours list", field="vehicles")
        tours = []
        for t in v["tours"]:
            nodes = tuple(int(n) for n in t["nodes"])
            deliveries = tuple(int(d) for d in t["deliveries"])
            if len(nodes) < 2 or nodes[0] != DEPOT or nodes[-1] != DEPOT:
                raise ParseError("tours must start and end at the depot", field="vehicles")
            if len(deliveries) != len(nodes) - 2:
                raise ParseError("deliveries must align with interior nodes", field="vehicles")
            tours.append(Tour(nodes, deliveries))
        vehicle_tours.append(tuple(tours))
    plan = RoutePlan(
        instance_id=str(data["instance_id"]),
        vehicle_tours=tuple(vehicle_tours),
        total_length=float(data["total_length"]),
        feasible=bool(data["feasible"]),
        residual_demand=int(data["residual_demand"]),
        slot_overflow=bool(data["slot_overflow"]),
    )
    return plan, instance
