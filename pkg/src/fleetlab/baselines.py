"""Classical comparators: savings merge, sweep clustering, random play,
and an exhaustive exact search for tiny instances.

All baselines deliver each customer's full demand in a single visit and
respect per-tour capacity; the fleet is consumed as tour slots in
descending-capacity order, at most two tours per vehicle.  When the slots
run out, extra tours pile onto the largest vehicle and the plan is flagged
``slot_overflow``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .env import feasible_actions, finalize, is_terminal, make_plan, reset, step
from .instances import ProblemInstance, all_coords
from .validation import require

_EPS = 1e-12


def _dist_matrix(instance: ProblemInstance) -> np.ndarray:
    coords = all_coords(instance)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def _route_length(route, dist) -> float:
    """Closed-tour length depot -> route... -> depot."""
    total = dist[0, route[0]] + dist[route[-1], 0]
    for a, b in zip(route[:-1], route[1:]):
        total += dist[a, b]
    return float(total)


@dataclass(frozen=True)
class SavingsPair:
    i: int
    j: int
    value: float


def savings_pairs(instance: ProblemInstance, customers=None) -> list[SavingsPair]:
    """All pairwise savings s(i,j) = d(0,i) + d(0,j) - d(i,j), best first."""
    dist = _dist_matrix(instance)
    nodes = sorted(customers) if customers is not None else range(1, instance.num_customers + 1)
    pairs = [SavingsPair(i, j, float(dist[0, i] + dist[0, j] - dist[i, j]))
             for i, j in itertools.combinations(nodes, 2)]
    pairs.sort(key=lambda p: (-p.value, p.i, p.j))
    return pairs


def _parallel_savings(customers, demands, instance, capacity) -> list[list[int]]:
    """Classic parallel-merge savings run over a customer subset."""
    routes = {c: [c] for c in customers}
    loads = {c: int(demands[c - 1]) for c in customers}
    route_of = {c: c for c in customers}
    for pair in savings_pairs(instance, customers):
        ri, rj = route_of[pair.i], route_of[pair.j]
        if ri == rj or loads[ri] + loads[rj] > capacity:
            continue
        seq_i, seq_j = routes[ri], routes[rj]
        # merge only end-to-end so i and j become adjacent
        if seq_i[0] != pair.i and seq_i[-1] != pair.i:
            continue
        if seq_j[0] != pair.j and seq_j[-1] != pair.j:
            continue
        if seq_i[-1] != pair.i:
            seq_i.reverse()
        if seq_j[0] != pair.j:
            seq_j.reverse()
        routes[ri] = seq_i + seq_j
        loads[ri] += loads[rj]
        for c in seq_j:
            route_of[c] = ri
        del routes[rj], loads[rj]
    return sorted(routes.values(), key=lambda r: min(r))


def two_opt(tour, coords) -> list[int]:
    """First-improvement 2-opt on a closed tour; never increases length."""
    tour = [int(n) for n in tour]
    require(tour[0] == 0 and tour[-1] == 0, "tour must start and end at the depot")
    coords = np.asarray(coords, dtype=np.float64)

    def d(a, b):
        return math.hypot(coords[a, 0] - coords[b, 0], coords[a, 1] - coords[b, 1])

    improved = True
    while improved:
        improved = False
        for i in range(1, len(tour) - 2):
            for j in range(i + 1, len(tour) - 1):
                a, b = tour[i - 1], tour[i]
                c, e = tour[j], tour[j + 1]
                if d(a, c) + d(b, e) - d(a, b) - d(c, e) < -_EPS:
                    tour[i:j + 1] = reversed(tour[i:j + 1])
                    improved = True
                    break
            if improved:
                break
    return tour


def _slot_sequence(instance: ProblemInstance):
    """(vehicle, capacity) slots: capacity-descending, two tours per vehicle."""
    order = np.argsort(-instance.capacities, kind="stable")
    return [(int(v), int(instance.capacities[v])) for v in order for _ in range(2)]


class _SlotDispenser:
    """Hands out tour slots; overflows onto the largest vehicle when empty."""

    def __init__(self, instance: ProblemInstance):
        self._slots = iter(_slot_sequence(instance))
        self._largest = int(np.argmax(instance.capacities))
        self._largest_cap = int(instance.capacities[self._largest])
        self.overflowed = False

    def next_slot(self):
        slot = next(self._slots, None)
        if slot is None:
            self.overflowed = True
            return self._largest, self._largest_cap
        return slot


def _full_delivery_tour(route, demands, coords) -> tuple[tuple[int, ...], tuple[int, ...]]:
    seq = two_opt([0] + list(route) + [0], coords)
    return tuple(seq), tuple(int(demands[c - 1]) for c in seq[1:-1])


def clarke_wright(instance: ProblemInstance):
    """Savings heuristic with successive approximation over the fixed fleet.

    Each round reruns the parallel merge on the still-unserved customers
    bounded by the active slot's capacity, then commits the route with the
    largest total demand (ties: shorter, then lowest customer index).
    """
    dist = _dist_matrix(instance)
    coords = all_coords(instance)
    demands = instance.demands
    unserved = set(range(1, instance.num_customers + 1))
    dispenser = _SlotDispenser(instance)
    vehicle_tours = [[] for _ in range(instance.num_vehicles)]
    while unserved:
        vehicle, capacity = dispenser.next_slot()
        routes = _parallel_savings(sorted(unserved), demands, instance, capacity)
        chosen = min(routes, key=lambda r: (-sum(int(demands[c - 1]) for c in r),
                                            _route_length(r, dist), min(r)))
        vehicle_tours[vehicle].append(_full_delivery_tour(chosen, demands, coords))
        unserved -= set(chosen)
    return make_plan(instance, vehicle_tours, slot_overflow=dispenser.overflowed)


def polar_angle(point, depot) -> float:
    """Angle about the depot normalized to [0, 2*pi)."""
    return float(np.mod(math.atan2(point[1] - depot[1], point[0] - depot[0]), 2.0 * math.pi))


def sweep(instance: ProblemInstance):
    """Angular clustering: accumulate customers by polar angle until the
    active slot's capacity would overflow, then route each cluster by
    nearest-neighbor + 2-opt."""
    coords = all_coords(instance)
    demands = instance.demands
    angles = {c: polar_angle(instance.coords[c - 1], instance.depot)
              for c in range(1, instance.num_customers + 1)}
    radius = {c: math.hypot(*(instance.coords[c - 1] - instance.depot))
              for c in angles}
    order = sorted(angles, key=lambda c: (angles[c], radius[c], c))

    dispenser = _SlotDispenser(instance)
    vehicle_tours = [[] for _ in range(instance.num_vehicles)]
    vehicle, capacity = dispenser.next_slot()
    cluster, load = [], 0
    dist = _dist_matrix(instance)

    def close_cluster():
        route = _nearest_neighbor(cluster, dist)
        vehicle_tours[vehicle].append(_full_delivery_tour(route, demands, coords))

    for c in order:
        d = int(demands[c - 1])
        if cluster and load + d > capacity:
            close_cluster()
            vehicle, capacity = dispenser.next_slot()
            cluster, load = [], 0
        cluster.append(c)
        load += d
    if cluster:
        close_cluster()
    return make_plan(instance, vehicle_tours, slot_overflow=dispenser.overflowed)


def _nearest_neighbor(cluster, dist) -> list[int]:
    seq = [0]
    remaining = set(cluster)
    while remaining:
        cur = seq[-1]
        seq.append(min(remaining, key=lambda c: (dist[cur, c], c)))
        remaining.remove(seq[-1])
    return seq[1:]


def random_policy(instance: ProblemInstance, seed: int = 0):
    """Uniform choice among feasible actions until the episode ends."""
    rng = np.random.Generator(np.random.Philox(seed))
    state = reset(instance)
    while not is_terminal(state):
        choices = np.flatnonzero(feasible_actions(state).feasible)
        state, _ = step(state, int(rng.choice(choices)))
    return finalize(state)


MAX_EXACT_CUSTOMERS = 7
MAX_EXACT_VEHICLES = 3


def brute_force_optimal(instance: ProblemInstance):
    """Minimum-length plan by exhaustive slot assignment + optimal tours.

    Customers are assigned to (vehicle, tour) slots (two per vehicle) by
    depth-first search pruned with a running lower bound; each slot's subset
    is routed optimally via a Held-Karp table.
    """
    m, n = instance.num_customers, instance.num_vehicles
    require(m <= MAX_EXACT_CUSTOMERS and n <= MAX_EXACT_VEHICLES,
            f"exhaustive search is limited to {MAX_EXACT_CUSTOMERS} customers "
            f"and {MAX_EXACT_VEHICLES} vehicles")
    dist = _dist_matrix(instance)
    demands = instance.demands
    opt_len = _subset_tour_lengths(dist, m)

    slots = [(v, int(instance.capacities[v])) for v in range(n) for _ in range(2)]
    n_slots = len(slots)
    best_cost = math.inf
    best_masks: tuple[int, ...] | None = None
    masks = [0] * n_slots
    loads = [0] * n_slots

    def dfs(customer: int, bound: float):
        nonlocal best_cost, best_masks
        if bound >= best_cost:
            return
        if customer > m:
            best_cost, best_masks = bound, tuple(masks)
            return
        bit = 1 << (customer - 1)
        d = int(demands[customer - 1])
        for s, (_, capacity) in enumerate(slots):
            if loads[s] + d > capacity:
                continue
            if s % 2 == 1 and masks[s - 1] == 0:
                continue  # a vehicle's second slot mirrors its first
            old_mask = masks[s]
            delta = opt_len[old_mask | bit] - opt_len[old_mask]
            masks[s] = old_mask | bit
            loads[s] += d
            dfs(customer + 1, bound + delta)
            masks[s] = old_mask
            loads[s] -= d

    dfs(1, 0.0)
    require(best_masks is not None, "no feasible plan within two tours per vehicle")

    vehicle_tours = [[] for _ in range(n)]
    for s, mask in enumerate(best_masks):
        if mask == 0:
            continue
        order = _best_order([c + 1 for c in range(m) if mask >> c & 1], dist)
        vehicle_tours[slots[s][0]].append(
            (tuple([0] + order + [0]), tuple(int(demands[c - 1]) for c in order)))
    return make_plan(instance, vehicle_tours)


def _subset_tour_lengths(dist: np.ndarray, m: int) -> np.ndarray:
    """Held-Karp optimal closed-tour length for every customer bitmask."""
    full = 1 << m
    hk = np.full((full, m), np.inf)
    for c in range(m):
        hk[1 << c, c] = dist[0, c + 1]
    for mask in range(1, full):
        for last in range(m):
            base = hk[mask, last]
            if not np.isfinite(base):
                continue
            for nxt in range(m):
                if mask >> nxt & 1:
                    continue
                cand = base + dist[last + 1, nxt + 1]
                nm = mask | 1 << nxt
                if cand < hk[nm, nxt]:
                    hk[nm, nxt] = cand
    lengths = np.zeros(full)
    for mask in range(1, full):
        lengths[mask] = min(hk[mask, last] + dist[last + 1, 0]
                            for last in range(m) if mask >> last & 1)
    return lengths


def _best_order(customers, dist) -> list[int]:
    best, best_len = None, math.inf
    for perm in itertools.permutations(sorted(customers)):
        length = _route_length(perm, dist)
        if length < best_len - _EPS:
            best, best_len = list(perm), length
    return best
