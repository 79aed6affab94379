"""Problem data model, random instance distribution, and (de)serialization.

Nodes are indexed with the depot as node 0 and customers as nodes 1..M, so
downstream feasibility masks are plain arrays over M+1 nodes.  All demands
and vehicle loads are integers; distances are the only real-valued quantity
in the problem.

Randomness uses the counter-based Philox generator with per-instance streams
spawned from ``SeedSequence(seed, spawn_key=(stream_index,))``, so instance k
of a test set is reproducible in isolation and independent of generation
order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .docio import fmt17, fmt_point
from .validation import ParseError, ValidationError, require

MIN_DEMAND = 1
MAX_DEMAND = 9

# Stream index must fit a uint32 spawn key.
_MAX_STREAM = 2**32 - 1


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment row: instance size, fleet, and test-set bookkeeping."""

    name: str
    num_customers: int
    num_vehicles: int
    capacities: tuple[int, ...]
    test_set_size: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "capacities", tuple(int(c) for c in self.capacities))
        self.validate()

    def validate(self) -> None:
        require(self.num_customers >= 1, "num_customers must be >= 1")
        require(self.num_vehicles >= 1, "num_vehicles must be >= 1")
        require(
            len(self.capacities) == self.num_vehicles,
            f"capacities has length {len(self.capacities)}, expected {self.num_vehicles}",
        )
        for j, c in enumerate(self.capacities):
            # capacity > MAX_DEMAND guarantees every demand fits in one load
            require(
                c > MAX_DEMAND,
                f"capacity {c} of vehicle {j} must exceed the maximum demand {MAX_DEMAND}",
            )
        require(self.test_set_size >= 1, "test_set_size must be >= 1")

    def to_mapping(self) -> dict:
        return {
            "name": self.name,
            "num_customers": self.num_customers,
            "num_vehicles": self.num_vehicles,
            "capacities": list(self.capacities),
            "test_set_size": self.test_set_size,
            "seed": self.seed,
        }

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = {"name", "num_customers", "num_vehicles", "capacities", "test_set_size", "seed"}
        for key in data:
            if key not in known:
                raise ParseError("unknown experiment config key", field=key)
        try:
            caps = data["capacities"]
            if isinstance(caps, (int, float)):
                caps = [caps]
            return cls(
                name=str(data["name"]),
                num_customers=int(data["num_customers"]),
                num_vehicles=int(data["num_vehicles"]),
                capacities=tuple(int(c) for c in caps),
                test_set_size=int(data.get("test_set_size", 1000)),
                seed=int(data.get("seed", 0)),
            )
        except KeyError as exc:
            raise ParseError("missing experiment config key", field=str(exc.args[0])) from exc


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """A routing instance: depot, customer coordinates/demands, fleet capacities.

    Vehicles always start at the depot, so their initial positions are not
    stored.  Arrays are treated as immutable once constructed.
    """

    instance_id: str
    depot: np.ndarray       # (2,) float64
    coords: np.ndarray      # (M, 2) float64
    demands: np.ndarray     # (M,) int64
    capacities: np.ndarray  # (N,) int64

    def __post_init__(self):
        object.__setattr__(self, "depot", np.asarray(self.depot, dtype=np.float64))
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=np.float64))
        object.__setattr__(self, "demands", np.asarray(self.demands, dtype=np.int64))
        object.__setattr__(self, "capacities", np.asarray(self.capacities, dtype=np.int64))
        self.validate()

    @property
    def num_customers(self) -> int:
        return self.coords.shape[0]

    @property
    def num_vehicles(self) -> int:
        return self.capacities.shape[0]

    def validate(self) -> None:
        require(self.depot.shape == (2,), "depot must be a 2-D point")
        require(self.coords.ndim == 2 and self.coords.shape[1] == 2, "coords must be (M, 2)")
        m = self.coords.shape[0]
        require(m >= 1, "at least one customer is required")
        require(self.demands.shape == (m,), "demands must align with coords")
        require(self.capacities.ndim == 1 and self.capacities.shape[0] >= 1,
                "at least one vehicle is required")
        pts = np.vstack([self.depot[None, :], self.coords])
        require(bool(np.all((pts >= 0.0) & (pts <= 1.0))),
                "all coordinates must lie in the unit square")
        require(bool(np.all((self.demands >= MIN_DEMAND) & (self.demands <= MAX_DEMAND))),
                f"demands must lie in {MIN_DEMAND}..{MAX_DEMAND}")
        require(bool(np.all(self.demands.max() < self.capacities.min())),
                "every demand must be strictly smaller than every capacity")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProblemInstance):
            return NotImplemented
        return (
            self.instance_id == other.instance_id
            and np.array_equal(self.depot, other.depot)
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.demands, other.demands)
            and np.array_equal(self.capacities, other.capacities)
        )


def all_coords(instance: ProblemInstance) -> np.ndarray:
    """Coordinates of all M+1 nodes, row 0 being the depot."""
    return np.vstack([instance.depot[None, :], instance.coords])


def check_instance(x) -> ProblemInstance:
    """Validate an object as a ProblemInstance (solver input checking)."""
    if not isinstance(x, ProblemInstance):
        raise ValidationError(f"expected a ProblemInstance, got {type(x).__name__}")
    x.validate()
    return x


def _stream_rng(seed: int, stream_index: int) -> np.random.Generator:
    require(0 <= stream_index <= _MAX_STREAM, "stream_index out of range")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_index,))
    return np.random.Generator(np.random.Philox(ss))


def generate_instance(config: ExperimentConfig, stream_index: int) -> ProblemInstance:
    """Draw one instance: coordinates uniform on [0,1]^2, demands uniform on 1..9.

    Fully determined by ``(config.seed, stream_index)``.
    """
    config.validate()
    rng = _stream_rng(config.seed, stream_index)
    depot = rng.uniform(size=2)
    coords = rng.uniform(size=(config.num_customers, 2))
    demands = rng.integers(MIN_DEMAND, MAX_DEMAND + 1, size=config.num_customers)
    return ProblemInstance(
        instance_id=f"{config.name}-s{config.seed}-{stream_index:06d}",
        depot=depot,
        coords=coords,
        demands=demands,
        capacities=np.asarray(config.capacities, dtype=np.int64),
    )


def generate_test_set(config: ExperimentConfig) -> list[ProblemInstance]:
    """The held-out evaluation set: streams ``0 .. test_set_size-1``."""
    return [generate_instance(config, i) for i in range(config.test_set_size)]


def total_demand(instance: ProblemInstance) -> int:
    return int(instance.demands.sum())


def write_instance(instance: ProblemInstance) -> str:
    """Render the canonical instance document (JSON, fixed field order)."""
    lines = [
        "{",
        f'  "instance_id": {json.dumps(instance.instance_id)},',
        f'  "depot": {fmt_point(instance.depot)},',
        '  "customers": [',
    ]
    m = instance.num_customers
    for i in range(m):
        sep = "," if i < m - 1 else ""
        lines.append(
            f'    {{"coord": {fmt_point(instance.coords[i])}, '
            f'"demand": {int(instance.demands[i])}}}{sep}'
        )
    lines.append("  ],")
    lines.append('  "vehicles": [')
    n = instance.num_vehicles
    for j in range(n):
        sep = "," if j < n - 1 else ""
        lines.append(f'    {{"capacity": {int(instance.capacities[j])}}}{sep}')
    lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _parse_point(value, field: str) -> np.ndarray:
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise ParseError("must be a [x, y] pair of numbers", field=field)
    pt = np.asarray(value, dtype=np.float64)
    if not np.all((pt >= 0.0) & (pt <= 1.0)):
        raise ParseError("coordinates must lie in [0, 1]", field=field)
    return pt


def _parse_int(value, field: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError("must be an integer", field=field)
    return value


def read_instance(text: str) -> ProblemInstance:
    """Parse and validate an instance document; inverse of write_instance."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("document root must be an object")
    expected = ["instance_id", "depot", "customers", "vehicles"]
    for key in expected:
        if key not in data:
            raise ParseError("missing field", field=key)
    for key in data:
        if key not in expected:
            raise ParseError("unexpected field", field=key)
    if not isinstance(data["instance_id"], str):
        raise ParseError("must be a string", field="instance_id")
    depot = _parse_point(data["depot"], "depot")
    customers = data["customers"]
    if not isinstance(customers, list) or not customers:
        raise ParseError("must be a non-empty list", field="customers")
    coords = np.empty((len(customers), 2))
    demands = np.empty(len(customers), dtype=np.int64)
    for i, cust in enumerate(customers):
        fld = f"customers[{i}]"
        if not isinstance(cust, dict) or set(cust) != {"coord", "demand"}:
            raise ParseError("must have exactly coord and demand", field=fld)
        coords[i] = _parse_point(cust["coord"], f"{fld}.coord")
        d = _parse_int(cust["demand"], f"{fld}.demand")
        if not MIN_DEMAND <= d <= MAX_DEMAND:
            raise ParseError(f"demand must lie in {MIN_DEMAND}..{MAX_DEMAND}",
                             field=f"{fld}.demand")
        demands[i] = d
    vehicles = data["vehicles"]
    if not isinstance(vehicles, list) or not vehicles:
        raise ParseError("must be a non-empty list", field="vehicles")
    capacities = np.empty(len(vehicles), dtype=np.int64)
    for j, veh in enumerate(vehicles):
        fld = f"vehicles[{j}]"
        if not isinstance(veh, dict) or set(veh) != {"capacity"}:
            raise ParseError("must have exactly capacity", field=fld)
        capacities[j] = _parse_int(veh["capacity"], f"{fld}.capacity")
    if demands.max() >= capacities.min():
        raise ParseError("every demand must be strictly smaller than every capacity",
                         field="vehicles")
    try:
        return ProblemInstance(
            instance_id=data["instance_id"],
            depot=depot,
            coords=coords,
            demands=demands,
            capacities=capacities,
        )
    except ValidationError as exc:
        raise ParseError(str(exc)) from exc
