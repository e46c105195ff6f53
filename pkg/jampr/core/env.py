"""Routing environment: construction state, feasibility masks, transitions and cost.

One `State` per instance. `step` mutates the state in place; use `State.clone()`
when a value copy is needed.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union
import copy
import logging
import math

import numpy as np
from pydantic import BaseModel, Field

from .config import EnvSettings, get_settings
from ..schemas.instance import Instance, VariantHint
from ..schemas.solution import CostBreakdown, Solution, TourMetrics, ValidationReport
from ..schemas.variant import Variant, VariantKind
from ..utils import debug_log
from ..utils.errors import (
    raise_contract_violation, raise_infeasible_solution, raise_infeasible_state, raise_usage
)

logger = logging.getLogger(__name__)

# Feasibility tolerance for capacity and time comparisons
EPS = 1e-9
# Padding value for unused active-set slots
SENTINEL = -1


@dataclass(frozen=True)
class ProblemArrays:
    """Dense numpy view of an instance under a variant's transit convention."""
    n: int
    coords: np.ndarray
    demand: np.ndarray
    tw_start: np.ndarray
    tw_end: np.ndarray
    service: np.ndarray
    dist: np.ndarray
    transit: np.ndarray
    horizon: float
    start_time: float
    coord_scale: float

    @classmethod
    def build(cls, inst: Instance, variant: Variant) -> "ProblemArrays":
        coords = np.array([[node.x, node.y] for node in inst.nodes], dtype=np.float64)
        demand = np.array([node.demand for node in inst.nodes], dtype=np.float64) / inst.capacity
        tw_start = np.array([node.tw_start for node in inst.nodes], dtype=np.float64)
        tw_end = np.array([node.tw_end for node in inst.nodes], dtype=np.float64)
        service = np.array([node.service for node in inst.nodes], dtype=np.float64)
        dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
        # departure pays the service time of the node it leaves
        transit = dist + service[:, None] if variant.kind.has_windows else dist.copy()
        np.fill_diagonal(transit, 0.0)
        for array in (coords, demand, tw_start, tw_end, service, dist, transit):
            array.setflags(write=False)
        return cls(
            n=inst.n_customers,
            coords=coords,
            demand=demand,
            tw_start=tw_start,
            tw_end=tw_end,
            service=service,
            dist=dist,
            transit=transit,
            horizon=float(tw_end[0]),
            start_time=float(tw_start[0]),
            coord_scale=100.0 if inst.variant_hint == VariantHint.CVRPTW else 1.0
        )

    def node_features(self, kind: VariantKind) -> np.ndarray:
        """Normalized encoder input: (x, y, q~, a, b) with windows, (x, y, q~) without."""
        xy = self.coords / self.coord_scale
        if not kind.has_windows:
            return np.concatenate([xy, self.demand[:, None]], axis=1)
        return np.concatenate([
            xy,
            self.demand[:, None],
            self.tw_start[:, None] / self.horizon,
            self.tw_end[:, None] / self.horizon
        ], axis=1)


class EnvConfig(BaseModel):
    """Fleet and construction parameters of one episode."""
    m_con: int = Field(ge=1)
    m_pre: int = Field(ge=0)
    n_vehicles: int = Field(ge=1)
    cost_includes_wait: bool = True

    model_config = {"frozen": True}

    @classmethod
    def default(
        cls,
        kind: VariantKind,
        n: int,
        env: Optional[EnvSettings] = None,
        m_con: Optional[int] = None,
        m_pre: Optional[int] = None
    ) -> "EnvConfig":
        env = env or get_settings().env
        kind = VariantKind(kind)
        if m_con is None:
            if kind == VariantKind.CVRP:
                m_con = env.m_con_cvrp_small if n <= 20 else env.m_con_cvrp_large
            else:
                m_con = {
                    VariantKind.TW1: env.m_con_tw1,
                    VariantKind.TW2: env.m_con_tw2,
                    VariantKind.TW3: env.m_con_tw3,
                }[kind]
        if m_pre is None:
            m_pre = env.m_pre_cvrp if kind == VariantKind.CVRP else env.m_pre_tw
        if m_con < 1:
            raise_usage("m_con must be at least 1", details={"m_con": m_con})
        return cls(m_con=m_con, m_pre=m_pre, n_vehicles=max(n, 1), cost_includes_wait=env.cost_includes_wait)


@dataclass
class VehicleState:
    index: int
    position: int = 0
    time: float = 0.0
    load: float = 0.0
    active: bool = False
    used: bool = False
    tour: List[int] = field(default_factory=list)


@dataclass
class StepEvents:
    """What happened during one transition."""
    vehicle: int
    node: int
    arrival: float
    start: float
    early: float = 0.0
    late: float = 0.0
    premature: bool = False
    activated: Optional[int] = None
    finished: bool = False
    cost: float = 0.0


@dataclass
class State:
    arrays: ProblemArrays
    variant: Variant
    config: EnvConfig
    vehicles: List[VehicleState]
    tour_plan: np.ndarray
    active_set: List[int]
    visited: np.ndarray
    premature_budget: int
    step: int = 0
    next_vehicle: int = 0
    n_unvisited: int = 0
    finished: bool = False
    cost: float = 0.0
    late_arrivals: int = 0

    @property
    def m_con(self) -> int:
        return self.config.m_con

    @property
    def n_nodes(self) -> int:
        return self.arrays.n + 1

    def clone(self) -> "State":
        # arrays are read-only and shared between clones
        return State(
            arrays=self.arrays,
            variant=self.variant,
            config=self.config,
            vehicles=[copy.deepcopy(v) for v in self.vehicles],
            tour_plan=self.tour_plan.copy(),
            active_set=list(self.active_set),
            visited=self.visited.copy(),
            premature_budget=self.premature_budget,
            step=self.step,
            next_vehicle=self.next_vehicle,
            n_unvisited=self.n_unvisited,
            finished=self.finished,
            cost=self.cost,
            late_arrivals=self.late_arrivals
        )


ArraysLike = Union[Instance, ProblemArrays]


def _as_arrays(inst: ArraysLike, variant: Variant) -> ProblemArrays:
    return inst if isinstance(inst, ProblemArrays) else ProblemArrays.build(inst, variant)


def transit_cost(inst: Instance, variant: Variant, i: int, j: int) -> float:
    """Travel cost i -> j; includes the service time of i when windows apply. Zero for i == j."""
    if i == j:
        return 0.0
    a, b = inst.nodes[i], inst.nodes[j]
    d = math.hypot(a.x - b.x, a.y - b.y)
    return d + a.service if variant.kind.has_windows else d


def _early_charge(variant: Variant, early: float, wait: float, includes_wait: bool) -> float:
    """Cost of arriving early: the waiting time itself when it is paid as time, else alpha * lambda."""
    if includes_wait and variant.kind.waits:
        return wait
    return variant.early_penalty(early)


def _activate(state: State) -> Optional[int]:
    if state.next_vehicle >= state.config.n_vehicles:
        return None
    vehicle = state.vehicles[state.next_vehicle]
    vehicle.active = True
    vehicle.used = True
    vehicle.time = state.arrays.start_time
    state.next_vehicle += 1
    return vehicle.index


def _set_active(state: State, members: List[int]) -> None:
    members = sorted(members)
    state.active_set = members + [SENTINEL] * (state.config.m_con - len(members))


def reset(inst: ArraysLike, variant: Variant, config: EnvConfig) -> State:
    """Fresh construction state with min(m_con, K) vehicles active at the depot."""
    if config.m_con < 1:
        raise_usage("m_con must be at least 1")
    arrays = _as_arrays(inst, variant)
    n_vehicles = config.n_vehicles
    state = State(
        arrays=arrays,
        variant=variant,
        config=config,
        vehicles=[VehicleState(index=k, time=arrays.start_time) for k in range(n_vehicles)],
        tour_plan=np.zeros((n_vehicles, max(arrays.n, 1)), dtype=np.int64),
        active_set=[],
        visited=np.zeros(arrays.n + 1, dtype=bool),
        premature_budget=config.m_pre,
        n_unvisited=arrays.n
    )
    members = []
    for _ in range(min(config.m_con, n_vehicles)):
        members.append(_activate(state))
    _set_active(state, members)
    if arrays.n == 0:
        state.finished = True
        for vehicle in state.vehicles:
            vehicle.active = False
        _set_active(state, [])
    return state


def arrival_time(state: State, k: int, i: int) -> float:
    vehicle = state.vehicles[k]
    return vehicle.time + float(state.arrays.transit[vehicle.position, i])


def _service_start(state: State, arrival: np.ndarray, nodes) -> np.ndarray:
    if state.variant.kind.waits:
        return np.maximum(arrival, state.arrays.tw_start[nodes])
    return arrival


def customer_mask(state: State, k: int) -> np.ndarray:
    """Feasibility of every customer (length N) for vehicle k."""
    arrays = state.arrays
    vehicle = state.vehicles[k]
    feasible = ~state.visited[1:] & (vehicle.load + arrays.demand[1:] <= 1.0 + EPS)
    kind = state.variant.kind
    if kind.has_windows:
        arrival = vehicle.time + arrays.transit[vehicle.position, 1:]
        start = _service_start(state, arrival, slice(1, None))
        feasible &= start + arrays.transit[1:, 0] <= arrays.horizon + EPS
        if kind == VariantKind.TW1:
            feasible &= arrival <= arrays.tw_end[1:] + EPS
    return feasible


def feasible_mask(state: State) -> np.ndarray:
    """Boolean matrix [m_con, N+1] over active slots; column 0 is the depot."""
    mask = np.zeros((state.m_con, state.n_nodes), dtype=bool)
    if state.finished:
        return mask
    for slot, k in enumerate(state.active_set):
        if k == SENTINEL:
            continue
        customers = customer_mask(state, k)
        mask[slot, 1:] = customers
        mask[slot, 0] = bool(state.vehicles[k].tour) and (not customers.any() or state.premature_budget > 0)
    if state.n_unvisited > 0 and not mask.any():
        raise_infeasible_state(
            "No feasible action while customers remain",
            details={"unvisited": int(state.n_unvisited), "active": list(state.active_set)}
        )
    return mask


def _return_to_depot(state: State, vehicle: VehicleState) -> Tuple[float, float]:
    hop = float(state.arrays.transit[vehicle.position, 0])
    vehicle.time += hop
    vehicle.position = 0
    vehicle.active = False
    return hop, vehicle.time


def step(state: State, action: Tuple[int, int]) -> Tuple[State, StepEvents]:
    """Apply the joint action (vehicle k, node i) in place."""
    k, i = int(action[0]), int(action[1])
    if state.finished:
        raise_contract_violation("Construction already finished", details={"action": [k, i]})
    if k not in state.active_set:
        raise_contract_violation(f"Vehicle {k} is not active", details={"active": list(state.active_set)})
    if not 0 <= i < state.n_nodes:
        raise_contract_violation(f"Node {i} out of range", details={"n_nodes": state.n_nodes})

    arrays = state.arrays
    variant = state.variant
    vehicle = state.vehicles[k]
    customers = customer_mask(state, k)

    if i == 0:
        if not vehicle.tour:
            raise_contract_violation(f"Vehicle {k} cannot return with an empty tour")
        premature = bool(customers.any())
        if premature and state.premature_budget <= 0:
            raise_contract_violation("Premature return budget exhausted", details={"vehicle": k})
        if premature:
            state.premature_budget -= 1
        hop, arrival = _return_to_depot(state, vehicle)
        state.cost += hop
        members = [m for m in state.active_set if m not in (SENTINEL, k)]
        activated = _activate(state)
        if activated is not None:
            members.append(activated)
        _set_active(state, members)
        state.step += 1
        debug_log("ENV", f"Vehicle {k} returned (premature={premature}), activated {activated}")
        return state, StepEvents(
            vehicle=k, node=0, arrival=arrival, start=arrival,
            premature=premature, activated=activated, cost=hop
        )

    if not customers[i - 1]:
        raise_contract_violation(f"Node {i} is not feasible for vehicle {k}")

    hop = float(arrays.transit[vehicle.position, i])
    arrival = vehicle.time + hop
    start = float(_service_start(state, np.float64(arrival), i))
    early = late = 0.0
    increment = hop
    if variant.kind.has_windows:
        early = max(float(arrays.tw_start[i]) - arrival, 0.0)
        late = max(arrival - float(arrays.tw_end[i]), 0.0)
        increment += _early_charge(variant, early, start - arrival, state.config.cost_includes_wait)
        increment += variant.late_penalty(late)
        if late > EPS:
            state.late_arrivals += 1

    vehicle.tour.append(i)
    state.tour_plan[k, len(vehicle.tour) - 1] = i
    vehicle.position = i
    vehicle.time = start
    vehicle.load += float(arrays.demand[i])
    state.visited[i] = True
    state.n_unvisited -= 1
    state.cost += increment
    state.step += 1

    events = StepEvents(vehicle=k, node=i, arrival=arrival, start=start, early=early, late=late, cost=increment)
    if state.n_unvisited == 0:
        for member in state.active_set:
            if member == SENTINEL:
                continue
            other = state.vehicles[member]
            if other.tour:
                hop, _ = _return_to_depot(state, other)
                state.cost += hop
                events.cost += hop
            other.active = False
        _set_active(state, [])
        state.finished = True
        events.finished = True
    return state, events


def flat_index(slot: int, node: int, n_nodes: int) -> int:
    return slot * n_nodes + node


def phi(m: int, n_nodes: int, active_set: Sequence[int]) -> Tuple[int, int]:
    """Decode a flat action index row-major into (vehicle, node)."""
    if not 0 <= m < len(active_set) * n_nodes:
        raise_contract_violation(
            f"Flat index {m} out of range", details={"m_con": len(active_set), "n_nodes": n_nodes}
        )
    slot, node = divmod(int(m), n_nodes)
    return active_set[slot], node


@dataclass
class TourSimulation:
    metrics: TourMetrics
    arc_cost: float
    early_pen: float
    late_pen: float
    return_time: float


def simulate_tour(arrays: ProblemArrays, variant: Variant, tour: Sequence[int]) -> TourSimulation:
    """Straight-line simulation of depot -> tour -> depot from the depot opening time."""
    time = arrays.start_time
    position = 0
    distance = arc = wait = early_sum = late_sum = early_pen = late_pen = 0.0
    late_arrivals = 0
    load = 0.0
    for node in list(tour) + [0]:
        distance += float(arrays.dist[position, node])
        hop = float(arrays.transit[position, node])
        arc += hop
        arrival = time + hop
        if node == 0:
            time = arrival
            break
        load += float(arrays.demand[node])
        start = arrival
        if variant.kind.has_windows:
            early = max(float(arrays.tw_start[node]) - arrival, 0.0)
            late = max(arrival - float(arrays.tw_end[node]), 0.0)
            if variant.kind.waits:
                start = max(arrival, float(arrays.tw_start[node]))
            wait += start - arrival
            early_sum += early
            late_sum += late
            early_pen += variant.early_penalty(early)
            late_pen += variant.late_penalty(late)
            if late > EPS:
                late_arrivals += 1
        time = start
        position = node
    metrics = TourMetrics(
        n=len(tour),
        distance=distance,
        load=load,
        duration=time - arrays.start_time,
        wait=wait,
        early=early_sum,
        late=late_sum,
        late_arrivals=late_arrivals
    )
    return TourSimulation(metrics=metrics, arc_cost=arc, early_pen=early_pen, late_pen=late_pen, return_time=time)


def _tours_of(solution: Union[Solution, Sequence[Sequence[int]]]) -> List[List[int]]:
    tours = solution.tours if isinstance(solution, Solution) else solution
    return [list(tour) for tour in tours if len(tour) > 0]


def cost(
    inst: ArraysLike,
    solution: Union[Solution, Sequence[Sequence[int]]],
    variant: Variant,
    cost_includes_wait: Optional[bool] = None
) -> CostBreakdown:
    """Total objective: arc costs plus early and late penalties per tour."""
    arrays = _as_arrays(inst, variant)
    if cost_includes_wait is None:
        cost_includes_wait = get_settings().env.cost_includes_wait
    breakdown = CostBreakdown()
    for index, tour in enumerate(_tours_of(solution)):
        sim = simulate_tour(arrays, variant, tour)
        if variant.kind == VariantKind.TW1 and sim.metrics.late_arrivals:
            raise_infeasible_solution(
                "Late arrival under hard time windows", details={"tour": index, "late": sim.metrics.late}
            )
        waits_paid = cost_includes_wait and variant.kind.waits
        early_pen = 0.0 if waits_paid else sim.early_pen
        breakdown.distance += sim.metrics.distance
        breakdown.duration += sim.metrics.duration
        breakdown.wait += sim.metrics.wait
        breakdown.early_pen += early_pen
        breakdown.late_pen += sim.late_pen
        breakdown.total += sim.arc_cost + early_pen + sim.late_pen
        if waits_paid:
            breakdown.total += sim.metrics.wait
    return breakdown


def validate(inst: ArraysLike, solution: Union[Solution, Sequence[Sequence[int]]], variant: Variant) -> ValidationReport:
    """Check coverage, uniqueness, capacity and time constraints. Violations are data."""
    arrays = _as_arrays(inst, variant)
    report = ValidationReport()
    seen = {}
    for index, tour in enumerate(_tours_of(solution)):
        in_range = True
        for node in tour:
            if not 1 <= node <= arrays.n:
                report.add("range", f"Customer id {node} out of range 1..{arrays.n}", tour=index)
                in_range = False
            elif node in seen:
                report.add(
                    "duplicate", f"Customer {node} visited more than once (tours {seen[node]} and {index})", tour=index
                )
            else:
                seen[node] = index
        if not in_range:
            continue
        sim = simulate_tour(arrays, variant, tour)
        if sim.metrics.load > 1.0 + EPS:
            report.add("capacity", f"Load {sim.metrics.load:.4f} exceeds capacity", tour=index)
        if variant.kind == VariantKind.TW1 and sim.metrics.late_arrivals:
            report.add("time_window", f"{sim.metrics.late_arrivals} late arrival(s)", tour=index)
        if variant.kind.has_windows and sim.return_time > arrays.horizon + EPS:
            report.add("horizon", f"Returns at {sim.return_time:.2f} after horizon {arrays.horizon}", tour=index)
    missing = sorted(set(range(1, arrays.n + 1)) - set(seen))
    if missing:
        report.add("coverage", f"{len(missing)} customer(s) not visited: {missing[:10]}")
    return report


def to_solution(state: State) -> Solution:
    """Solution of a finished state with per-tour metrics and the cost breakdown."""
    if not state.finished:
        raise_contract_violation("Construction not finished", details={"unvisited": int(state.n_unvisited)})
    tours = [list(v.tour) for v in state.vehicles if v.tour]
    metrics = [simulate_tour(state.arrays, state.variant, tour).metrics for tour in tours]
    breakdown = cost(state.arrays, tours, state.variant, cost_includes_wait=state.config.cost_includes_wait)
    return Solution(tours=tours, tour_metrics=metrics, cost=breakdown)
