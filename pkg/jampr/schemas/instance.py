from enum import Enum
from typing import Dict, List, Optional
import math

from pydantic import BaseModel, Field, model_validator

# Latest-return sentinel for instances without time windows
CVRP_HORIZON = float(2 ** 30)


class VariantHint(str, Enum):
    CVRP = "CVRP"
    CVRPTW = "CVRPTW"


class Half(str, Enum):
    FIRST = "first"
    SECOND = "second"


class Node(BaseModel):
    """A depot (id 0) or customer with raw coordinates, demand and time window."""
    id: int = Field(ge=0)
    x: float
    y: float
    demand: float = Field(ge=0)
    tw_start: float
    tw_end: float
    service: float = Field(ge=0)

    model_config = {"frozen": True}

    @model_validator(mode='after')
    def validate_window(self) -> 'Node':
        if self.tw_start > self.tw_end:
            raise ValueError(f"Node {self.id}: window start {self.tw_start} after end {self.tw_end}")
        return self


class Instance(BaseModel):
    """Immutable routing problem: depot + customers, fleet capacity and provenance."""
    nodes: List[Node]
    capacity: float = Field(gt=0)
    variant_hint: VariantHint
    seed: int = 0
    name: Optional[str] = None

    model_config = {"frozen": True}

    @model_validator(mode='after')
    def validate_nodes(self) -> 'Instance':
        """Depot first, contiguous ids, positive customer demand within capacity."""
        if not self.nodes:
            raise ValueError("Instance needs at least a depot")
        for index, node in enumerate(self.nodes):
            if node.id != index:
                raise ValueError(f"Node ids must be contiguous from 0, found {node.id} at position {index}")
        depot = self.nodes[0]
        if depot.demand != 0 or depot.service != 0:
            raise ValueError("Depot must have zero demand and zero service")
        for node in self.nodes[1:]:
            if node.demand <= 0:
                raise ValueError(f"Customer {node.id} has non-positive demand")
            if node.demand > self.capacity:
                raise ValueError(f"Customer {node.id} demand {node.demand} exceeds capacity {self.capacity}")
        return self

    @property
    def n_customers(self) -> int:
        return len(self.nodes) - 1

    @property
    def depot(self) -> Node:
        return self.nodes[0]

    @property
    def customers(self) -> List[Node]:
        return self.nodes[1:]

    @property
    def horizon(self) -> float:
        return self.nodes[0].tw_end

    def unreachable_customers(self) -> List[int]:
        """Customers whose window opens before a vehicle leaving the depot could arrive."""
        depot = self.depot
        return [
            node.id for node in self.customers
            if node.tw_start < math.ceil(math.hypot(node.x - depot.x, node.y - depot.y) - 1e-9)
        ]


class GenParams(BaseModel):
    """Generator parameters; None fields fall back to the generator settings."""
    horizon: Optional[float] = None
    service: Optional[float] = None
    capacity: Optional[float] = Field(default=None, gt=0)
    capacity_table: Optional[Dict[int, float]] = None
