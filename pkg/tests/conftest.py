import os

# Set required environment variables before importing anything else
os.environ["JAMPR_ENVIRONMENT"] = "test"
os.environ["JAMPR_DEBUG"] = "false"

# Now we can safely import everything else
import math
from pathlib import Path
from typing import List, Optional

import numpy as np
import pytest
import torch

from jampr.core.config import activate_settings, get_settings
from jampr.core.env import EnvConfig, reset
from jampr.models.policy import build_policy
from jampr.schemas.instance import Instance, Node, VariantHint
from jampr.schemas.train import PolicyConfig, PolicyKind
from jampr.schemas.variant import Variant, VariantKind
from jampr.services.instance_service import instance_service

# Get settings instance (will be in test mode due to environment variable)
settings = get_settings()

DATA_DIR = Path(__file__).parent / "data"

SOLOMON_SMALL = """SMALL1

VEHICLE
NUMBER     CAPACITY
  25         100

CUSTOMER
CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE TIME

    0      35         35          0          0        1000          0
    1      41         49         10        161         171         10
    2      35         17          7         50          60         10
    3      55         45         13        116         126         10
    4      55         20         19        149         159         10
    5      15         30         26         34          44         10
    6      25         30          3         99         109         10
"""


@pytest.fixture(autouse=True)
def setup_test_environment():
    """Restore environment variables and the active settings after every test."""
    original_env = os.environ.copy()
    yield
    activate_settings(None)
    os.environ.clear()
    os.environ.update(original_env)


def make_variant(kind: str) -> Variant:
    return Variant.default(VariantKind(kind))


def make_instance(n: int, seed: int, hint: VariantHint = VariantHint.CVRPTW, capacity: Optional[float] = None) -> Instance:
    """Generated instance; sizes outside the capacity tables need an explicit capacity."""
    from jampr.schemas.instance import GenParams

    if capacity is None:
        table = settings.gen.capacity_tw if hint == VariantHint.CVRPTW else settings.gen.capacity_cvrp
        capacity = table.get(n, 500.0 if hint == VariantHint.CVRPTW else 20.0)
    return instance_service.generate(n, seed, hint, GenParams(capacity=capacity))


def tiny_policy_config(kind: str = "jampr", variant: str = "TW1", **overrides) -> PolicyConfig:
    values = dict(
        kind=PolicyKind(kind),
        variant=VariantKind(variant),
        d_node=16,
        n_heads=2,
        n_encode_layers=1,
        d_hidden=8,
        d_action=16,
        d_decoder=16,
        vehicle_layers=2,
        tour_layers=1
    )
    values.update(overrides)
    return PolicyConfig(**values)


def tiny_policy(kind: str = "jampr", variant: str = "TW1", seed: int = 0, **overrides):
    torch.manual_seed(seed)
    policy = build_policy(tiny_policy_config(kind, variant, **overrides))
    policy.eval()
    return policy


def line_instance(points: List[tuple], capacity: float, horizon: float = 1000.0,
                  hint: VariantHint = VariantHint.CVRPTW) -> Instance:
    """Hand-built instance from (x, y, demand, a, b, service) customer tuples; depot at the origin."""
    nodes = [Node(id=0, x=0.0, y=0.0, demand=0.0, tw_start=0.0, tw_end=horizon, service=0.0)]
    for index, (x, y, demand, a, b, service) in enumerate(points, start=1):
        nodes.append(Node(id=index, x=x, y=y, demand=demand, tw_start=a, tw_end=b, service=service))
    return Instance(nodes=nodes, capacity=capacity, variant_hint=hint, seed=0, name="line")


def brute_force_tour(inst: Instance, variant: Variant, tour: List[int], includes_wait: Optional[bool] = None) -> dict:
    """Straight-line reference simulation of one tour, written independently of the environment."""
    if includes_wait is None:
        includes_wait = get_settings().env.cost_includes_wait
    windows = variant.kind.has_windows
    waits = variant.kind in (VariantKind.TW1, VariantKind.TW2)
    t = inst.nodes[0].tw_start
    prev = inst.nodes[0]
    total = 0.0
    late_events = 0
    load = 0.0
    for node_id in tour + [0]:
        node = inst.nodes[node_id]
        d = math.sqrt((prev.x - node.x) ** 2 + (prev.y - node.y) ** 2)
        hop = d + (prev.service if windows else 0.0)
        total += hop
        t += hop
        if node_id != 0:
            load += node.demand
            if windows:
                early = max(node.tw_start - t, 0.0)
                late = max(t - node.tw_end, 0.0)
                if waits and includes_wait:
                    total += early
                elif early > 0:
                    total += variant.alpha * (early if variant.penalty.value == "linear" else early ** 2)
                if late > 0:
                    late_events += 1
                    if not math.isinf(variant.beta):
                        total += variant.beta * (late if variant.penalty.value == "linear" else late ** 2)
                if waits:
                    t = max(t, node.tw_start)
        prev = node
    return {"cost": total, "return": t, "late": late_events, "load": load}


@pytest.fixture
def solomon_file(tmp_path) -> Path:
    path = tmp_path / "SMALL1.txt"
    path.write_text(SOLOMON_SMALL, encoding="utf-8")
    return path


@pytest.fixture
def solomon_100(tmp_path) -> Path:
    """Synthetic 100-customer Solomon file with wide windows (R2-style)."""
    rng = np.random.default_rng(7)
    lines = ["R299", "", "VEHICLE", "NUMBER     CAPACITY", "  25        1000", "", "CUSTOMER",
             "CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE TIME", "",
             "    0      35         35          0          0        1000          0"]
    for i in range(1, 101):
        x, y = rng.integers(0, 71, size=2)
        demand = int(rng.integers(1, 30))
        ready = int(rng.integers(50, 400))
        lines.append(f"  {i:3d}  {x:6d}  {y:6d}  {demand:6d}  {ready:6d}  {ready + 400:6d}  10")
    path = tmp_path / "R299.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def r201_path() -> Path:
    path = DATA_DIR / "R201.txt"
    if not path.exists():
        pytest.skip("R201.txt not available under tests/data")
    return path


def env_for(variant: Variant, n: int, m_con: int = 1, m_pre: int = 0) -> EnvConfig:
    return EnvConfig(m_con=m_con, m_pre=m_pre, n_vehicles=max(n, 1))


def fresh_state(inst: Instance, variant: Variant, m_con: int = 1, m_pre: int = 0):
    return reset(inst, variant, env_for(variant, inst.n_customers, m_con, m_pre))
