from pathlib import Path
from typing import List, Optional, Tuple, Union
import logging

import numpy as np
from pydantic import ValidationError

from ..core.config import get_settings
from ..schemas.instance import CVRP_HORIZON, GenParams, Half, Instance, Node, VariantHint
from ..utils import debug_log
from ..utils.errors import (
    JamprError, ErrorCode, raise_parse_error, raise_schema_violation,
    raise_unsupported_size, raise_version_mismatch, raise_invalid_config
)

logger = logging.getLogger(__name__)

INSTANCE_HEADER = "VRPFILE"
INSTANCE_VERSION = "v1"
MANIFEST_NAME = "manifest.txt"


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; the only RNG used for instance data."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def derive_seed(seed: int, *path: int) -> int:
    """Independent 64-bit seed for the item at `path` (e.g. index, or epoch/batch/lane) under `seed`."""
    entropy = [int(seed)] + [int(p) for p in path]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def _build_instance(**kwargs) -> Instance:
    try:
        return Instance(**kwargs)
    except ValidationError as e:
        raise_schema_violation("Instance violates its invariants", details={"errors": e.errors(include_url=False)})


def _require_reachable(inst: Instance) -> Instance:
    """Every window start must be at least the rounded-up depot distance."""
    unreachable = inst.unreachable_customers()
    if unreachable:
        raise_schema_violation(
            "Window opens before the customer can be reached from the depot",
            details={"customers": unreachable[:10], "count": len(unreachable)}
        )
    return inst


class InstanceService:
    def __init__(self):
        debug_log("GEN", "Initializing instance service")

    def _capacity(self, n: int, params: GenParams, table: dict) -> float:
        if params.capacity is not None:
            return float(params.capacity)
        table = params.capacity_table if params.capacity_table is not None else table
        if n not in table:
            raise_unsupported_size(
                f"No capacity configured for {n} customers",
                details={"n": n, "known_sizes": sorted(table)}
            )
        return float(table[n])

    def generate_cvrptw(self, n: int, seed: int, params: Optional[GenParams] = None) -> Instance:
        """Sample a CVRP-TW instance shaped after the R201 statistics.

        Draw order is fixed: coordinates, demands, window starts, window noise.
        """
        if n < 1:
            raise_unsupported_size("Need at least one customer", details={"n": n})
        params = params or GenParams()
        gen = get_settings().gen
        horizon = float(params.horizon if params.horizon is not None else gen.horizon)
        service = float(params.service if params.service is not None else gen.service)
        capacity = self._capacity(n, params, gen.capacity_tw)

        rng = make_rng(seed)
        coords = rng.uniform(0.0, 100.0, size=(n + 1, 2))
        demand_raw = rng.normal(gen.demand_mean, gen.demand_std, size=n)
        demand = np.minimum(gen.demand_max, np.maximum(1.0, np.floor(np.abs(demand_raw))))

        depot_dist = np.linalg.norm(coords[1:] - coords[0], axis=1)
        sample_start = (np.ceil(depot_dist) + 1).astype(np.int64)
        # service must still finish in time for the return when the window opens late
        sample_end = np.int64(np.floor(horizon)) - sample_start - int(np.ceil(service))
        if np.any(sample_end < sample_start):
            raise_invalid_config("Horizon too short for the sampled locations", details={"horizon": horizon})
        tw_start = rng.integers(sample_start, sample_end, endpoint=True).astype(np.float64)
        noise = np.maximum(np.abs(rng.normal(0.0, 1.0, size=n)), 1.0 / 100.0)
        latest_end = (np.int64(np.floor(horizon)) - sample_start).astype(np.float64)
        tw_end = np.minimum(np.floor(tw_start + gen.window_scale * noise), latest_end)

        nodes = [Node(id=0, x=float(coords[0, 0]), y=float(coords[0, 1]), demand=0.0,
                      tw_start=0.0, tw_end=horizon, service=0.0)]
        for i in range(n):
            nodes.append(Node(
                id=i + 1,
                x=float(coords[i + 1, 0]),
                y=float(coords[i + 1, 1]),
                demand=float(demand[i]),
                tw_start=float(tw_start[i]),
                tw_end=float(tw_end[i]),
                service=service
            ))
        return _require_reachable(
            _build_instance(nodes=nodes, capacity=capacity, variant_hint=VariantHint.CVRPTW, seed=int(seed))
        )

    def generate_cvrp(self, n: int, seed: int, params: Optional[GenParams] = None) -> Instance:
        """Sample a CVRP instance: unit square, integer demands 1..9, no windows."""
        if n < 1:
            raise_unsupported_size("Need at least one customer", details={"n": n})
        params = params or GenParams()
        gen = get_settings().gen
        capacity = self._capacity(n, params, gen.capacity_cvrp)

        rng = make_rng(seed)
        coords = rng.uniform(0.0, 1.0, size=(n + 1, 2))
        demand = rng.integers(1, gen.cvrp_max_demand, size=n, endpoint=True)

        nodes = [Node(id=0, x=float(coords[0, 0]), y=float(coords[0, 1]), demand=0.0,
                      tw_start=0.0, tw_end=CVRP_HORIZON, service=0.0)]
        for i in range(n):
            nodes.append(Node(
                id=i + 1,
                x=float(coords[i + 1, 0]),
                y=float(coords[i + 1, 1]),
                demand=float(demand[i]),
                tw_start=0.0,
                tw_end=CVRP_HORIZON,
                service=0.0
            ))
        return _build_instance(nodes=nodes, capacity=capacity, variant_hint=VariantHint.CVRP, seed=int(seed))

    def generate(self, n: int, seed: int, variant_hint: VariantHint, params: Optional[GenParams] = None) -> Instance:
        if VariantHint(variant_hint) == VariantHint.CVRP:
            return self.generate_cvrp(n, seed, params)
        return self.generate_cvrptw(n, seed, params)

    def generate_set(
        self,
        n: int,
        count: int,
        variant_hint: VariantHint,
        seed: int,
        params: Optional[GenParams] = None
    ) -> List[Instance]:
        """Generate `count` instances with per-item seeds derived from `seed`."""
        debug_log("GEN", f"Generating {count} {VariantHint(variant_hint).value} instances, n={n}, seed={seed}")
        return [self.generate(n, derive_seed(seed, i), variant_hint, params) for i in range(count)]

    def parse_solomon(self, text: str, adjust_due: bool = False) -> Instance:
        """Parse a Solomon-format benchmark file.

        DUE DATE is taken as the window end unless `adjust_due` is set, in which
        case the window end becomes DUE DATE minus SERVICE TIME for customers.
        """
        lines = text.splitlines()
        name: Optional[str] = None
        capacity: Optional[float] = None
        state = "name"
        rows: List[Tuple[int, List[float]]] = []

        for number, raw in enumerate(lines, start=1):
            line = raw.strip()
            if not line:
                continue
            upper = line.upper()
            if state == "name":
                name = line
                state = "seek_vehicle"
            elif state == "seek_vehicle":
                if upper.startswith("VEHICLE"):
                    state = "vehicle"
                else:
                    raise_parse_error(f"Expected VEHICLE section, found '{line}'", line=number)
            elif state == "vehicle":
                if upper.startswith("NUMBER"):
                    continue
                tokens = line.split()
                try:
                    values = [float(t) for t in tokens]
                except ValueError:
                    raise_parse_error(f"Non-numeric vehicle data '{line}'", line=number)
                if len(values) < 2 or values[1] <= 0:
                    raise_parse_error("Vehicle section needs count and positive capacity", line=number)
                capacity = values[1]
                state = "seek_customer"
            elif state == "seek_customer":
                if upper.startswith("CUSTOMER"):
                    state = "customer_header"
                else:
                    raise_parse_error(f"Expected CUSTOMER section, found '{line}'", line=number)
            elif state == "customer_header":
                if upper.startswith("CUST"):
                    state = "rows"
                    continue
                state = "rows"
                rows.append((number, self._parse_solomon_row(line, number)))
            else:
                rows.append((number, self._parse_solomon_row(line, number)))

        if capacity is None:
            raise_parse_error("Missing VEHICLE section", line=len(lines))
        if not rows:
            raise_parse_error("Missing CUSTOMER table", line=len(lines))

        by_id = {}
        for number, values in rows:
            node_id = int(values[0])
            if node_id != values[0] or node_id < 0:
                raise_parse_error(f"Invalid customer number {values[0]}", line=number)
            if node_id in by_id:
                raise_parse_error(f"Duplicate customer number {node_id}", line=number)
            by_id[node_id] = (number, values)
        if 0 not in by_id:
            raise_parse_error("Missing depot row (CUST NO. 0)", line=rows[0][0])
        if sorted(by_id) != list(range(len(by_id))):
            missing = sorted(set(range(max(by_id) + 1)) - set(by_id))
            raise_parse_error(f"Customer numbers are not contiguous, missing {missing[:5]}", line=rows[-1][0])

        nodes = []
        for node_id in range(len(by_id)):
            number, (_, x, y, demand, ready, due, service) = by_id[node_id]
            if adjust_due and node_id > 0:
                due = due - service
            try:
                nodes.append(Node(id=node_id, x=x, y=y, demand=demand, tw_start=ready, tw_end=due, service=service))
            except ValidationError as e:
                raise_parse_error(f"Invalid customer row: {e.errors(include_url=False)[0]['msg']}", line=number)

        debug_log("GEN", f"Parsed Solomon instance {name}: {len(nodes) - 1} customers, Q={capacity}")
        return _require_reachable(
            _build_instance(nodes=nodes, capacity=capacity, variant_hint=VariantHint.CVRPTW, seed=0, name=name)
        )

    @staticmethod
    def _parse_solomon_row(line: str, number: int) -> List[float]:
        tokens = line.split()
        if len(tokens) != 7:
            raise_parse_error(f"Expected 7 columns, found {len(tokens)}", line=number)
        try:
            return [float(t) for t in tokens]
        except ValueError:
            raise_parse_error(f"Non-numeric cell in '{line}'", line=number)

    def split_instance(self, inst: Instance, half: Half) -> Instance:
        """Depot plus the first or second 50 customers of a 100-customer instance, re-indexed."""
        if inst.n_customers != 100:
            raise_unsupported_size("Splitting requires exactly 100 customers", details={"n": inst.n_customers})
        half = Half(half)
        chosen = inst.nodes[1:51] if half == Half.FIRST else inst.nodes[51:101]
        nodes = [inst.nodes[0]] + [
            node.model_copy(update={"id": index}) for index, node in enumerate(chosen, start=1)
        ]
        suffix = "-50" if half == Half.FIRST else "-50b"
        name = f"{inst.name}{suffix}" if inst.name else None
        return _build_instance(
            nodes=nodes, capacity=inst.capacity, variant_hint=inst.variant_hint, seed=inst.seed, name=name
        )

    def save_instance(self, inst: Instance) -> bytes:
        """Serialize to the versioned textual instance format (shortest round-trip reals)."""
        lines = [
            f"{INSTANCE_HEADER} {INSTANCE_VERSION}",
            f"N {inst.n_customers}",
            f"Q {inst.capacity!r}",
            f"VARIANT {inst.variant_hint.value}",
            f"SEED {inst.seed}",
        ]
        if inst.name:
            lines.append(f"NAME {inst.name}")
        for node in inst.nodes:
            lines.append(
                f"NODE {node.id} {node.x!r} {node.y!r} {node.demand!r} "
                f"{node.tw_start!r} {node.tw_end!r} {node.service!r}"
            )
        lines.append("END")
        return ("\n".join(lines) + "\n").encode("utf-8")

    def load_instance(self, data: Union[bytes, str]) -> Instance:
        """Parse the textual instance format; any truncation or schema deviation is an error."""
        text = data.decode("utf-8") if isinstance(data, bytes) else data
        lines = text.splitlines()
        if not lines:
            raise_schema_violation("Empty instance file")
        header = lines[0].split()
        if len(header) != 2 or header[0] != INSTANCE_HEADER:
            raise_schema_violation("Missing VRPFILE header", details={"line": 1})
        if header[1] != INSTANCE_VERSION:
            raise_version_mismatch(f"Unsupported instance version {header[1]}", details={"expected": INSTANCE_VERSION})

        def field(index: int, key: str) -> str:
            if index >= len(lines):
                raise_schema_violation(f"Truncated instance: missing {key}", details={"line": index + 1})
            parts = lines[index].split(None, 1)
            if len(parts) != 2 or parts[0] != key:
                raise_schema_violation(f"Expected {key}", details={"line": index + 1})
            return parts[1].strip()

        try:
            n = int(field(1, "N"))
            capacity = float(field(2, "Q"))
            variant_hint = VariantHint(field(3, "VARIANT"))
            seed = int(field(4, "SEED"))
        except ValueError as e:
            raise_schema_violation(f"Malformed header value: {e}")

        index = 5
        name = None
        if index < len(lines) and lines[index].startswith("NAME "):
            name = lines[index][5:].strip()
            index += 1

        nodes = []
        for node_id in range(n + 1):
            if index >= len(lines):
                raise_schema_violation("Truncated instance: missing NODE lines", details={"line": index + 1})
            tokens = lines[index].split()
            if len(tokens) != 8 or tokens[0] != "NODE":
                raise_schema_violation("Malformed NODE line", details={"line": index + 1})
            try:
                values = [float(t) for t in tokens[2:]]
                parsed_id = int(tokens[1])
            except ValueError:
                raise_schema_violation("Non-numeric NODE field", details={"line": index + 1})
            if parsed_id != node_id:
                raise_schema_violation(f"Expected NODE {node_id}", details={"line": index + 1})
            try:
                nodes.append(Node(id=node_id, x=values[0], y=values[1], demand=values[2],
                                  tw_start=values[3], tw_end=values[4], service=values[5]))
            except ValidationError as e:
                raise_schema_violation("Invalid node", details={"line": index + 1, "errors": e.errors(include_url=False)})
            index += 1

        if index >= len(lines) or lines[index].strip() != "END":
            raise_schema_violation("Truncated instance: missing END", details={"line": index + 1})
        return _build_instance(nodes=nodes, capacity=capacity, variant_hint=variant_hint, seed=seed, name=name)

    def write_instance(self, path: Path, inst: Instance) -> None:
        Path(path).write_bytes(self.save_instance(inst))

    def read_instance(self, path: Path, adjust_due: bool = False) -> Instance:
        """Read either the native instance format or a Solomon benchmark file."""
        path = Path(path)
        if not path.exists():
            raise JamprError(ErrorCode.FILE_NOT_FOUND, f"Instance file not found: {path}")
        data = path.read_bytes()
        if data.lstrip().startswith(INSTANCE_HEADER.encode()):
            return self.load_instance(data)
        inst = self.parse_solomon(data.decode("utf-8"), adjust_due=adjust_due)
        if inst.name is None:
            inst = inst.model_copy(update={"name": path.stem})
        return inst

    def read_directory(self, path: Path, adjust_due: bool = False) -> List[Tuple[str, Instance]]:
        """All `.vrp`/`.txt` instances under `path` in name order; the generator manifest is skipped."""
        path = Path(path)
        if path.is_file():
            inst = self.read_instance(path, adjust_due=adjust_due)
            return [(inst.name or path.stem, inst)]
        if not path.is_dir():
            raise JamprError(ErrorCode.FILE_NOT_FOUND, f"Instance directory not found: {path}")
        files = sorted(
            p for p in path.iterdir()
            if p.is_file() and p.suffix.lower() in (".vrp", ".txt") and p.name != MANIFEST_NAME
        )
        if not files:
            raise JamprError(ErrorCode.FILE_NOT_FOUND, f"No instance files in {path}")
        debug_log("GEN", f"Reading {len(files)} instances from {path}")
        return [(p.stem, self.read_instance(p, adjust_due=adjust_due)) for p in files]

    def write_set(self, out_dir: Path, instances: List[Instance], seed: int) -> List[Path]:
        """Write `inst-XXXXX.vrp` files plus `manifest.txt` (index, per-instance seed, file)."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        manifest = ["index seed file"]
        for index, inst in enumerate(instances):
            path = out_dir / f"inst-{index:05d}.vrp"
            self.write_instance(path, inst)
            paths.append(path)
            manifest.append(f"{index} {inst.seed} {path.name}")
        (out_dir / MANIFEST_NAME).write_text("\n".join(manifest) + "\n", encoding="utf-8")
        logger.info(f"Wrote {len(paths)} instances to {out_dir}")
        return paths


instance_service = InstanceService()
