from pathlib import Path
from typing import Union
import logging

from ..schemas.solution import CostBreakdown, Solution
from ..utils import debug_log
from ..utils.errors import ErrorCode, JamprError, raise_schema_violation, raise_version_mismatch

logger = logging.getLogger(__name__)

SOLUTION_HEADER = "SOLFILE"
SOLUTION_VERSION = "v1"


class SolutionService:
    def __init__(self):
        debug_log("SOLVE", "Initializing solution service")

    def save_solution(self, solution: Solution) -> bytes:
        """`SOLFILE v1`, COST, K, one `TOUR k: ...` line per non-empty tour, END."""
        tours = [tour for tour in solution.tours if tour]
        lines = [
            f"{SOLUTION_HEADER} {SOLUTION_VERSION}",
            f"COST {solution.total!r}",
            f"K {len(tours)}",
        ]
        for index, tour in enumerate(tours, start=1):
            lines.append(f"TOUR {index}: " + " ".join(str(node) for node in tour))
        lines.append("END")
        return ("\n".join(lines) + "\n").encode("utf-8")

    def load_solution(self, data: Union[bytes, str]) -> Solution:
        text = data.decode("utf-8") if isinstance(data, bytes) else data
        lines = text.splitlines()
        if not lines or not lines[0].startswith(SOLUTION_HEADER):
            raise_schema_violation("Missing SOLFILE header", details={"line": 1})
        header = lines[0].split()
        if len(header) != 2 or header[1] != SOLUTION_VERSION:
            raise_version_mismatch(f"Unsupported solution version '{lines[0]}'")
        if len(lines) < 3:
            raise_schema_violation("Truncated solution file")
        try:
            key, value = lines[1].split()
            if key != "COST":
                raise ValueError(key)
            cost = float(value)
            key, value = lines[2].split()
            if key != "K":
                raise ValueError(key)
            k = int(value)
        except ValueError:
            raise_schema_violation("Malformed COST/K header", details={"line": 2})

        tours = []
        for number in range(3, 3 + k):
            if number >= len(lines):
                raise_schema_violation("Truncated solution: missing TOUR lines", details={"line": number + 1})
            label, _, body = lines[number].partition(":")
            parts = label.split()
            if len(parts) != 2 or parts[0] != "TOUR" or parts[1] != str(number - 2):
                raise_schema_violation(f"Expected TOUR {number - 2}", details={"line": number + 1})
            try:
                tours.append([int(token) for token in body.split()])
            except ValueError:
                raise_schema_violation("Non-integer node id", details={"line": number + 1})
        if 3 + k >= len(lines) or lines[3 + k].strip() != "END":
            raise_schema_violation("Truncated solution: missing END", details={"line": 4 + k})
        return Solution(tours=tours, cost=CostBreakdown(total=cost))

    def write_solution(self, path: Path, solution: Solution) -> None:
        Path(path).write_bytes(self.save_solution(solution))

    def read_solution(self, path: Path) -> Solution:
        path = Path(path)
        if not path.exists():
            raise JamprError(ErrorCode.FILE_NOT_FOUND, f"Solution file not found: {path}")
        return self.load_solution(path.read_bytes())


solution_service = SolutionService()
