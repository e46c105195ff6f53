from typing import List, Optional

from pydantic import BaseModel, Field


class TourMetrics(BaseModel):
    """Simulated metrics of a single tour (depot -> customers -> depot)."""
    n: int
    distance: float
    load: float
    duration: float
    wait: float = 0.0
    early: float = 0.0
    late: float = 0.0
    late_arrivals: int = 0


class CostBreakdown(BaseModel):
    distance: float = 0.0
    duration: float = 0.0
    wait: float = 0.0
    early_pen: float = 0.0
    late_pen: float = 0.0
    total: float = 0.0


class Solution(BaseModel):
    """Ordered customer tours of the used vehicles plus derived metrics."""
    tours: List[List[int]]
    tour_metrics: List[TourMetrics] = Field(default_factory=list)
    cost: Optional[CostBreakdown] = None

    @property
    def k(self) -> int:
        return sum(1 for tour in self.tours if tour)

    @property
    def total(self) -> float:
        return self.cost.total if self.cost is not None else float("nan")


class Violation(BaseModel):
    kind: str
    message: str
    tour: Optional[int] = None


class ValidationReport(BaseModel):
    violations: List[Violation] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind: str, message: str, tour: Optional[int] = None) -> None:
        self.violations.append(Violation(kind=kind, message=message, tour=tour))
