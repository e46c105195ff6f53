from typing import Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, Field

ROW_COLUMNS = [
    "name", "n", "cost", "k", "distance", "duration", "wait", "early_pen", "late_pen", "seconds", "violations"
]
METRIC_COLUMNS = ["cost", "k", "distance", "duration", "wait", "early_pen", "late_pen", "seconds"]


class EvalRow(BaseModel):
    """Result of solving one instance."""
    name: str
    n: int
    cost: float
    k: int
    distance: float
    duration: float
    wait: float = 0.0
    early_pen: float = 0.0
    late_pen: float = 0.0
    seconds: float = 0.0
    violations: int = 0


class EvalReport(BaseModel):
    """Per-instance rows plus run metadata; aggregates are always recomputed from the rows."""
    policy: str
    variant: str
    mode: str
    m_con: int
    n_samples: int = 1
    seed: int = 0
    rows: List[EvalRow] = Field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.rows], columns=ROW_COLUMNS)

    def aggregates(self) -> Dict[str, float]:
        frame = self.to_frame()
        result: Dict[str, float] = {"instances": float(len(frame))}
        for column in METRIC_COLUMNS:
            values = frame[column].astype(float)
            result[f"mean_{column}"] = float(values.mean()) if len(values) else float("nan")
            result[f"std_{column}"] = float(values.std(ddof=0)) if len(values) else float("nan")
        return result

    def to_csv(self) -> str:
        frame = self.to_frame()
        frame["seconds"] = frame["seconds"].round(3)
        return frame.to_csv(index=False, float_format="%.10g")

    def render(self) -> str:
        """Human-readable table of the rows followed by the aggregate line."""
        frame = self.to_frame()
        agg = self.aggregates()
        header = (
            f"policy={self.policy} variant={self.variant} mode={self.mode} "
            f"m_con={self.m_con} n_samples={self.n_samples} seed={self.seed}"
        )
        summary = (
            f"mean cost={agg['mean_cost']:.2f}  k={agg['mean_k']:.2f}  dist={agg['mean_distance']:.2f}  "
            f"t_inf={agg['mean_seconds']:.3f}s  ({int(agg['instances'])} instances)"
        )
        return "\n".join([header, frame.to_string(index=False, float_format=lambda v: f"{v:.2f}"), summary])

    @classmethod
    def read_csv(cls, path, **meta) -> "EvalReport":
        """Rows of a report written by `to_csv`; run metadata is not stored in the file."""
        frame = pd.read_csv(path, dtype={"name": str})
        return cls(rows=[EvalRow(**record) for record in frame.to_dict("records")], **meta)

    def gap_to(self, reference: "EvalReport") -> Dict[str, float]:
        """Mean relative cost gap (in %) over the instances both reports solved."""
        mine = self.to_frame().set_index("name")["cost"].astype(float)
        theirs = reference.to_frame().set_index("name")["cost"].astype(float)
        shared = mine.index.intersection(theirs.index)
        if shared.empty:
            return {"shared": 0.0, "mean_gap_pct": float("nan")}
        gap = (mine[shared] - theirs[shared]) / theirs[shared] * 100.0
        return {"shared": float(len(shared)), "mean_gap_pct": float(gap.mean())}


class BenchmarkRow(EvalRow):
    group: str
    track: str
    policy: str
    mode: str
    weighted: Optional[float] = None


class BenchmarkReport(BaseModel):
    rows: List[BenchmarkRow] = Field(default_factory=list)
    errors: Dict[str, str] = Field(default_factory=dict)
    vehicle_weight: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        columns = ["group", "track", "policy", "mode"] + ROW_COLUMNS + ["weighted"]
        return pd.DataFrame([row.model_dump() for row in self.rows], columns=columns)

    def aggregate(self) -> pd.DataFrame:
        """Mean per (group, track, policy, mode)."""
        frame = self.to_frame()
        if frame.empty:
            return frame
        columns = ["cost", "k", "distance", "seconds"] + (["weighted"] if self.vehicle_weight else [])
        grouped = frame.groupby(["group", "track", "policy", "mode"], sort=True)
        result = grouped[columns].mean()
        result.insert(0, "instances", grouped.size())
        return result.reset_index()
