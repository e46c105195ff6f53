"""Greedy, best-of-n sampling and random-baseline solving, evaluation and benchmarks."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union
import logging
import re
import time

import numpy as np
import torch

from ..core.config import get_settings
from ..core.env import EnvConfig, State, reset, to_solution, validate
from ..models.policy import AttentionPolicy, RandomPolicy, policy_env_config
from ..models.rollout import DecodeMode, rollout
from ..schemas.instance import Half, Instance
from ..schemas.report import BenchmarkReport, BenchmarkRow, EvalReport, EvalRow
from ..schemas.solution import Solution
from ..schemas.train import CheckpointMeta, PolicyKind
from ..schemas.variant import Variant
from ..utils import debug_log
from ..utils.errors import JamprError, raise_config_mismatch, raise_usage
from .checkpoint_service import checkpoint_service
from .instance_service import instance_service

logger = logging.getLogger(__name__)

RANDOM_SPEC = "random"


class SolveMode(str, Enum):
    GREEDY = "greedy"
    SAMPLE = "sample"


@dataclass
class PolicyHandle:
    kind: PolicyKind
    policy: Union[AttentionPolicy, RandomPolicy]
    label: str
    meta: Optional[CheckpointMeta] = None


@dataclass
class SolveResult:
    solution: Solution
    seconds: float
    costs: np.ndarray
    mode: SolveMode
    n_samples: int


def group_of(name: str) -> str:
    """Benchmark group from a Solomon-style name: R201 -> R2, RC205 -> RC2."""
    match = re.match(r"^([A-Za-z]+)(\d)", name)
    return f"{match.group(1).upper()}{match.group(2)}" if match else name


class SolverService:
    def __init__(self):
        debug_log("SOLVE", "Initializing solver service")

    def load_policy(self, spec: str, variant: Variant) -> PolicyHandle:
        """`random` or a checkpoint path."""
        if str(spec).lower() == RANDOM_SPEC:
            return PolicyHandle(kind=PolicyKind.RANDOM, policy=RandomPolicy(), label=RANDOM_SPEC)
        policy, meta = checkpoint_service.load_for_inference(Path(spec), variant)
        return PolicyHandle(kind=meta.policy.kind, policy=policy, label=Path(spec).stem, meta=meta)

    def env_config(self, handle: PolicyHandle, variant: Variant, n: int, m_con: Optional[int] = None) -> EnvConfig:
        if handle.meta is None:
            return policy_env_config(handle.kind, variant.kind, n, m_con=m_con)
        trained = handle.meta.env
        env = policy_env_config(
            handle.kind, variant.kind, n,
            m_con=trained.m_con if m_con is None else m_con, m_pre=trained.m_pre
        )
        reason = handle.meta.check_compatible(variant, env)
        if reason:
            raise_config_mismatch(f"Incompatible checkpoint: {reason}", details={"checkpoint": handle.label})
        return env

    def default_samples(self, handle: PolicyHandle) -> int:
        infer = get_settings().infer
        return infer.random_samples if handle.kind == PolicyKind.RANDOM else infer.n_samples

    def sample_costs(
        self,
        handle: PolicyHandle,
        state: State,
        n_samples: int,
        seed: int
    ) -> Tuple[np.ndarray, State]:
        """Costs of n sampled rollouts (lane j uses stream (seed, j)) and the best final state.

        Lanes run in chunks; results do not depend on the chunk size.
        """
        if n_samples < 1:
            raise_usage("Number of samples must be positive", details={"n_samples": n_samples})
        chunk = max(1, get_settings().infer.sample_chunk)
        costs: List[np.ndarray] = []
        best: Optional[State] = None
        best_cost = np.inf
        for start in range(0, n_samples, chunk):
            lanes = list(range(start, min(n_samples, start + chunk)))
            with torch.no_grad():
                out = rollout(handle.policy, [state] * len(lanes), DecodeMode.SAMPLE, seed=seed, lanes=lanes)
            chunk_costs = out.costs
            costs.append(chunk_costs)
            index = int(np.argmin(chunk_costs))
            if chunk_costs[index] < best_cost:
                best_cost = float(chunk_costs[index])
                best = out.states[index]
        return np.concatenate(costs), best

    def solve(
        self,
        inst: Instance,
        handle: PolicyHandle,
        variant: Variant,
        mode: SolveMode = SolveMode.GREEDY,
        n_samples: Optional[int] = None,
        seed: Optional[int] = None,
        m_con: Optional[int] = None
    ) -> SolveResult:
        """Greedy rollout, or best of `n_samples` sampled rollouts (always sampled for `random`)."""
        mode = SolveMode(mode)
        if handle.kind == PolicyKind.RANDOM:
            mode = SolveMode.SAMPLE
        seed = get_settings().infer.seed if seed is None else seed
        env = self.env_config(handle, variant, inst.n_customers, m_con)
        state = reset(inst, variant, env)
        started = time.perf_counter()
        if mode == SolveMode.GREEDY:
            with torch.no_grad():
                out = rollout(handle.policy, [state], DecodeMode.GREEDY)
            best, costs, n_samples = out.states[0], out.costs, 1
        else:
            n_samples = n_samples or self.default_samples(handle)
            costs, best = self.sample_costs(handle, state, n_samples, seed)
        solution = to_solution(best)
        seconds = time.perf_counter() - started
        debug_log("SOLVE", f"{handle.label} {mode.value}(n={n_samples}): cost={solution.total:.3f}, "
                           f"k={solution.k}, {seconds:.3f}s")
        return SolveResult(solution=solution, seconds=seconds, costs=costs, mode=mode, n_samples=n_samples)

    def _row(self, name: str, inst: Instance, result: SolveResult, variant: Variant) -> EvalRow:
        solution = result.solution
        report = validate(inst, solution, variant)
        if not report.ok:
            logger.error(f"Solution for {name} violates constraints: {report.violations[0].message}")
        return EvalRow(
            name=name,
            n=inst.n_customers,
            cost=solution.cost.total,
            k=solution.k,
            distance=solution.cost.distance,
            duration=solution.cost.duration,
            wait=solution.cost.wait,
            early_pen=solution.cost.early_pen,
            late_pen=solution.cost.late_pen,
            seconds=round(result.seconds, 3),
            violations=len(report.violations)
        )

    def _map(self, fn, items: Sequence, jobs: int) -> List:
        """Apply `fn` per item in order; `jobs` > 1 runs instances on a thread pool."""
        if jobs <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))

    def evaluate(
        self,
        instances: Sequence[Tuple[str, Instance]],
        handle: PolicyHandle,
        variant: Variant,
        mode: SolveMode = SolveMode.GREEDY,
        n_samples: Optional[int] = None,
        seed: Optional[int] = None,
        m_con: Optional[int] = None,
        allow_mixed: bool = False,
        jobs: int = 1
    ) -> EvalReport:
        """Solve every instance one at a time (batch size 1 timing)."""
        sizes = {inst.n_customers for _, inst in instances}
        if len(sizes) > 1 and not allow_mixed:
            raise_usage("Test set mixes problem sizes; pass --allow-mixed", details={"sizes": sorted(sizes)})
        mode = SolveMode.SAMPLE if handle.kind == PolicyKind.RANDOM else SolveMode(mode)
        seed = get_settings().infer.seed if seed is None else seed
        n_effective = 1 if mode == SolveMode.GREEDY else (n_samples or self.default_samples(handle))
        m_con_used = self.env_config(handle, variant, max(sizes) if sizes else 1, m_con).m_con
        report = EvalReport(
            policy=handle.label, variant=variant.kind.value, mode=mode.value,
            m_con=m_con_used, n_samples=n_effective, seed=seed
        )

        def run(item: Tuple[str, Instance]) -> EvalRow:
            name, inst = item
            result = self.solve(inst, handle, variant, mode, n_effective, seed, m_con)
            return self._row(name, inst, result, variant)

        report.rows.extend(self._map(run, list(instances), jobs))
        return report

    def benchmark(
        self,
        files: Sequence[Path],
        handles: Sequence[PolicyHandle],
        modes: Sequence[SolveMode],
        variant: Variant,
        tracks: Sequence[str] = ("100", "50"),
        n_samples: Optional[int] = None,
        seed: Optional[int] = None,
        adjust_due: bool = False,
        vehicle_weight: float = 0.0,
        jobs: int = 1
    ) -> BenchmarkReport:
        """Solomon benchmark: full instances and/or both 50-customer halves, grouped by prefix."""
        report = BenchmarkReport(vehicle_weight=vehicle_weight)
        tasks: List[Tuple[str, str, str, Instance, PolicyHandle, SolveMode]] = []
        for path in files:
            path = Path(path)
            try:
                inst = instance_service.read_instance(path, adjust_due=adjust_due)
            except JamprError as e:
                logger.warning(f"Skipping {path.name}: {e}")
                report.errors[path.name] = str(e)
                continue
            name = inst.name or path.stem
            cases: List[Tuple[str, str, Instance]] = []
            if "100" in tracks:
                cases.append(("100", name, inst))
            if "50" in tracks:
                if inst.n_customers == 100:
                    cases.append(("50", f"{name}-50", instance_service.split_instance(inst, Half.FIRST)))
                    cases.append(("50", f"{name}-50b", instance_service.split_instance(inst, Half.SECOND)))
                else:
                    report.errors[f"{path.name} (50)"] = f"split needs 100 customers, found {inst.n_customers}"
            for track, case_name, case in cases:
                for handle in handles:
                    handle_modes = [SolveMode.SAMPLE] if handle.kind == PolicyKind.RANDOM else list(modes)
                    for mode in dict.fromkeys(handle_modes):
                        tasks.append((group_of(name), track, case_name, case, handle, mode))

        def run(task) -> Tuple[str, Union[BenchmarkRow, str]]:
            group, track, case_name, case, handle, mode = task
            key = f"{case_name}/{handle.label}/{mode.value}"
            try:
                result = self.solve(case, handle, variant, mode, n_samples, seed)
            except JamprError as e:
                logger.warning(f"{key} failed: {e}")
                return key, str(e)
            row = self._row(case_name, case, result, variant)
            weighted = vehicle_weight * row.k + row.distance if vehicle_weight else None
            return key, BenchmarkRow(
                **row.model_dump(), group=group, track=track,
                policy=handle.label, mode=mode.value, weighted=weighted
            )

        for key, outcome in self._map(run, tasks, jobs):
            if isinstance(outcome, BenchmarkRow):
                report.rows.append(outcome)
            else:
                report.errors[key] = outcome
        debug_log("SOLVE", f"Benchmark: {len(report.rows)} rows, {len(report.errors)} errors")
        return report


solver_service = SolverService()
