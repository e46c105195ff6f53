"""REINFORCE training with a greedy rollout baseline."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import copy
import logging
import math
import os
import shutil
import time

import numpy as np
import pandas as pd
import torch
from scipy import stats

from ..core.config import get_settings
from ..core.env import EnvConfig, State, reset
from ..core.nn import assert_finite, backward, read_checkpoint
from ..models.policy import AttentionPolicy, build_policy, policy_env_config
from ..models.rollout import DecodeMode, rollout
from ..schemas.instance import GenParams, VariantHint
from ..schemas.train import BaselineInfo, CheckpointMeta, PolicyConfig, TrainConfig
from ..schemas.variant import Variant
from ..utils import debug_log
from ..utils.errors import raise_config_mismatch, raise_insufficient_data, raise_non_finite
from .checkpoint_service import checkpoint_service
from .instance_service import derive_seed, instance_service

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["epoch", "train_cost", "val_cost", "lr", "seconds"]

# Seed-path tags keeping instance, sampling and validation streams apart
_TRAIN_INSTANCES = 1
_TRAIN_SAMPLES = 2
_VAL_INSTANCES = 3


def lr_schedule(epoch: int, lr0: float, gamma: float) -> float:
    """lr_t = lr_{t-1} / (1 + gamma * t), lr_0 = lr0."""
    lr = lr0
    for t in range(1, epoch + 1):
        lr /= 1.0 + gamma * t
    return lr


def make_optimizer(policy: AttentionPolicy, config: TrainConfig) -> Tuple[torch.optim.Adam, torch.optim.lr_scheduler.LambdaLR]:
    optimizer = torch.optim.Adam(policy.parameters(), lr=config.lr0, betas=(0.9, 0.999), eps=1e-8)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda epoch: lr_schedule(epoch, config.lr0, config.gamma) / config.lr0
    )
    return optimizer, scheduler


def adam_update(
    optimizer: torch.optim.Optimizer,
    params: Dict[str, torch.nn.Parameter],
    grads: Dict[str, torch.Tensor],
    lr: Optional[float] = None
) -> None:
    """Install `grads` on `params` and take one bias-corrected Adam step."""
    for name, param in params.items():
        param.grad = grads[name].detach().clone()
    if lr is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr
    optimizer.step()


def reinforce_loss(log_probs: torch.Tensor, costs: torch.Tensor, baseline: torch.Tensor) -> torch.Tensor:
    """mean((c - b) * log p); costs and baseline carry no gradient."""
    advantage = (costs - baseline).detach()
    return (advantage * log_probs).mean()


def paired_ttest(candidate: Sequence[float], baseline: Sequence[float]) -> Tuple[float, float]:
    """One-sided paired t-test of H1: candidate costs lower than baseline costs.

    Zero-variance differences are decided directly: identical vectors give t = 0 and
    p = 0.5; a constant improvement gives p = 0.
    """
    candidate = np.asarray(candidate, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if candidate.shape != baseline.shape or candidate.size < 2:
        raise_insufficient_data("Paired t-test needs at least 2 paired values", details={"size": int(candidate.size)})
    diff = candidate - baseline
    if np.all(diff == diff[0]):
        if diff[0] == 0.0:
            return 0.0, 0.5
        return (-math.inf, 0.0) if diff[0] < 0 else (math.inf, 1.0)
    result = stats.ttest_rel(candidate, baseline, alternative="less")
    return float(result.statistic), float(result.pvalue)


@dataclass
class BatchMetrics:
    loss: float
    cost: float
    baseline: float
    grad_norm: float


@dataclass
class BaselineDecision:
    replaced: bool
    candidate_cost: float
    baseline_cost: float
    t_statistic: float = 0.0
    p_value: float = 1.0


class RolloutBaseline:
    """Exponential average during warm-up, then greedy rollouts of the frozen best policy."""

    def __init__(self, config: TrainConfig, env: EnvConfig, variant: Variant, info: Optional[BaselineInfo] = None):
        self.config = config
        self.env = env
        self.variant = variant
        self.info = info or BaselineInfo()
        self.frozen: Optional[AttentionPolicy] = None

    def freeze(self, policy: AttentionPolicy, epoch: int, val_cost: Optional[float] = None) -> None:
        self.frozen = copy.deepcopy(policy)
        self.frozen.eval()
        for param in self.frozen.parameters():
            param.requires_grad_(False)
        self.info = self.info.model_copy(update={
            "frozen_epoch": epoch,
            "frozen_val_cost": val_cost,
            "replacements": self.info.replacements + 1
        })

    def in_warmup(self, epoch: int) -> bool:
        return epoch < self.config.warmup_epochs or self.frozen is None

    def evaluate(self, states: Sequence[State], costs: torch.Tensor, epoch: int) -> torch.Tensor:
        if self.in_warmup(epoch):
            mean = float(costs.mean())
            beta = self.config.warmup_beta
            ema = mean if self.info.ema is None else beta * self.info.ema + (1.0 - beta) * mean
            self.info = self.info.model_copy(update={"ema": ema})
            return torch.full_like(costs, ema)
        with torch.no_grad():
            out = rollout(self.frozen, states, DecodeMode.GREEDY)
        return torch.as_tensor(out.costs, dtype=costs.dtype)


def greedy_costs(policy: AttentionPolicy, states: Sequence[State], batch_size: int) -> np.ndarray:
    was_training = policy.training
    policy.eval()
    costs = []
    with torch.no_grad():
        for start in range(0, len(states), batch_size):
            costs.append(rollout(policy, states[start:start + batch_size], DecodeMode.GREEDY).costs)
    policy.train(was_training)
    return np.concatenate(costs) if costs else np.zeros(0)


def update_baseline(
    candidate: AttentionPolicy,
    baseline: RolloutBaseline,
    val_states: Sequence[State],
    epoch: int,
    batch_size: int
) -> BaselineDecision:
    """Replace the frozen policy iff the candidate is significantly better on `val_states`.

    The epoch closing the warm-up freezes the candidate unconditionally.
    """
    if len(val_states) < 2:
        raise_insufficient_data("Validation set needs at least 2 instances", details={"size": len(val_states)})
    candidate_costs = greedy_costs(candidate, val_states, batch_size)
    candidate_mean = float(candidate_costs.mean())
    if baseline.in_warmup(epoch) and epoch + 1 >= baseline.config.warmup_epochs:
        baseline.freeze(candidate, epoch, candidate_mean)
        return BaselineDecision(replaced=True, candidate_cost=candidate_mean, baseline_cost=candidate_mean)
    if baseline.in_warmup(epoch):
        return BaselineDecision(replaced=False, candidate_cost=candidate_mean, baseline_cost=float("nan"))

    baseline_costs = greedy_costs(baseline.frozen, val_states, batch_size)
    t, p = paired_ttest(candidate_costs, baseline_costs)
    baseline_mean = float(baseline_costs.mean())
    replaced = candidate_mean < baseline_mean and p < baseline.config.ttest_alpha
    if replaced:
        baseline.freeze(candidate, epoch, candidate_mean)
    debug_log("TRAIN", f"Baseline test: candidate {candidate_mean:.3f} vs {baseline_mean:.3f}, t={t:.3f}, p={p:.4f}")
    return BaselineDecision(replaced, candidate_mean, baseline_mean, t, p)


@dataclass
class TrainResult:
    metrics: pd.DataFrame
    checkpoints: List[Path] = field(default_factory=list)
    best: Optional[Path] = None


class TrainService:
    def __init__(self):
        debug_log("TRAIN", "Initializing train service")

    def sample_states(self, config: TrainConfig, variant: Variant, env: EnvConfig, seeds: Sequence[int]) -> List[State]:
        hint = VariantHint.CVRPTW if variant.kind.has_windows else VariantHint.CVRP
        params = GenParams(capacity=config.capacity)
        return [reset(instance_service.generate(config.n, seed, hint, params), variant, env) for seed in seeds]

    def validation_states(self, config: TrainConfig, variant: Variant, env: EnvConfig, epoch: int) -> List[State]:
        seeds = [derive_seed(config.seed, _VAL_INSTANCES, epoch, lane) for lane in range(config.val_size)]
        return self.sample_states(config, variant, env, seeds)

    def reinforce_step(
        self,
        policy: AttentionPolicy,
        baseline: RolloutBaseline,
        states: Sequence[State],
        optimizer: torch.optim.Optimizer,
        config: TrainConfig,
        epoch: int,
        batch: int
    ) -> BatchMetrics:
        """Sample one rollout per state, subtract the baseline, clip and apply Adam."""
        policy.train()
        out = rollout(
            policy, states, DecodeMode.SAMPLE,
            seed=derive_seed(config.seed, _TRAIN_SAMPLES, epoch, batch)
        )
        costs = torch.as_tensor(out.costs, dtype=out.log_probs.dtype)
        baseline_values = baseline.evaluate(states, costs, epoch)
        loss = reinforce_loss(out.log_probs, costs, baseline_values)
        if not bool(torch.isfinite(loss)):
            raise_non_finite("Non-finite REINFORCE loss", details={"epoch": epoch, "batch": batch})

        optimizer.zero_grad()
        backward(loss, policy)
        grad_norm = torch.nn.utils.clip_grad_norm_(policy.parameters(), config.grad_clip)
        clipped = {name: p.grad for name, p in policy.named_parameters()}
        adam_update(optimizer, dict(policy.named_parameters()), clipped)
        assert_finite(policy)
        return BatchMetrics(
            loss=loss.item(),
            cost=float(costs.mean()),
            baseline=float(baseline_values.mean()),
            grad_norm=float(grad_norm)
        )

    def _meta(self, policy, env, variant, config, baseline, epoch) -> CheckpointMeta:
        return CheckpointMeta(
            epoch=epoch, policy=policy.config, env=env, variant=variant, train=config, baseline=baseline.info
        )

    def _link_best(self, target: Path, link: Path) -> None:
        if link.is_symlink() or link.exists():
            link.unlink()
        try:
            os.symlink(target.name, link)
        except OSError:
            shutil.copyfile(target, link)

    def train(
        self,
        config: TrainConfig,
        policy_config: PolicyConfig,
        variant: Variant,
        out_dir: Path,
        resume: Optional[Path] = None,
        on_epoch: Optional[Callable[[dict], None]] = None
    ) -> TrainResult:
        """Epoch loop: REINFORCE batches, baseline test, checkpoint and metrics row per epoch."""
        settings = get_settings()
        torch.set_num_threads(settings.train.threads)
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        env = policy_env_config(policy_config.kind, variant.kind, config.n, m_con=config.m_con, m_pre=config.m_pre)

        torch.manual_seed(config.seed)
        policy = build_policy(policy_config)
        optimizer, scheduler = make_optimizer(policy, config)
        baseline = RolloutBaseline(config, env, variant)
        start_epoch = 0
        rows: List[dict] = []
        best_cost = math.inf
        best_path: Optional[Path] = None

        if resume is not None:
            data = read_checkpoint(resume)
            meta = checkpoint_service.meta_of(data)
            if meta.policy != policy_config or meta.variant.kind != variant.kind or meta.env.m_con != env.m_con:
                raise_config_mismatch(f"Checkpoint {resume} was trained with a different configuration")
            policy.load_state_dict(checkpoint_service.build(data).state_dict())
            checkpoint_service.restore_optimizer(data, policy, optimizer)
            baseline.info = meta.baseline
            frozen = checkpoint_service.build(data, baseline=True)
            if frozen is not None:
                baseline.frozen = frozen.eval()
                for param in baseline.frozen.parameters():
                    param.requires_grad_(False)
            start_epoch = meta.epoch
            for _ in range(start_epoch):
                scheduler.step()
            metrics_path = out_dir / "metrics.csv"
            if metrics_path.exists():
                previous = pd.read_csv(metrics_path)
                rows = previous[previous["epoch"] <= start_epoch].to_dict("records")
                if rows:
                    best_row = min(rows, key=lambda r: r["val_cost"])
                    best_cost = best_row["val_cost"]
                    best_ckpt = out_dir / f"epoch-{int(best_row['epoch']):03d}.ckpt"
                    if best_ckpt.exists():
                        best_path = out_dir / "best.ckpt"
                        self._link_best(best_ckpt, best_path)
            debug_log("TRAIN", f"Resuming from {resume} at epoch {start_epoch}")

        if baseline.frozen is None and config.warmup_epochs == 0:
            baseline.freeze(policy, start_epoch)

        checkpoints: List[Path] = []
        for epoch in range(start_epoch, config.epochs):
            started = time.monotonic()
            lr = optimizer.param_groups[0]["lr"]
            debug_log("TRAIN", f"Epoch {epoch + 1}/{config.epochs}, lr={lr:.6g}")
            batch_costs = []
            for batch in range(config.batches_per_epoch):
                seeds = [derive_seed(config.seed, _TRAIN_INSTANCES, epoch, batch, lane) for lane in range(config.batch_size)]
                states = self.sample_states(config, variant, env, seeds)
                metrics = self.reinforce_step(policy, baseline, states, optimizer, config, epoch, batch)
                batch_costs.append(metrics.cost)
                debug_log("TRAIN", f"├─ batch {batch}: cost={metrics.cost:.3f} baseline={metrics.baseline:.3f} "
                                   f"grad_norm={metrics.grad_norm:.3f}")

            val_states = self.validation_states(config, variant, env, epoch)
            decision = update_baseline(policy, baseline, val_states, epoch, config.batch_size)
            scheduler.step()
            row = {
                "epoch": epoch + 1,
                "train_cost": float(np.mean(batch_costs)),
                "val_cost": decision.candidate_cost,
                "lr": lr,
                "seconds": round(time.monotonic() - started, 3),
            }
            rows.append(row)
            debug_log("TRAIN", f"└─ val_cost={row['val_cost']:.3f} baseline_replaced={decision.replaced}")

            path = out_dir / f"epoch-{epoch + 1:03d}.ckpt"
            checkpoint_service.save(
                path, policy, self._meta(policy, env, variant, config, baseline, epoch + 1), optimizer, baseline.frozen
            )
            checkpoints.append(path)
            if row["val_cost"] < best_cost:
                best_cost = row["val_cost"]
                best_path = out_dir / "best.ckpt"
                self._link_best(path, best_path)
            pd.DataFrame(rows, columns=METRICS_COLUMNS).to_csv(out_dir / "metrics.csv", index=False)
            if on_epoch is not None:
                on_epoch(row)

        frame = pd.DataFrame(rows, columns=METRICS_COLUMNS)
        frame.to_csv(out_dir / "metrics.csv", index=False)
        return TrainResult(metrics=frame, checkpoints=checkpoints, best=best_path)


train_service = TrainService()
