from collections import OrderedDict
from pathlib import Path
from typing import Dict, Optional, Tuple
import logging

import torch
from pydantic import ValidationError

from ..core.env import EnvConfig
from ..core.nn import CheckpointData, read_checkpoint, write_checkpoint
from ..models.policy import AttentionPolicy, build_policy
from ..schemas.train import CheckpointMeta
from ..schemas.variant import Variant
from ..utils import debug_log
from ..utils.errors import raise_config_mismatch, raise_schema_violation

logger = logging.getLogger(__name__)

BASELINE_PREFIX = "baseline/"


def _moments(policy: AttentionPolicy, optimizer: torch.optim.Optimizer) -> Dict[str, torch.Tensor]:
    moments: Dict[str, torch.Tensor] = OrderedDict()
    for name, param in policy.named_parameters():
        state = optimizer.state.get(param)
        if not state:
            continue
        moments[f"{name}.exp_avg"] = state["exp_avg"]
        moments[f"{name}.exp_avg_sq"] = state["exp_avg_sq"]
        moments[f"{name}.step"] = torch.as_tensor(state["step"], dtype=torch.float32)
    return moments


class CheckpointService:
    def __init__(self):
        debug_log("CKPT", "Initializing checkpoint service")

    def pack(
        self,
        policy: AttentionPolicy,
        meta: CheckpointMeta,
        optimizer: Optional[torch.optim.Optimizer] = None,
        baseline_policy: Optional[AttentionPolicy] = None
    ) -> CheckpointData:
        data = CheckpointData(meta=meta.model_dump())
        data.params.update((name, p) for name, p in policy.named_parameters())
        data.buffers.update((name, b) for name, b in policy.named_buffers())
        if baseline_policy is not None:
            data.params.update((BASELINE_PREFIX + name, p) for name, p in baseline_policy.named_parameters())
            data.buffers.update((BASELINE_PREFIX + name, b) for name, b in baseline_policy.named_buffers())
        if optimizer is not None:
            data.moments.update(_moments(policy, optimizer))
        return data

    def save(
        self,
        path: Path,
        policy: AttentionPolicy,
        meta: CheckpointMeta,
        optimizer: Optional[torch.optim.Optimizer] = None,
        baseline_policy: Optional[AttentionPolicy] = None
    ) -> None:
        write_checkpoint(path, self.pack(policy, meta, optimizer, baseline_policy))

    def meta_of(self, data: CheckpointData) -> CheckpointMeta:
        try:
            return CheckpointMeta.model_validate(data.meta)
        except ValidationError as e:
            raise_schema_violation("Invalid checkpoint metadata", details={"errors": e.errors(include_url=False)})

    def _state_dict(self, data: CheckpointData, baseline: bool) -> Dict[str, torch.Tensor]:
        state: Dict[str, torch.Tensor] = OrderedDict()
        for records in (data.params, data.buffers):
            for name, tensor in records.items():
                if name.startswith(BASELINE_PREFIX) == baseline:
                    state[name[len(BASELINE_PREFIX):] if baseline else name] = tensor
        return state

    def build(self, data: CheckpointData, baseline: bool = False) -> Optional[AttentionPolicy]:
        """Policy (or its frozen baseline) restored from checkpoint records."""
        meta = self.meta_of(data)
        state = self._state_dict(data, baseline)
        if baseline and not state:
            return None
        policy = build_policy(meta.policy)
        try:
            policy.load_state_dict(state, strict=True)
        except RuntimeError as e:
            raise_schema_violation("Checkpoint tensors do not match the recorded architecture", details={"error": str(e)})
        return policy

    def restore_optimizer(self, data: CheckpointData, policy: AttentionPolicy, optimizer: torch.optim.Optimizer) -> None:
        for name, param in policy.named_parameters():
            key = f"{name}.exp_avg"
            if key not in data.moments:
                continue
            optimizer.state[param] = {
                "step": data.moments[f"{name}.step"].clone().reshape(()),
                "exp_avg": data.moments[key].clone(),
                "exp_avg_sq": data.moments[f"{name}.exp_avg_sq"].clone(),
            }

    def load_for_inference(
        self,
        path: Path,
        variant: Variant,
        env: Optional[EnvConfig] = None
    ) -> Tuple[AttentionPolicy, CheckpointMeta]:
        """Eval-mode policy; rejects checkpoints trained for another variant or m_con."""
        data = read_checkpoint(path)
        meta = self.meta_of(data)
        if env is not None:
            reason = meta.check_compatible(variant, env)
            if reason:
                raise_config_mismatch(f"Incompatible checkpoint {path}: {reason}")
        elif variant.kind != meta.variant.kind:
            raise_config_mismatch(f"Incompatible checkpoint {path}: trained for {meta.variant.kind.value}")
        policy = self.build(data)
        policy.eval()
        debug_log("CKPT", f"Loaded {meta.policy.kind.value} policy from {path} (epoch {meta.epoch})")
        return policy, meta


checkpoint_service = CheckpointService()
