from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, model_validator

from ..core.config import ModelSettings, TrainSettings, get_settings
from ..core.env import EnvConfig
from .variant import Variant, VariantKind


class PolicyKind(str, Enum):
    JAMPR = "jampr"
    AM = "am"
    AMTW = "amtw"
    RANDOM = "random"


class PolicyConfig(BaseModel):
    """Architecture of a learned policy; recorded in every checkpoint."""
    kind: PolicyKind
    variant: VariantKind
    d_node: int = Field(default=128, gt=0)
    n_heads: int = Field(default=8, gt=0)
    n_encode_layers: int = Field(default=3, ge=0)
    d_hidden: int = Field(default=64, gt=0)
    d_action: int = Field(default=128, gt=0)
    d_decoder: int = Field(default=256, gt=0)
    tanh_clip: float = Field(default=10.0, gt=0)
    vehicle_layers: int = Field(default=3, ge=1)
    tour_layers: int = Field(default=2, ge=1)
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    model_config = {"frozen": True}

    @model_validator(mode='after')
    def validate_dims(self) -> 'PolicyConfig':
        if self.kind == PolicyKind.RANDOM:
            raise ValueError("The random policy has no learnable configuration")
        for name in ("d_node", "d_decoder"):
            if getattr(self, name) % self.n_heads:
                raise ValueError(f"{self.n_heads} heads do not divide {name}={getattr(self, name)}")
        if self.kind == PolicyKind.JAMPR:
            if self.d_vehicle != self.d_node:
                raise ValueError("Vehicle width 2*d_hidden must equal d_node for the joint action embedding")
            if self.d_action % self.n_heads:
                raise ValueError(f"{self.n_heads} heads do not divide d_action={self.d_action}")
        if self.kind == PolicyKind.AMTW and not self.variant.has_windows:
            raise ValueError("AM+TW needs a time-window variant")
        return self

    @property
    def d_input(self) -> int:
        return 5 if self.variant.has_windows else 3

    @property
    def d_vehicle(self) -> int:
        return 2 * self.d_hidden

    @property
    def d_context(self) -> int:
        if self.kind == PolicyKind.JAMPR:
            return 3 * self.d_node + 2 * self.d_vehicle
        return 2 * self.d_node + (2 if self.kind == PolicyKind.AMTW else 1)

    @classmethod
    def from_settings(
        cls,
        kind: PolicyKind,
        variant: VariantKind,
        model: Optional[ModelSettings] = None,
        **overrides
    ) -> 'PolicyConfig':
        model = model or get_settings().model
        variant = VariantKind(variant)
        values = dict(
            kind=PolicyKind(kind),
            variant=variant,
            d_node=model.d_node,
            n_heads=model.n_heads,
            n_encode_layers=model.n_encode_layers,
            d_hidden=model.d_hidden,
            d_action=model.d_action,
            d_decoder=model.d_decoder,
            tanh_clip=model.tanh_clip,
            vehicle_layers=model.vehicle_layers_tw if variant.has_windows else model.vehicle_layers_cvrp,
            tour_layers=model.tour_layers,
            bn_momentum=model.bn_momentum,
            bn_eps=model.bn_eps
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class TrainConfig(BaseModel):
    """REINFORCE run parameters."""
    n: int = Field(gt=0)
    variant: VariantKind
    policy: PolicyKind = PolicyKind.JAMPR
    epochs: int = Field(default=50, gt=0)
    instances_per_epoch: int = Field(default=1_024_000, gt=0)
    batch_size: int = Field(default=512, gt=0)
    lr0: float = Field(default=1e-4, gt=0)
    gamma: float = Field(default=0.001, ge=0)
    grad_clip: float = Field(default=1.0, gt=0)
    warmup_epochs: int = Field(default=1, ge=0)
    warmup_beta: float = Field(default=0.8, ge=0, le=1)
    ttest_alpha: float = Field(default=0.05, gt=0, lt=1)
    val_size: int = Field(default=10_000, gt=0)
    seed: int = 1234
    m_con: Optional[int] = Field(default=None, ge=1)
    m_pre: Optional[int] = Field(default=None, ge=0)
    # explicit vehicle capacity for sizes outside the generator table
    capacity: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode='after')
    def validate_batches(self) -> 'TrainConfig':
        if self.instances_per_epoch % self.batch_size:
            raise ValueError(
                f"batch_size {self.batch_size} does not divide instances_per_epoch {self.instances_per_epoch}"
            )
        if self.policy == PolicyKind.RANDOM:
            raise ValueError("The random policy cannot be trained")
        return self

    @property
    def batches_per_epoch(self) -> int:
        return self.instances_per_epoch // self.batch_size

    @classmethod
    def from_settings(
        cls,
        n: int,
        variant: VariantKind,
        train: Optional[TrainSettings] = None,
        **overrides
    ) -> 'TrainConfig':
        train = train or get_settings().train
        values = dict(
            n=n,
            variant=VariantKind(variant),
            epochs=train.epochs,
            instances_per_epoch=train.instances_per_epoch,
            batch_size=train.batch_size_small if n <= 20 else train.batch_size_large,
            lr0=train.lr0,
            gamma=train.gamma,
            grad_clip=train.grad_clip,
            warmup_epochs=train.warmup_epochs,
            warmup_beta=train.warmup_beta,
            ttest_alpha=train.ttest_alpha,
            val_size=train.val_size,
            seed=train.seed
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class BaselineInfo(BaseModel):
    """Serializable part of the baseline: warm-up average and the epoch of the frozen policy."""
    ema: Optional[float] = None
    frozen_epoch: int = -1
    frozen_val_cost: Optional[float] = None
    replacements: int = 0


class CheckpointMeta(BaseModel):
    """Header of a policy checkpoint."""
    format: str = "jampr-policy"
    epoch: int = 0
    policy: PolicyConfig
    env: EnvConfig
    variant: Variant
    train: Optional[TrainConfig] = None
    baseline: BaselineInfo = Field(default_factory=BaselineInfo)

    def check_compatible(self, variant: Variant, env: EnvConfig) -> Optional[str]:
        """Reason the checkpoint cannot serve (variant, env), or None."""
        if variant.kind != self.variant.kind:
            return f"checkpoint variant {self.variant.kind.value} != {variant.kind.value}"
        if env.m_con != self.env.m_con:
            return f"checkpoint m_con {self.env.m_con} != {env.m_con}"
        return None
