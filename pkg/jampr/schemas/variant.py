import math
from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, model_validator

from ..core.config import EnvSettings, get_settings


class VariantKind(str, Enum):
    CVRP = "CVRP"
    TW1 = "TW1"
    TW2 = "TW2"
    TW3 = "TW3"

    @property
    def has_windows(self) -> bool:
        return self != VariantKind.CVRP

    @property
    def waits(self) -> bool:
        """Vehicles arriving early wait until the window opens."""
        return self in (VariantKind.TW1, VariantKind.TW2)


class Penalty(str, Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"

    def __call__(self, x: float) -> float:
        return x if self == Penalty.LINEAR else x * x


class Variant(BaseModel):
    """Problem variant with penalty weights for early / late service."""
    kind: VariantKind
    alpha: float = Field(default=0.0, ge=0)
    beta: float = Field(default=math.inf, ge=0)
    penalty: Penalty = Penalty.LINEAR

    model_config = {"frozen": True}

    @model_validator(mode='after')
    def validate_weights(self) -> 'Variant':
        if self.kind == VariantKind.TW1 and not math.isinf(self.beta):
            raise ValueError("TW1 has hard upper bounds, beta must be infinite")
        return self

    @classmethod
    def default(cls, kind: VariantKind, env: Optional[EnvSettings] = None) -> 'Variant':
        """Variant with the configured default weights."""
        env = env or get_settings().env
        kind = VariantKind(kind)
        penalty = Penalty(env.penalty)
        if kind == VariantKind.TW1:
            return cls(kind=kind, alpha=env.tw1_alpha, beta=math.inf, penalty=penalty)
        if kind == VariantKind.TW2:
            return cls(kind=kind, alpha=env.tw2_alpha, beta=env.tw2_beta, penalty=penalty)
        if kind == VariantKind.TW3:
            return cls(kind=kind, alpha=env.tw3_alpha, beta=env.tw3_beta, penalty=penalty)
        return cls(kind=kind, alpha=0.0, beta=0.0, penalty=penalty)

    def early_penalty(self, delta: float) -> float:
        if delta <= 0.0 or self.alpha == 0.0:
            return 0.0
        return self.alpha * self.penalty(delta)

    def late_penalty(self, delta: float) -> float:
        if delta <= 0.0 or self.beta == 0.0:
            return 0.0
        return self.beta * self.penalty(delta)
