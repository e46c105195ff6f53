from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional
from functools import lru_cache

from pydantic import ValidationError
from pydantic_settings import BaseSettings

from ..utils.errors import raise_invalid_config, raise_parse_error


class EnvironmentMode(str, Enum):
    """Application environment modes."""
    TEST = "test"
    DEV = "dev"
    PROD = "prod"


class GeneratorSettings(BaseSettings):
    """Instance generator settings."""
    horizon: float = 1000.0
    service: float = 10.0
    demand_mean: float = 15.0
    demand_std: float = 10.0
    demand_max: int = 42
    window_scale: float = 300.0
    # customer count -> vehicle capacity
    capacity_tw: Dict[int, float] = {20: 500.0, 50: 750.0, 100: 1000.0}
    capacity_cvrp: Dict[int, float] = {10: 20.0, 20: 30.0, 50: 40.0, 100: 50.0}
    cvrp_max_demand: int = 9
    test_seed: int = 20_000_001

    model_config = {
        "env_prefix": "JAMPR_GEN_",
        "extra": "ignore"
    }


class EnvSettings(BaseSettings):
    """Routing environment settings (penalty weights, concurrency, premature returns)."""
    m_pre_cvrp: int = 3
    m_pre_tw: int = 6
    m_con_cvrp_small: int = 1
    m_con_cvrp_large: int = 2
    m_con_tw1: int = 4
    m_con_tw2: int = 2
    m_con_tw3: int = 1
    tw1_alpha: float = 1.0
    tw2_alpha: float = 0.0
    tw2_beta: float = 0.5
    tw3_alpha: float = 0.1
    tw3_beta: float = 0.5
    penalty: str = "linear"
    # waiting time is paid as travel time; replaces the early penalty of variants that wait
    cost_includes_wait: bool = True

    model_config = {
        "env_prefix": "JAMPR_ENV_",
        "extra": "ignore"
    }


class ModelSettings(BaseSettings):
    """Policy network dimensions."""
    d_node: int = 128
    n_heads: int = 8
    n_encode_layers: int = 3
    d_hidden: int = 64
    d_action: int = 128
    d_decoder: int = 256
    tanh_clip: float = 10.0
    vehicle_layers_cvrp: int = 1
    vehicle_layers_tw: int = 3
    tour_layers: int = 2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    model_config = {
        "env_prefix": "JAMPR_MODEL_",
        "extra": "ignore"
    }


class TrainSettings(BaseSettings):
    """Training loop defaults."""
    epochs: int = 50
    instances_per_epoch: int = 1_024_000
    batch_size_small: int = 512
    batch_size_large: int = 128
    lr0: float = 1e-4
    gamma: float = 0.001
    grad_clip: float = 1.0
    warmup_epochs: int = 1
    warmup_beta: float = 0.8
    ttest_alpha: float = 0.05
    val_size: int = 10_000
    seed: int = 1234
    threads: int = 1

    model_config = {
        "env_prefix": "JAMPR_TRAIN_",
        "extra": "ignore"
    }


class InferenceSettings(BaseSettings):
    """Inference defaults for solve / eval / benchmark."""
    n_samples: int = 1280
    random_samples: int = 1000
    sample_chunk: int = 1280
    seed: int = 0

    model_config = {
        "env_prefix": "JAMPR_INFER_",
        "extra": "ignore"
    }


class Settings(BaseSettings):
    """Main application settings."""
    environment: EnvironmentMode = EnvironmentMode.DEV
    debug: bool = False
    data_dir: Path = Path("data")

    # Nested settings
    gen: GeneratorSettings = GeneratorSettings()
    env: EnvSettings = EnvSettings()
    model: ModelSettings = ModelSettings()
    train: TrainSettings = TrainSettings()
    infer: InferenceSettings = InferenceSettings()

    model_config = {
        "env_file": ".env",
        "env_prefix": "JAMPR_",
        "use_enum_values": False,
        "extra": "ignore",
        "protected_namespaces": ()
    }

    def with_overrides(self, overrides: Mapping[str, Any]) -> "Settings":
        """Return a copy with `section.field` (or top-level `field`) keys replaced.

        None values are skipped so unset CLI flags fall through to the lower layers.
        """
        top: Dict[str, Any] = {}
        sections: Dict[str, Dict[str, Any]] = {}
        for key, value in overrides.items():
            if value is None:
                continue
            section, _, name = key.lower().partition(".")
            if not name:
                if section not in type(self).model_fields:
                    raise_invalid_config(f"Unknown configuration key '{key}'")
                top[section] = value
                continue
            current = getattr(self, section, None)
            if not isinstance(current, BaseSettings) or name not in type(current).model_fields:
                raise_invalid_config(f"Unknown configuration key '{key}'")
            sections.setdefault(section, {})[name] = value

        try:
            updates: Dict[str, Any] = dict(top)
            for section, values in sections.items():
                current = getattr(self, section)
                updates[section] = type(current)(**{**current.model_dump(), **values})
            fields = {name: getattr(self, name) for name in type(self).model_fields}
            return type(self)(**{**fields, **updates})
        except ValidationError as e:
            raise_invalid_config("Invalid configuration value", details={"errors": e.errors(include_url=False)})


def load_config_file(path: Path) -> Dict[str, str]:
    """Read a key-value config file (`section.field value` per line, `#` comments)."""
    overrides: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for number, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise_parse_error("Expected '<key> <value>'", line=number)
            overrides[parts[0].lower()] = parts[1].strip()
    return overrides


def load_settings(config_file: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> Settings:
    """Resolve settings with precedence flags > config file > environment > defaults."""
    settings = _base_settings()
    if config_file is not None:
        settings = settings.with_overrides(load_config_file(config_file))
    if overrides:
        settings = settings.with_overrides(overrides)
    return settings


_active: Optional[Settings] = None


@lru_cache()
def _base_settings() -> Settings:
    return Settings()


def activate_settings(settings: Optional[Settings]) -> None:
    """Make `settings` what `get_settings()` returns for the rest of the process (None restores the defaults)."""
    global _active
    _active = settings


def get_settings() -> Settings:
    """Active settings, falling back to the cached environment-derived instance."""
    return _active if _active is not None else _base_settings()
