from .policy import AMPolicy, AttentionPolicy, JAMPRPolicy, RandomPolicy, build_policy, policy_env_config
from .rollout import Decode, DecodeMode, RolloutOutput, SamplingStreams, rollout

__all__ = [
    "AMPolicy",
    "AttentionPolicy",
    "JAMPRPolicy",
    "RandomPolicy",
    "build_policy",
    "policy_env_config",
    "Decode",
    "DecodeMode",
    "RolloutOutput",
    "SamplingStreams",
    "rollout",
]
