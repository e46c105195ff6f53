"""Lock-step batched decoding of construction states."""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Union
import logging

import numpy as np
import torch

from ..core.env import EnvConfig, State, feasible_mask, phi, reset, step, to_solution
from ..schemas.instance import Instance
from ..schemas.solution import Solution
from ..schemas.variant import Variant
from ..utils import debug_log
from ..utils.errors import raise_contract_violation, raise_usage
from .policy import AttentionPolicy, RandomPolicy, StepInfo

logger = logging.getLogger(__name__)


class DecodeMode(str, Enum):
    GREEDY = "greedy"
    SAMPLE = "sample"


class SamplingStreams:
    """One Philox stream per lane, seeded by (seed, lane).

    A lane's draws do not depend on how many other lanes run, so the first n of
    a larger sample set are exactly the samples of a size-n run.
    """

    def __init__(self, seed: int, lanes: Sequence[int]):
        self.generators = [
            np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(lane)])))
            for lane in lanes
        ]

    def __len__(self) -> int:
        return len(self.generators)

    def choose(self, lane: int, probs: np.ndarray) -> int:
        """Inverse-CDF draw; zero-probability entries are never returned."""
        cdf = np.cumsum(probs, dtype=np.float64)
        u = self.generators[lane].random() * cdf[-1]
        return int(min(np.searchsorted(cdf, u, side="right"), len(probs) - 1))


@dataclass
class Decode:
    mode: DecodeMode = DecodeMode.GREEDY
    streams: Optional[SamplingStreams] = None

    @classmethod
    def greedy(cls) -> "Decode":
        return cls(DecodeMode.GREEDY)

    @classmethod
    def sample(cls, seed: int, lanes: Sequence[int]) -> "Decode":
        return cls(DecodeMode.SAMPLE, SamplingStreams(seed, lanes))


@dataclass
class RolloutOutput:
    log_probs: torch.Tensor
    states: List[State]
    actions: List[List[int]] = field(default_factory=list)

    @property
    def costs(self) -> np.ndarray:
        return np.array([s.cost for s in self.states], dtype=np.float64)

    def solutions(self) -> List[Solution]:
        return [to_solution(s) for s in self.states]


def _lane_masks(states: Sequence[State], width: int) -> np.ndarray:
    masks = np.zeros((len(states), width), dtype=bool)
    for b, state in enumerate(states):
        if state.finished:
            # finished lanes keep a dummy entry so attention never sees an empty row
            masks[b, 0] = True
        else:
            masks[b] = feasible_mask(state).reshape(-1)
    return masks


def _check_batch(states: Sequence[State]) -> None:
    if not states:
        raise_usage("Rollout needs at least one state")
    sizes = {(s.n_nodes, s.m_con) for s in states}
    if len(sizes) != 1:
        raise_usage("Lanes of one rollout must share problem size and m_con", details={"sizes": sorted(sizes)})


def _select(lane: int, mask_row: np.ndarray, probs_row: Optional[np.ndarray], decode: Decode,
            forced: Optional[Sequence[Sequence[int]]], t_lane: int) -> int:
    if forced is not None:
        if t_lane >= len(forced[lane]):
            raise_contract_violation("Forced action sequence too short", details={"lane": lane})
        action = int(forced[lane][t_lane])
    elif decode.mode == DecodeMode.SAMPLE:
        action = decode.streams.choose(lane, probs_row)
    else:
        action = int(np.argmax(probs_row))
    if not mask_row[action]:
        raise_contract_violation(f"Selected action {action} is masked", details={"lane": lane})
    return action


def run_policy(
    policy: AttentionPolicy,
    states: Sequence[State],
    decode: Optional[Decode] = None,
    forced: Optional[Sequence[Sequence[int]]] = None
) -> RolloutOutput:
    """Decode every lane to completion; returns summed log-probabilities per lane.

    Input states are cloned. `forced` replays given flat action indices.
    """
    _check_batch(states)
    states = [s.clone() for s in states]
    decode = decode or Decode.greedy()
    batch = len(states)
    n_nodes, m_con = states[0].n_nodes, states[0].m_con
    if decode.mode == DecodeMode.SAMPLE and (decode.streams is None or len(decode.streams) < batch):
        raise_usage("Sampling needs one stream per lane")

    cache = policy.init_cache(states)
    log_probs = torch.zeros(batch, dtype=policy.dtype)
    actions: List[List[int]] = [[] for _ in range(batch)]

    while not all(s.finished for s in states):
        masks = _lane_masks(states, m_con * n_nodes)
        context, rows = policy.context_and_rows(cache, states)
        logp = policy.decode_step(context, rows, torch.as_tensor(masks))
        # greedy argmax on logits keeps the first maximal index on ties
        scores = logp.detach().cpu().numpy()
        probs = np.exp(scores.astype(np.float64)) if decode.mode == DecodeMode.SAMPLE and forced is None else scores

        info = StepInfo(lanes=[], vehicles=[], nodes=[], prev_active=[])
        chosen = np.zeros(batch, dtype=np.int64)
        alive = np.zeros(batch, dtype=bool)
        for b, state in enumerate(states):
            if state.finished:
                continue
            action = _select(b, masks[b], probs[b], decode, forced, len(actions[b]))
            chosen[b] = action
            alive[b] = True
            k, i = phi(action, n_nodes, state.active_set)
            info.lanes.append(b)
            info.vehicles.append(k)
            info.nodes.append(i)
            info.prev_active.append(list(state.active_set))
            step(state, (k, i))
            actions[b].append(action)

        picked = logp.gather(1, torch.as_tensor(chosen)[:, None]).squeeze(1)
        log_probs = log_probs + torch.where(torch.as_tensor(alive), picked, torch.zeros_like(picked))
        cache = policy.update_cache(cache, states, info)

    return RolloutOutput(log_probs=log_probs, states=states, actions=actions)


def run_random(states: Sequence[State], streams: SamplingStreams) -> RolloutOutput:
    """Uniform choice among feasible actions per lane."""
    _check_batch(states)
    states = [s.clone() for s in states]
    log_probs = np.zeros(len(states), dtype=np.float64)
    actions: List[List[int]] = [[] for _ in states]
    for b, state in enumerate(states):
        while not state.finished:
            mask = feasible_mask(state).reshape(-1)
            count = int(mask.sum())
            action = streams.choose(b, mask.astype(np.float64))
            log_probs[b] -= np.log(count)
            step(state, phi(action, state.n_nodes, state.active_set))
            actions[b].append(action)
    return RolloutOutput(log_probs=torch.as_tensor(log_probs), states=states, actions=actions)


def make_states(instances: Sequence[Instance], variant: Variant, config: EnvConfig) -> List[State]:
    return [reset(inst, variant, config) for inst in instances]


def rollout(
    policy: Union[AttentionPolicy, RandomPolicy],
    states: Sequence[State],
    mode: DecodeMode = DecodeMode.GREEDY,
    seed: int = 0,
    lanes: Optional[Sequence[int]] = None,
    forced: Optional[Sequence[Sequence[int]]] = None
) -> RolloutOutput:
    """Run a policy on a batch of states.

    `lanes` names the sampling stream of every state (default 0..B-1).
    """
    lanes = list(range(len(states))) if lanes is None else list(lanes)
    if isinstance(policy, RandomPolicy):
        return run_random(states, SamplingStreams(seed, lanes))
    decode = Decode.sample(seed, lanes) if DecodeMode(mode) == DecodeMode.SAMPLE else Decode.greedy()
    debug_log("MODEL", f"Rollout: {len(states)} lane(s), {DecodeMode(mode).value}, policy={policy.kind.value}")
    return policy(states, decode=decode, forced=forced)
