"""Attention policies over batched construction states.

`JAMPRPolicy` scores the joint (active vehicle, node) space; `AMPolicy` is the
single-tour attention model (with the current time in its context for AM+TW).
Both share the node encoder and the decoder. `RandomPolicy` picks uniformly among
feasible actions.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence
import logging
import math

import numpy as np
import torch
from torch import nn

from ..core.env import SENTINEL, EnvConfig, State
from ..core.nn import MultiHeadAttention, SABlock, init_parameters, MASK_SCORE
from ..schemas.train import PolicyConfig, PolicyKind
from ..schemas.variant import VariantKind
from ..utils import debug_log
from ..utils.errors import raise_usage

logger = logging.getLogger(__name__)

VEHICLE_FEATURES = 5


def mlp(d_in: int, d_hidden: int, layers: int) -> nn.Sequential:
    """`layers` linear maps of width d_hidden with ReLU between them."""
    modules: List[nn.Module] = []
    width = d_in
    for index in range(layers):
        modules.append(nn.Linear(width, d_hidden))
        if index < layers - 1:
            modules.append(nn.ReLU())
        width = d_hidden
    return nn.Sequential(*modules)


def vehicle_features(state: State, k: int) -> np.ndarray:
    """[k/K, return distance, x, y, time] with distances and coordinates scaled like node features."""
    arrays = state.arrays
    vehicle = state.vehicles[k]
    scale = arrays.coord_scale
    x, y = arrays.coords[vehicle.position]
    return np.array([
        k / state.config.n_vehicles,
        arrays.dist[vehicle.position, 0] / scale,
        x / scale,
        y / scale,
        vehicle.time / arrays.horizon
    ], dtype=np.float64)


def last_nodes(state: State) -> np.ndarray:
    """Last served node of every vehicle's tour, depot (0) for empty tours."""
    return np.array([v.tour[-1] if v.tour else 0 for v in state.vehicles], dtype=np.int64)


class NodeEncoder(nn.Module):
    """Linear projection followed by a stack of SA blocks."""

    def __init__(self, config: PolicyConfig):
        super().__init__()
        self.init_embed = nn.Linear(config.d_input, config.d_node)
        self.layers = nn.Sequential(*(
            SABlock(config.d_node, config.n_heads, config.bn_momentum, config.bn_eps)
            for _ in range(config.n_encode_layers)
        ))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.layers(self.init_embed(features))


@dataclass
class StepInfo:
    """What each lane did in the last transition, consumed by cache updates."""
    lanes: List[int]
    vehicles: List[int]
    nodes: List[int]
    prev_active: List[List[int]]


class AttentionPolicy(nn.Module, ABC):
    """Encoder + decoder shared by the learned policies."""

    def __init__(self, config: PolicyConfig, d_rows: int):
        super().__init__()
        self.config = config
        self.encoder = NodeEncoder(config)
        self.project_context = nn.Linear(config.d_context, config.d_decoder, bias=False)
        self.glimpse = MultiHeadAttention(config.n_heads, config.d_decoder, d_keys=d_rows, d_out=config.d_decoder)
        self.project_logit_keys = nn.Linear(d_rows, config.d_decoder, bias=False)

    @property
    def kind(self) -> PolicyKind:
        return self.config.kind

    @property
    def dtype(self) -> torch.dtype:
        return self.encoder.init_embed.weight.dtype

    def node_features(self, states: Sequence[State]) -> torch.Tensor:
        features = np.stack([s.arrays.node_features(self.config.variant) for s in states])
        return torch.as_tensor(features, dtype=self.dtype)

    def decode_step(self, context: torch.Tensor, rows: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Log-probabilities over the rows of the action embedding.

        context [B, d_C], rows [B, R, d_rows], mask [B, R] (True = feasible).
        """
        query = self.project_context(context)[:, None, :]
        glimpse = self.glimpse(query, rows, mask[:, None, :])
        keys = self.project_logit_keys(rows)
        logits = torch.matmul(glimpse, keys.transpose(-1, -2)).squeeze(1) / math.sqrt(glimpse.size(-1))
        logits = self.config.tanh_clip * torch.tanh(logits)
        logits = logits.masked_fill(~mask, MASK_SCORE)
        return torch.log_softmax(logits, dim=-1)

    @abstractmethod
    def init_cache(self, states: Sequence[State]) -> dict:
        """Per-episode decoder cache, built once after encoding."""

    @abstractmethod
    def update_cache(self, cache: dict, states: Sequence[State], info: StepInfo) -> dict:
        """Cache after the lanes in `info` took one step."""

    @abstractmethod
    def context_and_rows(self, cache: dict, states: Sequence[State]):
        """Decoder context [B, d_C] and flattened action rows [B, R, d_rows]."""

    def forward(self, states: Sequence[State], decode=None, forced=None):
        from .rollout import run_policy
        return run_policy(self, states, decode=decode, forced=forced)


class JAMPRPolicy(AttentionPolicy):
    """Joint vehicle x node policy with incrementally cached vehicle and action embeddings."""

    def __init__(self, config: PolicyConfig):
        if config.kind != PolicyKind.JAMPR:
            raise ValueError(f"JAMPRPolicy cannot run {config.kind.value}")
        super().__init__(config, d_rows=config.d_action)
        self.vehicle_encoder = mlp(VEHICLE_FEATURES, config.d_hidden, config.vehicle_layers)
        self.tour_encoder = mlp(config.d_node, config.d_hidden, config.tour_layers)
        self.w_node = nn.Linear(config.d_node, config.d_action, bias=False)
        self.w_vehicle = nn.Linear(config.d_vehicle, config.d_action, bias=False)
        self.w_joint = nn.Linear(config.d_node + 1, config.d_action, bias=False)
        init_parameters(self)
        debug_log("MODEL", f"Initialized JAMPR policy ({sum(p.numel() for p in self.parameters())} parameters)")

    def g_a(self, vehicle: torch.Tensor, nodes: torch.Tensor, node_proj: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Action embedding of one vehicle row [.., d_vehicle] against node rows [.., R, d_node]."""
        vehicle = vehicle.unsqueeze(-2)
        product = vehicle * nodes
        joint = torch.cat([product, product.sum(-1, keepdim=True)], dim=-1)
        node_proj = self.w_node(nodes) if node_proj is None else node_proj
        return node_proj + self.w_vehicle(vehicle) + self.w_joint(joint)

    def _vehicle_embedding(self, cache: dict) -> torch.Tensor:
        return torch.cat([cache["gv"], cache["tour_sum"] / cache["tour_divisor"]], dim=-1)

    def full_cache(self, states: Sequence[State], node_emb: torch.Tensor) -> dict:
        """Every dynamic quantity computed from scratch."""
        gs_nodes = self.tour_encoder(node_emb)
        feats = np.stack([
            np.stack([vehicle_features(s, k) for k in range(s.config.n_vehicles)]) for s in states
        ])
        gv = self.vehicle_encoder(torch.as_tensor(feats, dtype=self.dtype))
        tour_sum = torch.stack([
            torch.stack([
                gs_nodes[b, v.tour].sum(0) if v.tour else gs_nodes.new_zeros(self.config.d_hidden)
                for v in s.vehicles
            ]) for b, s in enumerate(states)
        ])
        cache = {
            "node_emb": node_emb,
            "graph": node_emb.mean(1),
            "gs_nodes": gs_nodes,
            "node_proj": self.w_node(node_emb),
            "gv": gv,
            "tour_sum": tour_sum,
            "tour_divisor": float(max(states[0].arrays.n, 1)),
            "last": np.stack([last_nodes(s) for s in states]),
        }
        veh_emb = self._vehicle_embedding(cache)
        cache["rows"] = self._slot_rows(cache, veh_emb, states, None)
        return cache

    def _slot_rows(self, cache, veh_emb, states, previous) -> torch.Tensor:
        """Action rows per active slot [B, m, N+1, d_action], zero for sentinel slots.

        With `previous` (old rows plus old active sets and the modified vehicles), rows of
        unchanged vehicles are gathered and only new or modified vehicles are recomputed.
        """
        batch, n_nodes = cache["node_emb"].shape[:2]
        m_con = states[0].m_con
        source = np.full((batch, m_con), -1, dtype=np.int64)
        fresh_lanes, fresh_slots, fresh_vehicles = [], [], []
        alive = np.zeros((batch, m_con), dtype=bool)
        for b, state in enumerate(states):
            old_slots = {}
            if previous is not None:
                old_active, modified = previous[1][b], previous[2].get(b)
                old_slots = {v: s for s, v in enumerate(old_active) if v != SENTINEL and v != modified}
            for slot, v in enumerate(state.active_set):
                if v == SENTINEL:
                    continue
                alive[b, slot] = True
                if v in old_slots:
                    source[b, slot] = old_slots[v]
                else:
                    fresh_lanes.append(b)
                    fresh_slots.append(slot)
                    fresh_vehicles.append(v)

        if previous is None:
            rows = cache["node_emb"].new_zeros(batch, m_con, n_nodes, self.config.d_action)
        else:
            index = torch.as_tensor(np.maximum(source, 0))[:, :, None, None].expand(-1, -1, n_nodes, self.config.d_action)
            rows = previous[0].gather(1, index)
        if fresh_lanes:
            lane_idx = torch.as_tensor(fresh_lanes)
            slot_idx = torch.as_tensor(fresh_slots)
            new_rows = self.g_a(
                veh_emb[lane_idx, torch.as_tensor(fresh_vehicles)],
                cache["node_emb"][lane_idx],
                cache["node_proj"][lane_idx]
            )
            rows = rows.index_put((lane_idx, slot_idx), new_rows)
        return rows * torch.as_tensor(alive, dtype=rows.dtype)[:, :, None, None]

    def init_cache(self, states: Sequence[State]) -> dict:
        node_emb = self.encoder(self.node_features(states))
        return self.full_cache(states, node_emb)

    def update_cache(self, cache: dict, states: Sequence[State], info: StepInfo) -> dict:
        """Refresh the vehicle that acted in each lane, or the whole fleet of a lane that just finished."""
        if not info.lanes:
            return cache
        cache = dict(cache)
        lane_idx = torch.as_tensor(info.lanes)
        veh_idx = torch.as_tensor(info.vehicles)
        # the finishing step also drives every other active vehicle back to the depot
        touched = []
        for b, k in zip(info.lanes, info.vehicles):
            if states[b].finished:
                touched.extend((b, v) for v in range(states[b].config.n_vehicles))
            else:
                touched.append((b, k))
        feats = np.stack([vehicle_features(states[b], k) for b, k in touched])
        cache["gv"] = cache["gv"].index_put(
            (torch.as_tensor([b for b, _ in touched]), torch.as_tensor([k for _, k in touched])),
            self.vehicle_encoder(torch.as_tensor(feats, dtype=self.dtype))
        )
        served = [j for j, node in enumerate(info.nodes) if node > 0]
        if served:
            sel = torch.as_tensor(served)
            lanes_s, vehs_s = lane_idx[sel], veh_idx[sel]
            nodes_s = torch.as_tensor([info.nodes[j] for j in served])
            cache["tour_sum"] = cache["tour_sum"].index_put(
                (lanes_s, vehs_s), cache["gs_nodes"][lanes_s, nodes_s], accumulate=True
            )
            last = cache["last"].copy()
            for j in served:
                last[info.lanes[j], info.vehicles[j]] = info.nodes[j]
            cache["last"] = last
        veh_emb = self._vehicle_embedding(cache)
        modified = dict(zip(info.lanes, info.vehicles))
        prev_active = [list(s.active_set) for s in states]
        for b, old in zip(info.lanes, info.prev_active):
            prev_active[b] = old
        cache["rows"] = self._slot_rows(cache, veh_emb, states, (cache["rows"], prev_active, modified))
        return cache

    def context(self, cache: dict, states: Sequence[State]) -> torch.Tensor:
        """[graph; fleet mean; active mean; depot; mean last-node embedding]."""
        veh_emb = self._vehicle_embedding(cache)
        active = np.array([[v != SENTINEL for v in s.active_set] for s in states])
        members = np.array([[max(v, 0) for v in s.active_set] for s in states])
        lanes = torch.arange(len(states))[:, None]
        active_rows = veh_emb[lanes, torch.as_tensor(members)]
        weights = torch.as_tensor(active, dtype=veh_emb.dtype)[:, :, None]
        act_mean = (active_rows * weights).sum(1) / weights.sum(1).clamp(min=1.0)
        node_emb = cache["node_emb"]
        last = node_emb[lanes, torch.as_tensor(cache["last"])].mean(1)
        return torch.cat([cache["graph"], veh_emb.mean(1), act_mean, node_emb[:, 0], last], dim=-1)

    def context_and_rows(self, cache: dict, states: Sequence[State]):
        rows = cache["rows"]
        return self.context(cache, states), rows.reshape(rows.size(0), -1, rows.size(-1))


class AMPolicy(AttentionPolicy):
    """Single-tour attention model; AM+TW adds the normalized current time to the context."""

    def __init__(self, config: PolicyConfig):
        if config.kind not in (PolicyKind.AM, PolicyKind.AMTW):
            raise ValueError(f"AMPolicy cannot run {config.kind.value}")
        super().__init__(config, d_rows=config.d_node)
        init_parameters(self)
        debug_log("MODEL", f"Initialized {config.kind.value} policy ({sum(p.numel() for p in self.parameters())} parameters)")

    def init_cache(self, states: Sequence[State]) -> dict:
        node_emb = self.encoder(self.node_features(states))
        return {"node_emb": node_emb, "graph": node_emb.mean(1)}

    def update_cache(self, cache: dict, states: Sequence[State], info: StepInfo) -> dict:
        return cache

    def context(self, cache: dict, states: Sequence[State]) -> torch.Tensor:
        """[graph; remaining capacity; current node (; time)] of the single active vehicle."""
        remaining, positions, times = [], [], []
        for state in states:
            k = state.active_set[0]
            vehicle = state.vehicles[k] if k != SENTINEL else None
            remaining.append(1.0 - vehicle.load if vehicle else 1.0)
            positions.append(vehicle.position if vehicle else 0)
            times.append(vehicle.time / state.arrays.horizon if vehicle else 0.0)
        node_emb = cache["node_emb"]
        parts = [
            cache["graph"],
            torch.as_tensor(remaining, dtype=node_emb.dtype)[:, None],
            node_emb[torch.arange(len(states)), torch.as_tensor(positions)],
        ]
        if self.kind == PolicyKind.AMTW:
            parts.append(torch.as_tensor(times, dtype=node_emb.dtype)[:, None])
        return torch.cat(parts, dim=-1)

    def context_and_rows(self, cache: dict, states: Sequence[State]):
        return self.context(cache, states), cache["node_emb"]


class RandomPolicy:
    """Uniform choice among feasible actions; no parameters."""
    kind = PolicyKind.RANDOM


def policy_env_config(
    kind: PolicyKind,
    variant: VariantKind,
    n: int,
    m_con: Optional[int] = None,
    m_pre: Optional[int] = None
) -> EnvConfig:
    """Episode configuration a policy kind runs under.

    Sequential policies keep one vehicle active and may return to the depot after any
    customer; the random policy then picks the depot as one more uniform option.
    """
    kind = PolicyKind(kind)
    if kind == PolicyKind.JAMPR:
        return EnvConfig.default(variant, n, m_con=m_con, m_pre=m_pre)
    base = EnvConfig.default(variant, n, m_con=1, m_pre=0)
    if m_con not in (None, 1):
        raise_usage(f"The {kind.value} policy builds one tour at a time (m_con=1)", details={"m_con": m_con})
    return base.model_copy(update={"m_pre": max(n, 1) if m_pre is None else m_pre})


def build_policy(config: PolicyConfig) -> AttentionPolicy:
    if config.kind == PolicyKind.JAMPR:
        return JAMPRPolicy(config)
    return AMPolicy(config)
