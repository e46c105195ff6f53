"""Differentiable building blocks: sliced multi-head attention, batch norm, SA blocks.

Tensors are batched: queries [B, I, d_q], keys [B, J, d_k], boolean masks
[B, I, J] with True marking an allowed entry.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple
import json
import logging
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..utils import debug_log
from ..utils.errors import (
    ErrorCode, JamprError, raise_all_masked, raise_insufficient_data, raise_non_finite, raise_schema_violation,
    raise_usage, raise_version_mismatch
)

logger = logging.getLogger(__name__)

# Additive score for masked entries; exp underflows to exactly zero
MASK_SCORE = -1e9


def _check_mask(mask: Optional[torch.Tensor]) -> None:
    if mask is not None and not bool(mask.any(dim=-1).all()):
        raise_all_masked("Attention row without any unmasked entry")


def attn_weights(
    z: torch.Tensor,
    keys: torch.Tensor,
    w_query: torch.Tensor,
    w_key: torch.Tensor,
    mask: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Softmax of scaled compatibility scores [B, I, J]; masked entries are exactly 0."""
    if keys.size(-2) == 0:
        raise_usage("Attention over an empty sequence")
    d_key = w_query.size(0)
    scores = torch.matmul(z @ w_query.transpose(0, 1), (keys @ w_key.transpose(0, 1)).transpose(-1, -2))
    scores = scores / math.sqrt(d_key)
    if mask is not None:
        _check_mask(mask)
        scores = scores.masked_fill(~mask, MASK_SCORE)
    return torch.softmax(scores, dim=-1)


def sha(
    z: torch.Tensor,
    keys: torch.Tensor,
    w_query: torch.Tensor,
    w_key: torch.Tensor,
    w_value: torch.Tensor,
    mask: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Single-head attention: convex combination of W_value-projected keys."""
    weights = attn_weights(z, keys, w_query, w_key, mask)
    return weights @ (keys @ w_value.transpose(0, 1))


def mha(
    z: torch.Tensor,
    keys: torch.Tensor,
    w_query: torch.Tensor,
    w_key: torch.Tensor,
    w_value: torch.Tensor,
    w_head: torch.Tensor,
    mask: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Sum over heads of W_head[h] @ sha on the h-th contiguous slice of the inputs.

    w_query [H, d_key, d_q/H], w_key [H, d_key, d_k/H], w_value [H, d_value, d_k/H],
    w_head [H, d_out, d_value].
    """
    n_heads = w_query.size(0)
    batch, n_queries, d_q = z.shape
    n_keys, d_k = keys.size(1), keys.size(2)
    if n_keys == 0:
        raise_usage("Attention over an empty sequence")
    if d_q % n_heads or d_k % n_heads:
        raise_usage(f"{n_heads} heads do not divide input widths {d_q}/{d_k}")
    if w_query.size(-1) != d_q // n_heads or w_key.size(-1) != d_k // n_heads:
        raise_usage("Attention weights do not match the input slices",
                    details={"w_query": list(w_query.shape), "w_key": list(w_key.shape)})

    z_sliced = z.view(batch, n_queries, n_heads, d_q // n_heads)
    k_sliced = keys.view(batch, n_keys, n_heads, d_k // n_heads)
    queries = torch.einsum("bihd,hkd->bhik", z_sliced, w_query)
    projected_keys = torch.einsum("bjhd,hkd->bhjk", k_sliced, w_key)
    values = torch.einsum("bjhd,hvd->bhjv", k_sliced, w_value)

    scores = torch.einsum("bhik,bhjk->bhij", queries, projected_keys) / math.sqrt(w_query.size(1))
    if mask is not None:
        _check_mask(mask)
        scores = scores.masked_fill(~mask[:, None, :, :], MASK_SCORE)
    weights = torch.softmax(scores, dim=-1)
    heads = torch.einsum("bhij,bhjv->bhiv", weights, values)
    return torch.einsum("bhiv,hov->bio", heads, w_head)


def batch_norm(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor,
    running_mean: Optional[torch.Tensor],
    running_var: Optional[torch.Tensor],
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5
) -> torch.Tensor:
    """Per-feature normalization over the flattened batch x sequence axis."""
    flat = x.reshape(-1, x.size(-1))
    if training and flat.size(0) < 2:
        raise_insufficient_data("Batch normalization needs at least 2 values per feature in training mode")
    out = F.batch_norm(flat, running_mean, running_var, weight, bias, training, momentum, eps)
    return out.view_as(x)


def init_parameters(module: nn.Module) -> None:
    """Uniform(-1/sqrt(d_in), 1/sqrt(d_in)) for every parameter, d_in = last dimension."""
    for name, param in module.named_parameters():
        if name.endswith("bn_weight"):
            nn.init.ones_(param)
            continue
        if name.endswith("bn_bias"):
            nn.init.zeros_(param)
            continue
        bound = 1.0 / math.sqrt(param.size(-1))
        with torch.no_grad():
            param.uniform_(-bound, bound)


class MultiHeadAttention(nn.Module):
    def __init__(
        self,
        n_heads: int,
        d_query: int,
        d_keys: Optional[int] = None,
        d_out: Optional[int] = None,
        d_key: Optional[int] = None,
        d_value: Optional[int] = None
    ):
        super().__init__()
        d_keys = d_keys or d_query
        d_out = d_out or d_query
        if d_query % n_heads or d_keys % n_heads:
            raise_usage(f"{n_heads} heads do not divide {d_query}/{d_keys}")
        self.n_heads = n_heads
        d_key = d_key or d_query // n_heads
        d_value = d_value or d_keys // n_heads
        self.w_query = nn.Parameter(torch.empty(n_heads, d_key, d_query // n_heads))
        self.w_key = nn.Parameter(torch.empty(n_heads, d_key, d_keys // n_heads))
        self.w_value = nn.Parameter(torch.empty(n_heads, d_value, d_keys // n_heads))
        self.w_head = nn.Parameter(torch.empty(n_heads, d_out, d_value))

    def forward(
        self,
        queries: torch.Tensor,
        keys: Optional[torch.Tensor] = None,
        mask: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        keys = queries if keys is None else keys
        return mha(queries, keys, self.w_query, self.w_key, self.w_value, self.w_head, mask)


class BatchNorm(nn.Module):
    def __init__(self, d: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.bn_weight = nn.Parameter(torch.ones(d))
        self.bn_bias = nn.Parameter(torch.zeros(d))
        self.register_buffer("running_mean", torch.zeros(d))
        self.register_buffer("running_var", torch.ones(d))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return batch_norm(
            x, self.bn_weight, self.bn_bias, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps
        )


class SABlock(nn.Module):
    """BN(FF_res(BN(MHA_res(Z)))) with FF(z) = relu(W z + b)."""

    def __init__(self, d: int, n_heads: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.attention = MultiHeadAttention(n_heads, d)
        self.norm_attention = BatchNorm(d, momentum, eps)
        self.feed_forward = nn.Linear(d, d)
        self.norm_feed_forward = BatchNorm(d, momentum, eps)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        h = self.norm_attention(h + self.attention(h))
        return self.norm_feed_forward(h + torch.relu(self.feed_forward(h)))


def assert_finite(module: nn.Module) -> None:
    for name, param in module.named_parameters():
        if not bool(torch.isfinite(param).all()):
            raise_non_finite(f"Parameter {name} has non-finite values")


def backward(loss: torch.Tensor, module: nn.Module) -> Dict[str, torch.Tensor]:
    """Reverse-mode gradients of a scalar loss for every named parameter of `module`."""
    if loss.dim() != 0:
        raise_usage("backward expects a scalar loss", details={"shape": list(loss.shape)})
    if not loss.requires_grad:
        raise_usage("Loss is detached from the parameter graph")
    if not bool(torch.isfinite(loss)):
        raise_non_finite("Non-finite loss", details={"loss": float(loss)})
    loss.backward()
    grads: Dict[str, torch.Tensor] = OrderedDict()
    for name, param in module.named_parameters():
        grad = param.grad if param.grad is not None else torch.zeros_like(param)
        if not bool(torch.isfinite(grad).all()):
            raise_non_finite(f"Non-finite gradient for {name}")
        grads[name] = grad
    return grads


# ---------------------------------------------------------------------------
# Checkpoint codec
# ---------------------------------------------------------------------------

CKPT_HEADER = b"CKPT v1\n"
RECORD_KINDS = ("PARAM", "BUFFER", "MOMENT")


@dataclass
class CheckpointData:
    meta: dict
    params: Dict[str, torch.Tensor] = field(default_factory=OrderedDict)
    buffers: Dict[str, torch.Tensor] = field(default_factory=OrderedDict)
    moments: Dict[str, torch.Tensor] = field(default_factory=OrderedDict)

    def records(self) -> Iterable[Tuple[str, Dict[str, torch.Tensor]]]:
        return (("PARAM", self.params), ("BUFFER", self.buffers), ("MOMENT", self.moments))


def _encode_tensor(kind: str, name: str, tensor: torch.Tensor) -> bytes:
    if not name or any(c.isspace() for c in name):
        raise_usage(f"Checkpoint record name '{name}' must be non-empty without whitespace")
    values = tensor.detach().to(torch.float32).cpu().contiguous().numpy().astype("<f4")
    shape = " ".join(str(d) for d in values.shape)
    header = f"{kind} {name} {values.ndim}" + (f" {shape}" if shape else "") + "\n"
    return header.encode("utf-8") + values.tobytes() + b"\n"


def save_checkpoint(data: CheckpointData) -> bytes:
    """Serialize metadata and tensors; reals are stored as little-endian float32."""
    chunks = [CKPT_HEADER, b"META " + json.dumps(data.meta, sort_keys=True).encode("utf-8") + b"\n"]
    for kind, tensors in data.records():
        for name, tensor in tensors.items():
            chunks.append(_encode_tensor(kind, name, tensor))
    chunks.append(b"END\n")
    return b"".join(chunks)


def load_checkpoint(blob: bytes) -> CheckpointData:
    if not blob.startswith(b"CKPT "):
        raise_schema_violation("Missing CKPT header")
    if not blob.startswith(CKPT_HEADER):
        version = blob.split(b"\n", 1)[0].decode("utf-8", "replace")
        raise_version_mismatch(f"Unsupported checkpoint version '{version}'")

    pos = len(CKPT_HEADER)

    def next_line() -> str:
        nonlocal pos
        end = blob.find(b"\n", pos)
        if end < 0:
            raise_schema_violation("Truncated checkpoint", details={"offset": pos})
        try:
            line = blob[pos:end].decode("utf-8")
        except UnicodeDecodeError:
            raise_schema_violation("Undecodable checkpoint record", details={"offset": pos})
        pos = end + 1
        return line

    meta_line = next_line()
    if not meta_line.startswith("META "):
        raise_schema_violation("Missing META record")
    try:
        meta = json.loads(meta_line[5:])
    except json.JSONDecodeError as e:
        raise_schema_violation(f"Malformed META record: {e}")
    data = CheckpointData(meta=meta)
    targets = dict(zip(RECORD_KINDS, (data.params, data.buffers, data.moments)))

    while True:
        line = next_line()
        if line == "END":
            break
        parts = line.split()
        if len(parts) < 3 or parts[0] not in targets:
            raise_schema_violation(f"Malformed checkpoint record '{line[:60]}'")
        try:
            ndim = int(parts[2])
            shape = tuple(int(d) for d in parts[3:3 + ndim])
        except ValueError:
            raise_schema_violation(f"Malformed shape in record '{parts[1]}'")
        if len(shape) != ndim:
            raise_schema_violation(f"Malformed shape in record '{parts[1]}'")
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if pos + nbytes + 1 > len(blob) or blob[pos + nbytes:pos + nbytes + 1] != b"\n":
            raise_schema_violation(f"Truncated tensor data for '{parts[1]}'")
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        targets[parts[0]][parts[1]] = torch.from_numpy(values.copy())
        pos += nbytes + 1
    if pos != len(blob):
        raise_schema_violation("Trailing bytes after END")
    return data


def write_checkpoint(path: Path, data: CheckpointData) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(save_checkpoint(data))
    tmp.replace(path)
    debug_log("CKPT", f"Wrote checkpoint {path}")


def read_checkpoint(path: Path) -> CheckpointData:
    path = Path(path)
    if not path.exists():
        raise JamprError(ErrorCode.FILE_NOT_FOUND, f"Checkpoint not found: {path}")
    return load_checkpoint(path.read_bytes())
