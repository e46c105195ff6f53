import math

import pytest
import torch

from jampr.core.nn import (
    CKPT_HEADER, BatchNorm, CheckpointData, MultiHeadAttention, SABlock, attn_weights, backward, batch_norm,
    init_parameters, load_checkpoint, mha, read_checkpoint, save_checkpoint, sha, write_checkpoint
)
from jampr.models.policy import NodeEncoder
from jampr.utils.errors import ErrorCode, JamprError
from tests.conftest import tiny_policy_config


def _rand(*shape):
    return torch.randn(*shape, dtype=torch.float64)


def test_attention_weights_and_masking():
    """Test attention weights:
    1. Rows are probability vectors
    2. Masked entries get exactly zero weight
    3. A fully masked row is an error
    """
    torch.manual_seed(0)
    z, keys = _rand(2, 3, 8), _rand(2, 5, 6)
    w_query, w_key = _rand(4, 8), _rand(4, 6)

    print("\n1. Normalization...")
    weights = attn_weights(z, keys, w_query, w_key)
    assert weights.shape == (2, 3, 5)
    assert torch.allclose(weights.sum(-1), torch.ones(2, 3, dtype=torch.float64))

    print("\n2. Masking...")
    mask = torch.ones(2, 3, 5, dtype=torch.bool)
    mask[:, :, 1] = False
    mask[0, 2, 3:] = False
    weights = attn_weights(z, keys, w_query, w_key, mask)
    assert torch.all(weights[~mask] == 0.0)
    assert torch.allclose(weights.sum(-1), torch.ones(2, 3, dtype=torch.float64))

    print("\n3. Fully masked row...")
    mask[1, 0, :] = False
    with pytest.raises(JamprError) as exc:
        attn_weights(z, keys, w_query, w_key, mask)
    assert exc.value.error_code == ErrorCode.ALL_MASKED


def test_mha_matches_per_head_sum():
    """Multi-head attention equals the sum of per-slice single-head attentions projected by W_head."""
    torch.manual_seed(1)
    n_heads, d_q, d_k = 4, 16, 8
    z, keys = _rand(3, 2, d_q), _rand(3, 7, d_k)
    w_query = _rand(n_heads, 5, d_q // n_heads)
    w_key = _rand(n_heads, 5, d_k // n_heads)
    w_value = _rand(n_heads, 3, d_k // n_heads)
    w_head = _rand(n_heads, 6, 3)
    mask = torch.rand(3, 2, 7) > 0.3
    mask[..., 0] = True

    out = mha(z, keys, w_query, w_key, w_value, w_head, mask)
    expected = torch.zeros(3, 2, 6, dtype=torch.float64)
    for h in range(n_heads):
        zq = z[..., h * d_q // n_heads:(h + 1) * d_q // n_heads]
        kk = keys[..., h * d_k // n_heads:(h + 1) * d_k // n_heads]
        head = sha(zq, kk, w_query[h], w_key[h], w_value[h], mask)
        expected += head @ w_head[h].transpose(0, 1)
    assert out.shape == (3, 2, 6)
    assert torch.allclose(out, expected, atol=1e-10)


def test_mha_errors():
    """Head counts must divide the input widths; empty key sets are rejected."""
    with pytest.raises(JamprError) as exc:
        MultiHeadAttention(3, 16)
    assert exc.value.error_code == ErrorCode.USAGE
    layer = MultiHeadAttention(2, 8)
    with pytest.raises(JamprError):
        layer(torch.randn(1, 2, 8), torch.randn(1, 0, 8))


def test_attention_gradients():
    """Analytic gradients of MHA agree with central finite differences in float64."""
    torch.manual_seed(2)
    z = _rand(2, 3, 4).requires_grad_()
    keys = _rand(2, 5, 4).requires_grad_()
    weights = [_rand(2, 3, 2).requires_grad_(), _rand(2, 3, 2).requires_grad_(),
               _rand(2, 2, 2).requires_grad_(), _rand(2, 4, 2).requires_grad_()]
    mask = torch.ones(2, 3, 5, dtype=torch.bool)
    mask[0, :, 4] = False

    def fn(z, keys, wq, wk, wv, wh):
        return mha(z, keys, wq, wk, wv, wh, mask)

    assert torch.autograd.gradcheck(fn, (z, keys, *weights), eps=1e-6, atol=1e-6)


def test_batch_norm():
    """Test batch normalization:
    1. Training mode normalizes over batch x sequence and updates running stats
    2. Evaluation mode uses running statistics
    3. A single value per feature cannot be normalized in training mode
    """
    torch.manual_seed(3)
    norm = BatchNorm(4).double()
    x = _rand(3, 5, 4) * 3.0 + 2.0

    print("\n1. Training...")
    norm.train()
    y = norm(x)
    flat = y.reshape(-1, 4)
    assert torch.allclose(flat.mean(0), torch.zeros(4, dtype=torch.float64), atol=1e-10)
    assert torch.allclose(flat.var(0, unbiased=False), torch.ones(4, dtype=torch.float64), atol=1e-3)
    assert not torch.allclose(norm.running_mean, torch.zeros(4, dtype=torch.float64))

    print("\n2. Evaluation...")
    norm.eval()
    expected = (x - norm.running_mean) / torch.sqrt(norm.running_var + norm.eps)
    assert torch.allclose(norm(x), expected, atol=1e-10)

    print("\n3. Single value...")
    with pytest.raises(JamprError) as exc:
        batch_norm(_rand(1, 1, 4), torch.ones(4), torch.zeros(4), None, None, training=True)
    assert exc.value.error_code == ErrorCode.INSUFFICIENT_DATA


def test_init_and_sa_block():
    """Parameters start uniform within 1/sqrt(d_in); BN scale and shift start at one and zero."""
    torch.manual_seed(4)
    block = SABlock(16, 4)
    init_parameters(block)
    for name, param in block.named_parameters():
        if name.endswith("bn_weight"):
            assert torch.all(param == 1.0)
        elif name.endswith("bn_bias"):
            assert torch.all(param == 0.0)
        else:
            assert param.abs().max() <= 1.0 / math.sqrt(param.size(-1)) + 1e-6, name
    block.train()
    out = block(torch.randn(2, 6, 16))
    assert out.shape == (2, 6, 16)
    assert torch.isfinite(out).all()


def test_backward_contract():
    """backward returns a gradient for every named parameter and rejects bad losses."""
    torch.manual_seed(5)
    layer = MultiHeadAttention(2, 8)
    init_parameters(layer)
    x = torch.randn(2, 3, 8)
    loss = layer(x).pow(2).mean()
    grads = backward(loss, layer)
    assert list(grads) == [name for name, _ in layer.named_parameters()]
    assert all(grads[name].shape == p.shape for name, p in layer.named_parameters())

    with pytest.raises(JamprError) as exc:
        backward(layer(x).sum(-1), layer)
    assert exc.value.error_code == ErrorCode.USAGE
    with pytest.raises(JamprError) as exc:
        backward(torch.tensor(1.0), layer)
    assert exc.value.error_code == ErrorCode.USAGE
    with pytest.raises(JamprError) as exc:
        backward(layer(x).mean() * float("nan"), layer)
    assert exc.value.error_code == ErrorCode.NON_FINITE


def test_checkpoint_codec(tmp_path):
    """Test the checkpoint codec:
    1. Tensors, shapes and metadata survive a write/read cycle
    2. Truncation and trailing bytes are schema violations
    3. Other versions are rejected
    4. Missing files are reported
    """
    data = CheckpointData(meta={"epoch": 3, "beta": float("inf"), "kind": "jampr"})
    data.params["w"] = torch.randn(2, 3)
    data.params["scalar"] = torch.tensor(0.5)
    data.buffers["running_mean"] = torch.zeros(4)
    data.moments["w.exp_avg"] = torch.full((2, 3), 0.25)

    print("\n1. Round trip...")
    path = tmp_path / "model.ckpt"
    write_checkpoint(path, data)
    loaded = read_checkpoint(path)
    assert loaded.meta == data.meta
    assert math.isinf(loaded.meta["beta"])
    for name, tensor in data.params.items():
        assert torch.equal(loaded.params[name], tensor.float())
    assert loaded.params["scalar"].shape == ()
    assert torch.equal(loaded.moments["w.exp_avg"], data.moments["w.exp_avg"])

    print("\n2. Corruption...")
    blob = save_checkpoint(data)
    assert blob.startswith(CKPT_HEADER) and blob.endswith(b"END\n")
    for broken in (blob[:-4], blob[:len(blob) // 2], blob + b"x"):
        with pytest.raises(JamprError) as exc:
            load_checkpoint(broken)
        assert exc.value.error_code == ErrorCode.SCHEMA_VIOLATION

    print("\n3. Version...")
    with pytest.raises(JamprError) as exc:
        load_checkpoint(blob.replace(b"CKPT v1", b"CKPT v9", 1))
    assert exc.value.error_code == ErrorCode.VERSION_MISMATCH

    print("\n4. Missing file...")
    with pytest.raises(JamprError) as exc:
        read_checkpoint(tmp_path / "absent.ckpt")
    assert exc.value.exit_code == 3


def test_permutation_equivariance():
    """Reordering the input nodes reorders the SA block and node encoder outputs the same way."""
    torch.manual_seed(6)
    block = SABlock(16, 4).double()
    init_parameters(block)
    config = tiny_policy_config("jampr", "TW1", n_encode_layers=2)
    encoder = NodeEncoder(config).double()
    init_parameters(encoder)
    perm = torch.tensor([3, 0, 5, 1, 4, 2])
    h = _rand(2, 6, 16)
    features = _rand(2, 6, config.d_input)

    for training in (True, False):
        block.train(training)
        encoder.train(training)
        assert torch.allclose(block(h[:, perm]), block(h)[:, perm], atol=1e-10), f"SA block, training={training}"
        assert torch.allclose(encoder(features[:, perm]), encoder(features)[:, perm], atol=1e-10), \
            f"Node encoder, training={training}"
