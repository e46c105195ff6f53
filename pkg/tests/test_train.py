import math

import numpy as np
import pandas as pd
import pytest
import torch

from jampr.core.env import EnvConfig
from jampr.schemas.train import TrainConfig
from jampr.schemas.variant import VariantKind
from jampr.services.checkpoint_service import checkpoint_service
from jampr.services import train_service as train_module
from jampr.services.train_service import (
    RolloutBaseline, adam_update, lr_schedule, make_optimizer, paired_ttest, reinforce_loss, train_service,
    update_baseline
)
from jampr.utils.errors import ErrorCode, JamprError
from tests.conftest import make_variant, tiny_policy, tiny_policy_config


def _tiny_train_config(**overrides) -> TrainConfig:
    values = dict(
        n=10, variant=VariantKind.CVRP, epochs=2, instances_per_epoch=4, batch_size=2,
        val_size=3, warmup_epochs=1, seed=5
    )
    values.update(overrides)
    return TrainConfig(**values)


def test_lr_schedule():
    """lr_t = lr_{t-1} / (1 + gamma * t) starting from lr0."""
    assert lr_schedule(0, 1e-4, 0.001) == 1e-4
    assert lr_schedule(1, 1e-4, 0.001) == pytest.approx(1e-4 / 1.001)
    assert lr_schedule(2, 1e-4, 0.001) == pytest.approx(1e-4 / (1.001 * 1.002))
    assert lr_schedule(5, 1e-4, 0.0) == 1e-4

    policy = tiny_policy("jampr", "CVRP")
    optimizer, scheduler = make_optimizer(policy, _tiny_train_config(lr0=1e-3, gamma=0.5))
    scheduler.step()
    assert optimizer.param_groups[0]["lr"] == pytest.approx(1e-3 / 1.5)


def test_paired_ttest():
    """Test the one-sided paired t-test:
    1. Identical vectors are undecided
    2. A constant improvement is significant
    3. A clear improvement has a small p-value, a clear regression a large one
    4. Fewer than two pairs is an error
    """
    print("\n1. Identical vectors...")
    assert paired_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == (0.0, 0.5)

    print("\n2. Constant improvement...")
    t, p = paired_ttest([0.0, 1.0, 2.0], [1.0, 2.0, 3.0])
    assert p == 0.0 and t == -math.inf

    print("\n3. Noisy differences...")
    rng = np.random.default_rng(0)
    baseline = rng.uniform(10, 20, size=50)
    better = baseline - 1.0 + rng.normal(0, 0.1, size=50)
    assert paired_ttest(better, baseline)[1] < 0.05
    assert paired_ttest(baseline + 1.0 + rng.normal(0, 0.1, size=50), baseline)[1] > 0.95

    print("\n4. Too few pairs...")
    with pytest.raises(JamprError) as exc:
        paired_ttest([1.0], [2.0])
    assert exc.value.error_code == ErrorCode.INSUFFICIENT_DATA


def test_reinforce_loss_direction():
    """Gradients push down the log-probability of worse-than-baseline samples and up for better ones."""
    log_probs = torch.tensor([-1.0, -2.0], requires_grad=True)
    costs = torch.tensor([10.0, 4.0])
    baseline = torch.tensor([6.0, 6.0])
    loss = reinforce_loss(log_probs, costs, baseline)
    loss.backward()
    assert torch.allclose(log_probs.grad, torch.tensor([2.0, -1.0]))
    assert float(loss) == pytest.approx((4.0 * -1.0 + -2.0 * -2.0) / 2)


def test_warmup_baseline_is_exponential_average():
    config = _tiny_train_config()
    env = EnvConfig(m_con=1, m_pre=3, n_vehicles=10)
    baseline = RolloutBaseline(config, env, make_variant("CVRP"))
    first = baseline.evaluate([], torch.tensor([4.0, 6.0]), epoch=0)
    assert torch.allclose(first, torch.tensor([5.0, 5.0]))
    second = baseline.evaluate([], torch.tensor([10.0, 10.0]), epoch=0)
    assert torch.allclose(second, torch.full((2,), 0.8 * 5.0 + 0.2 * 10.0))
    assert baseline.info.ema == pytest.approx(6.0)


def test_reinforce_step_clips_gradients():
    """The update uses gradients with global norm at most the clip value."""
    config = _tiny_train_config(grad_clip=0.01)
    variant = make_variant("CVRP")
    env = EnvConfig(m_con=1, m_pre=3, n_vehicles=10)
    policy = tiny_policy("jampr", "CVRP", seed=4)
    optimizer, _ = make_optimizer(policy, config)
    baseline = RolloutBaseline(config, env, variant)
    states = train_service.sample_states(config, variant, env, [1, 2, 3, 4])
    before = {name: p.detach().clone() for name, p in policy.named_parameters()}

    metrics = train_service.reinforce_step(policy, baseline, states, optimizer, config, epoch=0, batch=0)
    total = torch.sqrt(sum(p.grad.pow(2).sum() for p in policy.parameters()))
    assert float(total) <= 0.01 + 1e-6
    assert math.isfinite(metrics.loss) and metrics.cost > 0
    assert any(not torch.equal(before[name], p) for name, p in policy.named_parameters())


def test_train_run_and_resume(tmp_path):
    """Test a tiny training run:
    1. Each epoch writes a checkpoint and a metrics row
    2. best.ckpt points at the best validation epoch
    3. Checkpoints load for inference and reject other variants
    4. Resuming continues the epoch count and keeps earlier metrics
    """
    variant = make_variant("CVRP")
    policy_config = tiny_policy_config("jampr", "CVRP")
    out_dir = tmp_path / "run"
    epochs_seen = []

    print("\n1. Training one epoch...")
    result = train_service.train(
        _tiny_train_config(epochs=1), policy_config, variant, out_dir, on_epoch=lambda row: epochs_seen.append(row)
    )
    assert [p.name for p in result.checkpoints] == ["epoch-001.ckpt"]
    assert len(epochs_seen) == 1 and epochs_seen[0]["epoch"] == 1
    metrics = pd.read_csv(out_dir / "metrics.csv")
    assert list(metrics.columns) == ["epoch", "train_cost", "val_cost", "lr", "seconds"]
    assert len(metrics) == 1

    print("\n2. Best checkpoint...")
    assert result.best == out_dir / "best.ckpt"
    assert result.best.exists()

    print("\n3. Loading for inference...")
    policy, meta = checkpoint_service.load_for_inference(result.best, variant)
    assert not policy.training
    assert meta.epoch == 1 and meta.policy == policy_config
    assert meta.baseline.frozen_epoch == 0
    with pytest.raises(JamprError) as exc:
        checkpoint_service.load_for_inference(result.best, make_variant("TW2"))
    assert exc.value.error_code == ErrorCode.CONFIG_MISMATCH

    print("\n4. Resuming...")
    resumed = train_service.train(
        _tiny_train_config(epochs=2), policy_config, variant, out_dir, resume=out_dir / "epoch-001.ckpt"
    )
    assert [p.name for p in resumed.checkpoints] == ["epoch-002.ckpt"]
    assert list(resumed.metrics["epoch"]) == [1, 2]
    assert resumed.metrics["lr"].iloc[1] == pytest.approx(lr_schedule(1, 1e-4, 0.001))
    assert resumed.best == out_dir / "best.ckpt" and resumed.best.exists(), "Resume must keep a best checkpoint"

    with pytest.raises(JamprError) as exc:
        train_service.train(
            _tiny_train_config(epochs=3), tiny_policy_config("jampr", "CVRP", d_decoder=32), variant, out_dir,
            resume=out_dir / "epoch-002.ckpt"
        )
    assert exc.value.error_code == ErrorCode.CONFIG_MISMATCH


def test_adam_update():
    """Test the Adam step:
    1. A zero gradient leaves the parameters unchanged
    2. The first bias-corrected step moves each coordinate by lr * g / (|g| + eps)
    """
    param = torch.nn.Parameter(torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64))
    optimizer = torch.optim.Adam([param], lr=0.1, betas=(0.9, 0.999), eps=1e-8)

    print("\n1. Zero gradient...")
    adam_update(optimizer, {"w": param}, {"w": torch.zeros(3, dtype=torch.float64)})
    assert torch.equal(param.detach(), torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64))

    print("\n2. First step closed form...")
    param = torch.nn.Parameter(torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64))
    optimizer = torch.optim.Adam([param], lr=0.1, betas=(0.9, 0.999), eps=1e-8)
    grad = torch.tensor([0.5, -3.0, 0.0], dtype=torch.float64)
    adam_update(optimizer, {"w": param}, {"w": grad}, lr=0.05)
    expected = torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64) - 0.05 * grad / (grad.abs() + 1e-8)
    assert torch.allclose(param.detach(), expected, atol=1e-12)
    assert optimizer.param_groups[0]["lr"] == 0.05


def test_baseline_shift_keeps_expected_gradient():
    """The exact expected REINFORCE gradient over a small categorical policy ignores the baseline value."""
    theta = torch.tensor([0.3, -1.2, 0.8, 0.1], dtype=torch.float64, requires_grad=True)
    costs = torch.tensor([5.0, 2.0, 7.0, 3.5], dtype=torch.float64)

    def expected_gradient(baseline: float) -> torch.Tensor:
        log_p = torch.log_softmax(theta, dim=0)
        weights = log_p.exp().detach()
        total = sum(
            weights[a] * reinforce_loss(log_p[a:a + 1], costs[a:a + 1], torch.tensor([baseline], dtype=torch.float64))
            for a in range(4)
        )
        (grad,) = torch.autograd.grad(total, theta)
        return grad

    reference = expected_gradient(0.0)
    assert reference.abs().sum() > 0
    for shift in (4.0, -3.0, 100.0):
        assert torch.allclose(expected_gradient(shift), reference, atol=1e-12), f"Shift {shift} biased the gradient"


def test_update_baseline(monkeypatch):
    """Test the baseline replacement rule:
    1. The epoch closing the warm-up freezes the candidate
    2. A significantly better candidate replaces the frozen policy
    3. A worse candidate is rejected
    4. A lower but insignificant mean is rejected
    """
    config = _tiny_train_config(warmup_epochs=1, ttest_alpha=0.05)
    env = EnvConfig(m_con=1, m_pre=3, n_vehicles=10)
    baseline = RolloutBaseline(config, env, make_variant("CVRP"))
    candidate = tiny_policy("jampr", "CVRP", seed=1)
    reference = np.arange(10.0, 20.0)
    noise = np.tile([0.1, -0.1], 5)
    candidate_costs = {}
    monkeypatch.setattr(
        train_module, "greedy_costs",
        lambda policy, states, batch_size: candidate_costs["now"] if policy is candidate else reference
    )
    val_states = [None] * len(reference)

    print("\n1. Closing the warm-up...")
    candidate_costs["now"] = reference + 5.0
    decision = update_baseline(candidate, baseline, val_states, epoch=0, batch_size=4)
    assert decision.replaced and baseline.frozen is not None
    assert baseline.info.frozen_epoch == 0 and baseline.info.replacements == 1

    print("\n2. Significant improvement...")
    candidate_costs["now"] = reference - 1.0 + noise
    decision = update_baseline(candidate, baseline, val_states, epoch=1, batch_size=4)
    assert decision.replaced and decision.p_value < 0.05
    assert decision.candidate_cost == pytest.approx(13.5)
    assert baseline.info.frozen_epoch == 1 and baseline.info.replacements == 2

    print("\n3. Regression...")
    candidate_costs["now"] = reference + 1.0 + noise
    decision = update_baseline(candidate, baseline, val_states, epoch=2, batch_size=4)
    assert not decision.replaced
    assert baseline.info.frozen_epoch == 1

    print("\n4. Insignificant improvement...")
    candidate_costs["now"] = reference + np.tile([-3.0, 2.9], 5)
    decision = update_baseline(candidate, baseline, val_states, epoch=3, batch_size=4)
    assert decision.candidate_cost < decision.baseline_cost
    assert not decision.replaced and decision.p_value >= 0.05
    assert baseline.info.replacements == 2


def test_resume_reproduces_next_epoch(tmp_path):
    """Resuming from the epoch-1 checkpoint gives the same epoch-2 metrics as an uninterrupted run."""
    variant = make_variant("CVRP")
    policy_config = tiny_policy_config("jampr", "CVRP")

    straight = train_service.train(_tiny_train_config(epochs=2), policy_config, variant, tmp_path / "straight")
    train_service.train(_tiny_train_config(epochs=1), policy_config, variant, tmp_path / "split")
    resumed = train_service.train(
        _tiny_train_config(epochs=2), policy_config, variant, tmp_path / "split",
        resume=tmp_path / "split" / "epoch-001.ckpt"
    )
    for column in ("train_cost", "val_cost", "lr"):
        assert resumed.metrics[column].iloc[1] == pytest.approx(straight.metrics[column].iloc[1], rel=1e-9), column
