import json
import math

import numpy as np
import pytest
import torch

from services import baselines, training
from services.benchmark import relative_gap
from services.checkpoint import load_checkpoint, load_policy
from services.errors import ConfigError, NumericFault, TrainingDivergence
from services.instance import GeneratorConfig, VariantFlags, generate_instance
from services.policy import ModelConfig, VapPolicy, masked_entropy
from services.training import (
    RunConfig,
    TrainConfig,
    covariance_mask,
    entropy_coefficient,
    load_run_config,
    lr_schedule,
    make_batch,
    make_optimizer,
    policy_gradient_loss,
    shared_baseline,
)


def tiny_run(**train_overrides) -> RunConfig:
    train_values = dict(
        epochs=2,
        batches_per_epoch=2,
        batch_size=2,
        samples=2,
        val_size=2,
        warmup=0,
        patience=None,
        seed=5,
    )
    train_values.update(train_overrides)
    return RunConfig(
        generator=GeneratorConfig(n_customers=4, fleet_size=3, n_vehicle_types=2),
        model=ModelConfig(d_h=8, n_layers=1, n_head=2, ff_hidden=16, n_vehicle_types=2),
        train=TrainConfig(**train_values),
    )


def test_shared_baseline():
    baseline, advantages = shared_baseline([-1.0, -2.0, -3.0])
    assert baseline == pytest.approx(-2.0)
    assert advantages.tolist() == pytest.approx([1.0, 0.0, -1.0])

    baseline, advantages = shared_baseline([[-1.0, -3.0], [-4.0, -4.0]])
    assert baseline.tolist() == [-2.0, -4.0]
    assert advantages.tolist() == [[1.0, -1.0], [0.0, 0.0]]


def test_covariance_mask_detaches_high_covariance_tokens():
    log_probs = torch.tensor([-0.1, -3.0, -0.2, -2.5])
    advantages = torch.tensor([5.0, -5.0, 4.0, -4.0])
    rng = np.random.default_rng(0)
    everything = covariance_mask(log_probs, advantages, 1.0, rng, eta_quantile=0.0)
    assert everything.tolist() == [True, True, True, True]
    nothing = covariance_mask(log_probs, advantages, 0.0, rng, eta_quantile=0.0)
    assert not nothing.any()
    above_ceiling = covariance_mask(log_probs, advantages, 1.0, rng, eta=10.0)
    assert not above_ceiling.any()


def test_covariance_mask_ignores_negative_covariance():
    log_probs = torch.tensor([-0.1, -3.0])
    advantages = torch.tensor([-5.0, 5.0])
    rng = np.random.default_rng(0)
    assert not covariance_mask(log_probs, advantages, 1.0, rng, eta=-10.0).any()
    assert covariance_mask(log_probs, advantages, 1.0, rng, eta=-10.0, clamp=None).all()


def test_covariance_mask_on_empty_batch():
    empty = torch.zeros(0)
    assert covariance_mask(empty, empty, 0.5, np.random.default_rng(0)).numel() == 0


def test_uniform_entropy_is_log_of_support():
    mask = torch.tensor([[True, False, True, True, False]])
    log_probs = torch.where(mask, torch.full((1, 5), math.log(1 / 3)), torch.full((1, 5), -math.inf))
    assert masked_entropy(log_probs, mask).item() == pytest.approx(math.log(3))


def test_zero_advantage_zero_loss():
    log_probs = torch.tensor([[-0.5, -1.0], [-0.2, -0.7]], requires_grad=True)
    valid = torch.ones(2, 2, dtype=torch.bool)
    loss, _ = policy_gradient_loss(log_probs, torch.zeros(2, 2), valid, torch.zeros(2), sigma=0.0)
    loss.backward()
    assert loss.item() == 0.0
    assert torch.all(log_probs.grad == 0)


def test_detached_tokens_receive_no_gradient():
    log_probs = torch.tensor([[-0.5, -1.0, -0.3], [-0.2, -0.7, -0.9]], requires_grad=True)
    valid = torch.tensor([[True, True, True], [True, True, False]])
    advantages = torch.tensor([1.5, -1.5])
    detach = torch.zeros(2, 3, dtype=torch.bool)
    detach[0, 1] = True
    loss, _ = policy_gradient_loss(log_probs, torch.zeros(2, 3), valid, advantages, 0.0, detach)
    loss.backward()
    grad = log_probs.grad
    assert grad[0, 1] == 0
    assert grad[1, 2] == 0
    assert grad[0, 0].item() == pytest.approx(-0.75)
    assert grad[1, 0].item() == pytest.approx(0.75)


def test_no_detach_matches_plain_reinforce():
    torch.manual_seed(0)
    base = torch.randn(3, 4)
    valid = torch.ones(3, 4, dtype=torch.bool)
    advantages = torch.tensor([1.0, -0.5, -0.5])

    a = base.clone().requires_grad_(True)
    loss_a, _ = policy_gradient_loss(a, torch.zeros(3, 4), valid, advantages, 0.0, None)
    loss_a.backward()
    b = base.clone().requires_grad_(True)
    loss_b, _ = policy_gradient_loss(b, torch.zeros(3, 4), valid, advantages, 0.0, torch.zeros_like(valid))
    loss_b.backward()

    expected = -(advantages * base.sum(dim=1)).mean()
    assert loss_a.item() == pytest.approx(expected.item())
    assert loss_a.item() == loss_b.item()
    assert torch.equal(a.grad, b.grad)


def test_entropy_bonus_lowers_loss():
    log_probs = torch.tensor([[-0.5, -1.0]])
    entropy = torch.tensor([[0.6, 0.8]])
    valid = torch.tensor([[True, True]])
    loss, mean_entropy = policy_gradient_loss(log_probs, entropy, valid, torch.zeros(1), 0.5)
    assert mean_entropy.item() == pytest.approx(0.7)
    assert loss.item() == pytest.approx(-0.35)


def test_non_finite_loss_is_a_numeric_fault():
    log_probs = torch.tensor([[float("nan")]])
    with pytest.raises(NumericFault):
        policy_gradient_loss(log_probs, torch.zeros(1, 1), torch.ones(1, 1, dtype=torch.bool), torch.ones(1), 0.0)


def test_lr_schedule():
    cfg = TrainConfig(epochs=10, batches_per_epoch=10, warmup=20)
    assert lr_schedule(0, cfg) == 0.0
    assert lr_schedule(10, cfg) == pytest.approx(1.5e-4)
    assert lr_schedule(20, cfg) == pytest.approx(3e-4)
    assert lr_schedule(cfg.total_steps, cfg) == pytest.approx(2e-4)
    values = [lr_schedule(step, cfg) for step in range(20, cfg.total_steps + 1)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_entropy_coefficient_schedule():
    cfg = TrainConfig(epochs=50)
    assert entropy_coefficient(1, cfg) == 0.03
    assert entropy_coefficient(20, cfg) == 0.03
    assert entropy_coefficient(21, cfg) == pytest.approx(0.03 * 29 / 30)
    assert entropy_coefficient(50, cfg) == 0.0
    assert entropy_coefficient(5, TrainConfig(epochs=50, entropy_regularization=False)) == 0.0


def test_adamw_applies_decoupled_weight_decay():
    policy = VapPolicy(ModelConfig(d_h=8, n_layers=1, n_head=2, ff_hidden=16, n_vehicle_types=2))
    optimizer, _ = make_optimizer(policy, TrainConfig(warmup=0))
    group = optimizer.param_groups[0]
    assert group["lr"] == pytest.approx(3e-4)
    assert group["weight_decay"] == 0.01

    before = policy.decoder.W_Q.weight.detach().clone()
    for p in policy.parameters():
        p.grad = torch.zeros_like(p)
    optimizer.step()
    after = policy.decoder.W_Q.weight.detach()
    assert not torch.equal(after, before)
    assert torch.allclose(after, before * (1 - group["lr"] * 0.01), rtol=2e-7, atol=0)


def test_config_errors_name_the_key(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"train": {"bogus": 1}}))
    with pytest.raises(ConfigError, match="train.bogus"):
        load_run_config(path)

    path.write_text(json.dumps({"model": {"n_vehicle_types": 2}}))
    with pytest.raises(ConfigError, match="n_vehicle_types"):
        load_run_config(path)

    path.write_text("{\"train\": ")
    with pytest.raises(ConfigError, match="line"):
        load_run_config(path)

    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")


def test_unknown_training_variant_rejected():
    with pytest.raises(ValueError):
        TrainConfig(variants=["cvrp", "zz"])


def test_batches_cycle_through_variants():
    run = tiny_run(variants=["cvrp", "tw"], batch_size=3)
    first = make_batch(run, 1, 0)
    assert [inst.variant for inst in first] == [
        VariantFlags(),
        VariantFlags(time_window=True),
        VariantFlags(),
    ]
    second = make_batch(run, 1, 1)
    assert second[0].variant == VariantFlags(time_window=True)
    assert [inst.nodes for inst in make_batch(run, 1, 0)] == [inst.nodes for inst in first]


def test_tiny_training_run(tmp_path):
    result = training.train(tiny_run(), tmp_path)
    assert result.epochs_run == 2
    assert result.last_checkpoint.is_file()
    assert result.best_checkpoint.is_file()

    rows = [json.loads(line) for line in result.metrics_path.read_text().splitlines()]
    assert [row["epoch"] for row in rows] == [1, 2]
    for row in rows:
        assert set(row) >= {"loss", "mean_reward", "entropy", "detach_fraction", "val_cost", "lr", "sigma"}
        assert all(math.isfinite(row[key]) for key in ("loss", "mean_reward", "val_cost"))

    ckpt = load_checkpoint(result.last_checkpoint)
    assert ckpt.epoch == 2
    assert ckpt.model_config.d_h == 8


def test_training_is_deterministic(tmp_path):
    first = training.train(tiny_run(), tmp_path / "a")
    second = training.train(tiny_run(), tmp_path / "b")
    assert first.history == second.history


def test_resume_continues_epochs(tmp_path):
    training.train(tiny_run(epochs=1), tmp_path)
    result = training.train(tiny_run(epochs=3), tmp_path, resume=tmp_path / "checkpoint_last.pt")
    assert result.epochs_run == 3
    assert [row["epoch"] for row in result.history] == [2, 3]
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(line)["epoch"] for line in lines] == [1, 2, 3]


def test_divergence_saves_abort_checkpoint(tmp_path, monkeypatch):
    def diverge(*args, **kwargs):
        raise NumericFault("non-finite loss")

    monkeypatch.setattr(training, "train_step", diverge)
    with pytest.raises(TrainingDivergence):
        training.train(tiny_run(), tmp_path)
    assert (tmp_path / "checkpoint_abort.pt").is_file()


@pytest.mark.slow
def test_desk_training_target(tmp_path):
    run = RunConfig(
        generator=GeneratorConfig(n_customers=10, fleet_size=3, n_vehicle_types=2),
        model=ModelConfig(d_h=32, n_layers=3, n_head=4, ff_hidden=64, n_vehicle_types=2),
        train=TrainConfig(
            epochs=50, batches_per_epoch=20, batch_size=32, samples=8, warmup=20, val_size=64, lr_start=1e-3,
            lr_end=5e-4, patience=None, seed=1,
        ),
    )
    result = training.train(run, tmp_path)
    assert result.best_val_cost <= 0.8 * result.initial_val_cost

    policy = load_policy(result.best_checkpoint)
    gaps = []
    for seed in range(100):
        inst = generate_instance(GeneratorConfig(n_customers=6, fleet_size=3, n_vehicle_types=2, seed=50_000 + seed))
        oracle = baselines.exhaustive_solve(inst)
        sampled = baselines.sample_best(policy, inst, 256, seed=seed)
        gaps.append(relative_gap(sampled.objective, oracle.best_cost))
    assert np.mean(gaps) <= 0.10


def test_advantages_sum_to_zero():
    rewards = np.random.default_rng(0).normal(-5.0, 2.0, size=(4, 16))
    baseline, advantages = shared_baseline(rewards)
    assert shared_baseline([-2.0, -4.0])[0] == -3.0
    assert np.all(np.abs(advantages.sum(axis=1)) <= 1e-12 * 16 * np.abs(rewards).max())
    assert baseline.shape == (4,)
