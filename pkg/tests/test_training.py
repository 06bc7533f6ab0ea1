import dataclasses

import numpy as np
import pytest
import torch

import ctdenoise.sampling
from ctdenoise import (
    ConfigurationError,
    DenoiserSpec,
    MaskSpec,
    NoiseSpec,
    TrainConfig,
    TrainingDiverged,
    blindspot_mean_denoiser,
    build_denoiser,
    constant_denoiser,
    identity_denoiser,
    learning_rate_for_epoch,
    run_training,
    train_step,
    verify_loss_identity,
)
from ctdenoise.models import DenoiserState
from ctdenoise.training import _make_optimizer

SMALL = DenoiserSpec.named("small_unet")


def _cfg(**kwargs) -> TrainConfig:
    defaults = dict(k_steps=3, epochs=1, batch_size=2, patch_side=32)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


def _frozen_optimizer(state):
    return _make_optimizer(state, TrainConfig(), lr=0.0)


class _IdentityNet(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.dummy = torch.nn.Parameter(torch.zeros(1))

    def forward(self, x):
        return x + self.dummy * 0.0


class _NaNNet(torch.nn.Module):
    def forward(self, x):
        return x * float("nan")


def _identity_state() -> DenoiserState:
    return DenoiserState(network=_IdentityNet(), spec=DenoiserSpec.named("plain_cnn"), step_count=0)


# --- configuration ----------------------------------------------------------


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(k_steps=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(alpha=1.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(loss="l2")


def test_learning_rate_schedule_matches_protocol():
    cfg = TrainConfig()
    for epoch in range(0, 20):
        assert learning_rate_for_epoch(cfg, epoch) == 1e-3
    for epoch in range(20, 40):
        assert learning_rate_for_epoch(cfg, epoch) == 5e-4
    for epoch in range(40, 60):
        assert learning_rate_for_epoch(cfg, epoch) == 2.5e-4


# --- train_step mechanics ---------------------------------------------------


def test_single_step_reduces_to_plain_blindspot(small_images):
    # k=1 with injection disabled: the chain loss is exactly
    # L1(f(mask * x), x) for the same mask realization
    state = build_denoiser(SMALL, rng_seed=0)
    cfg = _cfg(k_steps=1, noise=NoiseSpec(enabled=False))
    seed = 314
    state, traces = train_step(
        state, small_images[:2], cfg, np.random.default_rng(seed), optimizer=_frozen_optimizer(state)
    )
    assert len(traces) == 1

    replay = ctdenoise.sampling.sample_mask(
        MaskSpec(cfg.alpha, 0), (2, 32, 32), rng=np.random.default_rng(seed)
    )
    assert np.array_equal(traces[0].mask.values, replay.values)

    x = torch.from_numpy(small_images[:2]).unsqueeze(1)
    mask_t = torch.from_numpy(replay.values).unsqueeze(1)
    state.network.train()
    with torch.no_grad():
        expected = (state.network(mask_t * x) - x).abs().mean().item()
    assert traces[0].loss_value == pytest.approx(expected, rel=1e-6)


def test_identity_network_is_fixed_point(small_images):
    state = _identity_state()
    cfg = _cfg(k_steps=3, alpha=1e-9, noise=NoiseSpec(enabled=False))
    state, traces = train_step(
        state, small_images, cfg, np.random.default_rng(0), optimizer=_frozen_optimizer(state)
    )
    for trace in traces:
        assert trace.loss_value == 0.0
        assert np.array_equal(trace.x_hat, small_images)


def test_chain_recursion_with_frozen_network(small_images):
    # with learning rate 0 the trace chain is the k-fold composition of
    # (mask then forward) applied to x
    state = build_denoiser(SMALL, rng_seed=1)
    cfg = _cfg(k_steps=5, noise=NoiseSpec(enabled=False), batch_size=4)
    seed = 2718
    state, traces = train_step(
        state, small_images, cfg, np.random.default_rng(seed), optimizer=_frozen_optimizer(state)
    )

    replay_rng = np.random.default_rng(seed)
    state.network.train()
    estimate = torch.from_numpy(small_images).unsqueeze(1)
    for trace in traces:
        mask = ctdenoise.sampling.sample_mask(MaskSpec(cfg.alpha, 0), (4, 32, 32), rng=replay_rng)
        assert np.array_equal(trace.mask.values, mask.values)
        with torch.no_grad():
            estimate = state.network(torch.from_numpy(mask.values).unsqueeze(1) * estimate)
        assert np.array_equal(trace.x_hat, estimate.squeeze(1).numpy())


def test_single_parameter_set_across_chain(small_images):
    # all k forwards inside one train_step see identical parameters;
    # the lone optimizer update lands afterwards
    state = build_denoiser(SMALL, rng_seed=0)
    snapshots = []

    def hook(module, inputs):
        snapshots.append(module.out.weight.detach().clone())

    handle = state.network.register_forward_pre_hook(hook)
    try:
        optimizer = _make_optimizer(state, TrainConfig(), lr=1e-3)
        before = state.network.out.weight.detach().clone()
        train_step(state, small_images, _cfg(k_steps=4), np.random.default_rng(0), optimizer)
    finally:
        handle.remove()
    assert len(snapshots) == 4
    for snap in snapshots:
        assert torch.equal(snap, before)
    assert not torch.equal(state.network.out.weight.detach(), before)


def test_update_per_step_changes_parameters_between_forwards(small_images):
    state = build_denoiser(SMALL, rng_seed=0)
    snapshots = []

    def hook(module, inputs):
        snapshots.append(module.out.weight.detach().clone())

    handle = state.network.register_forward_pre_hook(hook)
    try:
        optimizer = _make_optimizer(state, TrainConfig(), lr=1e-3)
        train_step(
            state, small_images, _cfg(k_steps=3, update_per_step=True),
            np.random.default_rng(0), optimizer,
        )
    finally:
        handle.remove()
    assert len(snapshots) == 3
    assert not torch.equal(snapshots[0], snapshots[1])
    assert not torch.equal(snapshots[1], snapshots[2])


def test_noise_draw_counts_respect_indicator(small_images, monkeypatch):
    # exactly one input-noise draw (t=0) plus k target-noise draws per chain
    calls = []
    original = ctdenoise.sampling.sample_noise

    def counting(spec, reference, rng=0):
        calls.append(reference.shape)
        return original(spec, reference, rng)

    monkeypatch.setattr(ctdenoise.sampling, "sample_noise", counting)
    state = build_denoiser(SMALL, rng_seed=0)
    k = 5
    train_step(state, small_images, _cfg(k_steps=k), np.random.default_rng(0))
    assert len(calls) == k + 1


def test_nan_loss_aborts_with_diagnostic(small_images):
    state = DenoiserState(network=_NaNNet(), spec=DenoiserSpec.named("plain_cnn"))
    state.network.dummy = torch.nn.Parameter(torch.zeros(1))
    with pytest.raises(TrainingDiverged, match="chain step 0"):
        train_step(state, small_images, _cfg(), np.random.default_rng(0))


def test_train_step_rejects_unnormalized_batch(small_images):
    state = build_denoiser(SMALL, rng_seed=0)
    with pytest.raises(ValueError, match="normalized"):
        train_step(state, small_images + 5.0, _cfg(), np.random.default_rng(0))


def test_backprop_through_chain_flag_runs(small_images):
    state = build_denoiser(SMALL, rng_seed=0)
    cfg = _cfg(k_steps=2, backprop_through_chain=True)
    _, traces = train_step(state, small_images, cfg, np.random.default_rng(0))
    assert len(traces) == 2
    assert all(np.isfinite(t.loss_value) for t in traces)


# --- run_training -----------------------------------------------------------


def test_run_training_rejects_empty_dataset():
    with pytest.raises(ConfigurationError, match="empty"):
        run_training(np.zeros((0, 32, 32)), _cfg(), SMALL, seed=0)


def test_run_training_deterministic(small_images):
    cfg = _cfg(k_steps=2, epochs=2)
    _, log_a = run_training(small_images, cfg, SMALL, seed=11)
    _, log_b = run_training(small_images, cfg, SMALL, seed=11)
    assert [r.mean_loss for r in log_a.epochs] == [r.mean_loss for r in log_b.epochs]
    _, log_c = run_training(small_images, cfg, SMALL, seed=12)
    assert [r.mean_loss for r in log_c.epochs] != [r.mean_loss for r in log_a.epochs]


def test_run_training_records_schedule_and_checkpoints(tmp_path, small_images):
    cfg = _cfg(k_steps=1, epochs=5, lr_initial=8e-4, lr_halving_period_epochs=2, checkpoint_every=2)
    state, log = run_training(small_images, cfg, SMALL, seed=0, out_dir=tmp_path)
    lrs = [r.learning_rate for r in log.epochs]
    assert lrs == [8e-4, 8e-4, 4e-4, 4e-4, 2e-4]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert (tmp_path / "checkpoint_epoch_0002.pt").exists()
    assert (tmp_path / "checkpoint_epoch_0004.pt").exists()
    assert (tmp_path / "checkpoint_epoch_0005.pt").exists()  # final epoch
    assert (tmp_path / "checkpoint_final.pt").exists()
    assert (tmp_path / "training_log.jsonl").exists()
    assert state.step_count == 5 * 2  # 5 epochs x 2 batches


def test_training_reduces_loss(rng):
    from ctdenoise import NoiseSpec, make_synthetic_dataset

    pairs = make_synthetic_dataset(16, 32, 3, NoiseSpec(sigma=25.0))
    noisy = np.stack([n.pixels for _, n in pairs])
    cfg = _cfg(k_steps=2, epochs=5, batch_size=4, lr_initial=2e-3)
    _, log = run_training(noisy, cfg, SMALL, seed=1)
    assert log.epochs[-1].mean_loss < log.epochs[0].mean_loss


# --- loss identity ----------------------------------------------------------


def _identity_samples(rng, n, side=12, eps_std=0.08):
    y = np.clip(rng.uniform(0.3, 0.7, size=(n, 1, 1)) + np.zeros((n, side, side)), 0, 1)
    x = y + rng.normal(0.0, eps_std, size=y.shape)
    return x, y


def test_loss_identity_constant_denoiser(rng):
    x, y = _identity_samples(rng, 2000)
    report = verify_loss_identity(
        constant_denoiser(0.5), x, y, NoiseSpec(sigma=10.0), n_trials=2000, rng_seed=0
    )
    assert report.consistent
    assert abs(report.residual) <= 4.0 * report.stderr
    # closed form: lhs = E|f - x - n2|^2 should match sup + gap
    assert report.self_supervised == pytest.approx(report.supervised + report.gap, rel=0.05)


def test_loss_identity_blindspot_mean_filter(rng):
    x, y = _identity_samples(rng, 2000)
    report = verify_loss_identity(
        blindspot_mean_denoiser(radius=1), x, y, NoiseSpec(sigma=10.0), n_trials=2000, rng_seed=1
    )
    assert report.consistent


def test_loss_identity_flags_identity_function(rng):
    # f(x) = x is not blind-spot: the cross term equals -2 Var(eps) and the
    # residual must be flagged as inconsistent
    x, y = _identity_samples(rng, 2000, eps_std=0.08)
    report = verify_loss_identity(
        identity_denoiser(), x, y, NoiseSpec(sigma=10.0), n_trials=2000, rng_seed=2
    )
    assert not report.consistent
    assert report.residual < 0
    assert report.residual == pytest.approx(-2.0 * 0.08**2, rel=0.15)


def test_loss_identity_no_noise_degenerates_to_plain_decomposition(rng):
    x, y = _identity_samples(rng, 1500)
    report = verify_loss_identity(
        blindspot_mean_denoiser(radius=1), x, y, NoiseSpec(enabled=False), n_trials=1500, rng_seed=3
    )
    assert report.consistent


def test_loss_identity_requires_enough_trials(rng):
    x, y = _identity_samples(rng, 10)
    with pytest.raises(ConfigurationError):
        verify_loss_identity(constant_denoiser(), x, y, NoiseSpec(), n_trials=99)


# --- frozen protocol defaults (also exercised by the acceptance suite) ------


def test_default_config_matches_protocol_table():
    cfg = TrainConfig()
    table = {
        "k_steps": 5,
        "alpha": 0.1,
        "epochs": 100,
        "lr_initial": 1e-3,
        "lr_halving_period_epochs": 20,
        "batch_size": 1,
        "patches_per_image": 10,
        "patch_side": 128,
        "loss": "l1",
        "optimizer_betas": (0.9, 0.99),
        "optimizer_eps": 1e-8,
    }
    actual = dataclasses.asdict(cfg)
    for key, expected in table.items():
        assert actual[key] == expected, key
    assert cfg.noise == NoiseSpec(sigma=10.0, poisson_scale=0.0, enabled=True)
