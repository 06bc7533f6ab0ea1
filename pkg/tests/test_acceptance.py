"""Acceptance suite: one test per criterion, each printing a PASS line.

Criteria 7-11 train real models on the phantom benchmark and take tens of
minutes on a small CPU; run them with `pytest tests/test_acceptance.py -v -s`.
"""

import dataclasses
import math
import time
from pathlib import Path

import numpy as np
import pytest

from ctdenoise import (
    DenoiserSpec,
    InferenceConfig,
    MaskSpec,
    NoiseSpec,
    TrainConfig,
    apply_mask,
    blindspot_mean_denoiser,
    build_denoiser,
    constant_denoiser,
    denoise,
    finite_difference_gradcheck,
    forward,
    identity_denoiser,
    psnr,
    rmse,
    sample_mask,
    sample_noise,
    ssim,
    verify_loss_identity,
)
from ctdenoise.experiments import (
    BENCHMARK_SEED,
    apply_sweep_value,
    benchmark_train_config,
    build_phantom_benchmark,
    evaluate_denoiser,
    load_phantom_benchmark,
)
from ctdenoise.metrics import SSIMParams
from ctdenoise.training import run_training

from test_metrics import psnr_oracle, rmse_oracle, ssim_oracle

SMALL = DenoiserSpec.named("small_unet")


def _report(criterion: str, detail: str) -> None:
    print(f"\n[acceptance] {criterion}: PASS ({detail})")


# --- shared heavy fixtures (criteria 7-11) ---------------------------------


@pytest.fixture(scope="session")
def benchmark(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_benchmark")
    build_phantom_benchmark(out, n_train=200, n_test=50, side=128, seed=BENCHMARK_SEED)
    return load_phantom_benchmark(out)


def _train_variant(benchmark, cfg: TrainConfig):
    state, log = run_training(benchmark["train_noisy"], cfg, SMALL, seed=BENCHMARK_SEED)
    inf_cfg = InferenceConfig(k_samples=cfg.k_steps, alpha=cfg.alpha, seed=BENCHMARK_SEED)
    report = evaluate_denoiser(
        state,
        benchmark["test_noisy"],
        benchmark["test_clean"],
        inf_cfg,
        image_ids=benchmark["test_ids"],
        patient_map=benchmark["patient_map"],
    )
    return state, log, report


@pytest.fixture(scope="session")
def variant_both(benchmark):
    return _train_variant(benchmark, benchmark_train_config())


@pytest.fixture(scope="session")
def variant_progressive_only(benchmark):
    cfg = apply_sweep_value(benchmark_train_config(), "ablation_combo", "progressive_only")
    return _train_variant(benchmark, cfg)


@pytest.fixture(scope="session")
def variant_noise_only(benchmark):
    cfg = apply_sweep_value(benchmark_train_config(), "ablation_combo", "noise_only")
    return _train_variant(benchmark, cfg)


@pytest.fixture(scope="session")
def noisy_baseline_psnr(benchmark):
    values = [
        psnr(noisy, clean)
        for noisy, clean in zip(benchmark["test_noisy"], benchmark["test_clean"])
    ]
    return float(np.mean(values))


# --- criterion 1: metric oracles --------------------------------------------


def test_criterion_01_metric_oracles():
    start = time.time()
    rng = np.random.default_rng(101)
    params = SSIMParams()
    max_psnr_err = max_ssim_err = max_rmse_err = 0.0
    for _ in range(100):
        a = rng.random((64, 64))
        b = np.clip(a + rng.normal(0.0, 0.1, a.shape), 0.0, 1.0)
        max_psnr_err = max(max_psnr_err, abs(psnr(a, b, 1.0) - psnr_oracle(a, b, 1.0)))
        max_ssim_err = max(max_ssim_err, abs(ssim(a, b, params) - ssim_oracle(a, b, params)))
        max_rmse_err = max(max_rmse_err, abs(rmse(a, b, 1.0) - rmse_oracle(a, b, 1.0)))
    assert max_psnr_err < 1e-9
    assert max_ssim_err < 1e-6
    assert max_rmse_err < 1e-12

    reference = rng.random((64, 64)) * 0.8
    assert psnr(reference + 0.1, reference, max_value=1.0) == 20.0

    elapsed = time.time() - start
    assert elapsed < 30.0
    _report(
        "criterion 1 (metric oracles)",
        f"psnr err {max_psnr_err:.1e}, ssim err {max_ssim_err:.1e}, "
        f"rmse err {max_rmse_err:.1e}, offset case exact, {elapsed:.1f}s",
    )


# --- criterion 2: mask statistics --------------------------------------------


def test_criterion_02_mask_statistics():
    start = time.time()
    n = 256 * 256
    worst = 0.0
    for alpha in (0.01, 0.1, 0.2):
        mask = sample_mask(MaskSpec(alpha=alpha, seed=21), (256, 256))
        bound = 3.0 * math.sqrt(alpha * (1.0 - alpha) / n)
        deviation = abs(mask.masked_fraction - alpha)
        assert deviation <= bound, f"alpha={alpha}: {deviation:.4f} > {bound:.4f}"
        worst = max(worst, deviation / bound)

    gen = np.random.default_rng(22)
    spec = MaskSpec(alpha=0.1, seed=0)
    stack = np.stack(
        [sample_mask(spec, (16, 16), rng=gen).values.ravel() for _ in range(10_000)]
    )
    pair_rng = np.random.default_rng(23)
    max_r = 0.0
    for i, j in pair_rng.choice(256, size=(20, 2), replace=False):
        r = np.corrcoef(stack[:, i], stack[:, j])[0, 1]
        max_r = max(max_r, abs(r))
    assert max_r < 0.05

    elapsed = time.time() - start
    assert elapsed < 60.0
    _report(
        "criterion 2 (mask statistics)",
        f"worst fraction deviation {worst:.2f} of 3-sigma bound, max |r| {max_r:.3f}, {elapsed:.1f}s",
    )


# --- criterion 3: blind-spot exactness ---------------------------------------


def test_criterion_03_blindspot_exactness():
    start = time.time()
    state = build_denoiser(SMALL, rng_seed=3)
    rng = np.random.default_rng(31)
    for trial in range(50):
        mask = sample_mask(MaskSpec(alpha=0.15, seed=trial), (64, 64))
        x = rng.random((64, 64)).astype(np.float32)
        x_alt = rng.random((64, 64)).astype(np.float32)
        keep = mask.values == 1.0
        x_alt[keep] = x[keep]
        out_a = forward(state, apply_mask(mask, x))
        out_b = forward(state, apply_mask(mask, x_alt))
        assert np.array_equal(out_a, out_b), f"trial {trial}: outputs differ"
    elapsed = time.time() - start
    assert elapsed < 60.0
    _report("criterion 3 (blind-spot exactness)", f"50/50 bit-identical, {elapsed:.1f}s")


# --- criterion 4: noise contract ---------------------------------------------


def test_criterion_04_noise_contract():
    start = time.time()
    n = 1_000_000
    ref = np.full((1000, 1000), 0.5, dtype=np.float32)
    field = sample_noise(NoiseSpec(sigma=10.0, poisson_scale=0.0), ref, rng=41) * 255.0
    mean, std = float(field.mean()), float(field.std())
    assert abs(mean) <= 4.0 * std / math.sqrt(n)
    assert 9.7 <= std <= 10.3

    combined = sample_noise(NoiseSpec(sigma=10.0, poisson_scale=2.0), ref, rng=42) * 255.0
    assert abs(combined.mean()) <= 4.0 * combined.std() / math.sqrt(n)

    elapsed = time.time() - start
    assert elapsed < 30.0
    _report(
        "criterion 4 (noise contract)",
        f"gaussian mean {mean:+.4f}, std {std:.3f}; combined mean {combined.mean():+.4f}; {elapsed:.1f}s",
    )


# --- criterion 5: loss identity ----------------------------------------------


def _identity_check_samples(rng, n_trials, side=12, eps_std=0.08):
    y = np.clip(
        rng.uniform(0.3, 0.7, size=(n_trials, 1, 1)) + np.zeros((n_trials, side, side)), 0, 1
    )
    x = y + rng.normal(0.0, eps_std, size=y.shape)
    return x, y


def test_criterion_05_loss_identity():
    start = time.time()
    n_trials = 10_000
    rng = np.random.default_rng(51)
    x, y = _identity_check_samples(rng, n_trials)
    noise = NoiseSpec(sigma=10.0)

    const_report = verify_loss_identity(
        constant_denoiser(0.5), x, y, noise, n_trials=n_trials, rng_seed=52
    )
    assert const_report.consistent, (
        f"constant denoiser residual {const_report.residual:.3e} "
        f"vs stderr {const_report.stderr:.3e}"
    )

    mean_report = verify_loss_identity(
        blindspot_mean_denoiser(radius=1), x, y, noise, n_trials=n_trials, rng_seed=53
    )
    assert mean_report.consistent

    id_report = verify_loss_identity(
        identity_denoiser(), x, y, noise, n_trials=n_trials, rng_seed=54
    )
    assert not id_report.consistent
    assert id_report.residual < 0

    elapsed = time.time() - start
    assert elapsed < 120.0
    _report(
        "criterion 5 (loss identity)",
        f"constant |res|/se {abs(const_report.residual) / const_report.stderr:.2f}, "
        f"mean-filter |res|/se {abs(mean_report.residual) / mean_report.stderr:.2f}, "
        f"identity flagged ({id_report.residual / id_report.stderr:.1f} se), {elapsed:.1f}s",
    )


# --- criterion 6: gradient check ----------------------------------------------


def test_criterion_06_gradient_check():
    start = time.time()
    state = build_denoiser(SMALL, rng_seed=6)
    x = np.random.default_rng(61).random((16, 16)).astype(np.float32)
    report = finite_difference_gradcheck(state, x, n_params=24, rng_seed=62)
    assert report.n_checked >= 20
    assert report.max_rel_error < 1e-3
    elapsed = time.time() - start
    assert elapsed < 120.0
    _report(
        "criterion 6 (gradient check)",
        f"{report.n_checked} coords, max rel err {report.max_rel_error:.2e}, {elapsed:.1f}s",
    )


# --- criterion 7: desk-scale denoising gain -----------------------------------


def test_criterion_07_denoising_gain(variant_both, noisy_baseline_psnr):
    _, log, report = variant_both
    gain = report.overall.psnr_mean - noisy_baseline_psnr
    assert gain >= 3.0, (
        f"PSNR gain {gain:.3f} dB < 3.0 "
        f"(noisy {noisy_baseline_psnr:.3f}, denoised {report.overall.psnr_mean:.3f})"
    )
    assert log.epochs[-1].mean_loss < log.epochs[0].mean_loss  # training made progress
    _report(
        "criterion 7 (denoising gain)",
        f"noisy {noisy_baseline_psnr:.3f} dB -> denoised {report.overall.psnr_mean:.3f} dB "
        f"(gain {gain:+.3f} dB)",
    )


# --- criterion 8: ablation ordering -------------------------------------------


def test_criterion_08_ablation_ordering(
    variant_both, variant_progressive_only, variant_noise_only
):
    both = variant_both[2].overall.psnr_mean
    prog = variant_progressive_only[2].overall.psnr_mean
    noise = variant_noise_only[2].overall.psnr_mean
    assert both > prog + 0.2, f"both={both:.3f} vs progressive-only={prog:.3f}"
    assert both > noise + 0.2, f"both={both:.3f} vs noise-only={noise:.3f}"
    _report(
        "criterion 8 (ablation ordering)",
        f"both {both:.3f} > progressive-only {prog:.3f} and noise-only {noise:.3f} "
        f"(margins {both - prog:+.3f} / {both - noise:+.3f} dB)",
    )


# --- criterion 9: k-sweep ordering --------------------------------------------


def test_criterion_09_k_sweep_ordering(variant_both, variant_noise_only):
    # the noise-only variant IS the k=1 configuration of the same recipe
    k5 = variant_both[2].overall.psnr_mean
    k1 = variant_noise_only[2].overall.psnr_mean
    assert k5 >= k1 + 0.2, f"k=5 {k5:.3f} vs k=1 {k1:.3f}"
    _report(
        "criterion 9 (k-sweep ordering)",
        f"PSNR(k=5) {k5:.3f} >= PSNR(k=1) {k1:.3f} + 0.2 (margin {k5 - k1:+.3f} dB)",
    )


# --- criterion 10: averaging benefit -------------------------------------------


def test_criterion_10_averaging_benefit(benchmark, variant_both):
    state = variant_both[0]
    cfg = InferenceConfig(k_samples=5, alpha=0.1, seed=BENCHMARK_SEED, keep_per_mask_outputs=True)
    wins = 0
    total = len(benchmark["test_noisy"])
    for noisy, clean in zip(benchmark["test_noisy"], benchmark["test_clean"]):
        result = denoise(state, noisy, cfg)
        averaged = psnr(result.image.pixels, clean)
        singles = [
            psnr(np.clip(out, 0.0, 1.0), clean) for out in result.per_mask_outputs
        ]
        if averaged >= float(np.median(singles)):
            wins += 1
    fraction = wins / total
    assert fraction >= 0.7, f"averaging beat the median single pass on only {fraction:.0%}"
    _report(
        "criterion 10 (averaging benefit)",
        f"averaged >= median single-mask PSNR on {wins}/{total} images ({fraction:.0%})",
    )


# --- criterion 11: reproducibility ---------------------------------------------


def test_criterion_11_reproducibility(benchmark, variant_both):
    _, _, first_report = variant_both
    _, _, second_report = _train_variant(benchmark, benchmark_train_config())
    assert second_report.overall.psnr_mean == first_report.overall.psnr_mean
    assert second_report.overall.ssim_mean == first_report.overall.ssim_mean
    assert second_report.overall.rmse_mean == first_report.overall.rmse_mean
    _report(
        "criterion 11 (reproducibility)",
        f"two seeded runs agree exactly (PSNR {first_report.overall.psnr_mean:.6f} dB)",
    )


# --- criterion 12: protocol fidelity --------------------------------------------


def test_criterion_12_protocol_defaults():
    frozen = {
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
    cfg = TrainConfig()
    actual = dataclasses.asdict(cfg)
    mismatches = {k: (actual[k], v) for k, v in frozen.items() if actual[k] != v}
    assert not mismatches, f"defaults deviate from the protocol table: {mismatches}"
    assert cfg.noise == NoiseSpec(sigma=10.0, poisson_scale=0.0, enabled=True)
    from ctdenoise import learning_rate_for_epoch

    assert learning_rate_for_epoch(cfg, 19) == 1e-3
    assert learning_rate_for_epoch(cfg, 20) == 5e-4
    assert learning_rate_for_epoch(cfg, 40) == 2.5e-4
    _report("criterion 12 (protocol fidelity)", "all defaults byte-match the frozen table")


# --- criterion 13: documented clinical-protocol recipe (non-gating) -------------


def test_criterion_13_documented_protocol_recipe():
    readme = Path(__file__).resolve().parents[1] / "README.md"
    text = readme.read_text()
    assert "Reproducing the clinical-protocol run" in text
    assert "ingest" in text and "train" in text
    _report("criterion 13 (documented recipe)", "README carries the full-protocol recipe")
