"""Step-wise blind-spot self-supervised training.

One training step runs a k-step chain on a noisy batch ``x``: the running
estimate starts at ``x``, and at every step a fresh Bernoulli mask blinds
part of the current estimate before the network re-denoises it, with the
loss taken against a freshly noise-injected copy of the raw input.
Injection noise is added to the *input* only at step 0 (the raw-image
step); targets receive a fresh draw at every step. Intermediate estimates
re-enter the chain as data (gradients are not propagated across steps),
and a single shared parameter set receives one optimizer update per chain.

At inference time the companion module averages independent masked
forwards instead of chaining; see :mod:`ctdenoise.inference`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import sampling
from .errors import ConfigurationError, TrainingDiverged
from .models import (
    DenoiserSpec,
    DenoiserState,
    build_denoiser,
    check_divisibility,
    save_checkpoint,
)
from .sampling import MaskSpec, NoiseSpec


@dataclass(frozen=True)
class TrainConfig:
    """Experiment configuration; defaults follow the training protocol."""

    k_steps: int = 5
    alpha: float = 0.1
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    epochs: int = 100
    lr_initial: float = 1e-3
    lr_halving_period_epochs: int = 20
    batch_size: int = 1
    patches_per_image: int = 10
    patch_side: int = 128
    loss: str = "l1"
    optimizer_betas: tuple = (0.9, 0.99)
    optimizer_eps: float = 1e-8
    update_per_step: bool = False
    backprop_through_chain: bool = False
    checkpoint_every: int = 20

    def __post_init__(self):
        if self.k_steps < 1:
            raise ConfigurationError(f"k_steps must be >= 1, got {self.k_steps}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.epochs < 1 or self.batch_size < 1 or self.patches_per_image < 1:
            raise ConfigurationError("epochs, batch_size and patches_per_image must be >= 1")
        if self.lr_initial <= 0 or self.lr_halving_period_epochs < 1:
            raise ConfigurationError("invalid learning-rate schedule parameters")
        if self.loss.lower() != "l1":
            raise ConfigurationError(f"unsupported loss {self.loss!r}; only 'l1' is defined")


def learning_rate_for_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Initial rate halved once per full halving period: lr0 * 2^-(e // period)."""
    return cfg.lr_initial * 0.5 ** (epoch // cfg.lr_halving_period_epochs)


@dataclass
class StepTrace:
    """Diagnostics for one chain step: its output estimate, mask and loss."""

    t: int
    x_hat: np.ndarray
    mask: sampling.MaskInstance
    loss_value: float


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    step_losses: tuple
    learning_rate: float


@dataclass
class TrainingLog:
    seed: int
    epochs: list = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.epochs.append(record)

    def write_jsonl(self, path) -> None:
        """One record per (epoch, step_index) pair plus per-epoch summaries."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(json.dumps({"kind": "run", "seed": self.seed}) + "\n")
            for rec in self.epochs:
                for t, loss in enumerate(rec.step_losses):
                    fh.write(
                        json.dumps(
                            {
                                "kind": "step",
                                "epoch": rec.epoch,
                                "step_index": t,
                                "loss": loss,
                                "lr": rec.learning_rate,
                            }
                        )
                        + "\n"
                    )
                fh.write(
                    json.dumps(
                        {
                            "kind": "epoch",
                            "epoch": rec.epoch,
                            "mean_loss": rec.mean_loss,
                            "lr": rec.learning_rate,
                        }
                    )
                    + "\n"
                )


def _make_optimizer(state: DenoiserState, cfg: TrainConfig, lr: float | None = None):
    return torch.optim.Adam(
        state.network.parameters(),
        lr=cfg.lr_initial if lr is None else lr,
        betas=cfg.optimizer_betas,
        eps=cfg.optimizer_eps,
    )


def _batch_to_tensor(batch: np.ndarray) -> tuple[torch.Tensor, bool]:
    arr = np.asarray(batch, dtype=np.float32)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected (H, W) or (N, H, W) batch, got shape {arr.shape}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("training batch must be normalized to [0, 1]")
    return torch.from_numpy(np.ascontiguousarray(arr)).unsqueeze(1), single


def train_step(
    state: DenoiserState,
    batch: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    optimizer: torch.optim.Optimizer | None = None,
) -> tuple[DenoiserState, list[StepTrace]]:
    """Run one k-step chain on a noisy batch and apply the optimizer update.

    Returns the (in-place updated) state and one trace per chain step;
    ``trace[t].x_hat`` is the estimate produced at step t, i.e. the input
    to step t+1.
    """
    tensor, single = _batch_to_tensor(batch)
    check_divisibility(state.spec, tensor.shape)
    if optimizer is None:
        optimizer = _make_optimizer(state, cfg)

    net = state.network
    was_training = net.training
    net.train(True)
    mask_spec = MaskSpec(alpha=cfg.alpha, seed=0)
    mask_shape = (tensor.shape[0], tensor.shape[2], tensor.shape[3])
    raw = tensor
    raw_np = np.asarray(batch, dtype=np.float32)

    traces: list[StepTrace] = []
    step_losses: list[torch.Tensor] = []
    x_hat = raw
    try:
        for t in range(cfg.k_steps):
            mask = sampling.sample_mask(mask_spec, mask_shape, rng=rng)
            mask_t = torch.from_numpy(mask.values).unsqueeze(1)
            target_noise = sampling.sample_noise(cfg.noise, raw_np, rng=rng)
            if t == 0:
                # the indicator step: injection on the input happens only
                # when the chain input is still the raw image
                input_noise = sampling.sample_noise(cfg.noise, raw_np, rng=rng)
                noise_t = torch.from_numpy(input_noise).reshape(tensor.shape)
                net_input = (x_hat + noise_t).clamp(0.0, 1.0)
            else:
                net_input = x_hat
            prediction = net(mask_t * net_input)
            target = (raw + torch.from_numpy(target_noise).reshape(tensor.shape)).clamp(0.0, 1.0)
            loss_t = (prediction - target).abs().mean()
            if not torch.isfinite(loss_t):
                raise TrainingDiverged(
                    f"non-finite loss at chain step {t} (step_count={state.step_count})"
                )
            step_losses.append(loss_t)
            if cfg.update_per_step:
                optimizer.zero_grad()
                loss_t.backward()
                optimizer.step()
            x_hat = prediction if cfg.backprop_through_chain else prediction.detach()
            trace_arr = x_hat.detach().squeeze(1).numpy().copy()
            traces.append(
                StepTrace(
                    t=t,
                    x_hat=trace_arr[0] if single else trace_arr,
                    mask=mask,
                    loss_value=float(loss_t.detach()),
                )
            )
        if not cfg.update_per_step:
            total = torch.stack(step_losses).sum()
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
    finally:
        net.train(was_training)

    state.step_count += 1
    return state, traces


def _dataset_to_array(dataset) -> np.ndarray:
    from .data import NormalizedImage, PatchBatch

    if isinstance(dataset, PatchBatch):
        return np.asarray(dataset.patches, dtype=np.float32)
    if isinstance(dataset, np.ndarray):
        arr = np.asarray(dataset, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None]
        return arr
    images = [
        img.pixels if isinstance(img, NormalizedImage) else np.asarray(img, dtype=np.float32)
        for img in dataset
    ]
    return np.stack(images).astype(np.float32)


def run_training(
    dataset,
    cfg: TrainConfig,
    spec: DenoiserSpec,
    seed: int,
    out_dir: str | Path | None = None,
) -> tuple[DenoiserState, TrainingLog]:
    """Full training loop: epochs x shuffled batches with the halving schedule.

    ``dataset`` is a PatchBatch, an (N, H, W) array, or a sequence of
    normalized images. Checkpoints and a JSONL log land in ``out_dir``
    when given. A fixed seed reproduces the run exactly on a fixed device.
    """
    patches = _dataset_to_array(dataset)
    if patches.shape[0] == 0:
        raise ConfigurationError("training dataset is empty")

    rng = np.random.default_rng(seed)
    state = build_denoiser(spec, rng_seed=seed)
    optimizer = _make_optimizer(state, cfg)
    log = TrainingLog(seed=seed)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    n = patches.shape[0]
    for epoch in range(cfg.epochs):
        lr = learning_rate_for_epoch(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = rng.permutation(n)
        totals = []
        step_sums = np.zeros(cfg.k_steps)
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            state, traces = train_step(state, patches[idx], cfg, rng, optimizer=optimizer)
            losses = [tr.loss_value for tr in traces]
            totals.append(sum(losses))
            step_sums += np.asarray(losses)
            n_batches += 1
        record = EpochRecord(
            epoch=epoch,
            mean_loss=float(np.mean(totals)),
            step_losses=tuple(step_sums / n_batches),
            learning_rate=lr,
        )
        log.append(record)
        if out_dir is not None and (
            (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs
        ):
            save_checkpoint(state, out_dir / f"checkpoint_epoch_{epoch + 1:04d}.pt")

    if out_dir is not None:
        save_checkpoint(state, out_dir / "checkpoint_final.pt")
        log.write_jsonl(out_dir / "training_log.jsonl")
    return state, log


# --- reference denoisers for the loss-identity diagnostic ---------------


def constant_denoiser(value: float = 0.0):
    """f(x) = constant image; trivially independent of every input pixel."""

    def fn(image: np.ndarray) -> np.ndarray:
        return np.full_like(np.asarray(image, dtype=np.float64), value)

    return fn


def blindspot_mean_denoiser(radius: int = 1):
    """Each output pixel is the mean of its neighborhood excluding itself.

    Mirror-boundary handling never reflects a pixel onto its own window
    center, so the output stays independent of the own-pixel value
    everywhere, including at edges.
    """
    from scipy.ndimage import convolve

    side = 2 * radius + 1
    kernel = np.ones((side, side), dtype=np.float64)
    kernel[radius, radius] = 0.0
    kernel /= kernel.sum()

    def fn(image: np.ndarray) -> np.ndarray:
        return convolve(np.asarray(image, dtype=np.float64), kernel, mode="mirror")

    return fn


def identity_denoiser():
    """f(x) = x; NOT blind-spot, useful as a counterexample."""

    def fn(image: np.ndarray) -> np.ndarray:
        return np.asarray(image, dtype=np.float64).copy()

    return fn


@dataclass(frozen=True)
class LossIdentityReport:
    """Monte Carlo decomposition of the noise-injected self-supervised risk.

    ``self_supervised`` estimates E||f(x+n1) - (x+n2)||^2, ``supervised``
    estimates E||f(x+n1) - (y+n2)||^2 and ``gap`` estimates E||x - y||^2,
    all as per-pixel means. For a blind-spot f and zero-mean noise the
    residual self_supervised - (supervised + gap) vanishes; ``consistent``
    says whether it lies within 4 standard errors of zero.
    """

    self_supervised: float
    supervised: float
    gap: float
    residual: float
    stderr: float
    n_trials: int
    consistent: bool


def verify_loss_identity(
    f,
    x_samples,
    y_samples,
    noise: NoiseSpec,
    n_trials: int,
    rng_seed: int = 0,
) -> LossIdentityReport:
    """Monte Carlo check that the self-supervised risk decomposes as
    supervised risk plus the noisy/clean gap.

    ``f`` maps one 2D array to a same-shape array and must be blind-spot
    for the residual to vanish; noise fields are used unclamped so the
    zero-mean assumption holds exactly. Trials cycle through the supplied
    (x, y) pairs, so passing at least ``n_trials`` independent pairs keeps
    per-trial terms independent.
    """
    if n_trials < 100:
        raise ConfigurationError(
            f"n_trials must be >= 100 for a meaningful estimate, got {n_trials}"
        )
    if len(x_samples) != len(y_samples) or len(x_samples) == 0:
        raise ConfigurationError("x_samples and y_samples must be equal-length and non-empty")

    rng = np.random.default_rng(rng_seed)
    lhs_terms = np.empty(n_trials)
    sup_terms = np.empty(n_trials)
    gap_terms = np.empty(n_trials)
    for i in range(n_trials):
        x = np.asarray(x_samples[i % len(x_samples)], dtype=np.float64)
        y = np.asarray(y_samples[i % len(y_samples)], dtype=np.float64)
        ref = np.clip(x, 0.0, 1.0).astype(np.float32)
        n1 = sampling.sample_noise(noise, ref, rng=rng).astype(np.float64)
        n2 = sampling.sample_noise(noise, ref, rng=rng).astype(np.float64)
        fx = np.asarray(f(x + n1), dtype=np.float64)
        lhs_terms[i] = np.mean((fx - (x + n2)) ** 2)
        sup_terms[i] = np.mean((fx - (y + n2)) ** 2)
        gap_terms[i] = np.mean((x - y) ** 2)

    diffs = lhs_terms - sup_terms - gap_terms
    residual = float(diffs.mean())
    stderr = float(diffs.std(ddof=1) / np.sqrt(n_trials))
    return LossIdentityReport(
        self_supervised=float(lhs_terms.mean()),
        supervised=float(sup_terms.mean()),
        gap=float(gap_terms.mean()),
        residual=residual,
        stderr=stderr,
        n_trials=n_trials,
        consistent=abs(residual) <= 4.0 * stderr,
    )
