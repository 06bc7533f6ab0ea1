"""Multi-mask averaged inference.

The trained network sees k independently masked copies of the same input,
one plain forward each (no chaining, no noise), and the outputs are
averaged. Full slices whose sides violate the backbone's divisibility
constraint are processed as overlapping tiles stitched by averaging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models, sampling
from .data import NormalizedImage, Provenance
from .errors import ConfigurationError
from .models import DenoiserState
from .sampling import MaskSpec

DEFAULT_TILE_OVERLAP = 32


@dataclass(frozen=True)
class InferenceConfig:
    """Mask count and ratio default to the training-time settings (k=5, alpha=0.1)."""

    k_samples: int = 5
    alpha: float = 0.1
    seed: int = 0
    tile_side: int | None = None
    tile_overlap: int = DEFAULT_TILE_OVERLAP
    keep_per_mask_outputs: bool = True

    def __post_init__(self):
        if self.k_samples < 1:
            raise ConfigurationError(f"k_samples must be >= 1, got {self.k_samples}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.tile_side is not None and self.tile_side < 1:
            raise ConfigurationError(f"tile_side must be positive, got {self.tile_side}")
        if self.tile_overlap < 0:
            raise ConfigurationError(f"tile_overlap must be >= 0, got {self.tile_overlap}")


@dataclass
class DenoisedResult:
    """Averaged output plus the per-mask branches that produced it.

    ``mean_output`` is the exact arithmetic mean of the per-mask outputs;
    ``image`` is that mean clipped to [0, 1] so it satisfies the
    normalized-image contract.
    """

    image: NormalizedImage
    mean_output: np.ndarray
    per_mask_outputs: list | None
    masks_used: list


def _require_trained(state: DenoiserState) -> None:
    if state.step_count < 1:
        raise ConfigurationError(
            "denoiser state has no training steps; load a trained checkpoint first"
        )


def _image_pixels(image) -> np.ndarray:
    if isinstance(image, NormalizedImage):
        return np.asarray(image.pixels, dtype=np.float32)
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {arr.shape}")
    return arr


def _tile_starts(extent: int, tile: int, stride: int) -> list[int]:
    if tile >= extent:
        return [0]
    starts = list(range(0, extent - tile, stride))
    starts.append(extent - tile)
    return starts


def _forward_tiled(state: DenoiserState, pixels: np.ndarray, cfg: InferenceConfig) -> np.ndarray:
    """Single eval-mode forward, tiling when the extent requires it."""
    divisor = state.spec.divisor
    h, w = pixels.shape
    tile = cfg.tile_side
    divisible = h % divisor == 0 and w % divisor == 0
    if tile is None and divisible:
        return models.forward(state, pixels, training_mode=False)
    if tile is None:
        # pick the largest divisible tile not exceeding either extent
        tile = min(h // divisor, w // divisor, max(1, 128 // divisor)) * divisor
        if tile <= 0:
            raise ValueError(
                f"image of shape {pixels.shape} is smaller than the backbone divisor {divisor}"
            )
    if tile % divisor:
        raise ConfigurationError(
            f"tile_side {tile} must be divisible by the backbone divisor {divisor}"
        )
    if tile >= h and tile >= w:
        if not divisible:
            raise ValueError(
                f"input sides {h}x{w} not divisible by {divisor} and too small to tile"
            )
        return models.forward(state, pixels, training_mode=False)
    tile_h = min(tile, h)
    tile_w = min(tile, w)
    if tile_h % divisor or tile_w % divisor:
        raise ValueError(f"cannot tile shape {pixels.shape} with divisor {divisor}")
    stride_h = max(1, tile_h - cfg.tile_overlap)
    stride_w = max(1, tile_w - cfg.tile_overlap)
    acc = np.zeros((h, w), dtype=np.float64)
    weight = np.zeros((h, w), dtype=np.float64)
    for r0 in _tile_starts(h, tile_h, stride_h):
        for c0 in _tile_starts(w, tile_w, stride_w):
            patch = pixels[r0 : r0 + tile_h, c0 : c0 + tile_w]
            out = models.forward(state, patch, training_mode=False)
            acc[r0 : r0 + tile_h, c0 : c0 + tile_w] += out
            weight[r0 : r0 + tile_h, c0 : c0 + tile_w] += 1.0
    return (acc / weight).astype(np.float32)


def denoise(state: DenoiserState, image, cfg: InferenceConfig | None = None) -> DenoisedResult:
    """Average k independently masked eval-mode forwards of the same input.

    Each branch gets its own Bernoulli mask derived deterministically from
    ``cfg.seed``; branches are single plain forwards, never a chain.
    """
    cfg = cfg or InferenceConfig()
    _require_trained(state)
    pixels = _image_pixels(image)
    provenance = image.provenance if isinstance(image, NormalizedImage) else Provenance.REAL_LDCT

    seed_gen = np.random.default_rng(cfg.seed)
    mask_seeds = [int(s) for s in seed_gen.integers(0, 2**63 - 1, size=cfg.k_samples)]

    outputs = []
    for seed in mask_seeds:
        mask = sampling.sample_mask(MaskSpec(alpha=cfg.alpha, seed=seed), pixels.shape)
        masked = sampling.apply_mask(mask, pixels)
        outputs.append(_forward_tiled(state, masked, cfg))

    mean_output = np.mean(np.stack(outputs), axis=0)
    result_image = NormalizedImage(
        np.clip(mean_output, 0.0, 1.0).astype(np.float32), provenance
    )
    return DenoisedResult(
        image=result_image,
        mean_output=mean_output.astype(np.float32),
        per_mask_outputs=outputs if cfg.keep_per_mask_outputs else None,
        masks_used=mask_seeds,
    )


def denoise_no_mask(state: DenoiserState, image, cfg: InferenceConfig | None = None) -> NormalizedImage:
    """Diagnostic single unmasked forward (the all-ones-mask limit)."""
    cfg = cfg or InferenceConfig()
    _require_trained(state)
    pixels = _image_pixels(image)
    provenance = image.provenance if isinstance(image, NormalizedImage) else Provenance.REAL_LDCT
    out = _forward_tiled(state, pixels, cfg)
    return NormalizedImage(np.clip(out, 0.0, 1.0).astype(np.float32), provenance)


def denoise_chained(state: DenoiserState, image, cfg: InferenceConfig | None = None) -> DenoisedResult:
    """Diagnostic chained mode: re-mask and re-denoise k times sequentially.

    This mirrors the training recursion instead of the canonical averaging
    mode; the result is the final chain estimate.
    """
    cfg = cfg or InferenceConfig()
    _require_trained(state)
    pixels = _image_pixels(image)
    provenance = image.provenance if isinstance(image, NormalizedImage) else Provenance.REAL_LDCT

    seed_gen = np.random.default_rng(cfg.seed)
    mask_seeds = [int(s) for s in seed_gen.integers(0, 2**63 - 1, size=cfg.k_samples)]

    estimate = pixels
    outputs = []
    for seed in mask_seeds:
        mask = sampling.sample_mask(MaskSpec(alpha=cfg.alpha, seed=seed), estimate.shape)
        masked = mask.values * estimate
        estimate = _forward_tiled(state, masked, cfg)
        outputs.append(estimate)

    result_image = NormalizedImage(
        np.clip(estimate, 0.0, 1.0).astype(np.float32), provenance
    )
    return DenoisedResult(
        image=result_image,
        mean_output=estimate.astype(np.float32),
        per_mask_outputs=outputs if cfg.keep_per_mask_outputs else None,
        masks_used=mask_seeds,
    )
