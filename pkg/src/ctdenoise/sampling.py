"""Bernoulli blind-spot masks and zero-mean Poisson+Gaussian injection noise.

Masks blind each pixel independently with probability ``alpha``; blinded
pixels are zeroed by a plain Hadamard product, which is what makes the
downstream denoiser output at a blinded location independent of that
location's input value.

Noise amplitudes are specified on the 8-bit display scale (0-255) because
that is the conventional unit for sigma in the denoising literature; all
generated fields are returned in normalized [0,1] units. The Poisson term
is centered by subtracting its expectation so the combined field is
zero-mean by construction.

All samplers are stateless: they draw either from a fresh generator seeded
by the spec/seed argument (deterministic per call) or from a caller-owned
``numpy.random.Generator`` (advancing stream). Parallel workers must
partition the seed space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

# Display scale on which sigma and poisson_scale are expressed.
INTENSITY_SCALE = 255.0


def _as_generator(rng: int | np.random.Generator | None, fallback_seed: int = 0) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng(fallback_seed)
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class MaskSpec:
    """Parameters of a Bernoulli blind-spot mask.

    ``alpha`` is the probability that a pixel is blinded; each pixel is
    kept independently with probability ``1 - alpha``.
    """

    alpha: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"mask alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class MaskInstance:
    """A realized binary mask: 1.0 = keep, 0.0 = blind spot."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if not np.isin(vals, (0.0, 1.0)).all():
            raise ConfigurationError("mask values must be exactly 0 or 1")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def masked_fraction(self) -> float:
        """Empirical fraction of blinded pixels."""
        return float(1.0 - np.mean(self.values))


@dataclass(frozen=True)
class NoiseSpec:
    """Combined Poisson+Gaussian injection noise.

    ``sigma`` is the Gaussian standard deviation on the 0-255 scale.
    ``poisson_scale`` is the photon count per unit of 0-255 intensity;
    0 disables the Poisson term. ``enabled=False`` turns the whole
    injection off (samplers return zero fields).
    """

    sigma: float = 10.0
    poisson_scale: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigurationError(f"noise sigma must be >= 0, got {self.sigma}")
        if self.poisson_scale < 0:
            raise ConfigurationError(
                f"poisson_scale must be >= 0, got {self.poisson_scale}"
            )


def sample_mask(
    spec: MaskSpec,
    shape: tuple,
    rng: np.random.Generator | None = None,
) -> MaskInstance:
    """Draw an i.i.d. Bernoulli(1 - alpha) keep mask of the given shape.

    Without an explicit generator the draw is a pure function of
    ``spec.seed``; passing a generator advances its stream so repeated
    calls yield fresh masks.
    """
    if any(int(s) <= 0 for s in shape):
        raise ConfigurationError(f"mask shape must be positive, got {shape}")
    gen = _as_generator(rng, fallback_seed=spec.seed)
    values = (gen.random(shape) >= spec.alpha).astype(np.float32)
    return MaskInstance(values)


def apply_mask(mask: MaskInstance, image: np.ndarray) -> np.ndarray:
    """Hadamard product of mask and image; blinded pixels become exactly 0."""
    image = np.asarray(image)
    if mask.values.shape != image.shape:
        raise ValueError(
            f"mask shape {mask.values.shape} does not match image shape {image.shape}"
        )
    return mask.values * image


def sample_noise(
    spec: NoiseSpec,
    reference: np.ndarray,
    rng: int | np.random.Generator | None = 0,
) -> np.ndarray:
    """Generate a zero-mean noise field for a normalized reference image.

    The field is ``gaussian(0, sigma) + poisson(ref_255 * scale) / scale
    - ref_255`` on the 0-255 scale, returned divided by 255. The Poisson
    term is signal-dependent and centered at zero; disabling the spec
    yields an all-zero field. Clamping of ``reference + noise`` is the
    caller's job (see :func:`add_noise`).
    """
    reference = np.asarray(reference, dtype=np.float32)
    if not spec.enabled:
        return np.zeros_like(reference)
    if reference.size and (reference.min() < 0.0 or reference.max() > 1.0):
        raise ValueError("reference image must be normalized to [0, 1]")
    gen = _as_generator(rng)
    noise = gen.normal(0.0, spec.sigma, size=reference.shape)
    if spec.poisson_scale > 0:
        rate = reference.astype(np.float64) * INTENSITY_SCALE * spec.poisson_scale
        # poisson(rate)/scale has expectation ref_255, so subtracting it centers the term
        noise = noise + gen.poisson(rate) / spec.poisson_scale - reference * INTENSITY_SCALE
    return (noise / INTENSITY_SCALE).astype(np.float32)


def add_noise(image: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Add a noise field to a normalized image and clamp to [0, 1].

    Equivalent to adding on the 0-255 scale and cropping to that range.
    The floor clamp at 0 mirrors the ceiling clamp at 255: negative
    intensities are physically meaningless after normalization.
    """
    image = np.asarray(image)
    noise = np.asarray(noise)
    if image.shape != noise.shape:
        raise ValueError(
            f"image shape {image.shape} does not match noise shape {noise.shape}"
        )
    return np.clip(image + noise, 0.0, 1.0).astype(np.float32)
