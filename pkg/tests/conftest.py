import numpy as np
import pytest
import torch

torch.set_num_threads(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_state():
    """A small_unet with a nonzero step count, for inference-path tests."""
    from ctdenoise import DenoiserSpec, build_denoiser

    state = build_denoiser(DenoiserSpec.named("small_unet"), rng_seed=0)
    state.step_count = 1
    return state


@pytest.fixture
def small_images(rng):
    """A stack of normalized 32x32 images (divisible by the small backbone)."""
    return np.clip(rng.normal(0.5, 0.15, size=(4, 32, 32)), 0.0, 1.0).astype(np.float32)
