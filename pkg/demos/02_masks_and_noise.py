"""
Bernoulli masks and zero-mean injection noise
=============================================

The two stochastic ingredients of training: blind-spot masks that zero a
random pixel subset, and the controlled Poisson+Gaussian noise injected
into inputs and targets. Both come with statistical contracts that this
script verifies empirically.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ctdenoise import MaskSpec, NoiseSpec, sample_mask, sample_noise

OUT = "demos/output"

# --- masks: each pixel blinded independently with probability alpha --------
for alpha in (0.01, 0.1, 0.2):
    mask = sample_mask(MaskSpec(alpha=alpha, seed=1), (256, 256))
    bound = 3 * np.sqrt(alpha * (1 - alpha) / mask.values.size)
    print(f"alpha={alpha:<5} masked fraction {mask.masked_fraction:.4f} "
          f"(binomial 3-sigma bound +/-{bound:.4f})")

fig, axes = plt.subplots(1, 3, figsize=(10, 3.4))
for ax, alpha in zip(axes, (0.01, 0.1, 0.2)):
    mask = sample_mask(MaskSpec(alpha=alpha, seed=1), (64, 64))
    ax.imshow(mask.values, cmap="gray", vmin=0, vmax=1)
    ax.set_title(f"alpha = {alpha}")
    ax.axis("off")
fig.tight_layout()
fig.savefig(f"{OUT}/masks.png", dpi=120)
plt.close(fig)
print(f"wrote {OUT}/masks.png")

# --- noise: zero-mean by construction, sigma on the 0-255 scale -------------
ref = np.full((1000, 1000), 0.5, dtype=np.float32)
gauss = sample_noise(NoiseSpec(sigma=10.0), ref, rng=2) * 255
mixed = sample_noise(NoiseSpec(sigma=10.0, poisson_scale=2.0), ref, rng=3) * 255
print(f"gaussian:  mean {gauss.mean():+.4f}  std {gauss.std():.3f} (target 10)")
print(f"combined:  mean {mixed.mean():+.4f}  std {mixed.std():.3f}")

fig, ax = plt.subplots(figsize=(6, 4))
bins = np.linspace(-50, 50, 120)
ax.hist(gauss.ravel(), bins=bins, alpha=0.6, density=True, label="AWGN sigma=10")
ax.hist(mixed.ravel(), bins=bins, alpha=0.6, density=True, label="+ centered Poisson")
ax.set_xlabel("noise value (0-255 scale)")
ax.legend()
fig.tight_layout()
fig.savefig(f"{OUT}/noise_histograms.png", dpi=120)
plt.close(fig)
print(f"wrote {OUT}/noise_histograms.png")
