"""
Mini ablation and parameter sweep
=================================

A desk-scale version of the component study: progressive-only vs
noise-only vs both, plus a short sweep over the chain length k. Uses a
reduced dataset and epoch count so the whole script runs in a few minutes;
the acceptance suite runs the full-size version with binding assertions.
"""

from ctdenoise import DenoiserSpec, NoiseSpec, TrainConfig
from ctdenoise.experiments import (
    SweepSpec,
    build_phantom_benchmark,
    run_ablation_table,
    run_sweep,
)

OUT = "demos/output"
DATA = f"{OUT}/mini_benchmark"

build_phantom_benchmark(DATA, n_train=48, n_test=12, side=64, seed=7)

cfg = TrainConfig(
    k_steps=5,
    alpha=0.1,
    noise=NoiseSpec(sigma=10.0),
    epochs=6,
    lr_initial=3e-3,
    lr_halving_period_epochs=3,
    batch_size=8,
    patch_side=64,
    patches_per_image=1,
)
model = DenoiserSpec.named("small_unet")

# --- component ablation: the combined recipe should come out on top --------
result = run_ablation_table(
    DATA, f"{OUT}/mini_ablation", cfg=cfg, model=model, seed=7, require_ordering=False
)
print(result.table)
print()

# --- k sweep: more chain steps help up to a point ---------------------------
sweep = SweepSpec(axis="k_steps", values=(1, 3, 5), fixed=cfg, model=model, seed=7)
sweep_result = run_sweep(sweep, DATA, f"{OUT}/mini_k_sweep")
print(sweep_result.table)
print(f"\nartifacts in {OUT}/mini_ablation and {OUT}/mini_k_sweep "
      "(tables, trend.json, per-value checkpoints and logs)")
