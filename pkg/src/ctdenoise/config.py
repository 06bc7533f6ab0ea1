"""YAML experiment configuration: defaults, overrides and stable hashing.

Config files carry `seed` plus `data`, `mask`, `noise`, `model` and
`trainer` sections; CLI flags override file values which override the
defaults below.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .models import DenoiserSpec
from .sampling import NoiseSpec
from .training import TrainConfig

DEFAULT_CONFIG = {
    "seed": 0,
    "data": {
        "window": [-1024, 3072],
        "patch_side": 128,
        "patches_per_image": 10,
    },
    "mask": {"alpha": 0.1},
    "noise": {"sigma": 10.0, "poisson_scale": 0.0, "enabled": True},
    "model": {"arch": "small_unet", "channels": None, "depth": None},
    "trainer": {
        "k_steps": 5,
        "epochs": 100,
        "lr_initial": 1.0e-3,
        "lr_halving_period_epochs": 20,
        "batch_size": 1,
        "loss": "l1",
        "optimizer_betas": [0.9, 0.99],
        "optimizer_eps": 1.0e-8,
        "update_per_step": False,
        "backprop_through_chain": False,
        "checkpoint_every": 20,
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    """Recursively merge override into base, returning a new dict."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults <- YAML file <- overrides, merged in that order."""
    merged = DEFAULT_CONFIG
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config file {path} must contain a mapping")
        merged = deep_merge(merged, loaded)
    if overrides:
        merged = deep_merge(merged, overrides)
    return merged


def build_train_config(cfg: dict) -> TrainConfig:
    trainer = cfg.get("trainer", {})
    noise_cfg = cfg.get("noise", {})
    return TrainConfig(
        k_steps=int(trainer.get("k_steps", 5)),
        alpha=float(cfg.get("mask", {}).get("alpha", 0.1)),
        noise=NoiseSpec(
            sigma=float(noise_cfg.get("sigma", 10.0)),
            poisson_scale=float(noise_cfg.get("poisson_scale", 0.0)),
            enabled=bool(noise_cfg.get("enabled", True)),
        ),
        epochs=int(trainer.get("epochs", 100)),
        lr_initial=float(trainer.get("lr_initial", 1.0e-3)),
        lr_halving_period_epochs=int(trainer.get("lr_halving_period_epochs", 20)),
        batch_size=int(trainer.get("batch_size", 1)),
        patches_per_image=int(cfg.get("data", {}).get("patches_per_image", 10)),
        patch_side=int(cfg.get("data", {}).get("patch_side", 128)),
        loss=str(trainer.get("loss", "l1")),
        optimizer_betas=tuple(trainer.get("optimizer_betas", (0.9, 0.99))),
        optimizer_eps=float(trainer.get("optimizer_eps", 1.0e-8)),
        update_per_step=bool(trainer.get("update_per_step", False)),
        backprop_through_chain=bool(trainer.get("backprop_through_chain", False)),
        checkpoint_every=int(trainer.get("checkpoint_every", 20)),
    )


def build_denoiser_spec(cfg: dict) -> DenoiserSpec:
    model = cfg.get("model", {})
    return DenoiserSpec.named(
        model.get("arch", "small_unet"),
        channels=model.get("channels"),
        depth=model.get("depth"),
    )


def _canonical(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _canonical(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value") and not isinstance(obj, (int, float, str, bool)):
        return _canonical(obj.value)
    return obj


def config_hash(obj) -> str:
    """Order-independent sha256 of a config mapping or dataclass."""
    canonical = json.dumps(_canonical(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
