"""Desk-scale benchmark, ablation table, parameter sweeps and image grids.

The phantom benchmark substitutes for the access-gated clinical data: it
is small enough to train on a CPU in minutes while preserving the
qualitative orderings (progressive + noise injection beats either piece
alone, multi-step beats single-step).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .config import config_hash
from .data import make_synthetic_dataset
from .errors import ConfigurationError
from .inference import InferenceConfig, denoise
from .metrics import ImageMetrics, MetricReport, aggregate
from .models import DenoiserSpec, DenoiserState
from .sampling import NoiseSpec
from .training import TrainConfig, run_training

SWEEP_AXES = ("k_steps", "sigma", "alpha", "ablation_combo")
ABLATION_VARIANTS = ("progressive_only", "noise_only", "both", "none")

# Deterministic seed for the desk-scale acceptance benchmark.
BENCHMARK_SEED = 7
BENCHMARK_CORRUPTION = NoiseSpec(sigma=25.0, poisson_scale=0.0, enabled=True)
IMAGES_PER_PATIENT = 10


def benchmark_train_config() -> TrainConfig:
    """Desk-scale training recipe for the phantom benchmark.

    Keeps the protocol's k/alpha/sigma but compresses the schedule into
    20 epochs: a higher initial rate halved every 5 epochs, and batches of
    8 phantoms so a CPU run finishes in minutes.
    """
    return TrainConfig(
        k_steps=5,
        alpha=0.1,
        noise=NoiseSpec(sigma=10.0, poisson_scale=0.0, enabled=True),
        epochs=20,
        lr_initial=3.0e-3,
        lr_halving_period_epochs=5,
        batch_size=8,
        patches_per_image=1,
        patch_side=128,
    )


def build_phantom_benchmark(
    out_dir: str | Path,
    n_train: int = 200,
    n_test: int = 50,
    side: int = 128,
    corruption: NoiseSpec = BENCHMARK_CORRUPTION,
    seed: int = BENCHMARK_SEED,
) -> Path:
    """Generate and store the (clean, noisy) phantom benchmark.

    Phantoms are grouped into synthetic "patients" of 10 consecutive
    images so per-patient aggregation has something to aggregate over.
    Returns the path of the npz archive.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = make_synthetic_dataset(n_train + n_test, side, seed, corruption)
    clean = np.stack([c.pixels for c, _ in pairs])
    noisy = np.stack([n.pixels for _, n in pairs])

    npz_path = out_dir / "benchmark.npz"
    np.savez_compressed(
        npz_path,
        train_clean=clean[:n_train],
        train_noisy=noisy[:n_train],
        test_clean=clean[n_train:],
        test_noisy=noisy[n_train:],
    )

    records = []
    for i in range(n_train + n_test):
        split = "train" if i < n_train else "test"
        local = i if i < n_train else i - n_train
        records.append(
            {
                "patient_id": f"synth_{split}_{local // IMAGES_PER_PATIENT:03d}",
                "path": f"benchmark.npz::{split}_noisy[{local}]",
                "split": split,
            }
        )
    from .data import write_manifest

    write_manifest(records, out_dir / "manifest.jsonl")
    meta = {
        "n_train": n_train,
        "n_test": n_test,
        "side": side,
        "seed": seed,
        "corruption": {
            "sigma": corruption.sigma,
            "poisson_scale": corruption.poisson_scale,
            "enabled": corruption.enabled,
        },
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return npz_path


def load_phantom_benchmark(path: str | Path) -> dict:
    """Load arrays and per-image patient ids from a benchmark directory or npz."""
    path = Path(path)
    npz_path = path if path.suffix == ".npz" else path / "benchmark.npz"
    if not npz_path.exists():
        raise ConfigurationError(f"no benchmark archive at {npz_path}")
    with np.load(npz_path) as data:
        arrays = {key: data[key] for key in data.files}
    out = dict(arrays)
    out["test_ids"] = [f"test_{i:04d}" for i in range(arrays["test_noisy"].shape[0])]
    out["patient_map"] = {
        img_id: f"synth_test_{i // IMAGES_PER_PATIENT:03d}"
        for i, img_id in enumerate(out["test_ids"])
    }
    return out


def evaluate_denoiser(
    state: DenoiserState,
    noisy: np.ndarray,
    clean: np.ndarray,
    inference_cfg: InferenceConfig,
    image_ids=None,
    patient_map: dict | None = None,
) -> MetricReport:
    """Denoise a test stack and aggregate metrics against the clean truth."""
    if image_ids is None:
        image_ids = [f"test_{i:04d}" for i in range(len(noisy))]
    if patient_map is None:
        patient_map = {img_id: "all" for img_id in image_ids}
    outputs = [denoise(state, img, inference_cfg).image.pixels for img in noisy]
    rows = metrics.evaluate_images(outputs, clean, image_ids=image_ids)
    return aggregate(rows, patient_map)


def noisy_input_report(noisy: np.ndarray, clean: np.ndarray, image_ids=None, patient_map=None) -> MetricReport:
    """Metrics of the corrupted input itself (the denoising baseline)."""
    if image_ids is None:
        image_ids = [f"test_{i:04d}" for i in range(len(noisy))]
    if patient_map is None:
        patient_map = {img_id: "all" for img_id in image_ids}
    rows = metrics.evaluate_images(list(noisy), list(clean), image_ids=image_ids)
    return aggregate(rows, patient_map)


@dataclass(frozen=True)
class SweepSpec:
    """One swept axis with all other settings held fixed."""

    axis: str
    values: tuple
    fixed: TrainConfig = field(default_factory=benchmark_train_config)
    model: DenoiserSpec = field(default_factory=lambda: DenoiserSpec.named("small_unet"))
    seed: int = BENCHMARK_SEED
    n_seeds: int = 1

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigurationError(f"unknown sweep axis {self.axis!r}; choose from {SWEEP_AXES}")
        values = tuple(self.values)
        if not values:
            raise ConfigurationError("sweep values must be non-empty")
        object.__setattr__(self, "values", values)
        if self.axis != "ablation_combo":
            numeric = [float(v) for v in values]
            if any(b <= a for a, b in zip(numeric, numeric[1:])):
                raise ConfigurationError(
                    f"numeric sweep values must be strictly increasing, got {values}"
                )
        else:
            unknown = set(values) - set(ABLATION_VARIANTS)
            if unknown:
                raise ConfigurationError(
                    f"unknown ablation variants {sorted(unknown)}; choose from {ABLATION_VARIANTS}"
                )
        if self.n_seeds < 1:
            raise ConfigurationError("n_seeds must be >= 1")


def apply_sweep_value(cfg: TrainConfig, axis: str, value) -> TrainConfig:
    """Resolve one sweep point into a concrete training configuration."""
    if axis == "k_steps":
        return replace(cfg, k_steps=int(value))
    if axis == "sigma":
        return replace(cfg, noise=replace(cfg.noise, sigma=float(value), enabled=True))
    if axis == "alpha":
        return replace(cfg, alpha=float(value))
    if axis == "ablation_combo":
        if value == "both":
            return replace(cfg, noise=replace(cfg.noise, enabled=True))
        if value == "progressive_only":
            return replace(cfg, noise=replace(cfg.noise, enabled=False))
        if value == "noise_only":
            return replace(cfg, k_steps=1, noise=replace(cfg.noise, enabled=True))
        if value == "none":
            # degenerate baseline: plain masked autoencoding
            return replace(cfg, k_steps=1, noise=replace(cfg.noise, enabled=False))
    raise ConfigurationError(f"unknown sweep axis {axis!r}")


@dataclass
class SweepResult:
    axis: str
    values: tuple
    reports: dict
    log_paths: dict
    seed: int
    config_hash: str
    out_dir: Path
    table: str = ""


def _report_to_dict(report: MetricReport) -> dict:
    def _clean(v):
        return None if not math.isfinite(v) else v

    return {
        "per_image": [
            {"image_id": r.image_id, "psnr": _clean(r.psnr), "ssim": r.ssim, "rmse": r.rmse}
            for r in report.per_image
        ],
        "per_patient": [
            {"patient_id": pid, **metrics._summary_dict(s)} for pid, s in report.per_patient
        ],
        "overall": metrics._summary_dict(report.overall),
        "excluded_image_ids": list(report.excluded_image_ids),
    }


def _report_from_dict(payload: dict) -> MetricReport:
    per_image = tuple(
        ImageMetrics(
            image_id=r["image_id"],
            psnr=math.inf if r["psnr"] is None else r["psnr"],
            ssim=r["ssim"],
            rmse=r["rmse"],
        )
        for r in payload["per_image"]
    )
    per_patient = tuple(
        (r["patient_id"], _summary_from_dict(r)) for r in payload["per_patient"]
    )
    return MetricReport(
        per_image=per_image,
        per_patient=per_patient,
        overall=_summary_from_dict(payload["overall"]),
        excluded_image_ids=tuple(payload.get("excluded_image_ids", ())),
    )


def _summary_from_dict(d: dict) -> metrics.MetricSummary:
    return metrics.MetricSummary(
        psnr_mean=d["psnr_mean"],
        psnr_std=d["psnr_std"],
        ssim_mean=d["ssim_mean"],
        ssim_std=d["ssim_std"],
        rmse_mean=d["rmse_mean"],
        rmse_std=d["rmse_std"],
        count=d["count"],
    )


def _value_tag(value) -> str:
    return str(value).replace(".", "p").replace("/", "_")


def run_sweep(spec: SweepSpec, dataset: str | Path, out_dir: str | Path) -> SweepResult:
    """Train and evaluate one model per sweep value with a shared seed.

    Completed values are recorded in per-value ``done.json`` markers so an
    interrupted sweep resumes where it stopped; markers from a different
    configuration are ignored and recomputed.
    """
    bench = load_phantom_benchmark(dataset)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    reports: dict = {}
    log_paths: dict = {}
    spec_hash = config_hash(
        {"axis": spec.axis, "fixed": spec.fixed, "model": spec.model, "seed": spec.seed}
    )

    for value in spec.values:
        value_dir = out_dir / f"{spec.axis}={_value_tag(value)}"
        marker = value_dir / "done.json"
        if marker.exists():
            payload = json.loads(marker.read_text())
            if payload.get("config_hash") == spec_hash:
                reports[value] = _report_from_dict(payload["report"])
                log_paths[value] = value_dir / "training_log.jsonl"
                continue
        value_dir.mkdir(parents=True, exist_ok=True)
        cfg = apply_sweep_value(spec.fixed, spec.axis, value)

        seed_reports = []
        for s in range(spec.n_seeds):
            run_seed = spec.seed + s
            run_dir = value_dir if spec.n_seeds == 1 else value_dir / f"seed_{run_seed}"
            state, _ = run_training(
                bench["train_noisy"], cfg, spec.model, seed=run_seed, out_dir=run_dir
            )
            inf_cfg = InferenceConfig(
                k_samples=cfg.k_steps, alpha=cfg.alpha, seed=spec.seed
            )
            seed_reports.append(
                evaluate_denoiser(
                    state,
                    bench["test_noisy"],
                    bench["test_clean"],
                    inf_cfg,
                    image_ids=bench["test_ids"],
                    patient_map=bench["patient_map"],
                )
            )
        report = _merge_seed_reports(seed_reports)
        reports[value] = report
        log_paths[value] = value_dir / "training_log.jsonl"
        marker.write_text(
            json.dumps(
                {"value": str(value), "config_hash": spec_hash, "report": _report_to_dict(report)},
                indent=2,
            )
        )

    table = _sweep_table(spec.axis, spec.values, reports)
    (out_dir / "sweep_table.txt").write_text(table + "\n")
    trend = {
        "axis": spec.axis,
        "values": [str(v) for v in spec.values],
        "psnr_mean": [reports[v].overall.psnr_mean for v in spec.values],
        "psnr_std": [reports[v].overall.psnr_std for v in spec.values],
        "ssim_mean": [reports[v].overall.ssim_mean for v in spec.values],
        "rmse_mean": [reports[v].overall.rmse_mean for v in spec.values],
    }
    (out_dir / "trend.json").write_text(json.dumps(trend, indent=2))

    return SweepResult(
        axis=spec.axis,
        values=spec.values,
        reports=reports,
        log_paths=log_paths,
        seed=spec.seed,
        config_hash=spec_hash,
        out_dir=out_dir,
        table=table,
    )


def _merge_seed_reports(reports: list) -> MetricReport:
    if len(reports) == 1:
        return reports[0]
    # multi-seed runs keep the first report's per-image rows but average
    # the overall summary across seeds
    overalls = [r.overall for r in reports]
    merged = metrics.MetricSummary(
        psnr_mean=float(np.mean([s.psnr_mean for s in overalls])),
        psnr_std=float(np.mean([s.psnr_std for s in overalls])),
        ssim_mean=float(np.mean([s.ssim_mean for s in overalls])),
        ssim_std=float(np.mean([s.ssim_std for s in overalls])),
        rmse_mean=float(np.mean([s.rmse_mean for s in overalls])),
        rmse_std=float(np.mean([s.rmse_std for s in overalls])),
        count=overalls[0].count,
    )
    first = reports[0]
    return MetricReport(
        per_image=first.per_image,
        per_patient=first.per_patient,
        overall=merged,
        excluded_image_ids=first.excluded_image_ids,
    )


def _sweep_table(axis: str, values, reports: dict) -> str:
    lines = [
        f"{axis:<18} {'PSNR':>14} {'SSIM':>16} {'RMSE':>14}",
        "-" * 66,
    ]
    for value in values:
        s = reports[value].overall
        lines.append(
            f"{str(value):<18} "
            f"{s.psnr_mean:>7.3f}±{s.psnr_std:<6.3f} "
            f"{s.ssim_mean:>8.4f}±{s.ssim_std:<7.4f} "
            f"{s.rmse_mean:>7.3f}±{s.rmse_std:<6.3f}"
        )
    return "\n".join(lines)


def run_ablation_table(
    dataset: str | Path,
    out_dir: str | Path,
    cfg: TrainConfig | None = None,
    model: DenoiserSpec | None = None,
    seed: int = BENCHMARK_SEED,
    require_ordering: bool = True,
) -> SweepResult:
    """Train the progressive-only / noise-only / combined variants.

    Emits a three-row comparison table; by default raises if the combined
    variant is not the best by PSNR (use ``require_ordering=False`` to
    only warn, e.g. for exploratory seeds).
    """
    spec = SweepSpec(
        axis="ablation_combo",
        values=("progressive_only", "noise_only", "both"),
        fixed=cfg or benchmark_train_config(),
        model=model or DenoiserSpec.named("small_unet"),
        seed=seed,
    )
    result = run_sweep(spec, dataset, out_dir)
    best = result.reports["both"].overall.psnr_mean
    others = {
        v: result.reports[v].overall.psnr_mean for v in ("progressive_only", "noise_only")
    }
    if best <= max(others.values()):
        message = (
            f"combined variant is not best: both={best:.3f} dB vs "
            + ", ".join(f"{k}={v:.3f}" for k, v in others.items())
        )
        if require_ordering:
            raise RuntimeError(message)
        warnings.warn(message, stacklevel=2)
    result.table = _sweep_table(
        "variant", ("progressive_only", "noise_only", "both"), result.reports
    )
    (Path(out_dir) / "ablation_table.txt").write_text(result.table + "\n")
    return result


def grid_layout(n_panels: int) -> tuple[int, int]:
    """(rows, cols) of the most square grid holding n panels."""
    if n_panels < 1:
        raise ConfigurationError("image grid needs at least one (label, image) pair")
    cols = int(math.ceil(math.sqrt(n_panels)))
    rows = int(math.ceil(n_panels / cols))
    return rows, cols


def emit_image_grid(inputs, out: str | Path, reference: np.ndarray | None = None) -> Path:
    """Write a labeled side-by-side grid of same-shape grayscale images.

    ``inputs`` is a list of (label, image) pairs; when a reference image is
    supplied each panel is annotated with its PSNR against it.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not inputs:
        raise ConfigurationError("image grid needs at least one (label, image) pair")
    shapes = {np.asarray(img).shape for _, img in inputs}
    if len(shapes) > 1:
        raise ValueError(f"grid images must share one shape, got {sorted(shapes)}")
    if reference is not None and np.asarray(reference).shape not in shapes:
        raise ValueError("reference shape does not match grid images")

    rows, cols = grid_layout(len(inputs))
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 3.4 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, (label, img) in zip(axes.flat, inputs):
        img = np.asarray(img)
        ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0)
        title = str(label)
        if reference is not None:
            value = metrics.psnr(img, reference)
            title += f"\n{value:.2f} dB" if math.isfinite(value) else "\nreference"
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
