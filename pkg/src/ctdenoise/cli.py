"""Command-line entry points: ingest, train, denoise, metrics, sweep, ablate, grid.

Thin argparse layer over the library. Configuration comes from YAML files
(see :mod:`ctdenoise.config`); flags override file values. The data root
defaults to the ``CTDENOISE_DATA_ROOT`` environment variable when
``--data`` is omitted.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import experiments, metrics
from .data import (
    DEFAULT_WINDOW,
    DatasetSplit,
    Provenance,
    denormalize,
    extract_patches,
    load_dicom_series,
    read_manifest,
    window_normalize,
    write_manifest,
)
from .errors import ConfigurationError
from .inference import InferenceConfig, denoise, denoise_chained, denoise_no_mask
from .models import DenoiserSpec, load_checkpoint
from .training import run_training

DATA_ROOT_ENV = "CTDENOISE_DATA_ROOT"


def _data_root(args) -> Path:
    if getattr(args, "data", None):
        return Path(args.data)
    env = os.environ.get(DATA_ROOT_ENV)
    if env:
        return Path(env)
    raise ConfigurationError(f"--data not given and {DATA_ROOT_ENV} is not set")


def _load_image(path: Path, window=None) -> np.ndarray:
    """Read a normalized 2D image from .npz, .npy, .png or a DICOM file."""
    suffix = path.suffix.lower()
    if suffix == ".npz":
        with np.load(path) as data:
            for key in ("pixels", "noisy", "image"):
                if key in data.files:
                    return np.asarray(data[key], dtype=np.float32)
            return np.asarray(data[data.files[0]], dtype=np.float32)
    if suffix == ".npy":
        return np.asarray(np.load(path), dtype=np.float32)
    if suffix in (".png", ".tif", ".tiff", ".jpg", ".jpeg"):
        import matplotlib.image as mpimg

        arr = np.asarray(mpimg.imread(path), dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[..., 0]
        if arr.max() > 1.0:
            arr = arr / 255.0
        return arr
    # fall back to DICOM
    from .dicom import read_ct_slice

    rec = read_ct_slice(path)
    from .data import CTSlice

    ct = CTSlice(rec.pixels, rec.patient_id, 0, rec.pixel_spacing)
    return window_normalize(ct, window or DEFAULT_WINDOW).pixels


def _save_image(path: Path, pixels: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".npz":
        np.savez_compressed(path, pixels=pixels)
        return
    import matplotlib.image as mpimg

    mpimg.imsave(path, np.clip(pixels, 0.0, 1.0), cmap="gray", vmin=0.0, vmax=1.0)


def _csv_list(text: str) -> list[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def cmd_ingest(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        from .sampling import NoiseSpec

        corruption = NoiseSpec(sigma=args.corruption_sigma, poisson_scale=0.0, enabled=True)
        npz = experiments.build_phantom_benchmark(
            out_dir,
            n_train=args.n_train,
            n_test=args.n_test,
            side=args.side,
            corruption=corruption,
            seed=args.seed,
        )
        print(f"wrote synthetic benchmark to {npz}")
        return 0

    if not args.dicom_dir:
        raise ConfigurationError("ingest needs --dicom-dir or --synthetic")
    window = tuple(args.window)
    test_patients = set(_csv_list(args.test_patients or ""))
    slice_dir = out_dir / "slices"
    slice_dir.mkdir(parents=True, exist_ok=True)

    records = []
    patients_seen = set()
    for series_dir in args.dicom_dir:
        series_dir = Path(series_dir)
        subdirs = [d for d in sorted(series_dir.iterdir()) if d.is_dir()] or [series_dir]
        for sub in subdirs:
            slices = load_dicom_series(sub)
            for ct in slices:
                image = window_normalize(ct, window, provenance=Provenance.REAL_LDCT)
                name = f"{ct.patient_id}_{ct.slice_index:04d}.npz"
                np.savez_compressed(slice_dir / name, pixels=image.pixels)
                patients_seen.add(ct.patient_id)
                records.append(
                    {
                        "patient_id": ct.patient_id,
                        "path": f"slices/{name}",
                        "split": "test" if ct.patient_id in test_patients else "train",
                    }
                )
    # validates subject-level separation
    DatasetSplit.from_lists(patients_seen - test_patients, patients_seen & test_patients)
    write_manifest(records, out_dir / "manifest.jsonl")
    print(f"ingested {len(records)} slices from {len(patients_seen)} patients into {out_dir}")
    return 0


def _training_patches(data_root: Path, cfg_dict: dict) -> np.ndarray:
    """Training inputs from either a synthetic benchmark or an ingested manifest."""
    bench_npz = data_root / "benchmark.npz"
    if bench_npz.exists():
        return experiments.load_phantom_benchmark(data_root)["train_noisy"]
    manifest = data_root / "manifest.jsonl"
    if not manifest.exists():
        raise ConfigurationError(f"{data_root} has neither benchmark.npz nor manifest.jsonl")
    data_cfg = cfg_dict.get("data", {})
    side = int(data_cfg.get("patch_side", 128))
    per_image = int(data_cfg.get("patches_per_image", 10))
    seed = int(cfg_dict.get("seed", 0))
    rng = np.random.default_rng(seed)
    stacks = []
    for i, record in enumerate(read_manifest(manifest)):
        if record.get("split") != "train":
            continue
        with np.load(data_root / record["path"]) as data:
            pixels = np.asarray(data["pixels"], dtype=np.float32)
        batch = extract_patches(
            pixels, per_image, side, rng, source=(record["patient_id"], i)
        )
        stacks.append(np.asarray(batch.patches))
    if not stacks:
        raise ConfigurationError("manifest contains no training slices")
    return np.concatenate(stacks)


def cmd_train(args) -> int:
    overrides: dict = {"trainer": {}, "mask": {}, "noise": {}, "model": {}}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for key, dest in [
        ("epochs", "epochs"),
        ("k_steps", "k_steps"),
        ("batch_size", "batch_size"),
        ("lr", "lr_initial"),
    ]:
        value = getattr(args, key)
        if value is not None:
            overrides["trainer"][dest] = value
    if args.alpha is not None:
        overrides["mask"]["alpha"] = args.alpha
    if args.sigma is not None:
        overrides["noise"]["sigma"] = args.sigma
    if args.arch is not None:
        overrides["model"]["arch"] = args.arch
    if args.channels is not None:
        overrides["model"]["channels"] = args.channels
    if args.depth is not None:
        overrides["model"]["depth"] = args.depth

    cfg_dict = config_mod.load_config(args.config, overrides)
    if args.preset == "benchmark":
        cfg = experiments.benchmark_train_config()
        fields = {}
        for key in ("epochs", "k_steps", "batch_size", "lr_initial"):
            if key in overrides["trainer"]:
                fields[key] = overrides["trainer"][key]
        if "alpha" in overrides["mask"]:
            fields["alpha"] = overrides["mask"]["alpha"]
        if "sigma" in overrides["noise"]:
            fields["noise"] = dataclasses.replace(cfg.noise, sigma=overrides["noise"]["sigma"])
        cfg = dataclasses.replace(cfg, **fields)
    else:
        cfg = config_mod.build_train_config(cfg_dict)
    spec = config_mod.build_denoiser_spec(cfg_dict)
    seed = int(cfg_dict.get("seed", 0))

    data_root = _data_root(args)
    patches = _training_patches(data_root, cfg_dict)
    out_dir = Path(args.out)
    state, log = run_training(patches, cfg, spec, seed=seed, out_dir=out_dir)
    print(
        f"trained {spec.architecture} for {cfg.epochs} epochs on {patches.shape[0]} patches; "
        f"final mean loss {log.epochs[-1].mean_loss:.4f}"
    )
    print(f"checkpoint: {out_dir / 'checkpoint_final.pt'}")
    return 0


def cmd_denoise(args) -> int:
    state = load_checkpoint(args.checkpoint)
    window = tuple(args.hu_window) if args.hu_window else None
    pixels = _load_image(Path(args.input), window=window)
    pixels = np.clip(pixels, 0.0, 1.0)

    cfg = InferenceConfig(
        k_samples=args.k,
        alpha=args.alpha,
        seed=args.seed,
        tile_side=args.tile_side,
    )
    if args.no_mask:
        result_pixels = denoise_no_mask(state, pixels, cfg).pixels
    elif args.chained:
        result_pixels = denoise_chained(state, pixels, cfg).image.pixels
    else:
        result_pixels = denoise(state, pixels, cfg).image.pixels

    out = Path(args.out)
    _save_image(out, result_pixels)
    print(f"wrote {out}")
    if window is not None:
        hu_path = out.with_suffix(".hu.npz")
        np.savez_compressed(hu_path, hu=denormalize(result_pixels, window))
        print(f"wrote {hu_path}")
    return 0


def cmd_metrics(args) -> int:
    cand_dir, ref_dir = Path(args.candidate_dir), Path(args.reference_dir)
    names = sorted(
        p.name for p in cand_dir.iterdir() if p.suffix.lower() in (".npz", ".npy", ".png")
    )
    if not names:
        raise ConfigurationError(f"no candidate images found in {cand_dir}")
    pairs = []
    for name in names:
        ref = ref_dir / name
        if not ref.exists():
            raise ConfigurationError(f"reference missing for {name}")
        pairs.append((_load_image(cand_dir / name), _load_image(ref)))
    ids = [Path(n).stem for n in names]
    patient_map = {i: "all" for i in ids}
    if args.patient_map:
        patient_map = json.loads(Path(args.patient_map).read_text())
    rows = metrics.evaluate_images(
        [c for c, _ in pairs], [r for _, r in pairs], image_ids=ids
    )
    report = metrics.aggregate(rows, patient_map)
    text = metrics.report_to_text(report)
    print(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        metrics.write_report_jsonl(report, out)
        out.with_suffix(".txt").write_text(text + "\n")
    return 0


def _sweep_values(axis: str, text: str):
    items = _csv_list(text)
    if axis == "ablation_combo":
        return tuple(items)
    if axis == "k_steps":
        return tuple(int(v) for v in items)
    return tuple(float(v) for v in items)


def _experiment_cfg(args):
    cfg_dict = config_mod.load_config(args.config) if args.config else None
    if cfg_dict is not None:
        cfg = config_mod.build_train_config(cfg_dict)
        model = config_mod.build_denoiser_spec(cfg_dict)
    else:
        cfg = experiments.benchmark_train_config()
        model = DenoiserSpec.named("small_unet")
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, epochs=args.epochs)
    return cfg, model


def cmd_sweep(args) -> int:
    cfg, model = _experiment_cfg(args)
    spec = experiments.SweepSpec(
        axis=args.axis,
        values=_sweep_values(args.axis, args.values),
        fixed=cfg,
        model=model,
        seed=args.seed,
        n_seeds=args.seeds,
    )
    result = experiments.run_sweep(spec, _data_root(args), args.out)
    print(result.table)
    return 0


def cmd_ablate(args) -> int:
    cfg, model = _experiment_cfg(args)
    result = experiments.run_ablation_table(
        _data_root(args),
        args.out,
        cfg=cfg,
        model=model,
        seed=args.seed,
        require_ordering=not args.allow_any_order,
    )
    print(result.table)
    return 0


def cmd_grid(args) -> int:
    inputs = []
    for item in args.image:
        if "=" not in item:
            raise ConfigurationError(f"--image expects label=path, got {item!r}")
        label, _, path = item.partition("=")
        inputs.append((label, _load_image(Path(path))))
    reference = _load_image(Path(args.reference)) if args.reference else None
    out = experiments.emit_image_grid(inputs, args.out, reference=reference)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctdenoise",
        description="Self-supervised progressive blind-spot denoising for low-dose CT.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert DICOM series or build the synthetic benchmark")
    p.add_argument("--dicom-dir", nargs="+", help="directories containing DICOM series")
    p.add_argument("--synthetic", action="store_true", help="generate the phantom benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--window", nargs=2, type=float, default=list(DEFAULT_WINDOW))
    p.add_argument("--test-patients", help="comma-separated patient ids for the test split")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--side", type=int, default=128)
    p.add_argument("--corruption-sigma", type=float, default=25.0)
    p.add_argument("--seed", type=int, default=experiments.BENCHMARK_SEED)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="run progressive blind-spot training")
    p.add_argument("--data", help=f"dataset directory (default ${DATA_ROOT_ENV})")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--preset", choices=["protocol", "benchmark"], default="protocol")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--k-steps", dest="k_steps", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--arch")
    p.add_argument("--channels", type=int)
    p.add_argument("--depth", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="multi-mask averaged inference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="npz/npy/png or DICOM file")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tile-side", dest="tile_side", type=int)
    p.add_argument("--chained", action="store_true", help="diagnostic chained re-masking mode")
    p.add_argument("--no-mask", dest="no_mask", action="store_true", help="diagnostic unmasked forward")
    p.add_argument("--hu-window", dest="hu_window", nargs=2, type=float,
                   help="interpret DICOM input with this window and also emit HU output")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("metrics", help="PSNR/SSIM/RMSE report for paired image directories")
    p.add_argument("--candidate-dir", required=True)
    p.add_argument("--reference-dir", required=True)
    p.add_argument("--patient-map", help="JSON file mapping image id to patient id")
    p.add_argument("--out", help="write JSONL + text report here")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sweep", help="train/evaluate across one parameter axis")
    p.add_argument("--axis", required=True, choices=list(experiments.SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int, help="override epochs for every sweep point")
    p.add_argument("--seed", type=int, default=experiments.BENCHMARK_SEED)
    p.add_argument("--seeds", type=int, default=1, help="average each value over this many seeds")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="progressive-only / noise-only / combined comparison")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=experiments.BENCHMARK_SEED)
    p.add_argument("--allow-any-order", action="store_true",
                   help="warn instead of failing when the combined variant is not best")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grid", help="labeled image grid with optional PSNR annotations")
    p.add_argument("--image", action="append", required=True, help="label=path (repeatable)")
    p.add_argument("--reference", help="reference image for PSNR annotations")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
