"""CT ingestion, HU windowing, patch extraction and synthetic phantoms.

Everything here is a pure function over immutable inputs; parallel data
loaders only need independently seeded generators.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import sampling
from .dicom import is_dicom_file, read_ct_slice
from .errors import ConfigurationError, DataError
from .sampling import NoiseSpec

# HU window covering air through dense bone; the ingestion default.
DEFAULT_WINDOW = (-1024.0, 3072.0)


class Provenance(str, Enum):
    REAL_LDCT = "real_ldct"
    REAL_NDCT = "real_ndct"
    SYNTHETIC_CLEAN = "synthetic_clean"
    SYNTHETIC_NOISY = "synthetic_noisy"


@dataclass(frozen=True)
class CTSlice:
    """A single CT slice in Hounsfield units."""

    pixels: np.ndarray
    patient_id: str
    slice_index: int
    spacing: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2:
            raise ConfigurationError(f"slice pixels must be 2D, got shape {pixels.shape}")
        if self.slice_index < 0:
            raise ConfigurationError(f"slice_index must be >= 0, got {self.slice_index}")
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise ConfigurationError(f"spacing must be strictly positive, got {self.spacing}")


@dataclass(frozen=True)
class NormalizedImage:
    """A 2D image with every pixel in [0, 1]."""

    pixels: np.ndarray
    provenance: Provenance = Provenance.SYNTHETIC_CLEAN

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2:
            raise ConfigurationError(f"image pixels must be 2D, got shape {pixels.shape}")
        lo, hi = float(pixels.min()), float(pixels.max())
        if lo < 0.0 or hi > 1.0:
            raise ConfigurationError(
                f"normalized pixels must lie in [0, 1], got range [{lo:.6g}, {hi:.6g}]"
            )

    @property
    def shape(self) -> tuple:
        return self.pixels.shape


@dataclass(frozen=True)
class PatchBatch:
    """Square patches plus their (patient_id, slice_index, row, col) origins."""

    patches: np.ndarray  # (n, side, side)
    source_ids: tuple = ()

    def __post_init__(self):
        patches = np.asarray(self.patches)
        if patches.ndim != 3 or patches.shape[1] != patches.shape[2]:
            raise ConfigurationError(
                f"patches must be a stack of square images, got shape {patches.shape}"
            )
        if self.source_ids and len(self.source_ids) != patches.shape[0]:
            raise ConfigurationError("source_ids must parallel the patch stack")

    @property
    def side(self) -> int:
        return int(np.asarray(self.patches).shape[1])

    def __len__(self) -> int:
        return int(np.asarray(self.patches).shape[0])


@dataclass(frozen=True)
class DatasetSplit:
    """Subject-level train/test separation."""

    train_patients: frozenset = field(default_factory=frozenset)
    test_patients: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        overlap = set(self.train_patients) & set(self.test_patients)
        if overlap:
            raise ConfigurationError(
                f"train and test patients must be disjoint, both contain {sorted(overlap)}"
            )

    @classmethod
    def from_lists(cls, train, test) -> "DatasetSplit":
        return cls(frozenset(train), frozenset(test))

    def split_of(self, patient_id: str) -> str:
        if patient_id in self.test_patients:
            return "test"
        return "train"


def load_dicom_series(directory: str | Path) -> list[CTSlice]:
    """Load every CT slice in a directory, converted to HU and sorted.

    Sorting prefers the axial position metadata, then the instance number,
    then file name (with a warning, since that ordering is a guess).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    candidates = sorted(p for p in directory.iterdir() if p.is_file())
    records = [read_ct_slice(p) for p in candidates if is_dicom_file(p)]
    if not records:
        raise DataError(f"no DICOM slices found in {directory}")

    shapes = {r.pixels.shape for r in records}
    if len(shapes) > 1:
        raise DataError(
            f"inconsistent image dimensions within series {directory}: {sorted(shapes)}"
        )

    if all(r.position_z is not None for r in records):
        records.sort(key=lambda r: r.position_z)
    elif all(r.instance_number is not None for r in records):
        records.sort(key=lambda r: r.instance_number)
    else:
        warnings.warn(
            f"{directory}: no position or instance metadata; falling back to file-name order",
            stacklevel=2,
        )
        records.sort(key=lambda r: r.path.name)

    return [
        CTSlice(
            pixels=rec.pixels,
            patient_id=rec.patient_id,
            slice_index=i,
            spacing=rec.pixel_spacing,
        )
        for i, rec in enumerate(records)
    ]


def window_normalize(
    ct_slice: CTSlice,
    window: tuple[float, float] = DEFAULT_WINDOW,
    provenance: Provenance = Provenance.REAL_LDCT,
) -> NormalizedImage:
    """Clamp HU values to the window and map them affinely onto [0, 1].

    Out-of-window values saturate at the window edges (standard CT
    windowing), so normalization is monotone over the full HU axis.
    """
    lo, hi = float(window[0]), float(window[1])
    if lo >= hi:
        raise ConfigurationError(f"window bounds must satisfy lo < hi, got ({lo}, {hi})")
    clamped = np.clip(np.asarray(ct_slice.pixels, dtype=np.float64), lo, hi)
    # float64 throughout so denormalize() restores HU to well below 1e-6
    pixels = (clamped - lo) / (hi - lo)
    return NormalizedImage(pixels=pixels, provenance=provenance)


def denormalize(
    image: NormalizedImage | np.ndarray,
    window: tuple[float, float] = DEFAULT_WINDOW,
) -> np.ndarray:
    """Invert :func:`window_normalize` back to HU within the window."""
    lo, hi = float(window[0]), float(window[1])
    if lo >= hi:
        raise ConfigurationError(f"window bounds must satisfy lo < hi, got ({lo}, {hi})")
    pixels = image.pixels if isinstance(image, NormalizedImage) else np.asarray(image)
    return pixels.astype(np.float64) * (hi - lo) + lo


def extract_patches(
    image: NormalizedImage | np.ndarray,
    count: int,
    side: int,
    rng: int | np.random.Generator | None = 0,
    source: tuple[str, int] = ("", 0),
) -> PatchBatch:
    """Extract ``count`` square patches at uniformly random valid corners."""
    pixels = image.pixels if isinstance(image, NormalizedImage) else np.asarray(image)
    if count <= 0:
        raise ConfigurationError(f"patch count must be positive, got {count}")
    rows, cols = pixels.shape
    if side <= 0 or side > rows or side > cols:
        raise ConfigurationError(
            f"patch side {side} does not fit inside image of shape {pixels.shape}"
        )
    gen = sampling._as_generator(rng)
    r = gen.integers(0, rows - side + 1, size=count)
    c = gen.integers(0, cols - side + 1, size=count)
    patches = np.stack([pixels[ri : ri + side, ci : ci + side] for ri, ci in zip(r, c)])
    patient_id, slice_index = source
    ids = tuple((patient_id, slice_index, int(ri), int(ci)) for ri, ci in zip(r, c))
    return PatchBatch(patches=patches.astype(np.float32), source_ids=ids)


def _draw_phantom(gen: np.random.Generator, side: int) -> np.ndarray:
    """Piecewise-constant phantom: random ellipses and rectangles on a background.

    Intensities stay away from 0 and 1 so moderate corruption does not
    saturate at the clamp boundaries.
    """
    img = np.full((side, side), gen.uniform(0.15, 0.35), dtype=np.float32)
    yy, xx = np.mgrid[0:side, 0:side]
    for _ in range(int(gen.integers(2, 7))):
        value = gen.uniform(0.12, 0.88)
        if gen.random() < 0.5:
            cy, cx = gen.uniform(0.2, 0.8, size=2) * side
            ry, rx = gen.uniform(0.1, 0.35, size=2) * side
            theta = gen.uniform(0.0, np.pi)
            c, s = np.cos(theta), np.sin(theta)
            u = (yy - cy) * c + (xx - cx) * s
            v = -(yy - cy) * s + (xx - cx) * c
            region = (u / ry) ** 2 + (v / rx) ** 2 <= 1.0
        else:
            r0 = int(gen.integers(0, max(1, 2 * side // 3)))
            c0 = int(gen.integers(0, max(1, 2 * side // 3)))
            h = int(gen.integers(max(2, side // 6), max(3, side // 2)))
            w = int(gen.integers(max(2, side // 6), max(3, side // 2)))
            region = np.zeros((side, side), dtype=bool)
            region[r0 : r0 + h, c0 : c0 + w] = True
        img[region] = value
    return img


def make_synthetic_dataset(
    n_images: int,
    side: int,
    rng_seed: int,
    corruption: NoiseSpec,
) -> list[tuple[NormalizedImage, NormalizedImage]]:
    """Generate pixel-aligned (clean, noisy) phantom pairs.

    Phantoms are piecewise-constant shapes so the clean reference is known
    exactly; corruption goes through the same noise machinery as training
    injection. A fixed seed reproduces the dataset bit for bit.
    """
    if n_images <= 0 or side <= 0:
        raise ConfigurationError("n_images and side must be positive")
    gen = np.random.default_rng(rng_seed)
    pairs = []
    for _ in range(n_images):
        clean = _draw_phantom(gen, side)
        noise = sampling.sample_noise(corruption, clean, rng=gen)
        noisy = sampling.add_noise(clean, noise)
        pairs.append(
            (
                NormalizedImage(clean, Provenance.SYNTHETIC_CLEAN),
                NormalizedImage(noisy, Provenance.SYNTHETIC_NOISY),
            )
        )
    return pairs


def write_manifest(records: list[dict], path: str | Path) -> Path:
    """Write one JSON record per line: {patient_id, path, split}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def read_manifest(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
