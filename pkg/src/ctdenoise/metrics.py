"""Image quality metrics (PSNR, SSIM, RMSE) and per-patient aggregation.

All computations run in float64. PSNR of identical images returns an
explicit ``math.inf`` sentinel; aggregation excludes such values from
means with a warning rather than erroring.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .errors import ConfigurationError


def _check_pair(candidate, reference):
    candidate = np.asarray(candidate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if candidate.shape != reference.shape:
        raise ValueError(
            f"candidate shape {candidate.shape} does not match reference shape {reference.shape}"
        )
    return candidate, reference


def mse(candidate: np.ndarray, reference: np.ndarray) -> float:
    """Mean squared error between two same-shape images."""
    candidate, reference = _check_pair(candidate, reference)
    return float(np.mean((candidate - reference) ** 2))


def psnr(candidate: np.ndarray, reference: np.ndarray, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in decibels.

    Parameters
    ----------
    candidate, reference : array_like
        Same-shape images.
    max_value : float
        Peak intensity of the representation (1.0 for normalized images,
        255 for 8-bit).

    Returns
    -------
    float
        ``10 * log10(max_value**2 / MSE)``; ``math.inf`` when MSE is 0.
    """
    if max_value <= 0:
        raise ConfigurationError(f"max_value must be positive, got {max_value}")
    err = mse(candidate, reference)
    if err == 0.0:
        return math.inf
    return float(10.0 * math.log10(max_value**2 / err))


def rmse(candidate: np.ndarray, reference: np.ndarray, scale: float = 255.0) -> float:
    """Root mean squared error, scaled to a display intensity range.

    The default ``scale=255`` reports errors on the 8-bit scale so values
    are comparable across normalized and display-scaled inputs.
    """
    if scale <= 0:
        raise ConfigurationError(f"scale must be positive, got {scale}")
    return float(math.sqrt(mse(candidate, reference)) * scale)


@dataclass(frozen=True)
class SSIMParams:
    """Stabilization constants and local window for SSIM.

    Defaults are the standard choices for images with peak value
    ``max_value``: an 11x11 Gaussian window with sigma 1.5 and
    ``c1=(0.01*max)^2``, ``c2=(0.03*max)^2``.
    """

    c1: float = 0.01**2
    c2: float = 0.03**2
    window_side: int = 11
    window_sigma: float = 1.5
    gaussian_weighting: bool = True

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigurationError("SSIM stabilization constants must be positive")
        if self.window_side < 1 or self.window_side % 2 == 0:
            raise ConfigurationError("SSIM window side must be a positive odd integer")

    @classmethod
    def for_max(cls, max_value: float) -> "SSIMParams":
        return cls(c1=(0.01 * max_value) ** 2, c2=(0.03 * max_value) ** 2)

    def window(self) -> np.ndarray:
        side = self.window_side
        if not self.gaussian_weighting:
            return np.full((side, side), 1.0 / side**2)
        half = (side - 1) / 2.0
        coords = np.arange(side) - half
        g = np.exp(-(coords**2) / (2.0 * self.window_sigma**2))
        kernel = np.outer(g, g)
        return kernel / kernel.sum()


def ssim(
    candidate: np.ndarray,
    reference: np.ndarray,
    params: SSIMParams | None = None,
) -> float:
    """Mean structural similarity over valid window positions.

    Local means, variances and covariance are taken under the configured
    window; the local map is averaged over positions where the window fits
    entirely inside the image (no padding), then combined as

    ``(2*mu_c*mu_r + c1) * (2*cov + c2) / ((mu_c^2 + mu_r^2 + c1) * (var_c + var_r + c2))``.
    """
    candidate, reference = _check_pair(candidate, reference)
    params = params or SSIMParams()
    side = params.window_side
    if side > min(candidate.shape):
        raise ConfigurationError(
            f"SSIM window side {side} exceeds image extent {candidate.shape}"
        )
    kernel = params.window()

    def local_mean(img):
        return convolve2d(img, kernel, mode="valid")

    mu_c = local_mean(candidate)
    mu_r = local_mean(reference)
    var_c = local_mean(candidate**2) - mu_c**2
    var_r = local_mean(reference**2) - mu_r**2
    cov = local_mean(candidate * reference) - mu_c * mu_r

    num = (2.0 * mu_c * mu_r + params.c1) * (2.0 * cov + params.c2)
    den = (mu_c**2 + mu_r**2 + params.c1) * (var_c + var_r + params.c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class ImageMetrics:
    image_id: str
    psnr: float
    ssim: float
    rmse: float


@dataclass(frozen=True)
class MetricSummary:
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float
    rmse_mean: float
    rmse_std: float
    count: int


@dataclass(frozen=True)
class MetricReport:
    per_image: tuple
    per_patient: tuple  # (patient_id, MetricSummary) ordered by patient_id
    overall: MetricSummary
    excluded_image_ids: tuple = field(default=())


def _summarize(rows: list[ImageMetrics]) -> MetricSummary:
    def stats(values):
        arr = np.asarray(values, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    p_mean, p_std = stats([r.psnr for r in rows])
    s_mean, s_std = stats([r.ssim for r in rows])
    r_mean, r_std = stats([r.rmse for r in rows])
    return MetricSummary(p_mean, p_std, s_mean, s_std, r_mean, r_std, len(rows))


def evaluate_images(
    candidates,
    references,
    image_ids=None,
    max_value: float = 1.0,
    ssim_params: SSIMParams | None = None,
    rmse_scale: float = 255.0,
) -> list[ImageMetrics]:
    """Compute all three metrics for parallel candidate/reference stacks."""
    if len(candidates) != len(references):
        raise ValueError("candidate and reference counts differ")
    if image_ids is None:
        image_ids = [f"image_{i:04d}" for i in range(len(candidates))]
    ssim_params = ssim_params or SSIMParams.for_max(max_value)
    rows = []
    for img_id, cand, ref in zip(image_ids, candidates, references):
        rows.append(
            ImageMetrics(
                image_id=str(img_id),
                psnr=psnr(cand, ref, max_value=max_value),
                ssim=ssim(cand, ref, params=ssim_params),
                rmse=rmse(cand, ref, scale=rmse_scale),
            )
        )
    return rows


def aggregate(per_image: list[ImageMetrics], patient_map: dict) -> MetricReport:
    """Aggregate per-image rows into per-patient and overall summaries.

    Every image id must be mapped to a patient; rows with infinite PSNR
    (identical images) are excluded from the statistics with a warning.
    """
    missing = [r.image_id for r in per_image if r.image_id not in patient_map]
    if missing:
        raise ConfigurationError(f"image ids missing from patient map: {missing}")

    finite = [r for r in per_image if math.isfinite(r.psnr)]
    excluded = tuple(r.image_id for r in per_image if not math.isfinite(r.psnr))
    if excluded:
        warnings.warn(
            f"excluding {len(excluded)} image(s) with infinite PSNR from aggregation",
            stacklevel=2,
        )
    if not finite:
        raise ConfigurationError("no finite metric rows to aggregate")

    by_patient: dict[str, list[ImageMetrics]] = {}
    for row in finite:
        by_patient.setdefault(str(patient_map[row.image_id]), []).append(row)

    per_patient = tuple(
        (patient_id, _summarize(rows)) for patient_id, rows in sorted(by_patient.items())
    )
    return MetricReport(
        per_image=tuple(per_image),
        per_patient=per_patient,
        overall=_summarize(finite),
        excluded_image_ids=excluded,
    )


def report_to_text(report: MetricReport) -> str:
    """Human-readable table: per-patient rows plus the overall summary."""
    lines = [
        f"{'patient':<16} {'n':>4} {'PSNR':>14} {'SSIM':>16} {'RMSE':>14}",
        "-" * 68,
    ]
    for patient_id, s in report.per_patient:
        lines.append(
            f"{patient_id:<16} {s.count:>4} "
            f"{s.psnr_mean:>7.3f}±{s.psnr_std:<6.3f} "
            f"{s.ssim_mean:>8.4f}±{s.ssim_std:<7.4f} "
            f"{s.rmse_mean:>7.3f}±{s.rmse_std:<6.3f}"
        )
    s = report.overall
    lines.append("-" * 68)
    lines.append(
        f"{'overall':<16} {s.count:>4} "
        f"{s.psnr_mean:>7.3f}±{s.psnr_std:<6.3f} "
        f"{s.ssim_mean:>8.4f}±{s.ssim_std:<7.4f} "
        f"{s.rmse_mean:>7.3f}±{s.rmse_std:<6.3f}"
    )
    return "\n".join(lines)


def write_report_jsonl(report: MetricReport, path) -> None:
    """Line-delimited records: one per image, one per patient, one overall."""
    import json
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for row in report.per_image:
            fh.write(
                json.dumps(
                    {
                        "kind": "image",
                        "image_id": row.image_id,
                        "psnr": None if not math.isfinite(row.psnr) else row.psnr,
                        "ssim": row.ssim,
                        "rmse": row.rmse,
                    }
                )
                + "\n"
            )
        for patient_id, s in report.per_patient:
            fh.write(
                json.dumps({"kind": "patient", "patient_id": patient_id, **_summary_dict(s)})
                + "\n"
            )
        fh.write(json.dumps({"kind": "overall", **_summary_dict(report.overall)}) + "\n")


def _summary_dict(s: MetricSummary) -> dict:
    return {
        "psnr_mean": s.psnr_mean,
        "psnr_std": s.psnr_std,
        "ssim_mean": s.ssim_mean,
        "ssim_std": s.ssim_std,
        "rmse_mean": s.rmse_mean,
        "rmse_std": s.rmse_std,
        "count": s.count,
    }
