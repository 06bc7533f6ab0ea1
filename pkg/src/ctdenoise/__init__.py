"""Self-supervised progressive blind-spot denoising for low-dose CT.

Training repeatedly re-masks and re-denoises its own intermediate
estimates while injecting controlled zero-mean noise into inputs and
targets; inference averages the outputs of independently masked forward
passes. No clean reference images are required at any point.
"""

from .data import (
    DEFAULT_WINDOW,
    CTSlice,
    DatasetSplit,
    NormalizedImage,
    PatchBatch,
    Provenance,
    denormalize,
    extract_patches,
    load_dicom_series,
    make_synthetic_dataset,
    read_manifest,
    window_normalize,
    write_manifest,
)
from .errors import ConfigurationError, DataError, TrainingDiverged
from .inference import (
    DenoisedResult,
    InferenceConfig,
    denoise,
    denoise_chained,
    denoise_no_mask,
)
from .metrics import (
    ImageMetrics,
    MetricReport,
    MetricSummary,
    SSIMParams,
    aggregate,
    evaluate_images,
    psnr,
    report_to_text,
    rmse,
    ssim,
)
from .models import (
    DenoiserSpec,
    DenoiserState,
    build_denoiser,
    finite_difference_gradcheck,
    forward,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from .sampling import (
    MaskInstance,
    MaskSpec,
    NoiseSpec,
    add_noise,
    apply_mask,
    sample_mask,
    sample_noise,
)
from .training import (
    StepTrace,
    TrainConfig,
    TrainingLog,
    blindspot_mean_denoiser,
    constant_denoiser,
    identity_denoiser,
    learning_rate_for_epoch,
    run_training,
    train_step,
    verify_loss_identity,
)

__version__ = "0.1.0"

__all__ = [
    "CTSlice",
    "ConfigurationError",
    "DEFAULT_WINDOW",
    "DataError",
    "DatasetSplit",
    "DenoisedResult",
    "DenoiserSpec",
    "DenoiserState",
    "ImageMetrics",
    "InferenceConfig",
    "MaskInstance",
    "MaskSpec",
    "MetricReport",
    "MetricSummary",
    "NoiseSpec",
    "NormalizedImage",
    "PatchBatch",
    "Provenance",
    "SSIMParams",
    "StepTrace",
    "TrainConfig",
    "TrainingDiverged",
    "TrainingLog",
    "add_noise",
    "aggregate",
    "apply_mask",
    "blindspot_mean_denoiser",
    "build_denoiser",
    "constant_denoiser",
    "denoise",
    "denoise_chained",
    "denoise_no_mask",
    "denormalize",
    "evaluate_images",
    "extract_patches",
    "finite_difference_gradcheck",
    "forward",
    "identity_denoiser",
    "learning_rate_for_epoch",
    "load_checkpoint",
    "load_dicom_series",
    "make_synthetic_dataset",
    "parameter_count",
    "psnr",
    "read_manifest",
    "report_to_text",
    "rmse",
    "run_training",
    "sample_mask",
    "sample_noise",
    "save_checkpoint",
    "ssim",
    "train_step",
    "verify_loss_identity",
    "window_normalize",
    "write_manifest",
]
