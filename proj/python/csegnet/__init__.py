"""Python bindings for the csegnet cardiac segmentation library."""

from ._csegnet import (
    Checkpoint,
    CSegNetError,
    __version__,
    dice,
    ef_percent,
    ensemble_predict,
    ensemble_probabilities,
    generate_phantom,
    gradient_suite,
    hausdorff_mm,
    parameter_count,
    read_nifti,
    volume_ml,
)

__all__ = [
    "Checkpoint",
    "CSegNetError",
    "__version__",
    "dice",
    "ef_percent",
    "ensemble_predict",
    "ensemble_probabilities",
    "generate_phantom",
    "gradient_suite",
    "hausdorff_mm",
    "parameter_count",
    "read_nifti",
    "volume_ml",
]
