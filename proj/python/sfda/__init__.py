"""Source-free domain adaptation with learned per-image backward transforms."""

from ._core import (
    Axis,
    Classifier,
    Dataset,
    ParameterDomainError,
    ShiftSpec,
    TransformNet,
    TransformParams,
    adapt,
    apply_backward_transform,
    apply_brightness,
    apply_contrast,
    apply_rotation,
    evaluate_with_subsampling,
    grid_search_msp_oracle,
    load_mnist,
    msp,
    msp_gap_loss,
    read_results_csv,
    transform_and_classify,
)

__all__ = [
    "Axis",
    "Classifier",
    "Dataset",
    "ParameterDomainError",
    "ShiftSpec",
    "TransformNet",
    "TransformParams",
    "adapt",
    "apply_backward_transform",
    "apply_brightness",
    "apply_contrast",
    "apply_rotation",
    "evaluate_with_subsampling",
    "grid_search_msp_oracle",
    "load_mnist",
    "msp",
    "msp_gap_loss",
    "read_results_csv",
    "transform_and_classify",
]
