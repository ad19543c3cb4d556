"""Unsupervised optical flow with epipolar regularization.

Direct coarse-to-fine minimization of photometric, smoothness and
epipolar losses (Sampson distance, nuclear norm of lifted
correspondences, or a union-of-subspaces self-expression loss), plus
motion segmentation from the self-expression coefficients.
"""

from .epipolar import (
    FundamentalMatrix,
    estimate_fundamental_8pt,
    sampson_distances,
    sampson_gradient,
    sampson_loss,
)
from .estimator import EpipolarFlow
from .exceptions import (
    BadFormat,
    BadMagic,
    ConfigError,
    DegenerateConfiguration,
    DisconnectedGraphWarning,
    EmptyMask,
    EpiflowError,
    NonConvergenceWarning,
    NoValidPixels,
    SingularPointWarning,
    SvdFailure,
    TooFewPoints,
    TruncatedFile,
)
from .io import EvalResult, evaluate, flow_to_color, read_flo, read_kitti_flow, write_flo
from .optimizer import OptimizerConfig, Pyramid, finetune_epipolar, optimize, total_loss
from .photometric import census_transform, occlusion_mask, photometric_losses, warp
from .segmentation import (
    MotionLabels,
    MotionSegmenter,
    build_affinity,
    clustering_accuracy,
    estimate_motion_count,
    spectral_cluster,
)
from .smoothness import smoothness_loss
from .subspace import (
    LiftedMatrix,
    SelfExpression,
    lift,
    nuclear_norm_gradient,
    nuclear_norm_loss,
    numerical_rank,
    sample_pixels,
    subspace_expression,
    subspace_gradient,
    subspace_loss,
)
from .types import (
    CorrespondenceSet,
    FlowField,
    Image,
    LossConfig,
    OcclusionMask,
    charbonnier,
    flow_to_correspondences,
)

__all__ = [
    "BadFormat",
    "BadMagic",
    "build_affinity",
    "census_transform",
    "charbonnier",
    "clustering_accuracy",
    "ConfigError",
    "CorrespondenceSet",
    "DegenerateConfiguration",
    "DisconnectedGraphWarning",
    "EmptyMask",
    "EpiflowError",
    "EpipolarFlow",
    "estimate_fundamental_8pt",
    "estimate_motion_count",
    "EvalResult",
    "evaluate",
    "finetune_epipolar",
    "flow_to_color",
    "flow_to_correspondences",
    "FlowField",
    "FundamentalMatrix",
    "Image",
    "lift",
    "LiftedMatrix",
    "LossConfig",
    "MotionLabels",
    "MotionSegmenter",
    "NonConvergenceWarning",
    "NoValidPixels",
    "nuclear_norm_gradient",
    "nuclear_norm_loss",
    "numerical_rank",
    "occlusion_mask",
    "OcclusionMask",
    "optimize",
    "OptimizerConfig",
    "photometric_losses",
    "Pyramid",
    "read_flo",
    "read_kitti_flow",
    "sample_pixels",
    "sampson_distances",
    "sampson_gradient",
    "sampson_loss",
    "SelfExpression",
    "SingularPointWarning",
    "smoothness_loss",
    "spectral_cluster",
    "subspace_expression",
    "subspace_gradient",
    "subspace_loss",
    "SvdFailure",
    "TooFewPoints",
    "total_loss",
    "TruncatedFile",
    "warp",
    "write_flo",
]

__version__ = "0.1.0"
