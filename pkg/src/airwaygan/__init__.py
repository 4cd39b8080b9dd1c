"""Depth-mediated bronchoscopy image translation with orifice consistency.

A conditional GAN translates monocular depth images into realistic
bronchoscopy frames while a training-free segmentation pipeline keeps
the bronchial orifices of input and output aligned. Depth acts as the
domain-agnostic intermediate representation, so paired training data can
be built from any RGB source via a pluggable depth backend.
"""

__version__ = "0.1.0"

from .depth import BackendConfig, DepthImage, RgbImage, estimate_depth, normalize_depth
from .errors import (AirwayGanError, BackendError, BuildError, ConfigurationError,
                     InputError, NumericalError, ParameterError, TrainingError)
from .losses import (LossBreakdown, LossWeights, anatomical_constraint_loss,
                     dice_loss, feature_matching_loss, gan_loss, total_objective)
from .metrics import FeatureEmbedder, MetricsReport, dice_coefficient, evaluate, fid, ssim
from .networks import DiscriminatorBank, DiscriminatorConfig, Generator, GeneratorConfig
from .scenes import SceneParams, SyntheticScene, generate_synthetic_scene, render_pseudo_target
from .segmentation import (OrificeMask, Peak, SegParams, SoftMask, find_local_extrema,
                           kmeans_segment, non_max_suppress, segment_orifices, soft_segment)
from .training import TrainConfig, load_models, train, train_step, translate_depth

__all__ = [
    "AirwayGanError", "BackendConfig", "BackendError", "BuildError",
    "ConfigurationError", "DepthImage", "DiscriminatorBank", "DiscriminatorConfig",
    "FeatureEmbedder", "Generator", "GeneratorConfig", "InputError",
    "LossBreakdown", "LossWeights", "MetricsReport", "NumericalError",
    "OrificeMask", "ParameterError", "Peak", "RgbImage", "SceneParams",
    "SegParams", "SoftMask", "SyntheticScene", "TrainConfig", "TrainingError",
    "anatomical_constraint_loss", "dice_coefficient", "dice_loss",
    "estimate_depth", "evaluate", "feature_matching_loss", "fid",
    "find_local_extrema", "gan_loss", "generate_synthetic_scene",
    "kmeans_segment", "load_models", "non_max_suppress", "normalize_depth",
    "render_pseudo_target", "segment_orifices", "soft_segment", "ssim",
    "total_objective", "train", "train_step", "translate_depth",
]
