"""Word-level lipreading toolkit.

Mouth-ROI geometry, dataset construction and balancing, temporally-consistent
video augmentation, a split-attention video classifier and its training recipe,
plus evaluation reports and a CLI binding them together.
"""

__version__ = "0.1.0"

from .augment import AugmentConfig
from .dataset import Manifest, SampleRecord, generate_synthetic, load_manifest
from .errors import FormatError, NumericError
from .geometry import (
    BoundingBox,
    FrameLandmarks,
    Point2,
    align_rotation,
    crop_side_length,
    extract_mouth_crop,
    iou,
    motion_filter,
)
from .model import ALN, ALNConfig, build_model, loss, predict
from .storage import read_clip, write_clip
from .training import TrainConfig, TrainState, adam_step, cosine_lr, train

__all__ = [
    "ALN",
    "ALNConfig",
    "AugmentConfig",
    "BoundingBox",
    "FormatError",
    "FrameLandmarks",
    "Manifest",
    "NumericError",
    "Point2",
    "SampleRecord",
    "TrainConfig",
    "TrainState",
    "adam_step",
    "align_rotation",
    "build_model",
    "cosine_lr",
    "crop_side_length",
    "extract_mouth_crop",
    "generate_synthetic",
    "iou",
    "load_manifest",
    "loss",
    "motion_filter",
    "predict",
    "read_clip",
    "train",
    "write_clip",
]
