"""Multi-image guided 3D affordance grounding toolkit."""

__version__ = "0.1.0"

from .data import (AffordancePair, DatasetManifest, GenConfig,
                   PointCloudSample, ReferenceImageSet, load_manifest,
                   make_synthetic_dataset, normalize_cloud, split_seen_unseen)
from .harness import TrainConfig, build_model, evaluate_model, train
from .model import MifagModel

__all__ = [
    "AffordancePair", "DatasetManifest", "GenConfig", "MifagModel",
    "PointCloudSample", "ReferenceImageSet", "TrainConfig", "build_model",
    "evaluate_model", "load_manifest", "make_synthetic_dataset",
    "normalize_cloud", "split_seen_unseen", "train",
]
