"""Multi-object tracking with a memory-assisted Kalman filter and
motion-adaptive IoU association."""
from .geometry import BBox, Detection, MatConfig, eiou, hiou, iou, mo_iou
from .mekf import MeKF, NoiseModel, Normalizer
from .nnet import GateWeights, load_weights, save_weights
from .pipeline import Tracker, TrackerConfig, run_sequence

__version__ = "0.1.0"

__all__ = [
    "BBox", "Detection", "MatConfig", "eiou", "hiou", "iou", "mo_iou",
    "MeKF", "NoiseModel", "Normalizer",
    "GateWeights", "load_weights", "save_weights",
    "Tracker", "TrackerConfig", "run_sequence",
]
