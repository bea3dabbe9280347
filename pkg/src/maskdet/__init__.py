"""SSD-MobileNetV2 mask detection: numpy inference, VOC tooling, MixUp and COCO metrics."""
from .model import SSDConfig, SSDMobileNetV2
from .postprocess import Detection, PostprocessConfig, detect
from .weights import WeightStore, init_random, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "Detection",
    "PostprocessConfig",
    "SSDConfig",
    "SSDMobileNetV2",
    "WeightStore",
    "detect",
    "init_random",
    "load_weights",
    "save_weights",
]
