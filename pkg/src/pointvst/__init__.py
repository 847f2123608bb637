"""View-conditioned point cloud pre-training with a NumPy autodiff engine."""

from .errors import PointVSTError
from .model import LossWeights, ModelConfig
from .training import TrainConfig

__all__ = ["LossWeights", "ModelConfig", "PointVSTError", "TrainConfig"]
__version__ = "0.1.0"
