"""Hand-object pose refinement with differentiable rendering, physics priors and an EKF tracker."""

from .model import PoseState, SkinnedModel, make_toy_hand, skin
from .optimize import OptimConfig, refine_sequence
from .priors import LossWeights, Scene

__all__ = ["LossWeights", "OptimConfig", "PoseState", "Scene", "SkinnedModel", "make_toy_hand", "refine_sequence", "skin"]
__version__ = "0.1.0"
