"""From-scratch LeNet-5 for 7x7 fault frames: layers, Adam, training, metrics, archives."""

from .archive import WeightArchive, load_weights, save_weights
from .kernels import available_backends, backend, backend_scope, use_backend
from .metrics import Metrics, binary_scores, classification_metrics
from .network import CLASSIFY, EXTRACTOR, LOCATE, NetSpec, Network, softmax
from .optim import AdamState, TrainConfig, adam_step
from .train import TrainHistory, evaluate, evaluate_classifier, evaluate_regressor, train

__all__ = [
    "AdamState",
    "CLASSIFY",
    "EXTRACTOR",
    "LOCATE",
    "Metrics",
    "NetSpec",
    "Network",
    "TrainConfig",
    "TrainHistory",
    "WeightArchive",
    "adam_step",
    "available_backends",
    "backend",
    "backend_scope",
    "binary_scores",
    "classification_metrics",
    "evaluate",
    "evaluate_classifier",
    "evaluate_regressor",
    "load_weights",
    "save_weights",
    "softmax",
    "train",
    "use_backend",
]
