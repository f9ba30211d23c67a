"""Self-supervised 3D traversability estimation with proxy-based metric learning."""

from .encoder import EncoderModel, encode, featurize, heads, init_model
from .errors import ConfigError, DataError, NumericError
from .evaluation import EvalReport, Prediction, evaluate_dataset, infer_scene, miou, tpe
from .losses import LossBreakdown, LossHyper
from .pointcloud import Episode, Scene, SyntheticSpec, generate_synthetic_scene, knn
from .proxybank import ProxyBank, Prototypes, em_prototypes, init_bank, reinit_empty
from .trainer import TrainConfig, Trainer, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "EncoderModel",
    "Episode",
    "EvalReport",
    "LossBreakdown",
    "LossHyper",
    "NumericError",
    "Prediction",
    "Prototypes",
    "ProxyBank",
    "Scene",
    "SyntheticSpec",
    "TrainConfig",
    "Trainer",
    "em_prototypes",
    "encode",
    "evaluate_dataset",
    "featurize",
    "generate_synthetic_scene",
    "heads",
    "infer_scene",
    "init_bank",
    "init_model",
    "knn",
    "miou",
    "reinit_empty",
    "tpe",
    "train",
]
