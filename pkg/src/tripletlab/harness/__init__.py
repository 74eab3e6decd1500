from .config import ConfigError, TrainConfig
from .dataset import SyntheticDataset, generate_dataset
from .train import RunRecord, train

__all__ = [
    "ConfigError",
    "TrainConfig",
    "SyntheticDataset",
    "generate_dataset",
    "RunRecord",
    "train",
]
