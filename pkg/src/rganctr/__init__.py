"""Time-aware attention CTR model with regularized adversarial negative sampling
and isotonic absolute-CTR calibration."""

from .calibration import CalibrationModel, calibrate_dataset, calibrate_sample, pava_fit
from .data import Dataset, SchemaConfig, from_samples, load_jsonl, write_jsonl
from .evaluation import auc, kendall_tau, rela_impr
from .model import ModelConfig, TimeAwareAttentionNet
from .synthetic import SyntheticConfig, generate_synthetic, split_by_time
from .training import TrainConfig, train

__all__ = [
    "CalibrationModel", "Dataset", "ModelConfig", "SchemaConfig", "SyntheticConfig",
    "TimeAwareAttentionNet", "TrainConfig", "auc", "calibrate_dataset", "calibrate_sample",
    "from_samples", "generate_synthetic", "kendall_tau", "load_jsonl", "pava_fit",
    "rela_impr", "split_by_time", "train", "write_jsonl",
]
