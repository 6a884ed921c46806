"""Hybrid quantum temporal convolutional network: a statevector QCNN shared
across dilated time windows, with baselines, data generators and a CLI."""

from .circuit import CircuitParams, qcnn_forward, qcnn_forward_batch, qcnn_gradient, qcnn_vjp
from .data import generate_narma_dataset, narma10, normalize, synth_classification
from .errors import ConfigurationError, DataError, HqtcnError, MetricError, TrainingError
from .model import HqtcnModel, HqtcnParams, ModelConfig, TimeSeries, hqtcn_forward, model_param_count
from .train import RunRecord, TrainConfig, auroc, mse, multi_seed, train

__all__ = [
    "CircuitParams", "ConfigurationError", "DataError", "HqtcnError", "HqtcnModel", "HqtcnParams",
    "MetricError", "ModelConfig", "RunRecord", "TimeSeries", "TrainConfig", "TrainingError", "auroc",
    "generate_narma_dataset", "hqtcn_forward", "model_param_count", "mse", "multi_seed", "narma10",
    "normalize", "qcnn_forward", "qcnn_forward_batch", "qcnn_gradient", "qcnn_vjp",
    "synth_classification", "train",
]
