"""Dynamic network surgery: training-time pruning with recoverable splicing."""

from .data import Dataset, gen_xor, load_mnist, load_mnist_idx, minibatches, xor_split
from .errors import (
    ConfigError, FormatError, ShapeError, StateError, SurgeryError, TruncatedError, VersionError,
)
from .linalg import KernelSpec, abs_stats, hadamard, im2col, matmul
from .modelio import (
    CompressionReport, compression_report, export_sparse, load_dense, load_sparse, save_dense,
    save_sparse,
)
from .network import (
    MODELS, LayerSpec, Network, backward, evaluate, forward, init_network, predict,
)
from .params import MaskedParams, ThresholdSpec
from .surgery import (
    Phase, SurgeryConfig, TrainState, TriggerSchedule, apply_update, compute_thresholds,
    load_config, parse_config, run_surgery, surgery_step, train_reference, trigger_probability,
    update_mask,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "gen_xor",
    "load_mnist",
    "load_mnist_idx",
    "minibatches",
    "xor_split",
    "ConfigError",
    "FormatError",
    "ShapeError",
    "StateError",
    "SurgeryError",
    "TruncatedError",
    "VersionError",
    "KernelSpec",
    "abs_stats",
    "hadamard",
    "im2col",
    "matmul",
    "CompressionReport",
    "compression_report",
    "export_sparse",
    "load_dense",
    "load_sparse",
    "save_dense",
    "save_sparse",
    "MODELS",
    "LayerSpec",
    "Network",
    "backward",
    "evaluate",
    "forward",
    "init_network",
    "predict",
    "MaskedParams",
    "ThresholdSpec",
    "Phase",
    "SurgeryConfig",
    "TrainState",
    "TriggerSchedule",
    "apply_update",
    "compute_thresholds",
    "load_config",
    "parse_config",
    "run_surgery",
    "surgery_step",
    "train_reference",
    "trigger_probability",
    "update_mask",
]
