"""Dense network construction, useful-unit pruning and light retraining."""

__version__ = "0.1.0"

from denseprune.data import Dataset, load_csv, normalize, split, split_ordered, synth_regression
from denseprune.metrics import classification_metrics, compression_report, regression_metrics
from denseprune.nn import DenseLayer, DenseNetwork, TaskKind, TrainConfig, forward, forward_capture, init_network, train
from denseprune.pruning import capture_unit_stats, prune, rebuild_network, select_useful_units
from denseprune.refine import ExperimentRecord, RefineConfig, odf2nna, refine_existing, scratch_control, select_epsilon, sweep
from denseprune.sizing import build_general_spec, compute_layer_width

__all__ = [
    "Dataset", "DenseLayer", "DenseNetwork", "ExperimentRecord", "RefineConfig", "TaskKind", "TrainConfig",
    "build_general_spec", "capture_unit_stats", "classification_metrics", "compression_report",
    "compute_layer_width", "forward", "forward_capture", "init_network", "load_csv", "normalize",
    "odf2nna", "prune", "rebuild_network", "refine_existing", "regression_metrics", "scratch_control",
    "select_epsilon", "select_useful_units", "split", "split_ordered", "sweep", "synth_regression", "train",
]
