"""Build a general model, train it, prune it and lightly retrain it.

Randomness comes from a single experiment seed. ``derive_seeds`` expands it
with ``numpy.random.SeedSequence(seed).generate_state(5, uint64)`` and hands
out the words in this fixed order:

0. ``init``     weights of the general model
1. ``shuffle``  mini-batch order while training the general model
2. ``bridge``   fresh weights wiring around collapsed layers
3. ``retrain``  mini-batch order during the light retraining
4. ``control``  weights of the from-scratch control network
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from denseprune.data import Dataset
from denseprune.metrics import classification_metrics, compression_report, regression_metrics
from denseprune.nn import DenseNetwork, TrainConfig, forward, init_network, train
from denseprune.pruning import (
    COMPENSATION_MODES,
    capture_unit_stats,
    kept_param_count,
    rebuild_network,
    select_useful_units,
)
from denseprune.sizing import MODES, build_general_spec

logger = logging.getLogger(__name__)

SEED_ORDER = ("init", "shuffle", "bridge", "retrain", "control")
STAGES = ("OR", "PWR", "PR")


def derive_seeds(seed: int) -> dict:
    words = np.random.SeedSequence(seed).generate_state(len(SEED_ORDER), dtype=np.uint64)
    return {name: int(w) for name, w in zip(SEED_ORDER, words)}


@dataclass(frozen=True)
class RefineConfig:
    epsilon: float
    train: TrainConfig = field(default_factory=TrainConfig)
    hidden_layers: int = 2
    sizing_mode: str = "paper"
    hidden_activation: str = "relu"
    output_activation: Optional[str] = None
    retrain_fraction: float = 0.15
    retrain_epochs: Optional[int] = None  # absolute override of the fraction rule
    compensation_mode: str = "weighted"
    seed: int = 0
    degenerate_floor: Optional[float] = None
    hidden_widths: Optional[tuple] = None  # fixed general-model widths instead of sizing

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not 0 < self.retrain_fraction <= 1:
            raise ValueError("retrain_fraction must lie in (0, 1]")
        if self.retrain_epochs is not None and self.retrain_epochs < 1:
            raise ValueError("retrain_epochs must be positive")
        if self.compensation_mode not in COMPENSATION_MODES:
            raise ValueError(f"compensation_mode must be one of {COMPENSATION_MODES}")
        if self.sizing_mode not in MODES:
            raise ValueError(f"sizing_mode must be one of {MODES}")
        if self.hidden_layers < 1:
            raise ValueError("hidden_layers must be >= 1")
        if self.hidden_widths is not None:
            widths = tuple(int(w) for w in self.hidden_widths)
            if not widths or min(widths) < 1:
                raise ValueError("hidden_widths must be a non-empty list of positive ints")
            object.__setattr__(self, "hidden_widths", widths)
            object.__setattr__(self, "hidden_layers", len(widths))

    @property
    def n_retrain_epochs(self) -> int:
        if self.retrain_epochs is not None:
            return self.retrain_epochs
        return max(1, math.ceil(round(self.retrain_fraction * self.train.epochs, 9)))


@dataclass
class ExperimentRecord:
    epsilon: float
    task: str
    metrics: dict  # stage -> metric dict
    params_original: int
    params_pruned: int
    reduction_percent: float
    architecture_original: list
    architecture_pruned: list
    retrain_epochs: int
    seed: int
    collapsed_layers: list = field(default_factory=list)
    compensation_mode: str = "weighted"
    degenerate: bool = False
    epochs_run: dict = field(default_factory=dict)
    compression: Optional[dict] = None
    validation: dict = field(default_factory=dict)  # stage -> metric dict on the validation split
    kept_widths: list = field(default_factory=list)  # per original hidden layer, 0 when collapsed

    @property
    def primary_metric(self) -> str:
        return "accuracy" if self.task == "classification" else "mse"

    def stage(self, name: str) -> float:
        return self.metrics[name][self.primary_metric]

    @property
    def preserved_percent(self) -> float:
        return 100.0 * self.params_pruned / self.params_original

    @property
    def widths_original(self) -> list:
        return [self.architecture_original[0][0]] + [l[1] for l in self.architecture_original]

    @property
    def widths_pruned(self) -> list:
        return [self.architecture_pruned[0][0]] + [l[1] for l in self.architecture_pruned]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        d = dict(d)
        d["architecture_original"] = [list(l) for l in d["architecture_original"]]
        d["architecture_pruned"] = [list(l) for l in d["architecture_pruned"]]
        return cls(**d)


def evaluate(net: DenseNetwork, X, Y) -> dict:
    out = forward(net, X)
    if net.task.is_classification:
        return classification_metrics(out, Y)
    return regression_metrics(out, Y)


def general_network(dataset: Dataset, cfg: RefineConfig) -> DenseNetwork:
    if cfg.hidden_widths is not None:
        out_act = cfg.output_activation or ("softmax" if dataset.task.is_classification else "identity")
        dims = [dataset.input_dim, *cfg.hidden_widths, dataset.task.n_outputs]
        acts = [cfg.hidden_activation] * len(cfg.hidden_widths) + [out_act]
        spec = [(dims[i], dims[i + 1], acts[i]) for i in range(len(acts))]
        return init_network(spec, derive_seeds(cfg.seed)["init"], task=dataset.task)
    spec = build_general_spec(
        dataset.n,
        dataset.input_dim,
        cfg.hidden_layers,
        dataset.task.n_outputs,
        task=dataset.task.kind,
        mode=cfg.sizing_mode,
        hidden_activation=cfg.hidden_activation,
        output_activation=cfg.output_activation,
    )
    return init_network(spec, derive_seeds(cfg.seed)["init"], task=dataset.task)


def train_general_model(dataset: Dataset, cfg: RefineConfig):
    """Size, initialise and fully train the general model. Returns ``(net, report)``."""
    net = general_network(dataset, cfg)
    tcfg = replace(cfg.train, seed=derive_seeds(cfg.seed)["shuffle"])
    report = train(net, dataset, tcfg)
    return net, report


def _retrain_config(cfg: RefineConfig, seed: int) -> TrainConfig:
    epochs = cfg.n_retrain_epochs
    patience = cfg.train.early_stopping_patience
    if patience is not None:
        patience = min(patience, epochs)
    return replace(cfg.train, epochs=epochs, early_stopping_patience=patience, seed=seed)


def _is_degenerate(record_metric: float, task: str, floor: Optional[float]) -> bool:
    if floor is None:
        return True
    if task == "classification":
        return record_metric < floor
    return record_metric > floor


def refine_existing(net: DenseNetwork, dataset: Dataset, cfg: RefineConfig, epochs_run: Optional[dict] = None):
    """Prune a trained network and lightly retrain it.

    Statistics come from the validation split; every stage is scored on the
    test split. ``net`` is not modified. Returns ``(refined_net, record)``.
    """
    seeds = derive_seeds(cfg.seed)
    X_val, Y_val = dataset.subset("validation")
    X_test, Y_test = dataset.subset("test")

    or_metrics = evaluate(net, X_test, Y_test)
    plan = select_useful_units(capture_unit_stats(net, X_val), cfg.epsilon, cfg.compensation_mode)
    pruned = rebuild_network(net, plan, seed=seeds["bridge"])
    if pruned.n_params != kept_param_count(net, plan):
        raise RuntimeError("rebuilt network size disagrees with the kept widths")
    pwr_metrics = evaluate(pruned, X_test, Y_test)

    refined = pruned.copy()
    report = train(refined, dataset, _retrain_config(cfg, seeds["retrain"]))
    if refined.hidden_widths != pruned.hidden_widths:
        raise RuntimeError("retraining changed the topology")
    pr_metrics = evaluate(refined, X_test, Y_test)
    pr_val = evaluate(refined, X_val, Y_val)

    compression = None
    if refined.n_params <= net.n_params:
        compression = compression_report(net, refined).to_dict()
    record = ExperimentRecord(
        epsilon=float(cfg.epsilon),
        task=net.task.kind,
        metrics={"OR": or_metrics, "PWR": pwr_metrics, "PR": pr_metrics},
        params_original=net.n_params,
        params_pruned=refined.n_params,
        reduction_percent=100.0 * (1.0 - refined.n_params / net.n_params),
        architecture_original=[list(a) for a in net.architecture],
        architecture_pruned=[list(a) for a in refined.architecture],
        retrain_epochs=cfg.n_retrain_epochs,
        seed=cfg.seed,
        collapsed_layers=list(plan.collapsed_layers),
        compensation_mode=cfg.compensation_mode,
        epochs_run=dict(epochs_run or {}, retrain=report.stopped_epoch),
        compression=compression,
        validation={"PR": pr_val},
        kept_widths=plan.kept_widths,
    )
    if len(plan.collapsed_layers) == len(plan.keep):
        record.degenerate = _is_degenerate(record.stage("PR"), record.task, cfg.degenerate_floor)
        if record.degenerate:
            logger.warning("epsilon=%g collapsed every hidden layer (degenerate pruning)", cfg.epsilon)
    return refined, record


def odf2nna(dataset: Dataset, cfg: RefineConfig):
    """Full pipeline: general model -> train -> prune -> retrain.

    Returns ``(refined_net, record)``.
    """
    net, report = train_general_model(dataset, cfg)
    return refine_existing(net, dataset, cfg, epochs_run={"original": report.stopped_epoch})


def _sweep_one(args):
    net, dataset, cfg, epochs_run = args
    return refine_existing(net, dataset, cfg, epochs_run)


def sweep(dataset: Dataset, cfg: RefineConfig, epsilons, jobs: int = 1, net: Optional[DenseNetwork] = None):
    """One record per epsilon, all sharing one trained general model.

    Returns ``(general_net, [(refined_net, record), ...])``.
    """
    epsilons = [float(e) for e in epsilons]
    if not epsilons:
        raise ValueError("need at least one epsilon")
    if any(e <= 0 for e in epsilons):
        raise ValueError("every epsilon must be > 0")
    epochs_run = {}
    if net is None:
        net, report = train_general_model(dataset, cfg)
        epochs_run["original"] = report.stopped_epoch
    tasks = [(net, dataset, replace(cfg, epsilon=e), epochs_run) for e in epsilons]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    return net, results


def select_epsilon(records, min_reduction: float = 0.0, max_preserved: float = 100.0):
    """Pick the record with the best validation score among those compressed enough.

    Candidates need ``reduction_percent >= min_reduction`` and
    ``preserved_percent <= max_preserved``. Ties go to the larger reduction,
    then to the smaller epsilon. Returns ``None`` when nothing qualifies.
    """
    eligible = [
        r for r in records
        if r.reduction_percent >= min_reduction and r.preserved_percent <= max_preserved
    ]
    if not eligible:
        return None

    def key(r):
        score = r.validation["PR"][r.primary_metric]
        if r.primary_metric == "mse":
            score = -score
        return (score, r.reduction_percent, -r.epsilon)

    return max(eligible, key=key)


def scratch_control(record: ExperimentRecord, dataset: Dataset, train_cfg: TrainConfig) -> dict:
    """Train the refined topology from fresh weights with the original budget.

    Uses the full epoch count and every other hyperparameter of ``train_cfg``.
    Returns ``{"scratch": metrics, "refined": metrics}`` on the test split.
    """
    seeds = derive_seeds(record.seed)
    spec = [tuple(l) for l in record.architecture_pruned]
    net = init_network(spec, seeds["control"], task=dataset.task)
    report = train(net, dataset, replace(train_cfg, seed=seeds["shuffle"]))
    X_test, Y_test = dataset.subset("test")
    return {
        "scratch": evaluate(net, X_test, Y_test),
        "refined": record.metrics["PR"],
        "primary_metric": record.primary_metric,
        "scratch_epochs": report.stopped_epoch,
        "params": net.n_params,
    }
