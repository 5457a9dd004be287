"""Datasets: CSV ingestion, splitting, normalization and synthetic regression."""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from denseprune.nn import TaskKind

SPLIT_NAMES = ("train", "validation", "test")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    task: TaskKind
    splits: dict = field(default_factory=dict)
    feature_names: Optional[tuple] = None
    class_labels: Optional[tuple] = None  # original label text, indexed by class id

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y.reshape(-1, 1)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if X.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise DataError(f"X {X.shape} and Y {Y.shape} disagree on example count")
        if Y.shape[1] != self.task.n_outputs:
            raise DataError(f"Y has {Y.shape[1]} columns, task expects {self.task.n_outputs}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DataError("dataset contains non-finite values")
        if self.task.is_classification and len(Y) and not np.allclose(Y.sum(axis=1), 1.0):
            raise DataError("classification targets must be one-hot")
        splits = {k: np.asarray(v, dtype=np.int64) for k, v in self.splits.items()}
        seen = np.concatenate([v for v in splits.values()]) if splits else np.empty(0, np.int64)
        if len(np.unique(seen)) != len(seen):
            raise DataError("splits overlap")
        if len(seen) and (seen.min() < 0 or seen.max() >= len(X)):
            raise DataError("split index out of range")
        object.__setattr__(self, "splits", splits)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def labels(self) -> np.ndarray:
        """Class ids (classification only)."""
        return self.Y.argmax(axis=1)

    def subset(self, name: str):
        if name not in self.splits:
            raise KeyError(f"dataset has no {name!r} split")
        idx = self.splits[name]
        return self.X[idx], self.Y[idx]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X, self.Y):
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(self.task.kind.encode())
        return h.hexdigest()


def one_hot(ids, n_classes: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    out = np.zeros((ids.size, n_classes))
    out[np.arange(ids.size), ids] = 1.0
    return out


# --- CSV ----------------------------------------------------------------------


def _open_text(path: Path):
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return path.open("r", encoding="utf-8", newline="")


def _label_sort_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def load_csv(
    path,
    target_column=-1,
    task: str = "classification",
    delimiter: str = ",",
    has_header: bool = True,
) -> Dataset:
    """Read a numeric CSV file.

    ``target_column`` is a column name (requires a header) or index, or a list
    of them for multi-output regression. Classification labels may be any text;
    they are mapped to contiguous ids in sorted order (numerically when every
    label parses as a number).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with _open_text(path) as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    first_line = 1
    header = None
    if has_header:
        if not rows:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in rows[0]]
        rows = rows[1:]
        first_line = 2
    rows = [(first_line + i, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(header) if header else len(rows[0][1])
    for line, r in rows:
        if len(r) != width:
            raise DataError(f"{path}: line {line} has {len(r)} fields, expected {width}")

    targets = target_column if isinstance(target_column, (list, tuple)) else [target_column]
    target_idx = []
    for t in targets:
        if isinstance(t, str):
            if header is None or t not in header:
                raise DataError(f"{path}: target column {t!r} not found")
            target_idx.append(header.index(t))
        else:
            if not -width <= t < width:
                raise DataError(f"{path}: target column index {t} out of range")
            target_idx.append(t % width)
    if task == "classification" and len(target_idx) != 1:
        raise DataError("classification needs exactly one target column")
    feature_idx = [j for j in range(width) if j not in target_idx]

    raw_targets = [[r[j].strip() for j in target_idx] for _, r in rows]
    try:
        X = np.array([[r[j] for j in feature_idx] for _, r in rows], dtype=np.float64)
        bad = not np.all(np.isfinite(X))
    except ValueError:
        bad = True
    if bad:
        # slow path, only to name the offending cell
        for line, r in rows:
            for j in feature_idx:
                cell = r[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: line {line}, column {j}: non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: line {line}, column {j}: non-finite value {cell!r}")

    feature_names = tuple(header[j] for j in feature_idx) if header else None
    if task == "classification":
        labels = [t[0] for t in raw_targets]
        classes = sorted(set(labels), key=_label_sort_key)
        if len(classes) < 2:
            raise DataError(f"{path}: classification needs at least two classes")
        lookup = {c: k for k, c in enumerate(classes)}
        Y = one_hot([lookup[l] for l in labels], len(classes))
        return Dataset(X, Y, TaskKind("classification", len(classes)),
                       feature_names=feature_names, class_labels=tuple(classes))
    if task != "regression":
        raise DataError(f"unknown task {task!r}")
    Y = np.empty((len(rows), len(target_idx)))
    for i, (line, _) in enumerate(rows):
        for k, cell in enumerate(raw_targets[i]):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: line {line}: non-numeric target {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: line {line}: non-finite target {cell!r}")
            Y[i, k] = v
    return Dataset(X, Y, TaskKind("regression", Y.shape[1]), feature_names=feature_names)


# --- splitting ------------------------------------------------------------------


def _allocate(n: int, fractions: Sequence[float]) -> list:
    """Largest-remainder allocation of ``n`` items to ``fractions``."""
    raw = [f * n for f in fractions]
    counts = [math.floor(r + 1e-9) for r in raw]
    rest = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[:rest]:
        counts[k] += 1
    return counts


def split(dataset: Dataset, fractions=(0.6, 0.2, 0.2), stratified: bool = False, seed: int = 0) -> Dataset:
    """Assign every example to train/validation/test (seeded, deterministic)."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise DataError("need three positive fractions (train, validation, test)")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    if stratified and dataset.task.is_classification:
        labels = dataset.labels
        for c in np.unique(labels):
            members = rng.permutation(np.flatnonzero(labels == c))
            counts = _allocate(len(members), fractions)
            start = 0
            for k, cnt in enumerate(counts):
                parts[k].append(members[start:start + cnt])
                start += cnt
    else:
        members = rng.permutation(dataset.n)
        start = 0
        for k, cnt in enumerate(_allocate(dataset.n, fractions)):
            parts[k].append(members[start:start + cnt])
            start += cnt
    splits = {}
    for name, chunks in zip(SPLIT_NAMES, parts):
        idx = np.sort(np.concatenate(chunks)) if chunks else np.empty(0, np.int64)
        if idx.size == 0:
            raise DataError(f"{name} split would be empty")
        splits[name] = idx
    return replace(dataset, splits=splits)


def split_ordered(dataset: Dataset, counts) -> Dataset:
    """Contiguous train/validation/test blocks in file order.

    For files whose rows are already arranged, e.g. training rows followed by
    a fixed test block.
    """
    counts = [int(c) for c in counts]
    if len(counts) != 3 or any(c <= 0 for c in counts):
        raise DataError("need three positive counts (train, validation, test)")
    if sum(counts) > dataset.n:
        raise DataError(f"split counts {counts} exceed the {dataset.n} available rows")
    bounds = np.cumsum([0] + counts)
    splits = {name: np.arange(bounds[k], bounds[k + 1]) for k, name in enumerate(SPLIT_NAMES)}
    return replace(dataset, splits=splits)


# --- normalization ---------------------------------------------------------------


@dataclass(frozen=True)
class Scaler:
    method: str
    shift: np.ndarray
    scale: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.shift) / self.scale

    def to_dict(self) -> dict:
        return {"method": self.method, "shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Scaler":
        return cls(d["method"], np.asarray(d["shift"], float), np.asarray(d["scale"], float))


def fit_scaler(X, method: str = "zscore") -> Scaler:
    X = np.asarray(X, dtype=np.float64)
    if method == "zscore":
        shift = X.mean(axis=0)
        scale = X.std(axis=0)
    elif method == "minmax":
        shift = X.min(axis=0)
        scale = X.max(axis=0) - shift
    elif method == "none":
        shift = np.zeros(X.shape[1])
        scale = np.zeros(X.shape[1])
    else:
        raise DataError(f"unknown normalization {method!r}")
    # degenerate columns pass through untouched
    flat = ~(scale > 0) | (np.ptp(X, axis=0) == 0)
    shift = np.where(flat, 0.0, shift)
    scale = np.where(flat, 1.0, scale)
    return Scaler(method, shift, scale)


def normalize(dataset: Dataset, method: str = "zscore"):
    """Scale features with statistics from the train split only.

    Returns ``(dataset, scaler)``.
    """
    if "train" not in dataset.splits:
        raise DataError("normalize needs a train split")
    scaler = fit_scaler(dataset.X[dataset.splits["train"]], method)
    return replace(dataset, X=scaler.transform(dataset.X)), scaler


# --- synthetic regression ---------------------------------------------------


def _unit_interval(y):
    lo, hi = y.min(), y.max()
    return (y - lo) / (hi - lo) if hi > lo else np.zeros_like(y)


def synth_regression(kind: str, n: int, noise_sd: float = 0.0, seed: int = 0) -> Dataset:
    """Synthetic regression data with targets min-max scaled to [0, 1].

    ``linear``
        ``y = x . (1, -2, 0.5, 3, -1) + 0.25``, x ~ U[0, 1]^5.
    ``friedman-like``
        ``y = 10 sin(pi x0 x1) + 20 (x2 - 0.5)^2 + 10 x3 + 5 x4``,
        x ~ U[0, 1]^10 (five nuisance features).
    ``piecewise``
        x ~ U[-1, 1]^4 and
        ``y = (x0 > 0) * (2 x1 + x2) + (x0 <= 0) * (|x2| - x1) + 0.5 (x3 > 0.3)``.

    Gaussian noise with standard deviation ``noise_sd`` is added before scaling.
    """
    if n < 30:
        raise DataError("synthetic datasets need n >= 30")
    rng = np.random.default_rng(seed)
    if kind == "linear":
        X = rng.uniform(0.0, 1.0, size=(n, 5))
        y = X @ np.array([1.0, -2.0, 0.5, 3.0, -1.0]) + 0.25
    elif kind == "friedman-like":
        X = rng.uniform(0.0, 1.0, size=(n, 10))
        y = (10 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20 * (X[:, 2] - 0.5) ** 2
             + 10 * X[:, 3] + 5 * X[:, 4])
    elif kind == "piecewise":
        X = rng.uniform(-1.0, 1.0, size=(n, 4))
        y = np.where(X[:, 0] > 0, 2 * X[:, 1] + X[:, 2], np.abs(X[:, 2]) - X[:, 1])
        y = y + 0.5 * (X[:, 3] > 0.3)
    else:
        raise DataError(f"unknown synthetic kind {kind!r}")
    if noise_sd > 0:
        y = y + rng.normal(0.0, noise_sd, size=n)
    names = tuple(f"x{i}" for i in range(X.shape[1]))
    return Dataset(X, _unit_interval(y).reshape(-1, 1), TaskKind("regression", 1), feature_names=names)


# --- persistence ---------------------------------------------------------------


def save_dataset(dataset: Dataset, path) -> None:
    arrays = {"X": dataset.X, "Y": dataset.Y}
    for name, idx in dataset.splits.items():
        arrays[f"split_{name}"] = idx
    meta = {
        "kind": dataset.task.kind,
        "n_outputs": dataset.task.n_outputs,
        "feature_names": list(dataset.feature_names) if dataset.feature_names else None,
        "class_labels": list(dataset.class_labels) if dataset.class_labels else None,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_dataset(path) -> Dataset:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        splits = {k[len("split_"):]: z[k] for k in z.files if k.startswith("split_")}
        return Dataset(
            z["X"], z["Y"], TaskKind(meta["kind"], meta["n_outputs"]), splits,
            tuple(meta["feature_names"]) if meta["feature_names"] else None,
            tuple(meta["class_labels"]) if meta["class_labels"] else None,
        )
