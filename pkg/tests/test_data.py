import gzip
from pathlib import Path

import numpy as np
import pytest

from denseprune.data import (
    DataError,
    Dataset,
    fit_scaler,
    load_csv,
    load_dataset,
    normalize,
    one_hot,
    save_dataset,
    split,
    split_ordered,
    synth_regression,
)
from denseprune.nn import TaskKind, TrainConfig, forward, init_network, train

DATA = Path(__file__).resolve().parents[1] / "data"


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_small_csv(tmp_path):
    ds = load_csv(write(tmp_path, "a,b,y\n1,2,0\n3,4,1\n5,6,0\n"))
    assert (ds.n, ds.input_dim, ds.task.n_outputs) == (3, 2, 2)
    np.testing.assert_array_equal(ds.Y, [[1, 0], [0, 1], [1, 0]])
    assert ds.feature_names == ("a", "b")
    assert ds.class_labels == ("0", "1")


def test_target_by_name_and_text_labels(tmp_path):
    ds = load_csv(write(tmp_path, "kind;x\nspam;1.5\nham;2\nspam;0\n"), target_column="kind", delimiter=";")
    assert ds.class_labels == ("ham", "spam")
    np.testing.assert_array_equal(ds.labels, [1, 0, 1])
    np.testing.assert_array_equal(ds.X[:, 0], [1.5, 2.0, 0.0])


def test_numeric_labels_sort_numerically(tmp_path):
    ds = load_csv(write(tmp_path, "x,y\n0,10\n1,9\n2,2\n"))
    assert ds.class_labels == ("2", "9", "10")


def test_regression_targets_and_no_header(tmp_path):
    ds = load_csv(write(tmp_path, "1,2,0.5\n3,4,1.5\n"), task="regression", has_header=False)
    np.testing.assert_array_equal(ds.Y, [[0.5], [1.5]])


def test_gzip_csv(tmp_path):
    p = tmp_path / "d.csv.gz"
    with gzip.open(p, "wt") as fh:
        fh.write("a,y\n1,0\n2,1\n")
    assert load_csv(p).n == 2


def test_nan_feature_names_row(tmp_path):
    with pytest.raises(DataError, match="line 3"):
        load_csv(write(tmp_path, "a,b,y\n1,2,0\n1,NaN,1\n"))


def test_non_numeric_and_ragged_rows(tmp_path):
    with pytest.raises(DataError, match="line 2"):
        load_csv(write(tmp_path, "a,b,y\n1,x,0\n"))
    with pytest.raises(DataError, match="line 3"):
        load_csv(write(tmp_path, "a,b,y\n1,2,0\n1,2\n"))


def test_missing_and_empty_files(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_csv(tmp_path / "nope.csv")
    with pytest.raises(DataError):
        load_csv(write(tmp_path, "a,b,y\n"))
    with pytest.raises(DataError):
        load_csv(write(tmp_path, "a,y\n1,0\n"), target_column="z")


@pytest.mark.skipif(not (DATA / "iris.csv").exists(), reason="run scripts/fetch_data.py")
def test_iris_shape():
    ds = load_csv(DATA / "iris.csv", target_column="class")
    assert (ds.n, ds.input_dim, ds.task.n_outputs) == (150, 4, 3)


def test_dataset_invariants():
    task = TaskKind("classification", 2)
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), np.array([[1, 0], [1, 1]]), task)
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan], [0]]), one_hot([0, 1], 2), task)
    with pytest.raises(DataError, match="overlap"):
        Dataset(np.zeros((2, 1)), one_hot([0, 1], 2), task, splits={"train": [0, 1], "test": [1]})


def _labelled(n, ratio=0.5, seed=0):
    ids = (np.arange(n) < int(n * ratio)).astype(int)
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, 2)), one_hot(ids, 2), TaskKind("classification", 2))


def test_split_sizes_and_determinism():
    ds = _labelled(10)
    a = split(ds, (0.6, 0.2, 0.2), seed=3)
    b = split(ds, (0.6, 0.2, 0.2), seed=3)
    assert [len(a.splits[k]) for k in ("train", "validation", "test")] == [6, 2, 2]
    for k in a.splits:
        np.testing.assert_array_equal(a.splits[k], b.splits[k])
    all_idx = np.concatenate(list(a.splits.values()))
    assert sorted(all_idx) == list(range(10))


def test_stratified_split_keeps_ratio():
    ds = _labelled(200, ratio=0.1)
    s = split(ds, (0.6, 0.2, 0.2), stratified=True, seed=0)
    for name, idx in s.splits.items():
        positives = ds.labels[idx].sum()
        assert abs(positives - 0.1 * len(idx)) <= 1, name


def test_split_validation():
    ds = _labelled(10)
    with pytest.raises(DataError):
        split(ds, (0.5, 0.2, 0.2))
    with pytest.raises(DataError, match="empty"):
        split(_labelled(3), (0.9, 0.05, 0.05))


def test_split_ordered():
    ds = split_ordered(_labelled(10), [5, 3, 2])
    np.testing.assert_array_equal(ds.splits["validation"], [5, 6, 7])
    with pytest.raises(DataError):
        split_ordered(_labelled(10), [8, 3, 2])


def test_minmax_uses_train_statistics():
    X = np.array([[0.0, 5.0], [10.0, 5.0], [20.0, 5.0]])
    ds = Dataset(X, one_hot([0, 1, 0], 2), TaskKind("classification", 2), splits={"train": [0, 1], "test": [2]})
    out, scaler = normalize(ds, "minmax")
    np.testing.assert_array_equal(out.X[:, 0], [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(out.X[:, 1], [5.0, 5.0, 5.0])  # constant column unchanged
    np.testing.assert_array_equal(scaler.transform(X[[0, 1]]), out.X[[0, 1]])


def test_zscore_constant_column_and_no_test_leak():
    rng = np.random.default_rng(0)
    X = np.c_[rng.normal(size=50), np.full(50, 3.0)]
    ds = split(Dataset(X, rng.normal(size=(50, 1)), TaskKind("regression", 1)), seed=1)
    out, scaler = normalize(ds, "zscore")
    np.testing.assert_array_equal(out.X[:, 1], 3.0)
    ref = fit_scaler(X[ds.splits["train"]], "zscore")
    np.testing.assert_array_equal(scaler.shift, ref.shift)
    np.testing.assert_array_equal(scaler.scale, ref.scale)
    tr = out.X[ds.splits["train"], 0]
    assert abs(tr.mean()) < 1e-12 and abs(tr.std() - 1) < 1e-12


def test_scaler_round_trip():
    s = fit_scaler(np.random.default_rng(0).normal(size=(10, 3)), "minmax")
    t = type(s).from_dict(s.to_dict())
    np.testing.assert_array_equal(t.shift, s.shift)
    with pytest.raises(DataError):
        fit_scaler(np.zeros((2, 2)), "robust")


def test_noiseless_linear_is_exactly_linear():
    ds = synth_regression("linear", 200, noise_sd=0.0, seed=0)
    A = np.c_[ds.X, np.ones(ds.n)]
    coef, *_ = np.linalg.lstsq(A, ds.Y, rcond=None)
    assert np.mean((A @ coef - ds.Y) ** 2) < 1e-25
    assert ds.Y.min() == 0.0 and ds.Y.max() == 1.0


def test_synthetic_determinism_and_errors():
    a = synth_regression("friedman-like", 100, 0.1, seed=4)
    b = synth_regression("friedman-like", 100, 0.1, seed=4)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Y, b.Y)
    assert a.input_dim == 10
    with pytest.raises(DataError):
        synth_regression("spiral", 100)
    with pytest.raises(DataError):
        synth_regression("linear", 10)


def test_piecewise_beats_constant_predictor_tenfold():
    ds = split(synth_regression("piecewise", 2000, noise_sd=0.02, seed=0), seed=0)
    ds, _ = normalize(ds)
    net = init_network([(4, 32, "relu"), (32, 32, "relu"), (32, 1, "identity")], seed=0)
    train(net, ds, TrainConfig(epochs=60, lr=3e-3, seed=0))
    X_te, Y_te = ds.subset("test")
    _, Y_tr = ds.subset("train")
    mse_const = np.mean((Y_te - Y_tr.mean()) ** 2)
    mse_net = np.mean((forward(net, X_te) - Y_te) ** 2)
    assert mse_const >= 10 * mse_net


def test_dataset_round_trip(tmp_path):
    ds = split(_labelled(20), seed=2)
    ds = Dataset(ds.X, ds.Y, ds.task, ds.splits, ("p", "q"), ("neg", "pos"))
    save_dataset(ds, tmp_path / "d.npz")
    back = load_dataset(tmp_path / "d.npz")
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.Y, ds.Y)
    for k in ds.splits:
        np.testing.assert_array_equal(back.splits[k], ds.splits[k])
    assert back.class_labels == ("neg", "pos") and back.fingerprint() == ds.fingerprint()
