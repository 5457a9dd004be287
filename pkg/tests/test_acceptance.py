"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line (printed in the terminal summary) and then
asserts the same condition. End-to-end runs use seeds 0-4 and are judged on
the median. Runtime limits are part of each pass condition.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import kink_free, max_rel_error, numeric_grad, random_net, record_criterion, targets_for
from denseprune.cli import main as cli_main
from denseprune.config import build_dataset, load_config
from denseprune.metrics import classification_metrics, compression_report, f1_scores, regression_metrics, roc_auc
from denseprune.nn import forward, init_network, loss_and_grad
from denseprune.pruning import capture_unit_stats, kept_param_count, rebuild_network, select_useful_units, subnet_output
from denseprune.refine import scratch_control, select_epsilon, sweep
from denseprune.sizing import SizingInput, compute_layer_width, exact_count, paper_count

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
SEEDS = range(5)


def check(number, title, passed, detail):
    record_criterion(number, title, bool(passed), detail)
    assert passed, detail


def needs(*names):
    missing = [n for n in names if not (ROOT / "data" / n).exists()]
    if missing:
        pytest.fail(f"missing data files {missing}; run `python scripts/fetch_data.py`")


def run_config(name, seed, epsilons=None):
    """Train once, sweep, and return ``(dataset, cfg, general_net, records)``."""
    cfg = load_config(CONFIGS / name).with_seed(seed)
    ds = build_dataset(cfg)
    net, results = sweep(ds, cfg.refine, epsilons or cfg.epsilons)
    return ds, cfg, net, [r for _, r in results]


def pick(cfg, records):
    if len(records) == 1:
        return records[0]
    return select_epsilon(records, cfg.min_reduction, cfg.max_preserved)


# --- 1 ---------------------------------------------------------------------------


def test_c01_gradient_correctness():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, nets, acts = 0.0, 0, set()
    while nets < 20:
        net = random_net(rng, int(rng.integers(2, 4)), 4)
        if net.n_params > 50:
            continue
        X = rng.normal(size=(4, net.input_dim))
        if not kink_free(net, X):
            continue
        Y, loss = targets_for(net, rng, 4)
        _, grads = loss_and_grad(net, X, Y, loss)
        worst = max(worst, max_rel_error(grads, numeric_grad(net, X, Y, loss, h=1e-5)))
        acts.update(a for _, _, a in net.architecture)
        nets += 1
    elapsed = time.perf_counter() - t0
    check(1, "gradient correctness", worst < 1e-4 and elapsed < 10 and len(acts) >= 4,
          f"20 nets, activations {sorted(acts)}, worst rel err {worst:.2e} (< 1e-4), {elapsed:.2f}s (< 10s)")


# --- 2 ---------------------------------------------------------------------------


def test_c02_oracle_equivalence():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(10):
        net = random_net(rng, int(rng.integers(3, 6)), 16)
        X = rng.normal(size=(50, net.input_dim))
        stats = capture_unit_stats(net, X)
        for l, width in enumerate(net.hidden_widths):
            for u in range(width):
                out = subnet_output(net, l, u, X)
                worst = max(worst, abs(out.mean() - stats.means[l][u]), abs(out.std() - stats.stds[l][u]))
    elapsed = time.perf_counter() - t0
    check(2, "capture stats == subnet oracle", worst <= 1e-9 and elapsed < 30,
          f"10 nets, max |diff| {worst:.1e} (<= 1e-9), {elapsed:.2f}s (< 30s)")


# --- 3 ---------------------------------------------------------------------------


def test_c03_function_preservation():
    rng = np.random.default_rng(3)
    worst, nets, pruned_units = 0.0, 0, 0
    while nets < 10:
        net = random_net(rng, int(rng.integers(3, 6)), 12, acts=("relu", "tanh", "sigmoid", "identity"))
        constant = []
        for layer in net.layers[:-1]:
            mask = rng.random(layer.out_dim) < 0.35
            mask[rng.integers(layer.out_dim)] = False
            layer.weights[:, mask] = 0.0  # constant for every input
            constant.append(mask)
        X_eval = rng.normal(size=(60, net.input_dim))
        plan = select_useful_units(capture_unit_stats(net, X_eval), 1e-300)
        if any(np.any(~k & ~c) for k, c in zip(plan.keep, constant)):
            continue  # something non-constant also had zero spread on X_eval; not this criterion
        rebuilt = rebuild_network(net, plan)
        probe = np.vstack([rng.normal(size=(500, net.input_dim)), rng.normal(scale=10, size=(500, net.input_dim))])
        worst = max(worst, float(np.abs(forward(rebuilt, probe) - forward(net, probe)).max()))
        pruned_units += sum(int((~k).sum()) for k in plan.keep)
        nets += 1
    check(3, "weighted compensation preserves function", worst <= 1e-9 and pruned_units > 0,
          f"10 nets, {pruned_units} constant units pruned, 1000-row probe, max |diff| {worst:.1e} (<= 1e-9)")


# --- 4 ---------------------------------------------------------------------------


def test_c04_sizing_round_trip():
    rng = np.random.default_rng(4)
    bad = []
    for _ in range(1000):
        NC = int(rng.integers(1, 30))
        NP = int(rng.integers(NC + 1, 500_000))
        D, NL = int(rng.integers(1, 2000)), int(rng.integers(1, 11))
        nu = compute_layer_width(SizingInput(NP, D, NL, NC, "paper"))
        if not (paper_count(nu, D, NL, NC) <= NP < paper_count(nu + 1, D, NL, NC) or nu == 1):
            bad.append(("paper", NP, D, NL, NC))
        nu = compute_layer_width(SizingInput(NP, D, NL, NC, "exact"))
        if not (exact_count(nu, D, NL, NC) <= NP < exact_count(nu + 1, D, NL, NC) or nu == 1):
            bad.append(("exact", NP, D, NL, NC))
    check(4, "sizing budget inequalities", not bad, f"1000 tuples x 2 modes, {len(bad)} violations")


# --- 5 ---------------------------------------------------------------------------


def test_c05_epsilon_monotonicity():
    needs("iris.csv", "wisconsin.csv", "spambase.csv")
    problems, checked = [], 0
    for name in ("iris.yaml", "cancer.yaml", "spambase.yaml"):
        cfg = load_config(CONFIGS / name)
        ds = build_dataset(cfg)
        _, _, net, _ = run_config(name, 0, epsilons=[cfg.refine.epsilon])
        stats = capture_unit_stats(net, ds.subset("validation")[0])
        all_std = np.concatenate(stats.stds)
        # ten increasing thresholds spanning the observed spreads, up to full collapse
        eps = np.quantile(all_std[all_std > 0], np.linspace(0.05, 1.0, 10)) if np.any(all_std > 0) else np.ones(10)
        eps = np.maximum.accumulate(np.maximum(eps, 1e-12))
        prev_keep, prev_params = None, None
        for e in eps:
            plan = select_useful_units(stats, float(e))
            params = rebuild_network(net, plan, seed=0).n_params
            assert params == kept_param_count(net, plan)
            if prev_keep is not None:
                if any(np.any(k & ~p) for k, p in zip(plan.keep, prev_keep)):
                    problems.append(f"{name}: keep-set not nested at eps={e:.4g}")
                if params > prev_params:
                    problems.append(f"{name}: params rose {prev_params}->{params} at eps={e:.4g} "
                                    f"(collapsed {plan.collapsed_layers})")
            prev_keep, prev_params = plan.keep, params
            checked += 1
    check(5, "epsilon monotonicity", not problems,
          f"3 trained models x 10 eps ({checked} plans); " + ("; ".join(problems) if problems else "nested, non-increasing"))


# --- 6, 7 ----------------------------------------------------------------------------


def _reproduction(number, title, config, data_file, min_acc, limit):
    needs(data_file)
    t0 = time.perf_counter()
    chosen = []
    for seed in SEEDS:
        _, cfg, _, records = run_config(config, seed)
        rec = pick(cfg, records)
        assert rec is not None, f"seed {seed}: no epsilon reached {cfg.min_reduction}% reduction"
        chosen.append(rec)
    elapsed = time.perf_counter() - t0
    acc = float(np.median([r.stage("PR") for r in chosen]))
    red = float(np.median([r.reduction_percent for r in chosen]))
    passed = acc >= min_acc and red >= 30 and elapsed < limit
    check(number, title, passed,
          f"median PR acc {acc:.4f} (>= {min_acc}), median reduction {red:.1f}% (>= 30), "
          f"eps {[r.epsilon for r in chosen]}, {elapsed:.1f}s (< {limit:.0f}s)")


def test_c06_iris():
    _reproduction(6, "Iris reproduction", "iris.yaml", "iris.csv", 0.93, 120)


def test_c07_cancer():
    _reproduction(7, "Cancer reproduction", "cancer.yaml", "wisconsin.csv", 0.94, 120)


# --- 8, 9 -----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def spambase_runs():
    needs("spambase.csv")
    t0 = time.perf_counter()
    runs = []
    for seed in SEEDS:
        ds, cfg, _, records = run_config("spambase.yaml", seed, epsilons=[0.3])
        runs.append((ds, cfg, records[0]))
    return runs, time.perf_counter() - t0


def test_c08_spambase(spambase_runs):
    runs, elapsed = spambase_runs
    recs = [r for _, _, r in runs]
    pr = float(np.median([r.stage("PR") for r in recs]))
    pwr = float(np.median([r.stage("PWR") for r in recs]))
    red = float(np.median([r.reduction_percent for r in recs]))
    passed = pr >= 0.88 and 20 <= red <= 45 and pr > pwr and elapsed < 300
    check(8, "Spambase eps=0.3 reproduction", passed,
          f"median PR {pr:.4f} (>= 0.88), median PWR {pwr:.4f} (< PR), median reduction {red:.1f}% "
          f"(in [20, 45]), {elapsed:.1f}s (< 300s)")


def test_c09_scratch_control(spambase_runs):
    runs, _ = spambase_runs
    gaps, scratch, refined = [], [], []
    for ds, cfg, rec in runs:
        ctl = scratch_control(rec, ds, cfg.train)
        scratch.append(ctl["scratch"]["accuracy"])
        refined.append(rec.stage("PR"))
        gaps.append(100 * (refined[-1] - scratch[-1]))
    gap = float(np.median(gaps))
    check(9, "refined beats same-topology scratch by >= 5 points", gap >= 5.0,
          f"median gap {gap:+.2f} points (>= +5), refined {np.round(refined, 4).tolist()}, "
          f"scratch {np.round(scratch, 4).tolist()}")


# --- 10 -----------------------------------------------------------------------------


def test_c10_regression():
    t0 = time.perf_counter()
    per_seed = [run_config("piecewise.yaml", seed)[3] for seed in SEEDS]
    elapsed = time.perf_counter() - t0
    eps_list = [r.epsilon for r in per_seed[0]]
    rows = []
    for i, e in enumerate(eps_list):
        recs = [records[i] for records in per_seed]
        red = float(np.median([r.reduction_percent for r in recs]))
        ratio = float(np.median([r.stage("PR") / r.stage("OR") for r in recs]))
        gain = float(np.median([r.stage("PR") - r.stage("PWR") for r in recs]))
        rows.append((e, red, ratio, gain, red >= 50 and ratio <= 2 and gain < 0))
    good = [row for row in rows if row[4]]
    best = good[0] if good else max(rows, key=lambda r: r[1])
    check(10, "piecewise regression", bool(good) and elapsed < 300,
          f"eps={best[0]}: median reduction {best[1]:.1f}% (>= 50), median PR/OR MSE {best[2]:.2f} (<= 2), "
          f"median PR-PWR MSE {best[3]:.2e} (< 0); qualifying eps {[r[0] for r in good]}, {elapsed:.1f}s (< 300s)")


# --- 11 ------------------------------------------------------------------------------


def test_c11_mnist_lenet():
    needs("mnist_12k.csv.gz")
    t0 = time.perf_counter()
    chosen = []
    base = load_config(CONFIGS / "mnist.yaml")
    ds = build_dataset(base)  # the ordered split does not depend on the seed
    assert [len(ds.splits[k]) for k in ("train", "validation", "test")] == [8000, 2000, 2000]
    for seed in SEEDS:
        cfg = base.with_seed(seed)
        net, results = sweep(ds, cfg.refine, cfg.epsilons)
        assert net.widths == [784, 300, 100, 10]
        rec = pick(cfg, [r for _, r in results])
        assert rec is not None, f"seed {seed}: nothing at <= 25% preserved"
        assert rec.retrain_epochs <= 0.15 * cfg.train.epochs
        chosen.append(rec)
    elapsed = time.perf_counter() - t0
    err = float(np.median([1 - r.stage("PR") for r in chosen]))
    kept = float(np.median([r.preserved_percent for r in chosen]))
    orig = float(np.median([1 - r.stage("OR") for r in chosen]))
    passed = err <= 0.08 and kept <= 25 and elapsed < 900
    check(11, "LeNet-300-100 reduced scale", passed,
          f"median test error {100 * err:.2f}% (<= 8; original {100 * orig:.2f}%), median preserved {kept:.1f}% "
          f"(<= 25), retrain {chosen[0].retrain_epochs}/{base.train.epochs} epochs, eps "
          f"{[r.epsilon for r in chosen]}, {elapsed:.0f}s (< 900s)")


# --- 12 ------------------------------------------------------------------------------


def test_c12_metrics_suite():
    results = {}
    results["accuracy 2/3"] = classification_metrics(np.eye(2)[[1, 0, 1]], [1, 1, 1])["accuracy"] == 2 / 3
    results["perfect AUC"] = classification_metrics(
        np.array([[0.9, 0.1], [0.6, 0.4], [0.2, 0.8], [0.1, 0.9]]), [0, 0, 1, 1])["auc"] == 1.0
    results["F1 2/3"] = abs(f1_scores(np.array([[5, 1], [1, 2]]))[1] - 2 / 3) < 1e-15
    results["mse identity"] = regression_metrics([0.5, 2.0], [0.5, 2.0])["mse"] == 0.0
    results["mse 5"] = regression_metrics([0.0, 0.0], [1.0, 3.0])["mse"] == 5.0
    rng = np.random.default_rng(12)
    p, t = rng.normal(size=50), rng.normal(size=50)
    perm = rng.permutation(50)
    results["mse permutation"] = abs(regression_metrics(p[perm], t[perm])["mse"] - regression_metrics(p, t)["mse"]) < 1e-15
    net = init_network([(4, 10, "relu"), (10, 3, "softmax")], seed=0)
    rep = compression_report(net, net)
    results["identity compression"] = rep.reduction_percent == 0.0 and rep.compression_ratio == 1.0
    aucs = []
    for seed in SEEDS:
        r = np.random.default_rng(seed)
        aucs.append(roc_auc(r.permutation(2000), r.random(2000) < 0.5))
    results["shuffled AUC"] = all(0.45 <= a <= 0.55 for a in aucs)
    failed = [k for k, ok in results.items() if not ok]
    check(12, "metrics unit suite", not failed,
          f"{len(results) - len(failed)}/{len(results)} examples exact; shuffled AUC n=2000 "
          f"{np.round(aucs, 3).tolist()} in [0.45, 0.55]" + (f"; failed {failed}" if failed else ""))


# --- 13 ------------------------------------------------------------------------------


def test_c13_reproducibility(tmp_path):
    needs("iris.csv", "spambase.csv")
    mismatches, compared = [], 0
    for command, config in (("run", "iris.yaml"), ("run", "piecewise.yaml"), ("sweep", "spambase.yaml")):
        a, b = tmp_path / f"{config}-a", tmp_path / f"{config}-b"
        assert cli_main([command, str(CONFIGS / config), "--out", str(a)]) == 0
        assert cli_main([command, "--manifest", str(a / "manifest.json"), "--out", str(b)]) == 0
        for f in sorted(p.name for p in a.iterdir() if p.name != "manifest.json"):
            compared += 1
            if (a / f).read_bytes() != (b / f).read_bytes():
                mismatches.append(f"{config}/{f}")
    check(13, "re-execution from manifest is exact", not mismatches,
          f"{compared} artifacts compared byte for byte across 3 manifests"
          + (f"; differing {mismatches}" if mismatches else ""))
