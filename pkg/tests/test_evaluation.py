import time

import numpy as np
import pytest

from utils.eeg import EpochDataset, kfold, synth_epochs
from utils.errors import ConfigurationError
from utils.evaluation import (
    BENCH_VARIANTS,
    BenchTable,
    bench_seed,
    crossval_accuracy,
    evaluate_fold,
    format_mean_std,
    mean_std,
    parse_bench_variants,
    summarize_folds,
    synthetic_for_seed,
)
from utils.optimizer import OptimConfig
from utils.plsr import Variant


def _copy_label_dataset(trials=24, classes=3, seed=0):
    """Each trial is the one-hot code of its own label."""
    labels = np.random.default_rng(seed).permutation(np.arange(trials) % classes)
    data = np.eye(classes)[labels][:, :, None]
    return EpochDataset(data, labels, 100.0, classes)


def test_format_mean_std():
    assert format_mean_std(0.84871, 0.01482) == "0.8487±0.0148"
    mean, std = mean_std([0.5, 0.7, 0.9])
    assert mean == pytest.approx(0.7)
    assert std == pytest.approx(0.2)
    assert mean_std([0.4]) == (0.4, 0.0)


def test_copy_label_dataset_is_decoded_perfectly():
    report = crossval_accuracy(_copy_label_dataset(), 4, 2)
    assert report.accuracies == [1.0, 1.0, 1.0, 1.0]
    assert report.summary == "1.0000±0.0000"


def test_report_shape_and_bounds(small_epochs):
    report = crossval_accuracy(small_epochs, 4, 2, "simpls")
    assert len(report.folds) == 4
    assert [f.fold for f in report.folds] == [0, 1, 2, 3]
    assert all(0.0 <= a <= 1.0 for a in report.accuracies)
    assert sum(f.n_test for f in report.folds) == small_epochs.n_trials
    doc = report.to_dict(include_timing=False)
    assert doc["k"] == 4 and doc["variant"] == "simpls"
    assert all(row["seconds"] == 0.0 for row in doc["folds"])


def test_summarize_orders_folds(small_epochs):
    plan = kfold(small_epochs, 4, seed=0)
    results = [evaluate_fold(small_epochs, plan, fold, 1, Variant.SIMPLS, OptimConfig()) for fold in (3, 1, 0, 2)]
    report = summarize_folds(results, "simpls", 1, plan.stratified)
    assert [f.fold for f in report.folds] == [0, 1, 2, 3]
    assert report.variant is Variant.SIMPLS


@pytest.mark.slow
def test_synthetic_decoding_is_near_perfect():
    started = time.perf_counter()
    ds = synth_epochs(trials=120, channels=8, samples=200, classes=2, snr=1.0, seed=7)
    report = crossval_accuracy(ds, 4, 2, Variant.BIGR_PRECONDITIONED, OptimConfig(seed=7))
    assert report.mean >= 0.95
    assert time.perf_counter() - started < 30.0


@pytest.mark.slow
def test_shuffled_labels_sit_at_chance():
    ds = synth_epochs(trials=120, channels=8, samples=200, classes=2, snr=1.0, seed=7)
    shuffled = ds.with_labels(np.random.default_rng(99).permutation(ds.labels))
    report = crossval_accuracy(shuffled, 4, 2, Variant.BIGR_PRECONDITIONED, OptimConfig(seed=7))
    assert abs(report.mean - 0.5) <= 0.15


@pytest.mark.slow
def test_random_four_class_labels_sit_at_chance():
    ds = synth_epochs(trials=160, channels=4, samples=50, classes=4, snr=1.0, seed=3)
    random_labels = ds.with_labels(np.random.default_rng(5).integers(0, 4, size=ds.n_trials))
    report = crossval_accuracy(random_labels, 4, 3, Variant.BIGR_PRECONDITIONED, OptimConfig(seed=3))
    assert abs(report.mean - 0.25) <= 0.15


def _bench_table(seeds, rank, make_dataset, k=4, variants=BENCH_VARIANTS):
    runs = [run for seed in seeds for run in bench_seed(seed, make_dataset(seed), rank, k, OptimConfig(), variants)]
    return BenchTable(rank, k, tuple(variants), runs)


def test_bench_variants_parsing():
    assert parse_bench_variants(None) == BENCH_VARIANTS
    assert parse_bench_variants(["bigr", "simpls"]) == (Variant.BIGR_PRECONDITIONED, Variant.SIMPLS)
    with pytest.raises(ConfigurationError):
        parse_bench_variants(["simpls", "simpls"])
    with pytest.raises(ConfigurationError):
        parse_bench_variants(["nipals"])


def test_bench_single_seed_layout():
    table = _bench_table([3], 1, synthetic_for_seed(trials=24, channels=3, samples=40))
    summary = table.summary()
    assert [row["variant"] for row in summary] == ["preconditioned", "non-preconditioned"]
    doc = table.to_dict(include_timing=False)
    assert [row["id"] for row in doc["per_seed"]] == [3]
    assert doc["variants"] == ["bigr", "bigr-noprecond"]
    assert doc["per_seed"][0]["preconditioned"]["running_time_s"] == 0.0

    lines = table.render(include_timing=False).splitlines()
    assert lines[0].startswith("ID")
    assert lines[2].startswith("3 ")
    assert lines[-1].startswith("mean")
    assert len(lines) == 5


def test_method_comparison_on_four_classes():
    variants = (Variant.BIGR_PRECONDITIONED, Variant.SIMPLS)
    table = _bench_table([0, 1], 3, synthetic_for_seed(trials=48, channels=4, samples=50, classes=4), variants=variants)
    assert [row["variant"] for row in table.summary()] == ["preconditioned", "simpls"]
    doc = table.to_dict(include_timing=False)
    assert [row["id"] for row in doc["per_seed"]] == [0, 1]
    for row in doc["per_seed"]:
        assert set(row) == {"id", "preconditioned", "simpls"}
        assert 0.0 <= row["simpls"]["accuracy_mean"] <= 1.0
    header = table.render(include_timing=False).splitlines()[0].split()
    assert header[0] == "ID"
    assert "simpls" in header and "non-preconditioned" not in header
    simpls = next(row for row in table.summary() if row["variant"] == "simpls")
    assert simpls["mean_iterations"] == 0.0


@pytest.mark.slow
def test_preconditioned_accuracy_is_not_worse():
    seeds = list(range(10))
    table = _bench_table(seeds, 2, synthetic_for_seed(trials=60, channels=6, samples=100, classes=3))
    means = {row["variant"]: row["accuracy_mean"] for row in table.summary()}
    assert means["preconditioned"] >= means["non-preconditioned"] - 1e-12
    assert table.seeds == seeds
