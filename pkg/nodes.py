import logging
import platform
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from pocketflow import BatchNode, Node

from utils import __version__
from utils.eeg import flatten, kfold, preprocess, synth_epochs
from utils.evaluation import BENCH_VARIANTS, BenchTable, bench_seed, evaluate_fold, summarize_folds, synthetic_for_seed
from utils.io import (
    atomic_write_text,
    read_epochs,
    read_json,
    read_labels_csv,
    read_matrix_csv,
    write_epochs,
    write_json,
    write_matrix_csv,
)
from utils.errors import ConfigurationError, DataError
from utils.plsr import (
    DataMatrixPair,
    Variant,
    classify,
    explained_variance,
    fit_model,
    model_from_dict,
    model_to_dict,
    predict,
)

logger = logging.getLogger(__name__)


def _require(shared, key):
    if shared.get(key) is None:
        raise ValueError(f"'{key}' not found in shared store.")
    return shared[key]


def sibling_path(out, suffix):
    """model.json -> model<suffix>, e.g. model.trace.json."""
    path = Path(out)
    if path.name in ("", ".."):
        raise ConfigurationError(f"--out must name a file or directory, got '{out}'")
    return path.with_name(path.stem + suffix)


def _is_one_hot(y):
    return y.shape[1] >= 2 and np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)


class LoadTrainingData(Node):
    """
    Loads the training pair (X, Y) either from two CSV files or from an
    epoch directory (optionally band-passed / decimated, then flattened).
    """
    def prep(self, shared):
        if shared.get("epochs_dir"):
            return {"epochs_dir": shared["epochs_dir"], "band": shared.get("band"), "target_fs": shared.get("target_fs")}
        if not shared.get("x_path") or not shared.get("y_path"):
            raise ConfigurationError("fit needs either --epochs DIR or both --x and --y")
        return {"x_path": shared["x_path"], "y_path": shared["y_path"]}

    def exec(self, source):
        if "epochs_dir" in source:
            ds = preprocess(read_epochs(source["epochs_dir"]), source["band"], source["target_fs"])
            logger.info("LoadTrainingData: %d trials x %d channels x %d samples at %g Hz",
                        ds.n_trials, ds.n_channels, ds.n_samples, ds.fs)
            return flatten(ds)
        x = read_matrix_csv(source["x_path"])
        y = read_matrix_csv(source["y_path"])
        logger.info("LoadTrainingData: X %s, Y %s", x.shape, y.shape)
        return DataMatrixPair(x, y)

    def post(self, shared, prep_res, exec_res):
        shared["data"] = exec_res
        return "default"


class FitModel(Node):
    """Fits the requested PLSR variant to shared['data']."""
    def prep(self, shared):
        return (
            _require(shared, "data"),
            _require(shared, "rank"),
            Variant.parse(_require(shared, "variant")),
            _require(shared, "optim_config"),
            shared.get("center", True),
            shared.get("warm_start", False),
        )

    def exec(self, prep_res):
        data, rank, variant, config, center, warm_start = prep_res
        logger.info("FitModel: fitting rank-%d %s model on %dx%d data",
                    rank, variant.cli_name, data.n_samples, data.n_features)
        return fit_model(data, rank, variant, config, center, warm_start)

    def post(self, shared, prep_res, exec_res):
        shared["model"] = exec_res
        return "default"


class WriteFitOutputs(Node):
    """Writes the model, its trace and a fit report next to --out."""
    def prep(self, shared):
        return _require(shared, "model"), _require(shared, "data"), Path(_require(shared, "out")), shared.get("include_timing", True)

    def exec(self, prep_res):
        model, data, out, include_timing = prep_res
        trace = model.fit_trace
        r2x, r2y = explained_variance(model, data)
        report = {
            "variant": model.variant.cli_name,
            "rank": model.rank,
            "n_samples": data.n_samples,
            "final_cost": trace.final_cost if trace.records else None,
            "iterations": trace.iterations,
            "termination": trace.termination.value if trace.termination else None,
            "explained_variance_x": r2x,
            "explained_variance_y": r2y,
        }
        if _is_one_hot(data.y):
            predicted = classify(predict(model, data.x))
            report["training_accuracy"] = float(np.mean(predicted == np.argmax(data.y, axis=1)))

        records = trace.to_records(include_timing=True)
        if not include_timing:
            for row in records:
                row["elapsed_s"] = 0.0
        trace_doc = {"termination": report["termination"], "records": records}
        trace_path = sibling_path(out, ".trace.json")
        report_path = sibling_path(out, ".report.json")
        write_json(out, model_to_dict(model))
        write_json(trace_path, trace_doc)
        write_json(report_path, report)
        return [str(out), str(trace_path), str(report_path)], report

    def post(self, shared, prep_res, exec_res):
        paths, report = exec_res
        print(f"WriteFitOutputs: model written to {paths[0]}")
        shared.setdefault("outputs", []).extend(paths)
        shared["report"] = report
        return "default"


class LoadModel(Node):
    def prep(self, shared):
        return _require(shared, "model_path")

    def exec(self, model_path):
        return model_from_dict(read_json(model_path))

    def post(self, shared, prep_res, exec_res):
        logger.info("LoadModel: %s model with %d features, rank %d", exec_res.variant.value, exec_res.n_features, exec_res.rank)
        shared["model"] = exec_res
        return "default"


class LoadPredictInputs(Node):
    def prep(self, shared):
        return _require(shared, "model").n_features, _require(shared, "x_path"), shared.get("labels_path")

    def exec(self, prep_res):
        n_features, x_path, labels_path = prep_res
        x_new = read_matrix_csv(x_path, n_cols=n_features)
        labels = read_labels_csv(labels_path) if labels_path else None
        if labels is not None and labels.shape[0] != x_new.shape[0]:
            raise DataError(f"{labels_path}: {labels.shape[0]} labels for {x_new.shape[0]} rows")
        return x_new, labels

    def post(self, shared, prep_res, exec_res):
        shared["x_new"], shared["labels"] = exec_res
        return "default"


class Predict(Node):
    """Scores new rows with the fitted coefficients and takes the argmax class."""
    def prep(self, shared):
        return _require(shared, "model"), _require(shared, "x_new"), shared.get("labels")

    def exec(self, prep_res):
        model, x_new, labels = prep_res
        scores = predict(model, x_new)
        classes = classify(scores) if scores.shape[0] else np.empty(0, dtype=int)
        metrics = {"n_rows": int(scores.shape[0])}
        if labels is not None:
            metrics["accuracy"] = float(np.mean(classes == labels)) if labels.size else None
        return scores, classes, metrics

    def post(self, shared, prep_res, exec_res):
        shared["scores"], shared["classes"], shared["metrics"] = exec_res
        return "default"


class WritePredictions(Node):
    def prep(self, shared):
        out = Path(_require(shared, "out"))
        metrics_path = shared.get("metrics_path") or sibling_path(out, ".metrics.json")
        return shared["scores"], shared["classes"], shared["metrics"], out, Path(metrics_path)

    def exec(self, prep_res):
        scores, classes, metrics, out, metrics_path = prep_res
        write_matrix_csv(out, scores, classes)
        write_json(metrics_path, metrics)
        return [str(out), str(metrics_path)]

    def post(self, shared, prep_res, exec_res):
        metrics = prep_res[2]
        if metrics.get("accuracy") is not None:
            print(f"WritePredictions: accuracy {metrics['accuracy']:.4f} on {metrics['n_rows']} rows")
        shared.setdefault("outputs", []).extend(exec_res)
        return "default"


class LoadEpochs(Node):
    """Reads an epoch directory; routes to preprocessing when a band or target rate is set."""
    def prep(self, shared):
        return _require(shared, "epochs_dir")

    def exec(self, epochs_dir):
        return read_epochs(epochs_dir)

    def post(self, shared, prep_res, exec_res):
        logger.info("LoadEpochs: %d trials, %d classes from %s", exec_res.n_trials, exec_res.class_count, prep_res)
        shared["dataset"] = exec_res
        if shared.get("band") is not None or shared.get("target_fs") is not None:
            return "preprocess"
        return "default"


class PreprocessEpochs(Node):
    def prep(self, shared):
        return _require(shared, "dataset"), shared.get("band"), shared.get("target_fs")

    def exec(self, prep_res):
        ds, band, target_fs = prep_res
        return preprocess(ds, band, target_fs)

    def post(self, shared, prep_res, exec_res):
        logger.info("PreprocessEpochs: band %s, %g Hz, %d samples per channel", prep_res[1], exec_res.fs, exec_res.n_samples)
        shared["dataset"] = exec_res
        return "default"


class PlanFolds(Node):
    def prep(self, shared):
        return _require(shared, "dataset"), _require(shared, "k"), _require(shared, "optim_config").seed

    def exec(self, prep_res):
        ds, k, seed = prep_res
        return kfold(ds, k, seed)

    def post(self, shared, prep_res, exec_res):
        logger.info("PlanFolds: %d folds of sizes %s (stratified=%s)", exec_res.k, exec_res.fold_sizes().tolist(), exec_res.stratified)
        shared["fold_plan"] = exec_res
        return "default"


class CrossValidateFolds(BatchNode):
    """One fit/evaluate per fold; post() folds the results into a report."""
    def prep(self, shared):
        plan = _require(shared, "fold_plan")
        ds = _require(shared, "dataset")
        rank, variant = _require(shared, "rank"), Variant.parse(_require(shared, "variant"))
        config, center = _require(shared, "optim_config"), shared.get("center", True)
        return [(ds, plan, fold, rank, variant, config, center) for fold in range(plan.k)]

    def exec(self, item):
        ds, plan, fold, rank, variant, config, center = item
        return evaluate_fold(ds, plan, fold, rank, variant, config, center)

    def post(self, shared, prep_res, exec_res):
        plan = shared["fold_plan"]
        shared["report"] = summarize_folds(exec_res, shared["variant"], shared["rank"], plan.stratified)
        print(f"CrossValidateFolds: {shared['report'].variant.cli_name} accuracy {shared['report'].summary}")
        return "default"


class WriteCrossvalMetrics(Node):
    def prep(self, shared):
        return _require(shared, "report"), Path(_require(shared, "out")), shared.get("include_timing", True)

    def exec(self, prep_res):
        report, out, include_timing = prep_res
        write_json(out, report.to_dict(include_timing))
        return [str(out)]

    def post(self, shared, prep_res, exec_res):
        shared.setdefault("outputs", []).extend(exec_res)
        return "default"


class PrepareBenchDatasets(Node):
    """Resolves one dataset per seed: synthetic (seeded generator) or a shared epoch directory."""
    def prep(self, shared):
        seeds = shared.get("seeds") or []
        if not seeds:
            raise ConfigurationError("bench-precond needs at least one seed (--seeds S1 .. Sn)")
        if not shared.get("synthetic") and not shared.get("epochs_dir"):
            raise ConfigurationError("bench-precond needs --epochs DIR or --synthetic")
        return seeds, shared.get("synthetic"), shared.get("epochs_dir"), shared.get("synth_params", {}), shared.get("band"), shared.get("target_fs")

    def exec(self, prep_res):
        seeds, synthetic, epochs_dir, synth_params, band, target_fs = prep_res
        if synthetic:
            make = synthetic_for_seed(**synth_params)
            return [(seed, preprocess(make(seed), band, target_fs)) for seed in seeds]
        ds = preprocess(read_epochs(epochs_dir), band, target_fs)
        return [(seed, ds) for seed in seeds]

    def post(self, shared, prep_res, exec_res):
        shared["bench_jobs"] = exec_res
        return "default"


class RunBenchSeeds(BatchNode):
    """Cross-validates every compared variant per seed."""
    def prep(self, shared):
        rank, k, config = _require(shared, "rank"), _require(shared, "k"), _require(shared, "optim_config")
        variants = tuple(shared.get("bench_variants") or BENCH_VARIANTS)
        return [(seed, ds, rank, k, config, variants) for seed, ds in _require(shared, "bench_jobs")]

    def exec(self, item):
        seed, ds, rank, k, config, variants = item
        logger.info("RunBenchSeeds: seed %d", seed)
        return bench_seed(seed, ds, rank, k, config, variants)

    def post(self, shared, prep_res, exec_res):
        variants = tuple(shared.get("bench_variants") or BENCH_VARIANTS)
        table = BenchTable(shared["rank"], shared["k"], variants, [run for runs in exec_res for run in runs])
        shared["bench_table"] = table
        return "default"


class WriteBenchTable(Node):
    def prep(self, shared):
        return _require(shared, "bench_table"), Path(_require(shared, "out")), shared.get("include_timing", True)

    def exec(self, prep_res):
        table, out, include_timing = prep_res
        text = table.render(include_timing)
        text_path = sibling_path(out, ".txt")
        write_json(out, table.to_dict(include_timing))
        atomic_write_text(text_path, text + "\n")
        return text, [str(out), str(text_path)]

    def post(self, shared, prep_res, exec_res):
        text, paths = exec_res
        print(text)
        shared.setdefault("outputs", []).extend(paths)
        return "default"


class GenerateEpochs(Node):
    def prep(self, shared):
        return _require(shared, "synth_params"), _require(shared, "seed")

    def exec(self, prep_res):
        params, seed = prep_res
        return synth_epochs(seed=seed, **params)

    def post(self, shared, prep_res, exec_res):
        shared["dataset"] = exec_res
        return "default"


class WriteEpochs(Node):
    def prep(self, shared):
        return _require(shared, "dataset"), Path(_require(shared, "out"))

    def exec(self, prep_res):
        ds, out = prep_res
        write_epochs(ds, out)
        return [str(out)]

    def post(self, shared, prep_res, exec_res):
        print(f"WriteEpochs: {prep_res[0].n_trials} trials written to {exec_res[0]}")
        shared.setdefault("outputs", []).extend(exec_res)
        return "default"


class WriteRunManifest(Node):
    """
    Records how the outputs were produced: command, resolved configuration,
    inputs, seed, version and timestamps. Written next to the primary output.
    """
    def prep(self, shared):
        return {
            "command": _require(shared, "command"),
            "argv": list(shared.get("argv") or []),
            "config": shared.get("resolved_config", {}),
            "inputs": shared.get("inputs", []),
            "seed": shared.get("seed"),
            "outputs": list(shared.get("outputs", [])),
            "started_at": shared.get("started_at"),
            "cwd": shared.get("cwd"),
            "out": _require(shared, "out"),
        }

    def exec(self, manifest):
        out = manifest.pop("out")
        manifest.update(
            {
                "tool_version": __version__,
                "python": platform.python_version(),
                "finished_at": datetime.now(timezone.utc).isoformat(),
            }
        )
        path = sibling_path(out, ".manifest.json")
        write_json(path, manifest)
        return str(path)

    def post(self, shared, prep_res, exec_res):
        logger.info("WriteRunManifest: %s", exec_res)
        shared["manifest_path"] = exec_res
        return None
