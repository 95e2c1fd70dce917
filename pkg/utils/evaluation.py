"""Cross-validated accuracy and per-seed comparison tables (metric ablation, method comparison)."""
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import accuracy_score, cohen_kappa_score

from utils.eeg import EpochDataset, FoldPlan, flatten, kfold, synth_epochs
from utils.errors import ConfigurationError
from utils.optimizer import OptimConfig
from utils.plsr import Variant, classify, fit_model, predict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldResult:
    fold: int
    accuracy: float
    kappa: float
    n_train: int
    n_test: int
    iterations: int
    seconds: float


@dataclass(frozen=True)
class CrossValReport:
    folds: List[FoldResult]
    mean: float
    std: float
    variant: Variant
    rank: int
    stratified: bool

    @property
    def accuracies(self) -> List[float]:
        return [f.accuracy for f in self.folds]

    @property
    def summary(self) -> str:
        return format_mean_std(self.mean, self.std)

    @property
    def seconds(self) -> float:
        return float(sum(f.seconds for f in self.folds))

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        folds = []
        for f in self.folds:
            row = {
                "fold": f.fold,
                "accuracy": f.accuracy,
                "kappa": f.kappa,
                "n_train": f.n_train,
                "n_test": f.n_test,
                "iterations": f.iterations,
            }
            row["seconds"] = f.seconds if include_timing else 0.0
            folds.append(row)
        return {
            "variant": self.variant.cli_name,
            "rank": self.rank,
            "k": len(self.folds),
            "stratified": self.stratified,
            "folds": folds,
            "mean": self.mean,
            "std": self.std,
            "accuracy": self.summary,
        }


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.4f}±{std:.4f}"


def mean_std(values: Sequence[float]):
    values = np.asarray(values, dtype=float)
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


def evaluate_fold(
    ds: EpochDataset,
    plan: FoldPlan,
    fold: int,
    rank: int,
    variant: Union[Variant, str],
    config: OptimConfig,
    center: bool = True,
) -> FoldResult:
    train, test = plan.split(fold)
    started = time.perf_counter()
    model = fit_model(flatten(ds.subset(train)), rank, variant, config, center)
    test_pair = flatten(ds.subset(test))
    predicted = classify(predict(model, test_pair.x))
    truth = ds.labels[test]
    seconds = time.perf_counter() - started
    kappa = float(cohen_kappa_score(truth, predicted)) if len(np.unique(np.r_[truth, predicted])) > 1 else 1.0
    result = FoldResult(
        fold=fold,
        accuracy=float(accuracy_score(truth, predicted)),
        kappa=kappa,
        n_train=int(train.size),
        n_test=int(test.size),
        iterations=model.fit_trace.iterations,
        seconds=seconds,
    )
    logger.debug("evaluate_fold: fold %d accuracy %.4f in %.3fs", fold, result.accuracy, seconds)
    return result


def summarize_folds(results: List[FoldResult], variant: Union[Variant, str], rank: int, stratified: bool) -> CrossValReport:
    ordered = sorted(results, key=lambda r: r.fold)
    mean, std = mean_std([r.accuracy for r in ordered])
    return CrossValReport(ordered, mean, std, Variant.parse(variant), rank, stratified)


def crossval_accuracy(
    ds: EpochDataset,
    k: int,
    rank: int,
    variant: Union[Variant, str] = Variant.BIGR_PRECONDITIONED,
    config: OptimConfig = OptimConfig(),
    center: bool = True,
) -> CrossValReport:
    """k-fold accuracy; folds are planned with ``config.seed``."""
    plan = kfold(ds, k, config.seed)
    results = [evaluate_fold(ds, plan, fold, rank, variant, config, center) for fold in range(k)]
    report = summarize_folds(results, variant, rank, plan.stratified)
    logger.info("crossval_accuracy: %s %s", Variant.parse(variant).cli_name, report.summary)
    return report


BENCH_VARIANTS = (Variant.BIGR_PRECONDITIONED, Variant.BIGR_IDENTITY)
BENCH_LABELS = {
    Variant.BIGR_PRECONDITIONED: "preconditioned",
    Variant.BIGR_IDENTITY: "non-preconditioned",
    Variant.SIMPLS: "simpls",
}


def parse_bench_variants(names: Optional[Sequence[Union[Variant, str]]]) -> Tuple[Variant, ...]:
    if not names:
        return BENCH_VARIANTS
    variants = tuple(Variant.parse(name) for name in names)
    if len(set(variants)) != len(variants):
        raise ConfigurationError(f"bench variants must be distinct, got {[v.cli_name for v in variants]}")
    return variants


@dataclass
class BenchRun:
    seed: int
    variant: Variant
    report: CrossValReport


@dataclass
class BenchTable:
    """Per-seed cross-validated accuracy and running time, one column group per variant."""

    rank: int
    k: int
    variants: Tuple[Variant, ...] = BENCH_VARIANTS
    runs: List[BenchRun] = field(default_factory=list)

    @property
    def seeds(self) -> List[int]:
        seen = []
        for run in self.runs:
            if run.seed not in seen:
                seen.append(run.seed)
        return seen

    @property
    def labels(self) -> List[str]:
        return [BENCH_LABELS[v] for v in self.variants]

    def _run(self, seed: int, variant: Variant) -> BenchRun:
        return next(r for r in self.runs if r.seed == seed and r.variant is variant)

    def summary(self, include_timing: bool = True) -> List[Dict[str, Any]]:
        rows = []
        for variant in self.variants:
            runs = [r for r in self.runs if r.variant is variant]
            mean, std = mean_std([r.report.mean for r in runs])
            seconds = float(np.mean([r.report.seconds for r in runs])) if include_timing else 0.0
            rows.append(
                {
                    "variant": BENCH_LABELS[variant],
                    "accuracy_mean": mean,
                    "accuracy_std": std,
                    "accuracy": format_mean_std(mean, std),
                    "running_time_s": seconds,
                    "mean_iterations": float(np.mean([np.mean([f.iterations for f in r.report.folds]) for r in runs])),
                }
            )
        return rows

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        per_seed = []
        for seed in self.seeds:
            row = {"id": seed}
            for variant in self.variants:
                report = self._run(seed, variant).report
                row[BENCH_LABELS[variant]] = {
                    "accuracy": report.summary,
                    "accuracy_mean": report.mean,
                    "accuracy_std": report.std,
                    "running_time_s": report.seconds if include_timing else 0.0,
                }
            per_seed.append(row)
        return {
            "rank": self.rank,
            "k": self.k,
            "variants": [v.cli_name for v in self.variants],
            "per_seed": per_seed,
            "summary": self.summary(include_timing),
        }

    def render(self, include_timing: bool = True) -> str:
        """Aligned text table: accuracy columns, then running-time columns, then a mean row."""
        labels = self.labels
        header = ("ID", *(f"Acc {label}" for label in labels), *(f"Time(s) {label}" for label in labels))
        doc = self.to_dict(include_timing)
        lines = [
            (
                str(row["id"]),
                *(row[label]["accuracy"] for label in labels),
                *(f"{row[label]['running_time_s']:.4f}" for label in labels),
            )
            for row in doc["per_seed"]
        ]
        summary = {row["variant"]: row for row in doc["summary"]}
        lines.append(
            (
                "mean",
                *(summary[label]["accuracy"] for label in labels),
                *(f"{summary[label]['running_time_s']:.4f}" for label in labels),
            )
        )
        widths = [max(len(r[i]) for r in [header, *lines]) for i in range(len(header))]
        fmt = lambda row: "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
        rule = "-" * len(fmt(header))
        return "\n".join([fmt(header), rule, *map(fmt, lines[:-1]), rule, fmt(lines[-1])])


def bench_seed(
    seed: int,
    ds: EpochDataset,
    rank: int,
    k: int,
    config: OptimConfig,
    variants: Sequence[Variant] = BENCH_VARIANTS,
) -> List[BenchRun]:
    """Every variant on one dataset; ``seed`` drives fold planning and initialization."""
    seeded = OptimConfig.from_mapping({**config.to_dict(), "seed": int(seed)})
    return [BenchRun(int(seed), variant, crossval_accuracy(ds, k, rank, variant, seeded)) for variant in variants]


def synthetic_for_seed(
    trials: int = 120, channels: int = 8, samples: int = 200, classes: int = 2, snr: float = 1.0
) -> Callable[[int], EpochDataset]:
    return lambda seed: synth_epochs(trials, channels, samples, classes, snr, seed)
