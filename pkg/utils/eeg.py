"""Epoch datasets: filtering, decimation, flattening, fold planning and a
synthetic epoch generator."""
import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import butter, sosfiltfilt
from sklearn.model_selection import KFold, StratifiedKFold

from utils.errors import ConfigurationError, DataError
from utils.plsr import DataMatrixPair

logger = logging.getLogger(__name__)

DEFAULT_BAND = (7.0, 35.0)
FILTER_ORDER = 4


@dataclass(frozen=True, eq=False)
class EpochDataset:
    """trials x channels x samples recordings with 0-based class labels."""

    data: np.ndarray
    labels: np.ndarray
    fs: float
    class_count: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        labels = np.asarray(self.labels)
        if data.ndim != 3:
            raise DataError(f"epoch data must be trials x channels x samples, got shape {data.shape}")
        if labels.shape != (data.shape[0],):
            raise DataError(f"expected {data.shape[0]} labels, got shape {labels.shape}")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise DataError("labels must be integers")
        labels = labels.astype(int)
        if not self.fs > 0:
            raise DataError(f"sampling rate must be positive, got {self.fs}")
        if self.class_count < 1:
            raise DataError(f"class_count must be positive, got {self.class_count}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(data)):
            raise DataError("epoch data contains non-finite samples")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "fs", float(self.fs))
        object.__setattr__(self, "class_count", int(self.class_count))

    @property
    def n_trials(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray, fs: Optional[float] = None) -> "EpochDataset":
        return EpochDataset(data, self.labels, self.fs if fs is None else fs, self.class_count)

    def with_labels(self, labels: np.ndarray) -> "EpochDataset":
        return EpochDataset(self.data, labels, self.fs, self.class_count)

    def subset(self, index: np.ndarray) -> "EpochDataset":
        return EpochDataset(self.data[index], self.labels[index], self.fs, self.class_count)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int
    stratified: bool = True

    def split(self, fold: int) -> Tuple[np.ndarray, np.ndarray]:
        if not 0 <= fold < self.k:
            raise ConfigurationError(f"fold index must lie in [0, {self.k}), got {fold}")
        test = np.flatnonzero(self.assignments == fold)
        train = np.flatnonzero(self.assignments != fold)
        return train, test

    def folds(self) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
        for fold in range(self.k):
            yield (fold, *self.split(fold))

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def bandpass(ds: EpochDataset, lo: float = DEFAULT_BAND[0], hi: float = DEFAULT_BAND[1]) -> EpochDataset:
    """Zero-phase order-4 Butterworth band-pass along the sample axis."""
    nyquist = ds.fs / 2.0
    if not 0 < lo < hi < nyquist:
        raise ConfigurationError(f"invalid band {lo}-{hi} Hz for sampling rate {ds.fs} Hz (need 0 < lo < hi < {nyquist})")
    sos = butter(FILTER_ORDER, [lo, hi], btype="bandpass", fs=ds.fs, output="sos")
    return ds.with_data(sosfiltfilt(sos, ds.data, axis=-1))


def downsample(ds: EpochDataset, target_fs: float) -> EpochDataset:
    """Integer decimation: keep every (fs / target_fs)-th sample."""
    if not target_fs > 0:
        raise ConfigurationError(f"target sampling rate must be positive, got {target_fs}")
    ratio = ds.fs / target_fs
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise ConfigurationError(
            f"cannot decimate {ds.fs} Hz to {target_fs} Hz: the ratio is not an integer; resample offline first"
        )
    if factor == 1:
        return ds
    return ds.with_data(ds.data[:, :, ::factor], fs=ds.fs / factor)


def preprocess(
    ds: EpochDataset, band: Optional[Sequence[float]] = None, target_fs: Optional[float] = None
) -> EpochDataset:
    if band is not None:
        ds = bandpass(ds, *band)
    if target_fs is not None:
        ds = downsample(ds, target_fs)
    return ds


def one_hot(labels: np.ndarray, class_count: int) -> np.ndarray:
    return np.eye(class_count)[np.asarray(labels, dtype=int)]


def flatten(ds: EpochDataset) -> DataMatrixPair:
    """Row i of X is trial i laid out channel-major; Y is one-hot."""
    return DataMatrixPair(ds.data.reshape(ds.n_trials, -1), one_hot(ds.labels, ds.class_count))


def unflatten(x: np.ndarray, channels: int, samples: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != channels * samples:
        raise DataError(f"cannot unflatten shape {x.shape} into {channels} channels x {samples} samples")
    return x.reshape(x.shape[0], channels, samples)


def kfold(ds: EpochDataset, k: int, seed: int = 0) -> FoldPlan:
    """Seeded fold assignment, stratified by class whenever every class has >= k trials."""
    if k < 2:
        raise ConfigurationError(f"k must be at least 2, got {k}")
    if k > ds.n_trials:
        raise ConfigurationError(f"k = {k} exceeds the number of trials ({ds.n_trials})")
    _, counts = np.unique(ds.labels, return_counts=True)
    stratified = bool(counts.min() >= k)
    if stratified:
        splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    else:
        logger.warning("kfold: some class has fewer than %d trials, falling back to unstratified folds", k)
        splitter = KFold(n_splits=k, shuffle=True, random_state=seed)

    assignments = np.full(ds.n_trials, -1, dtype=int)
    for fold, (_, test) in enumerate(splitter.split(np.zeros((ds.n_trials, 1)), ds.labels)):
        assignments[test] = fold
    return FoldPlan(k, assignments, seed, stratified)


def synth_epochs(
    trials: int = 120,
    channels: int = 8,
    samples: int = 200,
    classes: int = 2,
    snr: float = 1.0,
    seed: int = 0,
    fs: float = 200.0,
) -> EpochDataset:
    """Class-specific sinusoids (10-20 Hz) on fixed random spatial patterns plus white noise.

    ``snr`` is the ratio of mean signal power to noise power; ``snr = inf`` gives noiseless trials.
    """
    if min(trials, channels, samples) < 1:
        raise ConfigurationError("trials, channels and samples must be positive")
    if classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {classes}")
    if not snr > 0:
        raise ConfigurationError(f"snr must be positive, got {snr}")

    rng = np.random.default_rng(seed)
    freqs = np.linspace(10.0, 20.0, classes)
    patterns = rng.standard_normal((classes, channels))
    t = np.arange(samples) / fs
    templates = patterns[:, :, None] * np.sin(2 * np.pi * freqs[:, None, None] * t)

    labels = rng.permutation(np.arange(trials) % classes)
    data = templates[labels]
    if np.isfinite(snr):
        signal_power = float(np.mean(templates**2))
        noise = rng.standard_normal(data.shape) * np.sqrt(signal_power / snr)
        data = data + noise
    return EpochDataset(data, labels, fs, classes)


# Example usage (for testing)
if __name__ == "__main__":
    ds = synth_epochs(trials=8, channels=2, samples=100, seed=3)
    plan = kfold(ds, 4, seed=3)
    print("fold sizes:", plan.fold_sizes())
    pair = flatten(bandpass(ds))
    print("X:", pair.x.shape, "Y:", pair.y.shape)
