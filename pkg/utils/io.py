"""File formats: deterministic JSON, matrix CSV, epoch directories.

Every writer goes through ``atomic_write_bytes`` (temp file in the target
directory, then ``os.replace``).
"""
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from utils.eeg import EpochDataset
from utils.errors import DataError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
EPOCH_MANIFEST = "manifest.json"
EPOCH_DATA = "data.f64"
_EPOCH_KEYS = ("n_trials", "n_channels", "n_samples", "fs", "class_count", "labels")


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def format_float(value: float) -> str:
    if not math.isfinite(value):
        raise DataError(f"cannot serialize non-finite value {value!r}")
    return format(value, ".17g")


def dumps_json(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON text with 17 significant digits for every float and sorted keys."""
    pad = " " * (indent * (_level + 1))
    closing = " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        return dumps_json(obj.tolist(), indent, _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(key))}: {dumps_json(obj[key], indent, _level + 1)}" for key in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + closing + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(item, (int, float, np.integer, np.floating)) and not isinstance(item, bool) for item in obj):
            return "[" + ", ".join(dumps_json(item, indent, _level + 1) for item in obj) + "]"
        items = [pad + dumps_json(item, indent, _level + 1) for item in obj]
        return "[\n" + ",\n".join(items) + "\n" + closing + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: PathLike, obj: Any) -> Path:
    return atomic_write_text(path, dumps_json(obj) + "\n")


def read_json(path: PathLike) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def read_matrix_csv(path: PathLike, n_cols: Optional[int] = None) -> np.ndarray:
    """Comma-separated matrix without header; an empty file gives a 0-row matrix."""
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line for line in handle.read().splitlines() if line.strip()]
    if not lines:
        return np.empty((0, n_cols or 0))
    try:
        matrix = np.loadtxt(lines, delimiter=",", ndmin=2, dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if n_cols is not None and matrix.shape[1] != n_cols:
        raise DataError(f"{path}: expected {n_cols} columns, got {matrix.shape[1]}")
    if not np.all(np.isfinite(matrix)):
        raise DataError(f"{path}: non-finite entries")
    return matrix


def format_matrix_csv(matrix: np.ndarray, labels: Optional[np.ndarray] = None) -> str:
    """One line per row; ``labels`` (if given) is appended as a trailing integer column."""
    rows = np.asarray(matrix, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(-1, 1)
    lines = []
    for i, row in enumerate(rows):
        cells = [format_float(float(v)) for v in row]
        if labels is not None:
            cells.append(str(int(labels[i])))
        lines.append(",".join(cells) + "\n")
    return "".join(lines)


def write_matrix_csv(path: PathLike, matrix: np.ndarray, labels: Optional[np.ndarray] = None) -> Path:
    return atomic_write_text(path, format_matrix_csv(matrix, labels))


def read_labels_csv(path: PathLike) -> np.ndarray:
    values = read_matrix_csv(path)
    if values.size == 0:
        return np.empty(0, dtype=int)
    if values.shape[1] != 1 or not np.all(np.equal(np.mod(values, 1), 0)):
        raise DataError(f"{path}: labels must be one integer per row")
    return values[:, 0].astype(int)


def epoch_manifest(ds: EpochDataset) -> Dict[str, Any]:
    return {
        "n_trials": ds.n_trials,
        "n_channels": ds.n_channels,
        "n_samples": ds.n_samples,
        "fs": ds.fs,
        "class_count": ds.class_count,
        "labels": [int(label) for label in ds.labels],
    }


def write_epochs(ds: EpochDataset, directory: PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(directory / EPOCH_DATA, np.ascontiguousarray(ds.data, dtype="<f8").tobytes())
    write_json(directory / EPOCH_MANIFEST, epoch_manifest(ds))
    return directory


def validate_epoch_dir(directory: PathLike) -> Dict[str, Any]:
    """Check the manifest keys and that data.f64 holds exactly T*C*S doubles."""
    directory = Path(directory)
    manifest = read_json(directory / EPOCH_MANIFEST)
    missing = [key for key in _EPOCH_KEYS if key not in manifest]
    if missing:
        raise DataError(f"{directory}: manifest is missing {', '.join(missing)}")
    count = int(manifest["n_trials"]) * int(manifest["n_channels"]) * int(manifest["n_samples"])
    size = (directory / EPOCH_DATA).stat().st_size
    if size != 8 * count:
        raise DataError(f"{directory}: {EPOCH_DATA} has {size} bytes, expected {8 * count}")
    if len(manifest["labels"]) != int(manifest["n_trials"]):
        raise DataError(f"{directory}: {len(manifest['labels'])} labels for {manifest['n_trials']} trials")
    return manifest


def read_epochs(directory: PathLike) -> EpochDataset:
    manifest = validate_epoch_dir(directory)
    shape = (int(manifest["n_trials"]), int(manifest["n_channels"]), int(manifest["n_samples"]))
    data = np.fromfile(Path(directory) / EPOCH_DATA, dtype="<f8").reshape(shape)
    return EpochDataset(data, np.asarray(manifest["labels"], dtype=int), manifest["fs"], manifest["class_count"])


# Example usage (for testing)
if __name__ == "__main__":
    print(dumps_json({"b": [0.1, 2.0], "a": {"x": 1}}))
