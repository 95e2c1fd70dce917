"""Run configuration files and logging setup.

A config file is YAML with two optional sections::

    optim:
      grad_tol: 1.0e-8
      max_iters: 300
    preprocess:
      band: [7, 35]
      target_fs: 200

Values given on the command line take precedence over the file.
"""
import logging
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from utils.errors import ConfigurationError
from utils.optimizer import OptimConfig

_SECTIONS = ("optim", "preprocess")
_PREPROCESS_KEYS = ("band", "target_fs")


@dataclass(frozen=True)
class RunConfig:
    optim: Dict[str, Any] = field(default_factory=dict)
    band: Optional[Tuple[float, float]] = None
    target_fs: Optional[float] = None


def parse_config(raw: Any) -> RunConfig:
    if raw is None:
        return RunConfig()
    if not isinstance(raw, Mapping):
        raise ConfigurationError("config file must contain a mapping at the top level")
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown config sections: {', '.join(unknown)}")

    optim = _section(raw, "optim")
    OptimConfig.from_mapping(optim)  # validate early

    preprocess = _section(raw, "preprocess")
    unknown = sorted(set(preprocess) - set(_PREPROCESS_KEYS))
    if unknown:
        raise ConfigurationError(f"unknown preprocess settings: {', '.join(unknown)}")
    band = preprocess.get("band")
    if band is not None:
        if not isinstance(band, (list, tuple)) or len(band) != 2:
            raise ConfigurationError("preprocess.band must be a [lo, hi] pair")
        band = (_hertz("preprocess.band", band[0]), _hertz("preprocess.band", band[1]))
    target_fs = preprocess.get("target_fs")
    return RunConfig(optim, band, _hertz("preprocess.target_fs", target_fs) if target_fs is not None else None)


def _section(raw: Mapping[str, Any], name: str) -> Dict[str, Any]:
    section = raw.get(name) or {}
    if not isinstance(section, Mapping):
        raise ConfigurationError(f"config section '{name}' must be a mapping")
    return dict(section)


def _hertz(key: str, value: Any) -> float:
    if isinstance(value, bool):
        raise ConfigurationError(f"{key} must be a frequency in Hz, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{key} must be a frequency in Hz, got {value!r}") from exc


def load_config(path: Optional[str]) -> RunConfig:
    if not path:
        return RunConfig()
    with open(path, "r", encoding="utf-8") as handle:
        try:
            raw = yaml.safe_load(handle)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML ({exc})") from exc
    return parse_config(raw)


def resolve_optim_config(run_config: RunConfig, overrides: Mapping[str, Any]) -> OptimConfig:
    """File settings, then the non-None command-line overrides."""
    values = dict(run_config.optim)
    values.update({key: value for key, value in overrides.items() if value is not None})
    return OptimConfig.from_mapping(values)


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
