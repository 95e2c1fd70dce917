"""Riemannian conjugate gradient (Polak-Ribiere+) with Armijo backtracking.

The metric is rebuilt at every iterate, so all inner products of one
iteration, including the ones entering beta, use the metric of the
current point.
"""
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from utils.errors import ConfigurationError, InvalidStartError, NumericalError
from utils.manifold import (
    MetricMode,
    ProductPoint,
    TangentTriple,
    egrad_to_rgrad,
    inner,
    metric_state,
    norm,
    retract,
    transport,
)

logger = logging.getLogger(__name__)


class TerminationReason(str, Enum):
    GRADIENT_TOLERANCE = "gradient_tolerance"
    MAX_ITERS = "max_iters"
    LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass(frozen=True)
class Problem:
    cost: Callable[[ProductPoint], float]
    egrad: Callable[[ProductPoint], TangentTriple]
    dims: Tuple[int, int, int]
    mode: MetricMode = MetricMode.PRECONDITIONED


def _as_float(value: Any) -> float:
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    return float(value)


def _as_int(value: Any) -> int:
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    number = _as_float(value)
    if not number.is_integer():
        raise ValueError(f"{value!r} is not integral")
    return int(number)


# YAML reads 1e-8 (no dot) as a string, so every setting goes through a converter.
_SETTING_KINDS: Dict[str, Tuple[Callable[[Any], Any], str]] = {
    "grad_tol": (_as_float, "float"),
    "max_iters": (_as_int, "int"),
    "armijo_c1": (_as_float, "float"),
    "backtrack_factor": (_as_float, "float"),
    "max_backtracks": (_as_int, "int"),
    "initial_step": (_as_float, "float"),
    "cg_variant": (str, "string"),
    "restart_period": (_as_int, "int"),
    "seed": (_as_int, "int"),
}


@dataclass(frozen=True)
class OptimConfig:
    grad_tol: float = 1e-6
    max_iters: int = 500
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    initial_step: float = 1.0
    cg_variant: str = "polak_ribiere_plus"
    restart_period: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.armijo_c1 < 1:
            raise ConfigurationError(f"armijo_c1 must lie in (0, 1), got {self.armijo_c1}")
        if not 0 < self.backtrack_factor < 1:
            raise ConfigurationError(f"backtrack_factor must lie in (0, 1), got {self.backtrack_factor}")
        if not self.grad_tol >= 0:
            raise ConfigurationError(f"grad_tol must be non-negative, got {self.grad_tol}")
        if self.max_iters < 0 or self.max_backtracks < 1:
            raise ConfigurationError("max_iters must be >= 0 and max_backtracks >= 1")
        if not self.initial_step > 0:
            raise ConfigurationError(f"initial_step must be positive, got {self.initial_step}")
        if self.cg_variant != "polak_ribiere_plus":
            raise ConfigurationError(f"unsupported cg_variant '{self.cg_variant}'")
        if self.restart_period is not None and self.restart_period < 1:
            raise ConfigurationError(f"restart_period must be >= 1, got {self.restart_period}")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "OptimConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError(f"unknown optimizer settings: {', '.join(unknown)}")
        converted = {}
        for name, value in values.items():
            convert, kind = _SETTING_KINDS[name]
            if value is None and name == "restart_period":
                converted[name] = None
                continue
            try:
                converted[name] = convert(value)
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"optimizer setting {name}={value!r} is not a valid {kind}") from exc
        return cls(**converted)

    def resolved_restart_period(self, dims: Tuple[int, int, int]) -> int:
        n, _, r = dims
        return self.restart_period if self.restart_period is not None else max(1, n * r)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    cost: float
    grad_norm: float
    step: float
    backtracks: int
    elapsed_s: float


@dataclass
class Trace:
    records: List[IterationRecord] = field(default_factory=list)
    termination: Optional[TerminationReason] = None

    @property
    def iterations(self) -> int:
        return self.records[-1].iter if self.records else 0

    @property
    def final_cost(self) -> float:
        return self.records[-1].cost if self.records else float("nan")

    @property
    def costs(self) -> List[float]:
        return [record.cost for record in self.records]

    def to_records(self, include_timing: bool = True) -> List[Dict[str, Any]]:
        rows = []
        for record in self.records:
            row = asdict(record)
            if not include_timing:
                row.pop("elapsed_s")
            rows.append(row)
        return rows

    @classmethod
    def from_records(cls, rows: List[Mapping[str, Any]], termination: Optional[str] = None) -> "Trace":
        records = [
            IterationRecord(
                iter=int(row["iter"]),
                cost=float(row["cost"]),
                grad_norm=float(row["grad_norm"]),
                step=float(row["step"]),
                backtracks=int(row["backtracks"]),
                elapsed_s=float(row.get("elapsed_s", 0.0)),
            )
            for row in rows
        ]
        return cls(records, TerminationReason(termination) if termination else None)


@dataclass(frozen=True)
class StepInfo:
    cost_before: float
    cost_after: float
    grad_norm: float
    step: float
    backtracks: int


def _evaluate(problem: Problem, point: ProductPoint):
    metric = metric_state(point, problem.mode)
    rgrad = egrad_to_rgrad(point, metric, problem.egrad(point))
    return metric, rgrad, norm(point, metric, rgrad)


def _armijo(problem, point, cost, direction, slope, trial, config):
    """Backtrack from ``trial`` until f(R(t d)) <= f + c1 t slope.

    Returns (point, cost, step, backtracks); step is 0.0 when no trial step is accepted.
    """
    step = trial
    for backtracks in range(config.max_backtracks + 1):
        try:
            candidate = retract(point, direction, step)
            candidate_cost = float(problem.cost(candidate))
        except NumericalError:
            candidate_cost = math.inf
        if math.isfinite(candidate_cost) and candidate_cost <= cost + config.armijo_c1 * step * slope:
            return candidate, candidate_cost, step, backtracks
        if backtracks < config.max_backtracks:
            step *= config.backtrack_factor
    return point, cost, 0.0, config.max_backtracks


def _initial_cost(problem: Problem, point: ProductPoint) -> float:
    if point.dims != tuple(problem.dims):
        raise ConfigurationError(f"start point dims {point.dims} do not match problem dims {tuple(problem.dims)}")
    try:
        cost = float(problem.cost(point))
    except (FloatingPointError, ValueError, NumericalError) as exc:
        raise InvalidStartError(f"invalid start: {exc}") from exc
    if not math.isfinite(cost) or not np.all(np.isfinite(point.s)):
        raise InvalidStartError()
    return cost


def steepest_descent_step(
    problem: Problem, point: ProductPoint, config: OptimConfig = OptimConfig()
) -> Tuple[ProductPoint, StepInfo]:
    """One Armijo-backtracked step along the negative Riemannian gradient."""
    cost = _initial_cost(problem, point)
    _, rgrad, grad_norm = _evaluate(problem, point)
    if grad_norm <= config.grad_tol * max(1.0, abs(cost)):
        return point, StepInfo(cost, cost, grad_norm, 0.0, 0)
    new_point, new_cost, step, backtracks = _armijo(
        problem, point, cost, -rgrad, -grad_norm**2, config.initial_step, config
    )
    return new_point, StepInfo(cost, new_cost, grad_norm, step, backtracks)


def minimize(
    problem: Problem, init: ProductPoint, config: OptimConfig = OptimConfig()
) -> Tuple[ProductPoint, Trace]:
    started = time.perf_counter()
    point = init
    cost = _initial_cost(problem, point)
    tolerance = config.grad_tol * max(1.0, abs(cost))
    restart_period = config.resolved_restart_period(problem.dims)

    metric, rgrad, grad_norm = _evaluate(problem, point)
    trace = Trace([IterationRecord(0, cost, grad_norm, 0.0, 0, time.perf_counter() - started)])
    direction = -rgrad
    previous_step = None

    for k in range(1, config.max_iters + 1):
        if grad_norm <= tolerance:
            trace.termination = TerminationReason.GRADIENT_TOLERANCE
            break

        slope = inner(point, metric, rgrad, direction)
        if not slope < 0:
            direction = -rgrad
            slope = -grad_norm**2

        if previous_step is None:
            trial = config.initial_step
        else:
            trial = min(previous_step / config.backtrack_factor, 1.0)

        new_point, new_cost, step, backtracks = _armijo(problem, point, cost, direction, slope, trial, config)
        if step == 0.0:
            logger.warning("minimize: line search failed at iteration %d (cost %.6e)", k, cost)
            trace.termination = TerminationReason.LINE_SEARCH_FAILURE
            break

        new_metric, new_rgrad, new_grad_norm = _evaluate(problem, new_point)
        old_grad = transport(point, new_point, new_metric, rgrad)
        old_direction = transport(point, new_point, new_metric, direction)

        beta = 0.0
        if k % restart_period != 0:
            denom = inner(new_point, new_metric, old_grad, old_grad)
            if denom > 0:
                beta = max(0.0, inner(new_point, new_metric, new_rgrad, new_rgrad - old_grad) / denom)
        direction = -new_rgrad + beta * old_direction

        point, cost, metric, rgrad, grad_norm = new_point, new_cost, new_metric, new_rgrad, new_grad_norm
        previous_step = step
        trace.records.append(IterationRecord(k, cost, grad_norm, step, backtracks, time.perf_counter() - started))
        logger.debug("minimize: iter %d cost %.6e |grad| %.3e step %.3e beta %.3f", k, cost, grad_norm, step, beta)
    else:
        trace.termination = (
            TerminationReason.GRADIENT_TOLERANCE if grad_norm <= tolerance else TerminationReason.MAX_ITERS
        )

    logger.info(
        "minimize: %s after %d iterations, cost %.6e, |grad| %.3e",
        trace.termination.value,
        trace.iterations,
        cost,
        grad_norm,
    )
    return point, trace
