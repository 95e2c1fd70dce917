"""Partial least squares regression models.

Two estimators share one model type:

* the bi-Grassmann estimator, which fits the three-factor decomposition
  Z ~ U S V^T of the cross-product Z = X_c^T Y_c by Riemannian optimization
  (preconditioned or identity metric);
* SIMPLS, the classical deflation-based baseline.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy import linalg

from utils.errors import ConfigurationError, DataError
from utils.manifold import GrassmannPoint, MetricMode, ProductPoint, TangentTriple, qf
from utils.optimizer import OptimConfig, Problem, Trace, minimize

logger = logging.getLogger(__name__)

_COEFF_RIDGE = 1e-10
_CONDITION_LIMIT = 1e12


class Variant(str, Enum):
    BIGR_PRECONDITIONED = "bigr_preconditioned"
    BIGR_IDENTITY = "bigr_identity"
    SIMPLS = "simpls"

    @classmethod
    def parse(cls, name: Union[str, "Variant"]) -> "Variant":
        if isinstance(name, Variant):
            return name
        aliases = {"bigr": cls.BIGR_PRECONDITIONED, "bigr-noprecond": cls.BIGR_IDENTITY, "simpls": cls.SIMPLS}
        try:
            return aliases[name] if name in aliases else cls(name)
        except ValueError:
            raise ConfigurationError(f"unknown variant '{name}' (expected bigr, bigr-noprecond or simpls)") from None

    @property
    def cli_name(self) -> str:
        return {"bigr_preconditioned": "bigr", "bigr_identity": "bigr-noprecond", "simpls": "simpls"}[self.value]

    @property
    def metric_mode(self) -> MetricMode:
        return MetricMode.IDENTITY if self is Variant.BIGR_IDENTITY else MetricMode.PRECONDITIONED


@dataclass(frozen=True, eq=False)
class DataMatrixPair:
    """X (I x N) and Y (I x M) sharing their rows."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        if x.ndim != 2 or y.ndim != 2:
            raise DataError(f"X and Y must be matrices, got shapes {x.shape} and {y.shape}")
        if x.shape[0] != y.shape[0]:
            raise DataError(f"X has {x.shape[0]} rows but Y has {y.shape[0]}")
        if x.shape[0] < 1 or x.shape[1] < 1 or y.shape[1] < 1:
            raise DataError(f"empty data: X {x.shape}, Y {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("data contains non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def n_targets(self) -> int:
        return self.y.shape[1]


@dataclass(frozen=True, eq=False)
class CrossProduct:
    z: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray


@dataclass(frozen=True, eq=False)
class PlsrModel:
    u: np.ndarray
    v: np.ndarray
    s: np.ndarray
    coeffs: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray
    rank: int
    variant: Variant
    fit_trace: Trace = field(default_factory=Trace)

    @property
    def n_features(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_targets(self) -> int:
        return self.coeffs.shape[1]


def cross_product(data: DataMatrixPair, center: bool = True) -> CrossProduct:
    if center:
        if data.n_samples < 2:
            raise DataError(f"centering needs at least 2 samples, got {data.n_samples}")
        mean_x = data.x.mean(axis=0)
        mean_y = data.y.mean(axis=0)
    else:
        mean_x = np.zeros(data.n_features)
        mean_y = np.zeros(data.n_targets)
    return CrossProduct((data.x - mean_x).T @ (data.y - mean_y), mean_x, mean_y)


def _check_z(point: ProductPoint, z: np.ndarray) -> None:
    n, m, _ = point.dims
    if np.shape(z) != (n, m):
        raise DataError(f"cross-product shape {np.shape(z)} does not match point dims ({n}, {m})")


def cost(point: ProductPoint, z: np.ndarray) -> float:
    """0.5 * ||U S V^T - Z||_F^2."""
    _check_z(point, z)
    residual = point.u.basis @ point.s @ point.v.basis.T - z
    return 0.5 * float(np.sum(residual * residual))


def egrad(point: ProductPoint, z: np.ndarray) -> TangentTriple:
    _check_z(point, z)
    u, v, s = point.u.basis, point.v.basis, point.s
    residual = u @ s @ v.T - z
    return TangentTriple(residual @ v @ s.T, residual.T @ u @ s, u.T @ residual @ v)


def make_problem(z: np.ndarray, rank: int, mode: Union[MetricMode, str] = MetricMode.PRECONDITIONED) -> Problem:
    z = np.asarray(z, dtype=float)
    return Problem(
        cost=lambda point: cost(point, z),
        egrad=lambda point: egrad(point, z),
        dims=(z.shape[0], z.shape[1], rank),
        mode=MetricMode(mode),
    )


def truncated_svd(z: np.ndarray, rank: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-``rank`` singular triplets of z, singular values descending."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or not 1 <= rank <= min(z.shape):
        raise ConfigurationError(f"rank must satisfy 1 <= R <= min{z.shape}, got {rank}")
    u, sing, vt = linalg.svd(z, full_matrices=False)
    return u[:, :rank], sing[:rank], vt[:rank].T


def _latent_coefficients(xc: np.ndarray, yc: np.ndarray, u: np.ndarray) -> np.ndarray:
    """C = U (T^T T + lambda I)^{-1} T^T Y_c with T = X_c U."""
    t = xc @ u
    gram = t.T @ t
    r = u.shape[1]
    scale = float(np.trace(gram)) / r
    if scale <= 0.0:
        return np.zeros((u.shape[0], yc.shape[1]))
    g = linalg.solve(gram + _COEFF_RIDGE * scale * np.eye(r), t.T @ yc, assume_a="pos")
    return u @ g


def fit_plsr_bigr(
    data: DataMatrixPair,
    rank: int,
    config: OptimConfig = OptimConfig(),
    mode: Union[MetricMode, str] = MetricMode.PRECONDITIONED,
    center: bool = True,
    warm_start: bool = False,
) -> PlsrModel:
    mode = MetricMode(mode)
    n, m = data.n_features, data.n_targets
    if not 1 <= rank <= min(n, m):
        raise ConfigurationError(f"rank must satisfy 1 <= R <= min(N, M) = {min(n, m)}, got {rank}")
    cp = cross_product(data, center)

    if warm_start:
        u0, _, v0 = truncated_svd(cp.z, rank)
    else:
        rng = np.random.default_rng(config.seed)
        u0 = qf(rng.standard_normal((n, rank)))
        v0 = qf(rng.standard_normal((m, rank)))
    init = ProductPoint(GrassmannPoint(u0), GrassmannPoint(v0), u0.T @ cp.z @ v0)

    logger.info("fit_plsr_bigr: rank-%d %s fit on %dx%d data", rank, mode.value, data.n_samples, n)
    point, trace = minimize(make_problem(cp.z, rank, mode), init, config)

    u, v = point.u.basis, point.v.basis
    coeffs = _latent_coefficients(data.x - cp.mean_x, data.y - cp.mean_y, u)
    variant = Variant.BIGR_IDENTITY if mode is MetricMode.IDENTITY else Variant.BIGR_PRECONDITIONED
    return PlsrModel(u, v, point.s, coeffs, cp.mean_x, cp.mean_y, rank, variant, trace)


def fit_simpls(data: DataMatrixPair, rank: int, center: bool = True) -> PlsrModel:
    """SIMPLS: dominant singular pairs of the successively deflated cross-product."""
    n, m = data.n_features, data.n_targets
    if not 1 <= rank <= min(n, data.n_samples - 1):
        raise ConfigurationError(f"rank must satisfy 1 <= R <= min(N, I-1) = {min(n, data.n_samples - 1)}, got {rank}")
    cp = cross_product(data, center)
    xc = data.x - cp.mean_x
    yc = data.y - cp.mean_y

    weights = np.zeros((n, rank))
    y_weights = np.zeros((m, rank))
    y_loadings = np.zeros((m, rank))
    basis = np.zeros((n, rank))
    singular = np.zeros(rank)
    deflated = cp.z.copy()
    for a in range(rank):
        left, sing, right_t = linalg.svd(deflated, full_matrices=False)
        r_a = left[:, 0]
        t_a = xc @ r_a
        t_norm = np.linalg.norm(t_a)
        if t_norm <= np.finfo(float).eps * max(1.0, np.linalg.norm(xc)):
            raise DataError(f"degenerate data: component {a + 1} has zero score variance")
        t_a /= t_norm
        r_a = r_a / t_norm
        p_a = xc.T @ t_a
        v_a = p_a - basis[:, :a] @ (basis[:, :a].T @ p_a)
        v_a /= np.linalg.norm(v_a)
        deflated -= np.outer(v_a, v_a @ deflated)

        weights[:, a] = r_a
        y_weights[:, a] = right_t[0]
        y_loadings[:, a] = yc.T @ t_a
        basis[:, a] = v_a
        singular[a] = sing[0]

    coeffs = weights @ y_loadings.T
    logger.info("fit_simpls: %d components on %dx%d data", rank, data.n_samples, n)
    return PlsrModel(weights, y_weights, np.diag(singular), coeffs, cp.mean_x, cp.mean_y, rank, Variant.SIMPLS)


def fit_model(
    data: DataMatrixPair,
    rank: int,
    variant: Union[Variant, str] = Variant.BIGR_PRECONDITIONED,
    config: OptimConfig = OptimConfig(),
    center: bool = True,
    warm_start: bool = False,
) -> PlsrModel:
    variant = Variant.parse(variant)
    if variant is Variant.SIMPLS:
        return fit_simpls(data, rank, center)
    return fit_plsr_bigr(data, rank, config, variant.metric_mode, center, warm_start)


def _as_rows(model: PlsrModel, x_new: np.ndarray) -> np.ndarray:
    x_new = np.asarray(x_new, dtype=float)
    if x_new.ndim == 1:
        x_new = x_new.reshape(1, -1)
    if x_new.ndim != 2 or x_new.shape[1] != model.n_features:
        raise DataError(f"expected rows with {model.n_features} columns, got shape {x_new.shape}")
    return x_new


def predict(model: PlsrModel, x_new: np.ndarray) -> np.ndarray:
    x_new = _as_rows(model, x_new)
    return (x_new - model.mean_x) @ model.coeffs + model.mean_y


def latent_scores(model: PlsrModel, x_new: np.ndarray) -> np.ndarray:
    return (_as_rows(model, x_new) - model.mean_x) @ model.u


def _gram_inverse_apply(scores: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """(T^T T)^{-1} applied to rhs, ridge-regularized when T^T T is near singular."""
    gram = scores.T @ scores
    r = gram.shape[0]
    if np.linalg.cond(gram) > _CONDITION_LIMIT:
        ridge = _COEFF_RIDGE * max(float(np.trace(gram)) / r, np.finfo(float).tiny)
        logger.warning("loadings: score Gram matrix is near singular, adding ridge %.3e", ridge)
        gram = gram + ridge * np.eye(r)
    return linalg.solve(gram, rhs, assume_a="pos")


def loadings_and_residuals(
    model: PlsrModel, data: DataMatrixPair
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Loadings P, Q and residuals E, F of X = T P^T + E and Y = B Q^T + F."""
    if data.n_features != model.n_features or data.n_targets != model.n_targets:
        raise DataError(
            f"data dims ({data.n_features}, {data.n_targets}) do not match model "
            f"({model.n_features}, {model.n_targets})"
        )
    xc = data.x - model.mean_x
    yc = data.y - model.mean_y
    t = xc @ model.u
    b = yc @ model.v
    p = _gram_inverse_apply(t, t.T @ xc).T
    q = _gram_inverse_apply(b, b.T @ yc).T
    return p, q, xc - t @ p.T, yc - b @ q.T


def explained_variance(model: PlsrModel, data: DataMatrixPair) -> Tuple[float, float]:
    """Fractions (r2x, r2y) of the centered X and Y variance captured by the latent factors."""
    _, _, e, f = loadings_and_residuals(model, data)
    xc = data.x - model.mean_x
    yc = data.y - model.mean_y

    def captured(residual, total):
        denom = float(np.sum(total * total))
        return 1.0 - float(np.sum(residual * residual)) / denom if denom > 0 else 0.0

    return captured(e, xc), captured(f, yc)


def classify(y_hat: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    y_hat = np.asarray(y_hat, dtype=float)
    if y_hat.ndim == 1:
        y_hat = y_hat.reshape(1, -1)
    return np.argmax(y_hat, axis=1).astype(int)


def _flat(a: np.ndarray) -> list:
    return [float(value) for value in np.ravel(np.asarray(a, dtype=float))]


def model_to_dict(model: PlsrModel) -> Dict[str, Any]:
    """JSON document of a model; the embedded trace carries no wall-clock fields."""
    return {
        "format": "plsr-model",
        "variant": model.variant.value,
        "dims": {"n_features": model.n_features, "n_targets": model.n_targets, "rank": model.rank},
        "u": _flat(model.u),
        "v": _flat(model.v),
        "s": _flat(model.s),
        "coeffs": _flat(model.coeffs),
        "mean_x": _flat(model.mean_x),
        "mean_y": _flat(model.mean_y),
        "fit_trace": {
            "termination": model.fit_trace.termination.value if model.fit_trace.termination else None,
            "records": model.fit_trace.to_records(include_timing=False),
        },
    }


def model_from_dict(doc: Dict[str, Any]) -> PlsrModel:
    try:
        if doc.get("format") != "plsr-model":
            raise DataError("not a plsr-model document")
        n = int(doc["dims"]["n_features"])
        m = int(doc["dims"]["n_targets"])
        r = int(doc["dims"]["rank"])

        def block(key, shape):
            values = np.asarray(doc[key], dtype=float)
            if values.size != int(np.prod(shape)):
                raise DataError(f"model field '{key}' has {values.size} values, expected shape {shape}")
            return values.reshape(shape)

        trace_doc = doc.get("fit_trace") or {}
        trace = Trace.from_records(trace_doc.get("records", []), trace_doc.get("termination"))
        return PlsrModel(
            u=block("u", (n, r)),
            v=block("v", (m, r)),
            s=block("s", (r, r)),
            coeffs=block("coeffs", (n, m)),
            mean_x=block("mean_x", (n,)),
            mean_y=block("mean_y", (m,)),
            rank=r,
            variant=Variant(doc["variant"]),
            fit_trace=trace,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed model document: {exc}") from exc
