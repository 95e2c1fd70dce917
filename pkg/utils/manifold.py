"""Geometry of the search space Gr(N,R) x Gr(M,R) x R^{RxR}.

Points are stored through orthonormal representatives (U, V) and a free
core S. The metric is the scaled one

    g(xi, eta) = tr(SS^T xi_U^T eta_U) + tr(S^TS xi_V^T eta_V) + tr(xi_S^T eta_S)

which, in identity mode, collapses to the Euclidean inner product.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Tuple, Union

import numpy as np
from scipy import linalg

from utils.errors import DataError, RetractionBreakdownError, SingularPreconditionerError

logger = logging.getLogger(__name__)

ORTHONORMALITY_TOL = 1e-10
REGULARIZATION = 1e-12
_LYAPUNOV_FLOOR = 1e-300
_QR_RANK_TOL = 1e-12


class MetricMode(str, Enum):
    PRECONDITIONED = "preconditioned"
    IDENTITY = "identity"


@dataclass(frozen=True, eq=False)
class GrassmannPoint:
    """Orthonormal N x R representative of an R-dimensional subspace of R^N."""

    basis: np.ndarray

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=float)
        if basis.ndim != 2:
            raise DataError(f"Grassmann basis must be a matrix, got shape {basis.shape}")
        n, r = basis.shape
        if not 1 <= r <= n:
            raise DataError(f"Grassmann rank must satisfy 1 <= R <= N, got N={n}, R={r}")
        error = orthonormality_error(basis)
        if not error <= ORTHONORMALITY_TOL:
            raise DataError(f"Grassmann basis is not orthonormal (||U^T U - I||_F = {error:.3e})")
        object.__setattr__(self, "basis", basis)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.basis.shape

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True, eq=False)
class ProductPoint:
    u: GrassmannPoint
    v: GrassmannPoint
    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        r = self.u.rank
        if self.v.rank != r or s.shape != (r, r):
            raise DataError(
                f"rank mismatch: U has {r} columns, V has {self.v.rank}, S has shape {s.shape}"
            )
        object.__setattr__(self, "s", s)

    @classmethod
    def from_arrays(cls, u, v, s) -> "ProductPoint":
        return cls(GrassmannPoint(u), GrassmannPoint(v), s)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.u.dims[0], self.v.dims[0], self.u.rank


@dataclass(frozen=True, eq=False)
class TangentTriple:
    """(xi_U, xi_V, xi_S); also used to carry Euclidean gradients."""

    xi_u: np.ndarray
    xi_v: np.ndarray
    xi_s: np.ndarray

    @classmethod
    def zeros(cls, point: ProductPoint) -> "TangentTriple":
        n, m, r = point.dims
        return cls(np.zeros((n, r)), np.zeros((m, r)), np.zeros((r, r)))

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter((self.xi_u, self.xi_v, self.xi_s))

    def __add__(self, other: "TangentTriple") -> "TangentTriple":
        return TangentTriple(self.xi_u + other.xi_u, self.xi_v + other.xi_v, self.xi_s + other.xi_s)

    def __sub__(self, other: "TangentTriple") -> "TangentTriple":
        return TangentTriple(self.xi_u - other.xi_u, self.xi_v - other.xi_v, self.xi_s - other.xi_s)

    def __neg__(self) -> "TangentTriple":
        return TangentTriple(-self.xi_u, -self.xi_v, -self.xi_s)

    def __mul__(self, scalar: float) -> "TangentTriple":
        return TangentTriple(scalar * self.xi_u, scalar * self.xi_v, scalar * self.xi_s)

    __rmul__ = __mul__

    def euclidean_dot(self, other: "TangentTriple") -> float:
        return float(sum(np.sum(a * b) for a, b in zip(self, other)))


@dataclass(frozen=True, eq=False)
class SymmetricEig:
    """A symmetric positive definite matrix together with its eigendecomposition."""

    matrix: np.ndarray
    values: np.ndarray
    vectors: np.ndarray

    @classmethod
    def of(cls, matrix: np.ndarray) -> "SymmetricEig":
        matrix = np.asarray(matrix, dtype=float)
        values, vectors = linalg.eigh(matrix)
        return cls(matrix, values, vectors)

    @classmethod
    def identity(cls, r: int) -> "SymmetricEig":
        return cls(np.eye(r), np.ones(r), np.eye(r))

    def inverse(self) -> np.ndarray:
        return (self.vectors / self.values) @ self.vectors.T

    def solve_right(self, a: np.ndarray) -> np.ndarray:
        """Return a @ m^{-1}."""
        return a @ self.inverse()


@dataclass(frozen=True, eq=False)
class MetricState:
    m_u: np.ndarray
    m_v: np.ndarray
    eig_u: SymmetricEig
    eig_v: SymmetricEig
    mode: MetricMode


SpdLike = Union[SymmetricEig, np.ndarray]
BasisLike = Union[GrassmannPoint, np.ndarray]


def orthonormality_error(basis: np.ndarray) -> float:
    r = basis.shape[1]
    return float(np.linalg.norm(basis.T @ basis - np.eye(r)))


def check_core_factor(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or not np.all(np.isfinite(s)):
        raise DataError("invalid core factor")
    return s


def _basis(u: BasisLike) -> np.ndarray:
    return u.basis if isinstance(u, GrassmannPoint) else np.asarray(u, dtype=float)


def _as_eig(m: SpdLike) -> SymmetricEig:
    return m if isinstance(m, SymmetricEig) else SymmetricEig.of(m)


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def metric_state(point: ProductPoint, mode: Union[MetricMode, str] = MetricMode.PRECONDITIONED) -> MetricState:
    """Scaling pair (SS^T + dI, S^TS + dI) of the metric at ``point``."""
    mode = MetricMode(mode)
    s = check_core_factor(point.s)
    r = s.shape[0]
    if mode is MetricMode.IDENTITY:
        eig = SymmetricEig.identity(r)
        return MetricState(eig.matrix, eig.matrix, eig, eig, mode)

    ss_t = _symmetrize(s @ s.T)
    st_s = _symmetrize(s.T @ s)
    delta = REGULARIZATION * max(1.0, float(np.trace(ss_t)) / r)
    m_u = ss_t + delta * np.eye(r)
    m_v = st_s + delta * np.eye(r)
    return MetricState(m_u, m_v, SymmetricEig.of(m_u), SymmetricEig.of(m_v), mode)


def _check_triple(point: ProductPoint, triple: TangentTriple) -> None:
    n, m, r = point.dims
    expected = ((n, r), (m, r), (r, r))
    got = tuple(np.shape(block) for block in triple)
    if got != expected:
        raise DataError(f"tangent triple shapes {got} do not match point shapes {expected}")


def inner(point: ProductPoint, metric: MetricState, a: TangentTriple, b: TangentTriple) -> float:
    _check_triple(point, a)
    _check_triple(point, b)
    return float(
        np.sum((a.xi_u @ metric.m_u) * b.xi_u)
        + np.sum((a.xi_v @ metric.m_v) * b.xi_v)
        + np.sum(a.xi_s * b.xi_s)
    )


def norm(point: ProductPoint, metric: MetricState, a: TangentTriple) -> float:
    return float(np.sqrt(max(inner(point, metric, a, a), 0.0)))


def solve_lyapunov(m: SpdLike, c: np.ndarray) -> np.ndarray:
    """Solve m B + B m = c through the eigendecomposition m = Q diag(w) Q^T."""
    eig = _as_eig(m)
    c = np.asarray(c, dtype=float)
    r = eig.values.shape[0]
    if c.shape != (r, r):
        raise DataError(f"Lyapunov right-hand side must be {r}x{r}, got {c.shape}")
    q, w = eig.vectors, eig.values
    denom = w[:, None] + w[None, :]
    if np.min(denom) < _LYAPUNOV_FLOOR:
        raise SingularPreconditionerError()
    return q @ ((q.T @ c @ q) / denom) @ q.T


def project_to_tangent(u: BasisLike, a: np.ndarray, m: SpdLike) -> np.ndarray:
    """Metric-orthogonal projection of an ambient N x R matrix onto the tangent space at U."""
    basis = _basis(u)
    eig = _as_eig(m)
    a = np.asarray(a, dtype=float)
    if a.shape != basis.shape:
        raise DataError(f"ambient matrix shape {a.shape} does not match basis shape {basis.shape}")
    sym = basis.T @ a
    sym = sym + sym.T
    b = solve_lyapunov(eig, eig.matrix @ sym @ eig.matrix)
    return a - basis @ eig.solve_right(b)


def _vertical_generator(basis: np.ndarray, xi: np.ndarray, eig: SymmetricEig) -> np.ndarray:
    g = xi.T @ basis
    return solve_lyapunov(eig, g.T @ eig.matrix - eig.matrix @ g)


def project_to_horizontal(u: BasisLike, xi: np.ndarray, m: SpdLike) -> np.ndarray:
    """Remove the vertical part U*Omega (Omega skew) of a tangent vector at U."""
    basis = _basis(u)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != basis.shape:
        raise DataError(f"tangent matrix shape {xi.shape} does not match basis shape {basis.shape}")
    return xi - basis @ _vertical_generator(basis, xi, _as_eig(m))


def vertical_part(u: BasisLike, xi: np.ndarray, m: SpdLike) -> np.ndarray:
    basis = _basis(u)
    return basis @ _vertical_generator(basis, np.asarray(xi, dtype=float), _as_eig(m))


def tangent_residual(u: BasisLike, xi: np.ndarray) -> float:
    basis = _basis(u)
    return float(np.linalg.norm(basis.T @ xi + xi.T @ basis))


def _horizontal_block(basis: np.ndarray, a: np.ndarray) -> np.ndarray:
    # For every SPD m the horizontal space at U is {xi : U^T xi = 0}, so the
    # metric-orthogonal projection onto it is (I - UU^T) a.
    return a - basis @ (basis.T @ a)


def egrad_to_rgrad(point: ProductPoint, metric: MetricState, eg: TangentTriple) -> TangentTriple:
    """Riemannian gradient: scale by the inverse preconditioner, then project.

    The result r satisfies g(r, eta) = <eg, eta> for every horizontal eta.
    """
    _check_triple(point, eg)
    xi_u = _horizontal_block(point.u.basis, metric.eig_u.solve_right(eg.xi_u))
    xi_v = _horizontal_block(point.v.basis, metric.eig_v.solve_right(eg.xi_v))
    return TangentTriple(xi_u, xi_v, np.array(eg.xi_s, dtype=float, copy=True))


def qf(a: np.ndarray) -> np.ndarray:
    """Q factor of the thin QR decomposition with a positive R diagonal."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise RetractionBreakdownError()
    q, r = linalg.qr(a, mode="economic")
    diag = np.diag(r)
    magnitude = np.abs(diag)
    if magnitude.min() <= _QR_RANK_TOL * max(1.0, magnitude.max()):
        raise RetractionBreakdownError()
    return q * np.where(diag < 0, -1.0, 1.0)


def retract(point: ProductPoint, xi: TangentTriple, t: float) -> ProductPoint:
    _check_triple(point, xi)
    if t == 0:
        return point
    u = qf(point.u.basis + t * xi.xi_u)
    v = qf(point.v.basis + t * xi.xi_v)
    return ProductPoint(GrassmannPoint(u), GrassmannPoint(v), point.s + t * xi.xi_s)


def transport(
    from_point: ProductPoint, to_point: ProductPoint, metric_at_to: MetricState, xi: TangentTriple
) -> TangentTriple:
    """Projection-based vector transport into the horizontal space at ``to_point``.

    The horizontal space does not depend on the metric scaling, so only the
    bases of ``to_point`` enter; ``metric_at_to`` must still be sized for it.
    """
    _check_triple(from_point, xi)
    if from_point.dims != to_point.dims:
        raise DataError(f"cannot transport between dims {from_point.dims} and {to_point.dims}")
    r = to_point.dims[2]
    if metric_at_to.m_u.shape != (r, r) or metric_at_to.m_v.shape != (r, r):
        raise DataError(f"metric of shape {metric_at_to.m_u.shape} does not belong to a rank-{r} point")
    return TangentTriple(
        _horizontal_block(to_point.u.basis, xi.xi_u),
        _horizontal_block(to_point.v.basis, xi.xi_v),
        np.array(xi.xi_s, dtype=float, copy=True),
    )


def random_point(n: int, m: int, r: int, rng: np.random.Generator) -> ProductPoint:
    u = qf(rng.standard_normal((n, r)))
    v = qf(rng.standard_normal((m, r)))
    return ProductPoint(GrassmannPoint(u), GrassmannPoint(v), rng.standard_normal((r, r)))


def random_horizontal(point: ProductPoint, rng: np.random.Generator) -> TangentTriple:
    n, m, r = point.dims
    return TangentTriple(
        _horizontal_block(point.u.basis, rng.standard_normal((n, r))),
        _horizontal_block(point.v.basis, rng.standard_normal((m, r))),
        rng.standard_normal((r, r)),
    )


# Example usage (for testing)
if __name__ == "__main__":
    rng = np.random.default_rng(0)
    point = random_point(6, 4, 2, rng)
    metric = metric_state(point)
    xi = random_horizontal(point, rng)
    print("tangent residual:", tangent_residual(point.u, xi.xi_u))
    print("vertical part:", np.linalg.norm(vertical_part(point.u, xi.xi_u, metric.eig_u)))
    moved = retract(point, xi, 0.1)
    print("orthonormality after retraction:", orthonormality_error(moved.u.basis))
