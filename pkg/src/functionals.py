"""L^2(Omega) functionals of the represented function and their particle gradients.

All inner products are quadrature sums sum_j w_j f(x_j) over a QuadratureSet
(Monte-Carlo batch or tensor trapezoid grid); |Omega| = 1 so the weights
already sum to one.

Within one call the field u, grad u and W are evaluated once on the
quadrature and shared by the V-part, the C-part and sigma_mu, which keeps
the velocity exactly orthogonal to the constraint gradient on that batch.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Protocol, runtime_checkable

import numpy as np
from loguru import logger

from src.activation import MollifierTable, default_table, hrelu_tau
from src.errors import (
    ConfigurationError,
    DegenerateConstraintGradientError,
    DegenerateMeasureError,
    DomainError,
)
from src.field import Ensemble
from src.geometry import Particle, TangentVector, project_rows
from src.potentials import PotentialSpec, eval_potential
from src.utils.defaults import CHUNK_SIZE, GRID_MAX_DIMENSION


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

class QuadratureKind(Enum):
    MONTE_CARLO = "mc"
    GRID = "grid"


@dataclass(eq=False)
class QuadratureSet:
    """Points in [0,1]^d with positive weights summing to one."""
    points: np.ndarray
    weights: np.ndarray
    kind: QuadratureKind

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.points.shape[0] == 0:
            raise DomainError("quadrature set is empty")
        if self.weights.shape[0] != self.points.shape[0]:
            raise DomainError("quadrature weights and points differ in length")
        if np.any(self.points < 0.0) or np.any(self.points > 1.0):
            raise DomainError("quadrature points must lie in [0, 1]^d")
        if np.any(self.weights <= 0.0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise DomainError("quadrature weights must be positive and sum to 1")

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def d(self) -> int:
        return int(self.points.shape[1])

    @classmethod
    def monte_carlo(cls, points: np.ndarray) -> "QuadratureSet":
        """Uniform 1/n weights on the given sample."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        if n == 0:
            raise DomainError("quadrature set is empty")
        return cls(points, np.full(n, 1.0 / n), QuadratureKind.MONTE_CARLO)

    @classmethod
    def tensor_grid(cls, d: int, intervals: int) -> "QuadratureSet":
        """Tensor trapezoid rule with `intervals` cells per axis (d <= 3)."""
        if d > GRID_MAX_DIMENSION:
            raise ConfigurationError(
                f"tensor grids are limited to d <= {GRID_MAX_DIMENSION}, got d={d}"
            )
        if intervals < 1:
            raise ConfigurationError(f"grid needs at least one interval, got {intervals}")
        nodes = np.linspace(0.0, 1.0, intervals + 1)
        w1 = np.full(intervals + 1, 1.0 / intervals)
        w1[[0, -1]] *= 0.5
        mesh = np.meshgrid(*([nodes] * d), indexing="ij")
        wmesh = np.meshgrid(*([w1] * d), indexing="ij")
        points = np.column_stack([axis.ravel() for axis in mesh])
        weights = np.prod(np.column_stack([axis.ravel() for axis in wmesh]), axis=1)
        weights /= weights.sum()
        return cls(points, weights, QuadratureKind.GRID)


def sample_uniform(d: int, n: int, rng: np.random.Generator) -> QuadratureSet:
    """Monte-Carlo batch of n uniform points in [0,1]^d."""
    return QuadratureSet.monte_carlo(rng.random((n, d)))


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@runtime_checkable
class FieldEvaluator(Protocol):
    """Anything that can give u and grad u at a batch of points."""

    def values(self, points: np.ndarray) -> np.ndarray: ...

    def gradients(self, points: np.ndarray) -> np.ndarray: ...


@dataclass
class AnalyticField:
    """Closed-form field; functions take (n, d) points."""
    value_fn: Callable[[np.ndarray], np.ndarray]
    grad_fn: Callable[[np.ndarray], np.ndarray]

    def values(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.value_fn(points), dtype=float)

    def gradients(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.grad_fn(points), dtype=float)


@dataclass
class FieldSample:
    """u, grad u and W evaluated once on a quadrature set."""
    u: np.ndarray
    grad: np.ndarray
    potential: np.ndarray
    quadrature: QuadratureSet
    chunk_size: int = CHUNK_SIZE

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.quadrature.weights, self.u * self.u)))

    def checked_norm(self) -> float:
        norm = self.norm
        if norm == 0.0:
            raise DegenerateMeasureError("represented function has zero norm on the quadrature")
        return norm


def sample_field(u: FieldEvaluator, q: QuadratureSet, W: Optional[PotentialSpec] = None) -> FieldSample:
    """Evaluate u, grad u and W on q."""
    potential = eval_potential(W, q.points) if W is not None else np.zeros(q.n)
    return FieldSample(u=u.values(q.points), grad=u.gradients(q.points), potential=potential, quadrature=q,
                       chunk_size=getattr(u, "chunk_size", CHUNK_SIZE))


# ---------------------------------------------------------------------------
# scalar functionals
# ---------------------------------------------------------------------------

def energy(u: FieldEvaluator, q: QuadratureSet, W: PotentialSpec) -> float:
    """E(u) = sum_j w_j (|grad u(x_j)|^2 + W(x_j) u(x_j)^2)."""
    s = sample_field(u, q, W)
    integrand = np.sum(s.grad * s.grad, axis=1) + s.potential * s.u * s.u
    return float(np.dot(q.weights, integrand))


def squared_norm(u: FieldEvaluator, q: QuadratureSet) -> float:
    values = u.values(q.points)
    return float(np.dot(q.weights, values * values))


def constraint(u: FieldEvaluator, q: QuadratureSet) -> float:
    """C(u) = ||u||_q - 1."""
    return float(np.sqrt(squared_norm(u, q)) - 1.0)


def rayleigh_quotient(u: FieldEvaluator, q: QuadratureSet, W: PotentialSpec) -> float:
    """E(u) / ||u||_q^2."""
    norm2 = squared_norm(u, q)
    if norm2 == 0.0:
        raise DegenerateMeasureError("Rayleigh quotient of the zero function")
    return energy(u, q, W) / norm2


# ---------------------------------------------------------------------------
# particle potentials and gradients (row-batched)
# ---------------------------------------------------------------------------

@dataclass
class TangentRows:
    """k tangent vectors stored as arrays (da (k,), dw (k, d), db (k,))."""
    da: np.ndarray
    dw: np.ndarray
    db: np.ndarray

    def dots(self, other: "TangentRows") -> np.ndarray:
        return self.da * other.da + np.sum(self.dw * other.dw, axis=1) + self.db * other.db

    def scaled(self, factor: float) -> "TangentRows":
        return TangentRows(self.da * factor, self.dw * factor, self.db * factor)

    def minus(self, other: "TangentRows") -> "TangentRows":
        return TangentRows(self.da - other.da, self.dw - other.dw, self.db - other.db)

    @property
    def vectors(self) -> List[TangentVector]:
        return [TangentVector(float(a), dw.copy(), float(b)) for a, dw, b in zip(self.da, self.dw, self.db)]

    @classmethod
    def zeros(cls, k: int, d: int) -> "TangentRows":
        return cls(np.zeros(k), np.zeros((k, d)), np.zeros(k))


def _resolve_tau(u: FieldEvaluator, tau: Optional[float], table: Optional[MollifierTable]):
    if tau is None:
        tau = getattr(u, "tau", None)
    if tau is None:
        raise DomainError("tau must be given for fields that are not ensembles")
    table = table or getattr(u, "table", None) or default_table()
    return tau, table


def _point_chunks(s: FieldSample):
    """(x, weights, u, grad u, W u) over point chunks of the sample."""
    q = s.quadrature
    wu = s.potential * s.u
    for start in range(0, q.n, s.chunk_size):
        part = slice(start, min(start + s.chunk_size, q.n))
        yield q.points[part], q.weights[part], s.u[part], s.grad[part], wu[part]


def _potential_rows(a, w, b, s: FieldSample, tau, table, with_C: bool = True):
    """V and (optionally) C at the rows (a_k, w_k, b_k)."""
    v = np.zeros(a.size)
    c = np.zeros(a.size)
    for x, wt, uu, g, wu in _point_chunks(s):
        act = hrelu_tau(w @ x.T + b[:, None], tau, table)
        v += ((w @ g.T) * act.d1 + wu * act.value) @ wt
        if with_C:
            c += (act.value * uu) @ wt
    v *= a
    if not with_C:
        return v, None
    return v, a * c / s.checked_norm()


def _gradient_rows(a, w, b, s: FieldSample, tau, table, with_C: bool = True):
    """Riemannian gradients of V and C at the rows, sharing one activation pass."""
    k, d = w.shape
    v_a, v_w, v_b = np.zeros(k), np.zeros((k, d)), np.zeros(k)
    c_a, c_w, c_b = np.zeros(k), np.zeros((k, d)), np.zeros(k)
    for x, wt, uu, g, wu in _point_chunks(s):
        act = hrelu_tau(w @ x.T + b[:, None], tau, table)
        along = w @ g.T
        v_a += (along * act.d1 + wu * act.value) @ wt
        inner = (along * act.d2 + wu * act.d1) * wt
        v_w += inner @ x + (act.d1 * wt) @ g
        v_b += inner.sum(axis=1)

        c_a += (act.value * uu) @ wt
        inner_c = act.d1 * (uu * wt)
        c_w += inner_c @ x
        c_b += inner_c.sum(axis=1)

    grad_v = TangentRows(v_a, project_rows(w, a[:, None] * v_w), a * v_b)
    if not with_C:
        return grad_v, None
    norm = s.checked_norm()
    grad_c = TangentRows(c_a / norm, project_rows(w, a[:, None] * c_w / norm), a * c_b / norm)
    return grad_v, grad_c


def _particle_arrays(p: Particle):
    return np.array([p.a]), np.asarray(p.w, dtype=float)[None, :], np.array([p.b])


def potential_V(u: FieldEvaluator, p: Particle, q: QuadratureSet, W: PotentialSpec,
                tau: Optional[float] = None, table: Optional[MollifierTable] = None) -> float:
    """V(theta) = <grad u, grad Phi(theta)>_q + <W u, Phi(theta)>_q."""
    tau, table = _resolve_tau(u, tau, table)
    return float(_potential_rows(*_particle_arrays(p), sample_field(u, q, W), tau, table, with_C=False)[0][0])


def potential_C(u: FieldEvaluator, p: Particle, q: QuadratureSet,
                tau: Optional[float] = None, table: Optional[MollifierTable] = None) -> float:
    """C(theta) = <u, Phi(theta)>_q / ||u||_q."""
    tau, table = _resolve_tau(u, tau, table)
    return float(_potential_rows(*_particle_arrays(p), sample_field(u, q), tau, table)[1][0])


def grad_V(u: FieldEvaluator, p: Particle, q: QuadratureSet, W: PotentialSpec,
           tau: Optional[float] = None, table: Optional[MollifierTable] = None) -> TangentVector:
    """Riemannian gradient of V at p (ambient gradient projected onto T_p Theta)."""
    tau, table = _resolve_tau(u, tau, table)
    grad_v, _ = _gradient_rows(*_particle_arrays(p), sample_field(u, q, W), tau, table, with_C=False)
    return grad_v.vectors[0]


def grad_C(u: FieldEvaluator, p: Particle, q: QuadratureSet,
           tau: Optional[float] = None, table: Optional[MollifierTable] = None) -> TangentVector:
    """Riemannian gradient of C at p."""
    tau, table = _resolve_tau(u, tau, table)
    _, grad_c = _gradient_rows(*_particle_arrays(p), sample_field(u, q), tau, table)
    return grad_c.vectors[0]


@dataclass
class EnsembleGradients:
    """grad V and grad C at every particle, from one shared field sample."""
    grad_V: TangentRows
    grad_C: TangentRows
    sample: FieldSample


def ensemble_gradients(u: Ensemble, q: QuadratureSet, W: PotentialSpec,
                       sample: Optional[FieldSample] = None) -> EnsembleGradients:
    s = sample or sample_field(u, q, W)
    grad_v, grad_c = _gradient_rows(u.a, u.w, u.b, s, u.tau, u.table)
    return EnsembleGradients(grad_V=grad_v, grad_C=grad_c, sample=s)


def energy_gradient(u: Ensemble, q: QuadratureSet, W: PotentialSpec) -> TangentRows:
    """grad V at every particle: the unconstrained energy gradient."""
    grad_v, _ = _gradient_rows(u.a, u.w, u.b, sample_field(u, q, W), u.tau, u.table, with_C=False)
    return grad_v


def _multiplier(grads: EnsembleGradients) -> float:
    denominator = float(np.sum(grads.grad_C.dots(grads.grad_C)))
    if denominator == 0.0:
        raise DegenerateConstraintGradientError("constraint gradient vanishes on every particle")
    return float(np.sum(grads.grad_V.dots(grads.grad_C))) / denominator


def sigma_mu(u: Ensemble, q: QuadratureSet, W: PotentialSpec) -> float:
    """
    Lagrange multiplier <grad V, grad C>_mu / ||grad C||_mu^2 (the 1/m cancels).
    """
    return _multiplier(ensemble_gradients(u, q, W))


# ---------------------------------------------------------------------------
# velocity and stationarity
# ---------------------------------------------------------------------------

@dataclass
class VelocityField:
    """Constrained velocity v_i = -(grad V - sigma_mu grad C)(theta_i)."""
    rows: TangentRows
    sigma_mu: float
    local_slope: float
    constraint_gradient: TangentRows

    @property
    def vectors(self) -> List[TangentVector]:
        return self.rows.vectors

    def orthogonality(self) -> float:
        """<v, grad C>_{L^2(mu)}; zero up to rounding."""
        return float(np.mean(self.rows.dots(self.constraint_gradient)))

    def max_speed(self) -> float:
        return float(np.sqrt(np.max(self.rows.dots(self.rows))))


def velocity(u: Ensemble, q: QuadratureSet, W: PotentialSpec) -> VelocityField:
    """Constrained velocity field, multiplier and local slope on one batch."""
    grads = ensemble_gradients(u, q, W)
    sigma = _multiplier(grads)
    rows = grads.grad_V.minus(grads.grad_C.scaled(sigma)).scaled(-1.0)
    slope = float(np.sqrt(np.mean(rows.dots(rows))))
    logger.debug(f"velocity: sigma_mu={sigma:.6f}, local_slope={slope:.6e}")
    return VelocityField(rows=rows, sigma_mu=sigma, local_slope=slope, constraint_gradient=grads.grad_C)


def constrained_potential_rows(u: FieldEvaluator, a: np.ndarray, w: np.ndarray, b: np.ndarray,
                               q: QuadratureSet, W: PotentialSpec, sigma: float,
                               tau: Optional[float] = None,
                               table: Optional[MollifierTable] = None) -> np.ndarray:
    """V^C(theta) = V(theta) - sigma C(theta) at the rows (a_k, w_k, b_k)."""
    tau, table = _resolve_tau(u, tau, table)
    s = sample_field(u, q, W)
    v, c = _potential_rows(a, w, b, s, tau, table)
    return v - sigma * c


def probe_particles(d: int, count: int, rng: np.random.Generator):
    """Probe rows: a = 1, w uniform on the sphere, b uniform on [-sqrt(d)-2, sqrt(d)+2]."""
    w = rng.standard_normal((count, d))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    reach = np.sqrt(d) + 2.0
    b = rng.uniform(-reach, reach, size=count)
    return np.ones(count), w, b


def stationarity_residual(u: FieldEvaluator, q: QuadratureSet, W: PotentialSpec,
                          probe_count: int, rng: np.random.Generator,
                          sigma: Optional[float] = None, tau: Optional[float] = None,
                          table: Optional[MollifierTable] = None) -> float:
    """
    max over random probes of |V(theta) - sigma C(theta)|.

    sigma defaults to sigma_mu for ensembles and to the Rayleigh quotient for
    other fields.
    """
    if probe_count < 1:
        raise ConfigurationError(f"probe_count must be >= 1, got {probe_count}")
    if sigma is None:
        sigma = sigma_mu(u, q, W) if isinstance(u, Ensemble) else rayleigh_quotient(u, q, W)
    a, w, b = probe_particles(q.d, probe_count, rng)
    residual = float(np.max(np.abs(constrained_potential_rows(u, a, w, b, q, W, sigma, tau, table))))
    logger.debug(f"stationarity residual over {probe_count} probes: {residual:.6e}")
    return residual
