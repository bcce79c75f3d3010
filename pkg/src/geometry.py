"""The parameter manifold Theta = R x S^{d-1} x R.

Single-particle operations work on Particle/TangentVector value objects; the
batched helpers (`project_rows`, `exp_map_rows`) apply the same formulas to
whole ensembles stored as arrays and are what the integrators call.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import linear_sum_assignment

from src.errors import DomainError
from src.utils.defaults import W2_MAX_PARTICLES


@dataclass(frozen=True, eq=False)
class Particle:
    """One parameter point theta = (a, w, b), |w| = 1."""
    a: float
    w: np.ndarray
    b: float

    @property
    def d(self) -> int:
        return int(self.w.shape[0])

    @classmethod
    def create(cls, a: float, w: Sequence[float], b: float) -> "Particle":
        """Build a particle, normalizing w onto the sphere."""
        w = np.asarray(w, dtype=float)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise DomainError("direction w must be nonzero")
        return cls(a=float(a), w=w / norm, b=float(b))


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Tangent vector (da, dw, db) at a particle; dw is orthogonal to w."""
    da: float
    dw: np.ndarray
    db: float

    def dot(self, other: "TangentVector") -> float:
        return float(self.da * other.da + np.dot(self.dw, other.dw) + self.db * other.db)

    def norm(self) -> float:
        return float(np.sqrt(self.dot(self)))


def _sphere_angle(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    # chord form: exact zero for identical directions, clamped for rounding
    chord = np.linalg.norm(w - v, axis=-1)
    return 2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0))


def geodesic_distance(p: Particle, q: Particle) -> float:
    """sqrt((a - a')^2 + angle(w, w')^2 + (b - b')^2)."""
    angle = float(_sphere_angle(p.w, q.w))
    return float(np.sqrt((p.a - q.a) ** 2 + angle ** 2 + (p.b - q.b) ** 2))


def tangent_project(p: Particle, g: np.ndarray) -> TangentVector:
    """
    Project an ambient vector g = (g_a, g_w, g_b) in R^{d+2} onto T_p Theta.

    Args:
        p: Base particle
        g: Ambient gradient laid out as [a, w_1..w_d, b]
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (p.d + 2,):
        raise DomainError(f"ambient vector must have shape ({p.d + 2},), got {g.shape}")
    gw = g[1:-1]
    dw = gw - np.dot(gw, p.w) * p.w
    return TangentVector(da=float(g[0]), dw=dw, db=float(g[-1]))


def project_rows(w: np.ndarray, gw: np.ndarray) -> np.ndarray:
    """Row-wise removal of the w component: gw_i - (gw_i . w_i) w_i."""
    return gw - np.sum(gw * w, axis=1, keepdims=True) * w


def exp_map_rows(w: np.ndarray, dw: np.ndarray, step: float) -> np.ndarray:
    """Great-circle update of unit rows w along tangent rows dw, renormalized."""
    speed = np.linalg.norm(dw, axis=1, keepdims=True)
    arc = step * speed
    safe = np.where(speed > 0.0, speed, 1.0)
    moved = np.cos(arc) * w + np.sin(arc) * dw / safe
    moved = np.where(speed > 0.0, moved, w)
    return moved / np.linalg.norm(moved, axis=1, keepdims=True)


def exp_map(p: Particle, v: TangentVector, step: float) -> Particle:
    """
    Exponential map on Theta: Euclidean in (a, b), great circle in w.

    Args:
        p: Base particle
        v: Tangent vector at p
        step: Step length multiplier
    """
    w_new = exp_map_rows(p.w[None, :], np.asarray(v.dw, dtype=float)[None, :], step)[0]
    return Particle(a=p.a + step * v.da, w=w_new, b=p.b + step * v.db)


def support_box_radius(ensemble) -> float:
    """
    Smallest r with every particle in K_r = [-r, r] x S^{d-1} x [-r, r].

    Args:
        ensemble: Anything exposing amplitude and bias arrays `a` and `b`
    """
    a = np.asarray(ensemble.a, dtype=float)
    b = np.asarray(ensemble.b, dtype=float)
    if a.size == 0:
        raise DomainError("support radius of an empty ensemble is undefined")
    return float(max(np.max(np.abs(a)), np.max(np.abs(b))))


def squared_distance_matrix(
    a1: np.ndarray, w1: np.ndarray, b1: np.ndarray,
    a2: np.ndarray, w2: np.ndarray, b2: np.ndarray,
) -> np.ndarray:
    """Pairwise squared geodesic distances between two particle arrays."""
    angle = _sphere_angle(w1[:, None, :], w2[None, :, :])
    return (a1[:, None] - a2[None, :]) ** 2 + angle ** 2 + (b1[:, None] - b2[None, :]) ** 2


def optimal_matching(
    a1: np.ndarray, w1: np.ndarray, b1: np.ndarray,
    a2: np.ndarray, w2: np.ndarray, b2: np.ndarray,
) -> Tuple[np.ndarray, float]:
    """
    Exact W2 between two uniform empirical measures of equal size.

    Returns:
        (permutation, distance) where particle i of the first measure is
        coupled with particle permutation[i] of the second
    """
    m = a1.shape[0]
    if a2.shape[0] != m:
        raise DomainError(f"wasserstein2 needs equal sizes, got {m} and {a2.shape[0]}")
    if m == 0:
        raise DomainError("wasserstein2 of empty ensembles is undefined")
    if m > W2_MAX_PARTICLES:
        raise DomainError(f"wasserstein2 supports at most {W2_MAX_PARTICLES} particles, got {m}")

    cost = squared_distance_matrix(a1, w1, b1, a2, w2, b2)
    rows, cols = linear_sum_assignment(cost)
    permutation = np.empty(m, dtype=int)
    permutation[rows] = cols
    total = float(np.sum(cost[np.arange(m), permutation]))
    distance = float(np.sqrt(max(total, 0.0) / m))
    logger.debug(f"W2 matching over {m} particles: {distance:.6e}")
    return permutation, distance


def wasserstein2(first, second) -> float:
    """
    Exact 2-Wasserstein distance between two uniform ensembles of equal size.

    Args:
        first, second: Ensembles (arrays `a`, `w`, `b`) with m <= 512 particles
    """
    _, distance = optimal_matching(first.a, first.w, first.b, second.a, second.w, second.b)
    return distance
