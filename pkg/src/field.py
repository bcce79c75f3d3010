"""Particle network: feature map Phi_tau and the represented function u = P_tau mu.

An Ensemble stores m uniformly weighted particles as arrays (a, w, b); the
represented function is u(x) = (1/m) sum_i a_i sigma_H,tau(w_i . x + b_i).
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from loguru import logger

from src.activation import MollifierTable, default_table, hrelu_tau
from src.errors import ConfigurationError, DomainError
from src.geometry import Particle
from src.utils.defaults import CHUNK_SIZE

CHECKPOINT_FORMAT = "spectralflow-ensemble"
CHECKPOINT_VERSION = 1


def _as_points(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


# ---------------------------------------------------------------------------
# single-particle features
# ---------------------------------------------------------------------------

def feature(p: Particle, x: np.ndarray, tau: float, table: Optional[MollifierTable] = None) -> float:
    """Phi_tau(theta; x) = a sigma_H,tau(w . x + b)."""
    table = table or default_table()
    z = float(np.dot(p.w, x) + p.b)
    return p.a * hrelu_tau(z, tau, table).value


def feature_xgrad(p: Particle, x: np.ndarray, tau: float,
                  table: Optional[MollifierTable] = None) -> np.ndarray:
    """Spatial gradient a sigma'_H,tau(w . x + b) w."""
    table = table or default_table()
    z = float(np.dot(p.w, x) + p.b)
    return p.a * hrelu_tau(z, tau, table).d1 * p.w


def feature_theta_grad(p: Particle, x: np.ndarray, tau: float,
                       table: Optional[MollifierTable] = None) -> np.ndarray:
    """
    Ambient parameter gradient of Phi_tau, laid out as [d_a, d_w (d entries), d_b].
    """
    table = table or default_table()
    x = np.asarray(x, dtype=float)
    act = hrelu_tau(float(np.dot(p.w, x) + p.b), tau, table)
    return np.concatenate(([act.value], p.a * act.d1 * x, [p.a * act.d1]))


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Ensemble:
    """
    m uniformly weighted particles realizing the empirical measure mu.

    Attributes:
        a: Amplitudes, shape (m,)
        w: Unit directions, shape (m, d)
        b: Biases, shape (m,)
        tau: Mollification parameter
        table: Mollifier table used by every evaluation
        chunk_size: Points per evaluation chunk
    """
    a: np.ndarray
    w: np.ndarray
    b: np.ndarray
    tau: float
    table: MollifierTable = field(default_factory=default_table, repr=False)
    chunk_size: int = CHUNK_SIZE

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(-1)
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.a.size < 1:
            raise DomainError("an ensemble needs at least one particle")
        if not (self.w.shape[0] == self.a.size == self.b.size):
            raise DomainError(
                f"inconsistent particle arrays: a{self.a.shape}, w{self.w.shape}, b{self.b.shape}"
            )
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}")
        if self.chunk_size < 1:
            raise ConfigurationError(f"chunk_size must be >= 1, got {self.chunk_size}")
        norms = np.linalg.norm(self.w, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            self.w = self.w / norms[:, None]

    @property
    def m(self) -> int:
        return int(self.a.size)

    @property
    def d(self) -> int:
        return int(self.w.shape[1])

    @property
    def particles(self) -> List[Particle]:
        return [Particle(a=float(a), w=w.copy(), b=float(b)) for a, w, b in zip(self.a, self.w, self.b)]

    @classmethod
    def from_particles(cls, particles: List[Particle], tau: float, **kwargs) -> "Ensemble":
        return cls(
            a=np.array([p.a for p in particles]),
            w=np.array([p.w for p in particles]),
            b=np.array([p.b for p in particles]),
            tau=tau,
            **kwargs,
        )

    def replace(self, a: Optional[np.ndarray] = None, w: Optional[np.ndarray] = None,
                b: Optional[np.ndarray] = None) -> "Ensemble":
        """Copy with some particle arrays swapped (same tau, table, chunking)."""
        return Ensemble(
            a=self.a.copy() if a is None else a,
            w=self.w.copy() if w is None else w,
            b=self.b.copy() if b is None else b,
            tau=self.tau,
            table=self.table,
            chunk_size=self.chunk_size,
        )

    def scaled(self, factor: float) -> "Ensemble":
        """Every amplitude multiplied by one common factor."""
        return self.replace(a=self.a * factor)

    def preactivations(self, points: np.ndarray) -> np.ndarray:
        """z_ij = w_i . x_j + b_i, shape (m, n)."""
        return self.w @ _as_points(points).T + self.b[:, None]

    def activations(self, points: np.ndarray):
        """ActivationEval of sigma_H,tau on every (particle, point) pair."""
        return hrelu_tau(self.preactivations(points), self.tau, self.table)

    # FieldEvaluator protocol (see functionals)
    def values(self, points: np.ndarray) -> np.ndarray:
        return evaluate_batch(self, points)

    def gradients(self, points: np.ndarray) -> np.ndarray:
        return evaluate_grad_batch(self, points)


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def evaluate_batch(u: Ensemble, points: np.ndarray) -> np.ndarray:
    """u at every row of `points`, chunked over points (shape (n,))."""
    points = _as_points(points)
    out = np.empty(points.shape[0])
    for chunk in _chunks(points.shape[0], u.chunk_size):
        values = u.activations(points[chunk]).value
        out[chunk] = np.sum(u.a[:, None] * values, axis=0) / u.m
    return out


def evaluate_grad_batch(u: Ensemble, points: np.ndarray) -> np.ndarray:
    """grad_x u at every row of `points` (shape (n, d))."""
    points = _as_points(points)
    out = np.empty(points.shape)
    for chunk in _chunks(points.shape[0], u.chunk_size):
        slopes = u.activations(points[chunk]).d1
        out[chunk] = ((u.a[:, None] * slopes).T @ u.w) / u.m
    return out


def evaluate(u: Ensemble, x: np.ndarray) -> float:
    """u(x) = (1/m) sum_i feature(p_i, x)."""
    return float(evaluate_batch(u, np.asarray(x, dtype=float)[None, :])[0])


def evaluate_grad(u: Ensemble, x: np.ndarray) -> np.ndarray:
    """grad_x u(x) = (1/m) sum_i feature_xgrad(p_i, x)."""
    return evaluate_grad_batch(u, np.asarray(x, dtype=float)[None, :])[0]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_ensemble(u: Ensemble, path: Union[str, Path]) -> Path:
    """
    Write an ensemble checkpoint (.npz, format documented in docs/FORMATS.md).

    Returns:
        Path actually written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format=np.array(CHECKPOINT_FORMAT),
            version=np.array(CHECKPOINT_VERSION),
            d=np.array(u.d),
            tau=np.array(u.tau),
            m=np.array(u.m),
            a=u.a,
            w=u.w,
            b=u.b,
        )
    logger.info(f"Saved ensemble checkpoint: {path} (m={u.m}, d={u.d})")
    return path


def load_ensemble(path: Union[str, Path], table: Optional[MollifierTable] = None) -> Ensemble:
    """Read a checkpoint written by save_ensemble."""
    with np.load(Path(path), allow_pickle=False) as data:
        if str(data["format"]) != CHECKPOINT_FORMAT:
            raise ConfigurationError(f"{path} is not an ensemble checkpoint")
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {version}")
        u = Ensemble(
            a=data["a"], w=data["w"], b=data["b"], tau=float(data["tau"]),
            table=table or default_table(),
        )
        if u.m != int(data["m"]) or u.d != int(data["d"]):
            raise ConfigurationError(f"checkpoint {path} is inconsistent")
    return u
