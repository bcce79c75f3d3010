"""Benchmark potentials W on the unit cube.

Specs are written as "<variant>" or "<variant>:<amplitude>", e.g. "cos1d:100",
"constant:3.5", "zero". Every variant depends on at most x_1 and x_2.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
from loguru import logger

from src.errors import ConfigurationError, DomainError

DEFAULT_AMPLITUDE = 100.0
DOUBLE_WELL_SINGULAR_TOL = 1e-8


class PotentialKind(Enum):
    """Potential variants."""
    ZERO = "zero"
    CONSTANT = "constant"
    COS1D = "cos1d"
    COS_DIAG = "cos_diag"
    EXP_DIAG = "exp_diag"
    DOUBLE_WELL = "double_well"


DIAGONAL_KINDS = (PotentialKind.COS_DIAG, PotentialKind.EXP_DIAG)


@dataclass(frozen=True)
class PotentialSpec:
    """A potential variant with its amplitude (the constant value for CONSTANT)."""
    kind: PotentialKind
    amplitude: float = DEFAULT_AMPLITUDE

    @property
    def min_dimension(self) -> int:
        return 2 if self.kind in DIAGONAL_KINDS else 1

    @classmethod
    def parse(cls, text: str) -> "PotentialSpec":
        """Parse "variant[:amplitude]"."""
        name, _, amp = text.strip().partition(":")
        try:
            kind = PotentialKind(name.strip().lower())
        except ValueError:
            known = ", ".join(k.value for k in PotentialKind)
            raise ConfigurationError(f"unknown potential '{name}' (known: {known})") from None
        if not amp.strip():
            if kind is PotentialKind.CONSTANT:
                raise ConfigurationError("constant potential needs a value, e.g. constant:2.5")
            return cls(kind, 0.0 if kind is PotentialKind.ZERO else DEFAULT_AMPLITUDE)
        try:
            value = float(amp)
        except ValueError:
            raise ConfigurationError(f"bad potential amplitude '{amp}'") from None
        if not np.isfinite(value):
            raise ConfigurationError(f"potential amplitude must be finite, got {amp}")
        if kind is PotentialKind.ZERO and value != 0.0:
            raise ConfigurationError("the zero potential takes no amplitude")
        return cls(kind, value)

    def __str__(self) -> str:
        if self.kind is PotentialKind.ZERO:
            return "zero"
        short = f"{self.amplitude:g}"
        amplitude = short if float(short) == self.amplitude else repr(self.amplitude)
        return f"{self.kind.value}:{amplitude}"


def _double_well(x1: np.ndarray, amplitude: float) -> np.ndarray:
    # f(z) = (z^2 - 1)^-2 with z = 4 (x1 - 1/2); exp(-f) -> 0 at the poles
    q = (4.0 * (x1 - 0.5)) ** 2 - 1.0
    out = np.zeros_like(x1)
    regular = np.abs(q) > DOUBLE_WELL_SINGULAR_TOL
    with np.errstate(over="ignore", under="ignore"):
        out[regular] = amplitude * np.exp(-1.0 / (q[regular] ** 2))
    return out


def eval_potential(spec: PotentialSpec, x: np.ndarray):
    """
    Evaluate W at one point (shape (d,)) or at many points (shape (n, d)).

    Returns:
        float for a single point, array of shape (n,) otherwise
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    d = pts.shape[1]
    if d < spec.min_dimension:
        raise DomainError(f"potential {spec} needs d >= {spec.min_dimension}, got d={d}")

    kind, amp = spec.kind, spec.amplitude
    x1 = pts[:, 0]
    if kind is PotentialKind.ZERO:
        out = np.zeros(pts.shape[0])
    elif kind is PotentialKind.CONSTANT:
        out = np.full(pts.shape[0], amp)
    elif kind is PotentialKind.COS1D:
        out = amp * np.cos(2.0 * np.pi * x1)
    elif kind is PotentialKind.COS_DIAG:
        out = -amp * np.cos(2.0 * np.pi * (x1 - pts[:, 1]))
    elif kind is PotentialKind.EXP_DIAG:
        out = -amp * np.exp(-0.5 * (x1 - pts[:, 1]) ** 2)
    elif kind is PotentialKind.DOUBLE_WELL:
        out = _double_well(x1, amp)
    else:
        raise DomainError(f"unhandled potential kind {kind}")
    return float(out[0]) if single else out


def planar_restriction(spec: PotentialSpec) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """W as a function of (x_1, x_2) only, for the finite-difference reference."""
    def restricted(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        pts = np.column_stack([np.ravel(x1), np.ravel(x2)])
        return eval_potential(spec, pts).reshape(np.shape(x1))

    logger.debug(f"Restricting potential {spec} to the (x1, x2) plane")
    return restricted
