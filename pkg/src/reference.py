"""Finite-difference ground truth for -Laplace + W with Neumann conditions.

The operator lives on the uniform node grid of [0,1] (1D) or [0,1]^2 (2D)
with the mirror-node Neumann closure. It is stored as the symmetric pencil
(A, M): M is the lumped trapezoid mass and A = M (L_h + diag(W)), so
A u = lam M u has exactly the eigenvalues of the stencil L_h + diag(W).
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from loguru import logger
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import cg

from src.errors import ConfigurationError, DomainError, SolverError
from src.potentials import PotentialSpec, planar_restriction
from src.utils.defaults import REFERENCE_N_MAX, REFERENCE_N_MIN, REFERENCE_TOL

REFERENCE_FORMAT = "spectralflow-reference"
REFERENCE_VERSION = 1
POWER_MAX_ITERATIONS = 2000
CG_MAX_ITERATIONS = 20_000

PotentialInput = Union[Callable, np.ndarray, None]


@dataclass(eq=False)
class FDOperator:
    """Symmetric pencil (stiffness, mass) of the Neumann FD discretization.

    Attributes:
        N: Intervals per axis
        dim: 1 or 2
        stiffness: A = M L_h + M diag(W), CSR
        laplacian: M L_h alone, CSR (row sums are zero)
        mass: Diagonal of M (trapezoid weights, sum 1)
        potential: Nodal W values, shape (N+1,) or (N+1, N+1)
    """
    N: int
    dim: int
    stiffness: sparse.csr_matrix
    laplacian: sparse.csr_matrix
    mass: np.ndarray
    potential: np.ndarray

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self):
        return (self.N + 1,) * self.dim

    def stencil_apply(self, u: np.ndarray) -> np.ndarray:
        """(L_h + diag(W)) u."""
        return (self.stiffness @ u) / self.mass


def _check_grid_size(N: int) -> None:
    if N < REFERENCE_N_MIN:
        raise ConfigurationError(f"reference grid needs N >= {REFERENCE_N_MIN}, got {N}")
    if N > REFERENCE_N_MAX:
        raise ConfigurationError(f"reference grid is capped at N = {REFERENCE_N_MAX}, got {N}")


def _one_dimensional_blocks(N: int):
    """Lumped mass diagonal and M1 L1 for the mirror-node Neumann stencil."""
    h = 1.0 / N
    mass = np.full(N + 1, h)
    mass[[0, -1]] *= 0.5
    main = np.full(N + 1, 2.0 / h)
    main[[0, -1]] = 1.0 / h
    off = np.full(N, -1.0 / h)
    stiff = sparse.diags([off, main, off], [-1, 0, 1], format="csr")
    return mass, stiff


def _nodal_values(W: PotentialInput, nodes: Sequence[np.ndarray], shape) -> np.ndarray:
    if W is None:
        return np.zeros(shape)
    if callable(W):
        values = np.asarray(W(*nodes), dtype=float)
    else:
        values = np.asarray(W, dtype=float)
    if values.shape != shape:
        raise DomainError(f"potential grid must have shape {shape}, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise DomainError("potential is not finite on the grid")
    return values


def assemble_fd_1d(N: int, W1d: PotentialInput = None) -> FDOperator:
    """
    1D Neumann operator on N+1 nodes of [0, 1].

    Args:
        N: Number of intervals (8 <= N <= 512)
        W1d: Callable of the node array, nodal array, or None for W = 0
    """
    _check_grid_size(N)
    x = np.linspace(0.0, 1.0, N + 1)
    mass, lap = _one_dimensional_blocks(N)
    potential = _nodal_values(W1d, (x,), (N + 1,))
    stiffness = (lap + sparse.diags(mass * potential)).tocsr()
    return FDOperator(N=N, dim=1, stiffness=stiffness, laplacian=lap, mass=mass, potential=potential)


def assemble_fd(N: int, W2d: PotentialInput = None) -> FDOperator:
    """
    2D five-point Neumann operator on the (N+1)^2 node grid.

    Node (i, j) sits at (i h, j h) and has flat index i (N+1) + j.

    Args:
        N: Number of intervals per axis (8 <= N <= 512)
        W2d: Callable W(x1, x2) on meshgrid arrays, nodal array, or None
    """
    _check_grid_size(N)
    x = np.linspace(0.0, 1.0, N + 1)
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    m1, a1 = _one_dimensional_blocks(N)
    mass_1d = sparse.diags(m1)
    lap = (sparse.kron(a1, mass_1d) + sparse.kron(mass_1d, a1)).tocsr()
    mass = np.outer(m1, m1).ravel()
    potential = _nodal_values(W2d, (x1, x2), (N + 1, N + 1))
    stiffness = (lap + sparse.diags(mass * potential.ravel())).tocsr()
    logger.debug(f"Assembled FD operator: N={N}, nnz={stiffness.nnz}")
    return FDOperator(N=N, dim=2, stiffness=stiffness, laplacian=lap, mass=mass, potential=potential)


def assemble_for_potential(spec: PotentialSpec, N: int) -> FDOperator:
    """2D operator for a potential that depends on (x1, x2) at most."""
    return assemble_fd(N, planar_restriction(spec))


# ---------------------------------------------------------------------------
# ground eigenpair
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ReferenceSolution:
    """Smallest eigenpair of the FD operator.

    u_grid is normalized so that sum(mass * u^2) = 1 (trapezoid L^2 norm) and
    oriented with a positive mean.
    """
    N: int
    lam: float
    u_grid: np.ndarray
    w_grid: np.ndarray
    potential: str = "zero"
    residual: float = 0.0
    iterations: int = 0

    @property
    def dim(self) -> int:
        return int(self.u_grid.ndim)

    def trapezoid_weights(self) -> np.ndarray:
        m1, _ = _one_dimensional_blocks(self.N)
        return m1 if self.dim == 1 else np.outer(m1, m1)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.trapezoid_weights() * self.u_grid ** 2)))


def _eigen_residual(op: FDOperator, u: np.ndarray):
    lam = float(u @ (op.stiffness @ u)) / float(u @ (op.mass * u))
    r = op.stencil_apply(u) - lam * u
    return lam, float(np.linalg.norm(r) / np.linalg.norm(u))


def _inner_solve(system, preconditioner, rhs, x0, rtol, outer_iteration):
    counter = {"n": 0}

    def count(_):
        counter["n"] += 1

    y, info = cg(system, rhs, x0=x0, rtol=rtol, maxiter=CG_MAX_ITERATIONS,
                 M=preconditioner, callback=count)
    if info != 0:
        residual = float(np.linalg.norm(system @ y - rhs) / np.linalg.norm(rhs))
        raise SolverError(
            f"conjugate gradient did not converge in outer iteration {outer_iteration} (info={info})",
            iterations=counter["n"],
            residual=residual,
        )
    return y, counter["n"]


def ground_eigenpair(op: FDOperator, tol: float = REFERENCE_TOL, potential_label: str = "zero") -> ReferenceSolution:
    """
    Smallest eigenpair by shift-and-invert power iteration.

    The shift min(W) - 1 lies below the spectrum (the Laplacian part is
    positive semidefinite in the M inner product), so A - shift M is SPD and
    each inner solve is a Jacobi-preconditioned CG.

    Args:
        op: Operator from assemble_fd / assemble_fd_1d
        tol: Eigen-residual tolerance ||(L_h + W) u - lam u|| / ||u||

    Returns:
        ReferenceSolution with trapezoid-normalized u_grid

    Raises:
        SolverError: CG or the outer iteration failed to converge
    """
    if not tol > 0:
        raise ConfigurationError(f"tol must be positive, got {tol}")

    shift = float(np.min(op.potential)) - 1.0
    system = (op.stiffness - sparse.diags(shift * op.mass)).tocsr()
    preconditioner = sparse.diags(1.0 / system.diagonal())
    inner_rtol = max(1e-3 * tol, 1e-13)

    u = np.ones(op.mass.size)
    u /= np.sqrt(u @ (op.mass * u))
    lam, residual = _eigen_residual(op, u)
    iterations = 0
    total_cg = 0
    y = u.copy()
    while residual > tol:
        if iterations >= POWER_MAX_ITERATIONS:
            raise SolverError(
                f"power iteration did not reach tol={tol:g} (residual {residual:.3e})",
                iterations=iterations,
                residual=residual,
            )
        iterations += 1
        y, cg_steps = _inner_solve(system, preconditioner, op.mass * u, y, inner_rtol, iterations)
        total_cg += cg_steps
        u = y / np.sqrt(y @ (op.mass * y))
        lam, residual = _eigen_residual(op, u)
        logger.debug(f"power iteration {iterations}: lam={lam:.12f}, residual={residual:.3e}")

    if np.sum(op.mass * u) < 0:
        u = -u
    logger.info(
        f"Ground eigenpair N={op.N}: lam={lam:.10f} after {iterations} iterations "
        f"({total_cg} CG steps), residual={residual:.2e}"
    )
    return ReferenceSolution(
        N=op.N,
        lam=lam,
        u_grid=u.reshape(op.shape),
        w_grid=op.potential.copy(),
        potential=potential_label,
        residual=residual,
        iterations=iterations,
    )


def solve_reference(spec: PotentialSpec, N: int, tol: float = REFERENCE_TOL) -> ReferenceSolution:
    """Assemble and solve the 2D reference for a planar potential."""
    return ground_eigenpair(assemble_for_potential(spec, N), tol, potential_label=str(spec))


# ---------------------------------------------------------------------------
# extension to d dimensions and errors
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ReferenceField:
    """Reference eigenfunction extended to [0,1]^d, constant in x_3..x_d."""
    solution: ReferenceSolution
    d: int
    _value: RegularGridInterpolator = field(repr=False)
    _slopes: list = field(repr=False)

    @property
    def lam(self) -> float:
        return self.solution.lam

    def _plane(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.d:
            raise DomainError(f"expected points of dimension {self.d}, got {points.shape[1]}")
        k = self.solution.dim
        plane = np.zeros((points.shape[0], k))
        take = min(k, self.d)
        plane[:, :take] = points[:, :take]
        return np.clip(plane, 0.0, 1.0)

    def values(self, points: np.ndarray) -> np.ndarray:
        return self._value(self._plane(points))

    def gradients(self, points: np.ndarray) -> np.ndarray:
        plane = self._plane(points)
        out = np.zeros((plane.shape[0], self.d))
        for axis, slope in enumerate(self._slopes[: self.d]):
            out[:, axis] = slope(plane)
        return out


def extend_to_d(ref: ReferenceSolution, d: int) -> ReferenceField:
    """
    Bilinear interpolant of u_grid at (x1, x2), constant in the other
    coordinates. For d = 1 a 2D reference is read along x2 = 0.
    """
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    nodes = np.linspace(0.0, 1.0, ref.N + 1)
    axes = (nodes,) * ref.dim
    value = RegularGridInterpolator(axes, ref.u_grid, method="linear")
    grads = np.gradient(ref.u_grid, *([1.0 / ref.N] * ref.dim), edge_order=2)
    if ref.dim == 1:
        grads = [grads]
    slopes = [RegularGridInterpolator(axes, g, method="linear") for g in grads]
    return ReferenceField(solution=ref, d=d, _value=value, _slopes=slopes)


def l2_error(u, ref, q) -> float:
    """
    Sign-aligned error min_s sqrt(sum_j w_j (u(x_j) - s u_ref(x_j))^2).

    Args:
        u: Field evaluator (usually an Ensemble)
        ref: Reference evaluator, e.g. from extend_to_d
        q: QuadratureSet
    """
    mine = u.values(q.points)
    theirs = ref.values(q.points)
    plus = float(np.dot(q.weights, (mine - theirs) ** 2))
    minus = float(np.dot(q.weights, (mine + theirs) ** 2))
    return float(np.sqrt(min(plus, minus)))


# ---------------------------------------------------------------------------
# Richardson extrapolation
# ---------------------------------------------------------------------------

@dataclass
class RichardsonResult:
    extrapolated: float
    order: float
    degenerate: bool


def richardson(values: Sequence[float]) -> RichardsonResult:
    """
    Extrapolate eigenvalues computed at N, 2N, 4N.

    Order p = log2((lam_N - lam_2N) / (lam_2N - lam_4N)); the extrapolated
    value is lam_4N + (lam_4N - lam_2N) / (2^p - 1). A sequence whose
    differences vanish or change sign is flagged degenerate and lam_4N is
    returned unchanged.
    """
    if len(values) != 3:
        raise ConfigurationError(f"richardson needs exactly three levels, got {len(values)}")
    coarse, middle, fine = (float(v) for v in values)
    upper = coarse - middle
    lower = middle - fine
    if lower == 0.0 or upper == 0.0 or upper / lower <= 0.0:
        logger.warning(f"Degenerate Richardson sequence {coarse!r}, {middle!r}, {fine!r}")
        return RichardsonResult(extrapolated=fine, order=float("nan"), degenerate=True)
    order = float(np.log2(upper / lower))
    if order == 0.0:
        return RichardsonResult(extrapolated=fine, order=order, degenerate=True)
    extrapolated = fine + (fine - middle) / (2.0 ** order - 1.0)
    return RichardsonResult(extrapolated=float(extrapolated), order=order, degenerate=False)


def richardson_levels(N: int):
    """(N/4, N/2, N) when all three levels are valid grids, else None."""
    if N % 4 != 0 or N // 4 < REFERENCE_N_MIN:
        return None
    return N // 4, N // 2, N


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_reference(ref: ReferenceSolution, path: Union[str, Path]) -> Path:
    """Write a reference solution (.npz, see docs/FORMATS.md)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format=np.array(REFERENCE_FORMAT),
            version=np.array(REFERENCE_VERSION),
            N=np.array(ref.N),
            lam=np.array(ref.lam),
            u_grid=ref.u_grid,
            potential=np.array(ref.potential),
            w_grid=ref.w_grid,
            residual=np.array(ref.residual),
        )
    logger.info(f"Saved reference solution: {path} (N={ref.N}, lam={ref.lam:.10f})")
    return path


def load_reference(path: Union[str, Path]) -> ReferenceSolution:
    """Read a file written by save_reference."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"reference file not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if "format" not in data.files or str(data["format"]) != REFERENCE_FORMAT:
            raise ConfigurationError(f"{path} is not a reference solution file")
        version = int(data["version"])
        if version != REFERENCE_VERSION:
            raise ConfigurationError(f"unsupported reference version {version}")
        ref = ReferenceSolution(
            N=int(data["N"]),
            lam=float(data["lam"]),
            u_grid=np.array(data["u_grid"]),
            w_grid=np.array(data["w_grid"]),
            potential=str(data["potential"]),
            residual=float(data["residual"]) if "residual" in data.files else 0.0,
        )
    if ref.u_grid.shape != (ref.N + 1,) * ref.u_grid.ndim:
        raise ConfigurationError(f"reference file {path} has an inconsistent grid")
    return ref
