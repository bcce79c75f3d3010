"""
Invariant suite behind `main.py check`.

Architecture:
- Check: one named property with a priority and a callable returning (passed, detail)
- CheckSuite: runs checks in priority order; an exception fails that check only
- Priority: lower value runs first
"""

import itertools
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Tuple

import numpy as np
from loguru import logger

from src.activation import default_table, h1_gap, hrelu_tau
from src.field import Ensemble
from src.functionals import (
    QuadratureSet,
    ensemble_gradients,
    grad_C,
    grad_V,
    potential_C,
    potential_V,
    velocity,
)
from src.geometry import (
    Particle,
    TangentVector,
    exp_map,
    optimal_matching,
    squared_distance_matrix,
    wasserstein2,
)
from src.potentials import PotentialKind, PotentialSpec
from src.reference import assemble_fd, ground_eigenpair, richardson, solve_reference

CheckOutcome = Tuple[bool, str]


class Priority(Enum):
    """Check ordering: cheap building blocks first, solver last."""
    ACTIVATION = 1
    GRADIENTS = 5
    STRUCTURE = 10
    TRANSPORT = 15
    SOLVER = 20


@dataclass
class Check:
    """
    A single invariant.

    Attributes:
        name: Row label in the report
        priority: Priority - lower values run first
        run: Callable returning (passed, detail)
    """
    name: str
    priority: Priority
    run: Callable[[], CheckOutcome]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


class CheckSuite:
    """
    Ordered collection of invariant checks.

    Usage:
        suite = CheckSuite()
        suite.add_check(Check(...))
        results = suite.run_all()
    """

    def __init__(self):
        self.checks: List[Check] = []

    def add_check(self, check: Check) -> "CheckSuite":
        """Add a check. Returns self for chaining."""
        self.checks.append(check)
        return self

    def run_all(self) -> List[CheckResult]:
        """Run every check in priority order; errors count as failures."""
        results = []
        for check in sorted(self.checks, key=lambda c: c.priority.value):
            started = time.perf_counter()
            try:
                passed, detail = check.run()
            except Exception as e:
                logger.error(f"Error running check {check.name}: {e}")
                passed, detail = False, f"error: {e}"
            elapsed = time.perf_counter() - started
            symbol = "✓" if passed else "✗"
            logger.info(f"{symbol} {check.name}: {detail} ({elapsed:.2f}s)")
            results.append(CheckResult(check.name, bool(passed), detail, elapsed))
        return results


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------

def _random_ensemble(rng: np.random.Generator, m: int, d: int, tau: float = 20.0) -> Ensemble:
    w = rng.standard_normal((m, d))
    reach = np.sqrt(d) + 2.0
    return Ensemble(a=rng.normal(1.0, 0.5, m), w=w, b=rng.uniform(-reach, reach, m), tau=tau)


def _unit_ensemble(rng: np.random.Generator, m: int, d: int, q: QuadratureSet) -> Ensemble:
    u = _random_ensemble(rng, m, d)
    values = u.values(q.points)
    return u.scaled(1.0 / np.sqrt(np.dot(q.weights, values * values)))


def check_activation_derivatives(seed: int = 0, tau: float = 20.0, tol: float = 1e-5) -> CheckOutcome:
    """value/d1/d2 of the regularized hat agree with central differences."""
    rng = np.random.default_rng(seed)
    table = default_table()
    y = rng.uniform(-1.5, 1.5, 2000)
    eps = 1e-6
    act = hrelu_tau(y, tau, table)
    plus, minus = hrelu_tau(y + eps, tau, table), hrelu_tau(y - eps, tau, table)
    err1 = np.max(np.abs((plus.value - minus.value) / (2 * eps) - act.d1)) / max(1.0, np.max(np.abs(act.d1)))
    err2 = np.max(np.abs((plus.d1 - minus.d1) / (2 * eps) - act.d2)) / max(1.0, np.max(np.abs(act.d2)))
    worst = max(err1, err2)
    return worst <= tol, f"max relative mismatch {worst:.2e} (d1 {err1:.1e}, d2 {err2:.1e})"


def check_h1_rate(max_slope: float = -0.4) -> CheckOutcome:
    """log-log slope of the H^1 gap between the hat and its regularization."""
    taus = np.array([4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0])
    gaps = np.array([h1_gap(t) for t in taus])
    slope = float(np.polyfit(np.log(taus), np.log(gaps), 1)[0])
    return slope <= max_slope, f"slope {slope:.3f} (bound {max_slope})"


def _tangent_fd(u: Ensemble, p: Particle, q: QuadratureSet, W: PotentialSpec, eps: float):
    """Central differences of V and C along a, b and a unit tangent of w."""
    d = p.w.size
    e = np.zeros(d)
    e[0] = 1.0
    e = e - np.dot(e, p.w) * p.w
    if np.linalg.norm(e) < 1e-8:
        e = np.zeros(d)
        e[-1] = 1.0
        e = e - np.dot(e, p.w) * p.w
    e /= np.linalg.norm(e)
    directions = [
        TangentVector(1.0, np.zeros(d), 0.0),
        TangentVector(0.0, e, 0.0),
        TangentVector(0.0, np.zeros(d), 1.0),
    ]
    out = []
    for v in directions:
        forward, backward = exp_map(p, v, eps), exp_map(p, v, -eps)
        fd_v = (potential_V(u, forward, q, W) - potential_V(u, backward, q, W)) / (2 * eps)
        fd_c = (potential_C(u, forward, q) - potential_C(u, backward, q)) / (2 * eps)
        out.append((v, fd_v, fd_c))
    return out


def check_gradients_fd(seed: int = 0, particles: int = 50, grid_n: int = 64,
                       tol: float = 1e-5, floor: float = 1e-4) -> CheckOutcome:
    """
    grad V and grad C against central differences on a d=2 grid, relative to
    max(floor, |grad|) so small gradients are checked too.
    """
    rng = np.random.default_rng(seed)
    q = QuadratureSet.tensor_grid(2, grid_n)
    W = PotentialSpec(PotentialKind.COS1D, 100.0)
    u = _unit_ensemble(rng, max(particles, 20), 2, q)
    worst = 0.0
    for p in u.particles[:particles]:
        gv, gc = grad_V(u, p, q, W), grad_C(u, p, q)
        scale_v, scale_c = max(floor, gv.norm()), max(floor, gc.norm())
        for direction, fd_v, fd_c in _tangent_fd(u, p, q, W, 1e-6):
            worst = max(worst,
                        abs(gv.dot(direction) - fd_v) / scale_v,
                        abs(gc.dot(direction) - fd_c) / scale_c)
    return worst <= tol, f"max relative mismatch {worst:.2e} over {particles} particles"


def check_orthogonality(seed: int = 0, ensembles: int = 20) -> CheckOutcome:
    """<v, grad C>_mu vanishes relative to the norms."""
    rng = np.random.default_rng(seed)
    q = QuadratureSet.tensor_grid(2, 32)
    W = PotentialSpec(PotentialKind.COS1D, 100.0)
    worst = 0.0
    for _ in range(ensembles):
        u = _random_ensemble(rng, 30, 2)
        vel = velocity(u, q, W)
        norms = np.sqrt(np.mean(vel.rows.dots(vel.rows)) * np.mean(vel.constraint_gradient.dots(vel.constraint_gradient)))
        worst = max(worst, abs(vel.orthogonality()) / max(norms, 1e-300))
    return worst <= 1e-10, f"max |<v, grad C>| / norms = {worst:.2e}"


def check_non_degeneracy(seed: int = 0, ensembles: int = 20) -> CheckOutcome:
    """||grad C||_mu^2 * mean(a^2) >= 1 on the constraint set."""
    rng = np.random.default_rng(seed)
    q = QuadratureSet.tensor_grid(2, 32)
    W = PotentialSpec(PotentialKind.ZERO, 0.0)
    lowest = np.inf
    for _ in range(ensembles):
        u = _unit_ensemble(rng, 30, 2, q)
        gc = ensemble_gradients(u, q, W).grad_C
        lowest = min(lowest, float(np.mean(gc.dots(gc)) * np.mean(u.a ** 2)))
    return lowest >= 1.0 - 1e-6, f"min product {lowest:.8f}"


def check_w2_oracle(seed: int = 0, pairs: int = 100) -> CheckOutcome:
    """Assignment W2 equals the exhaustive minimum; metric axioms hold."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    axiom_gap = 0.0
    perms = list(itertools.permutations(range(4)))
    for _ in range(pairs):
        x, y, z = (_random_ensemble(rng, 4, 3) for _ in range(3))
        perm, dist = optimal_matching(x.a, x.w, x.b, y.a, y.w, y.b)
        cost = squared_distance_matrix(x.a, x.w, x.b, y.a, y.w, y.b)
        best = min(np.sum(cost[np.arange(4), list(p)]) for p in perms)
        if np.sum(cost[np.arange(4), perm]) > best + 1e-12:
            mismatches += 1
        dxy, dyx, dxz, dyz = wasserstein2(x, y), wasserstein2(y, x), wasserstein2(x, z), wasserstein2(y, z)
        axiom_gap = max(axiom_gap, abs(dxy - dyx), max(0.0, dxz - dxy - dyz), wasserstein2(x, x))
    passed = mismatches == 0 and axiom_gap <= 1e-10
    return passed, f"{mismatches} mismatches in {pairs} pairs, max axiom violation {axiom_gap:.1e}"


def check_fd_order(levels=(32, 64, 128), tol: float = 1e-8) -> CheckOutcome:
    """Richardson order of the cos1d eigenvalue and exact trivial spectra."""
    lams = [solve_reference(PotentialSpec(PotentialKind.COS1D, 100.0), n, tol).lam for n in levels]
    result = richardson(lams)
    zero = ground_eigenpair(assemble_fd(levels[0]), tol).lam
    shifted = ground_eigenpair(assemble_fd(levels[0], np.full((levels[0] + 1,) * 2, 3.5)), tol).lam
    exact = abs(zero) <= tol and abs(shifted - 3.5) <= tol
    passed = (not result.degenerate) and 1.7 <= result.order <= 2.3 and exact
    return passed, (f"order {result.order:.3f}, extrapolated lam {result.extrapolated:.6f}, "
                    f"W=0 -> {zero:.1e}, W=3.5 -> {shifted:.10f}")


def create_default_suite(seed: int = 0) -> CheckSuite:
    """The full invariant suite; self-contained, no files needed."""
    suite = CheckSuite()
    suite.add_check(Check("activation derivatives", Priority.ACTIVATION,
                          lambda: check_activation_derivatives(seed)))
    suite.add_check(Check("activation H1 rate", Priority.ACTIVATION, check_h1_rate))
    suite.add_check(Check("gradients vs finite differences", Priority.GRADIENTS,
                          lambda: check_gradients_fd(seed)))
    suite.add_check(Check("velocity orthogonality", Priority.STRUCTURE,
                          lambda: check_orthogonality(seed)))
    suite.add_check(Check("constraint non-degeneracy", Priority.STRUCTURE,
                          lambda: check_non_degeneracy(seed)))
    suite.add_check(Check("W2 assignment oracle", Priority.TRANSPORT, lambda: check_w2_oracle(seed)))
    suite.add_check(Check("FD convergence order", Priority.SOLVER, check_fd_order))
    return suite
