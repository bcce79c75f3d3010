"""Time integration of the constrained Wasserstein gradient flow.

Three integrators share one step shape (move particles, cap the support,
rescale the amplitudes onto the constraint set):

- lagrangian: constrained velocity -(grad V - sigma_mu grad C), exp-map move,
  multiplicative drift correction on q
- sgd_renorm: unconstrained energy gradient on a minibatch, then all a_i
  rescaled by 1/||u||
- sgd_projected: constrained velocity on the minibatch, then the same rescale

run_flow builds the dataset and the evaluation quadrature from the seed,
cycles minibatches through the dataset and records a RunRow every
eval_every steps.
"""

import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from loguru import logger

from src.activation import default_table
from src.errors import (
    ConfigParseError,
    DegenerateMeasureError,
    InitializationError,
    SpectralFlowError,
)
from src.field import Ensemble
from src.functionals import (
    QuadratureSet,
    TangentRows,
    energy_gradient,
    sample_field,
    stationarity_residual,
    velocity,
)
from src.geometry import exp_map_rows, support_box_radius
from src.potentials import PotentialSpec
from src.reference import ReferenceSolution, extend_to_d, l2_error
from src.state_machines.run_state_machine import RunStateMachine
from src.utils.defaults import (
    BATCH_SIZE,
    CHUNK_SIZE,
    DATASET_SIZE,
    EVAL_EVERY,
    EVAL_GRID_N,
    EVAL_GRID_N_3D,
    EVAL_MC_POINTS,
    GRID_MAX_DIMENSION,
    INIT_MAX_ATTEMPTS,
    PROBE_COUNT,
    REFERENCE_N,
    REFERENCE_TOL,
    STEPS,
    TABLE_RESOLUTION,
    TABLE_RESOLUTION_MIN,
    TAU,
    WIDTH,
)

COVERAGE_DIRECTIONS = 100

# independent RNG streams derived from the seed
STREAM_INIT = 0
STREAM_DATASET = 1
STREAM_EVAL = 2
STREAM_PROBES = 3
STREAM_COVERAGE = 4


class Integrator(Enum):
    """Time integrators."""
    LAGRANGIAN = "lagrangian"
    SGD_RENORM = "sgd_renorm"
    SGD_PROJECTED = "sgd_projected"


class QuadratureChoice(Enum):
    """Where a step (or the renormalization) is measured."""
    BATCH = "batch"
    GRID = "grid"


@dataclass
class FlowConfig:
    """
    Validated run configuration.

    Attributes:
        d: Spatial dimension
        potential: Potential W
        m: Number of particles
        tau: Mollification parameter
        integrator: Integrator tag
        steps: Number of steps
        eta: Step size, None for 1/(tau m)
        batch_size: Minibatch size n
        dataset_size: Pre-sampled dataset size
        seed: Master seed
        eval_every: Evaluation cadence in steps
        r_max: Optional cap on |a| and |b|
        probe_count: Stationarity probes at the end of the run (0 disables)
        normalization: Quadrature of the sgd rescale (batch or grid)
        step_quadrature: Quadrature of the lagrangian step (batch or grid)
        grid_n: Tensor grid intervals per axis, None for the d-dependent default
        eval_mc_points: Evaluation MC size for d > 3
        table_resolution: Mollifier table intervals
        chunk_size: Points per evaluation chunk
        record_timing: Write wall clock into the CSV
        reference_n: FD grid of the reference solved for this run
        reference_tol: FD eigen-residual tolerance
        reference_file: Reference file to load instead of solving
        preset: Experiment preset the config was built from
    """
    d: int
    potential: PotentialSpec
    m: int = WIDTH
    tau: float = TAU
    integrator: Integrator = Integrator.SGD_RENORM
    steps: int = STEPS
    eta: Optional[float] = None
    batch_size: int = BATCH_SIZE
    dataset_size: int = DATASET_SIZE
    seed: int = 0
    eval_every: int = EVAL_EVERY
    r_max: Optional[float] = None
    probe_count: int = PROBE_COUNT
    normalization: QuadratureChoice = QuadratureChoice.BATCH
    step_quadrature: QuadratureChoice = QuadratureChoice.BATCH
    grid_n: Optional[int] = None
    eval_mc_points: int = EVAL_MC_POINTS
    table_resolution: int = TABLE_RESOLUTION
    chunk_size: int = CHUNK_SIZE
    record_timing: bool = False
    reference_n: int = REFERENCE_N
    reference_tol: float = REFERENCE_TOL
    reference_file: Optional[str] = None
    preset: Optional[str] = None

    def __post_init__(self):
        checks = [
            ("d", self.d >= 1, f"d must be >= 1, got {self.d}"),
            ("m", self.m >= 1, f"m must be >= 1, got {self.m}"),
            ("tau", self.tau > 0, f"tau must be positive, got {self.tau}"),
            ("steps", self.steps >= 0, f"steps must be >= 0, got {self.steps}"),
            ("eta", self.eta is None or self.eta > 0, f"eta must be positive, got {self.eta}"),
            ("batch_size", self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}"),
            ("dataset_size", self.dataset_size >= self.batch_size,
             f"dataset_size {self.dataset_size} is smaller than batch_size {self.batch_size}"),
            ("seed", self.seed >= 0, f"seed must be >= 0, got {self.seed}"),
            ("eval_every", self.eval_every >= 1, f"eval_every must be >= 1, got {self.eval_every}"),
            ("r_max", self.r_max is None or self.r_max > 0, f"r_max must be positive, got {self.r_max}"),
            ("probe_count", self.probe_count >= 0, f"probe_count must be >= 0, got {self.probe_count}"),
            ("grid_n", self.grid_n is None or self.grid_n >= 2, f"grid_n must be >= 2, got {self.grid_n}"),
            ("eval_mc_points", self.eval_mc_points >= 1,
             f"eval_mc_points must be >= 1, got {self.eval_mc_points}"),
            ("table_resolution", self.table_resolution >= TABLE_RESOLUTION_MIN,
             f"table_resolution must be >= {TABLE_RESOLUTION_MIN}, got {self.table_resolution}"),
            ("chunk_size", self.chunk_size >= 1, f"chunk_size must be >= 1, got {self.chunk_size}"),
            ("reference_tol", self.reference_tol > 0, f"reference_tol must be positive, got {self.reference_tol}"),
            ("potential", self.d >= self.potential.min_dimension,
             f"potential {self.potential} needs d >= {self.potential.min_dimension}"),
        ]
        grid_requested = (self.normalization is QuadratureChoice.GRID
                          or self.step_quadrature is QuadratureChoice.GRID)
        checks.append(("normalization", not grid_requested or self.d <= GRID_MAX_DIMENSION,
                       f"grid quadrature is only available for d <= {GRID_MAX_DIMENSION}"))
        for key, ok, message in checks:
            if not ok:
                raise ConfigParseError(message, key=key)

    @property
    def step_size(self) -> float:
        """eta, defaulting to 1/(tau m)."""
        return self.eta if self.eta is not None else 1.0 / (self.tau * self.m)

    @property
    def grid_intervals(self) -> int:
        if self.grid_n is not None:
            return self.grid_n
        return EVAL_GRID_N if self.d <= 2 else EVAL_GRID_N_3D

    def with_seed(self, seed: int) -> "FlowConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["potential"] = str(self.potential)
        out["integrator"] = self.integrator.value
        out["normalization"] = self.normalization.value
        out["step_quadrature"] = self.step_quadrature.value
        out["step_size"] = self.step_size
        return out


def derived_rng(seed: int, stream: int, attempt: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream, attempt)."""
    return np.random.default_rng(np.random.SeedSequence([seed, stream, attempt]))


# ---------------------------------------------------------------------------
# initialization and coverage
# ---------------------------------------------------------------------------

@dataclass
class CoverageReport:
    """Empirical coverage of S^{d-1} x [-sqrt(d)-2, sqrt(d)+2] by the particles."""
    b_gap: float
    sphere_gap: float
    b_min: float
    b_max: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def bias_reach(d: int) -> float:
    return float(np.sqrt(d) + 2.0)


def coverage_report(u: Ensemble, rng: np.random.Generator,
                    directions: int = COVERAGE_DIRECTIONS) -> CoverageReport:
    """
    Largest gap in the sorted biases (the interval ends included) and the
    largest angle from a random direction to its closest particle direction.
    """
    reach = bias_reach(u.d)
    b_sorted = np.sort(np.clip(u.b, -reach, reach))
    b_gap = float(np.max(np.diff(np.concatenate(([-reach], b_sorted, [reach])))))
    probes = rng.standard_normal((directions, u.d))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    cosines = np.clip(probes @ u.w.T, -1.0, 1.0)
    sphere_gap = float(np.max(np.arccos(np.max(cosines, axis=1))))
    return CoverageReport(b_gap=b_gap, sphere_gap=sphere_gap,
                          b_min=float(np.min(u.b)), b_max=float(np.max(u.b)))


def _rescale_to_unit(u: Ensemble, q: QuadratureSet):
    values = u.values(q.points)
    norm = float(np.sqrt(np.dot(q.weights, values * values)))
    if norm == 0.0:
        raise DegenerateMeasureError("cannot renormalize: ||u|| = 0 on the quadrature")
    return u.scaled(1.0 / norm), 1.0 / norm


def init_ensemble(cfg: FlowConfig, rng: np.random.Generator, q: QuadratureSet) -> Ensemble:
    """
    Particles with w uniform on the sphere, b uniform on [-sqrt(d)-2, sqrt(d)+2]
    and a = 1, then every a_i scaled by one factor so that ||u||_q = 1.

    Raises:
        InitializationError: u vanishes on q
    """
    w = rng.standard_normal((cfg.m, cfg.d))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    reach = bias_reach(cfg.d)
    b = rng.uniform(-reach, reach, size=cfg.m)
    u = Ensemble(a=np.ones(cfg.m), w=w, b=b, tau=cfg.tau,
                 table=default_table(cfg.table_resolution), chunk_size=cfg.chunk_size)
    try:
        u, factor = _rescale_to_unit(u, q)
    except DegenerateMeasureError as exc:
        raise InitializationError(f"initial ensemble vanishes on the quadrature: {exc}") from exc
    logger.info(f"Initialized {cfg.m} particles in d={cfg.d}, amplitude factor {factor:.6f}")
    return u


# ---------------------------------------------------------------------------
# steps
# ---------------------------------------------------------------------------

@dataclass
class FlowState:
    """Ensemble plus bookkeeping carried between steps."""
    ensemble: Ensemble
    potential: PotentialSpec
    step: int = 0
    time: float = 0.0
    sigma_mu: float = float("nan")
    local_slope: float = float("nan")
    constraint: float = 0.0
    drift_factor: float = 1.0
    capped: bool = False


def _move(u: Ensemble, rows: TangentRows, eta: float) -> Ensemble:
    return u.replace(
        a=u.a + eta * rows.da,
        w=exp_map_rows(u.w, rows.dw, eta),
        b=u.b + eta * rows.db,
    )


def _cap(u: Ensemble, r_max: Optional[float]):
    if r_max is None:
        return u, False
    a = np.clip(u.a, -r_max, r_max)
    b = np.clip(u.b, -r_max, r_max)
    capped = bool(np.any(a != u.a) or np.any(b != u.b))
    return (u.replace(a=a, b=b), True) if capped else (u, False)


def _finish_step(state: FlowState, moved: Ensemble, eta: float, norm_q: QuadratureSet,
                 r_max: Optional[float], sigma: float, slope: float) -> FlowState:
    capped_u, capped = _cap(moved, r_max)
    rescaled, factor = _rescale_to_unit(capped_u, norm_q)
    values = rescaled.values(norm_q.points)
    constraint = float(np.sqrt(np.dot(norm_q.weights, values * values)) - 1.0)
    return FlowState(
        ensemble=rescaled,
        potential=state.potential,
        step=state.step + 1,
        time=state.time + eta,
        sigma_mu=sigma,
        local_slope=slope,
        constraint=constraint,
        drift_factor=factor,
        capped=capped,
    )


def step_lagrangian(state: FlowState, eta: float, q: QuadratureSet,
                    r_max: Optional[float] = None) -> FlowState:
    """
    One forward step along the constrained velocity, then the drift
    correction that restores ||u||_q = 1.
    """
    vel = velocity(state.ensemble, q, state.potential)
    rows = vel.rows
    if not (np.any(rows.da) or np.any(rows.dw) or np.any(rows.db)):
        return replace(state, step=state.step + 1, time=state.time + eta,
                       sigma_mu=vel.sigma_mu, local_slope=0.0, drift_factor=1.0, capped=False)
    moved = _move(state.ensemble, rows, eta)
    return _finish_step(state, moved, eta, q, r_max, vel.sigma_mu, vel.local_slope)


def step_sgd_renorm(state: FlowState, eta: float, batch: QuadratureSet,
                    normalization: Optional[QuadratureSet] = None,
                    r_max: Optional[float] = None) -> FlowState:
    """
    Plain energy-gradient step on the batch, then a_i <- a_i / ||u|| measured
    on the batch (or on `normalization` when given).
    """
    grad = energy_gradient(state.ensemble, batch, state.potential)
    slope = float(np.sqrt(np.mean(grad.dots(grad))))
    moved = _move(state.ensemble, grad.scaled(-1.0), eta)
    return _finish_step(state, moved, eta, normalization or batch, r_max, float("nan"), slope)


def step_sgd_projected(state: FlowState, eta: float, batch: QuadratureSet,
                       normalization: Optional[QuadratureSet] = None,
                       r_max: Optional[float] = None) -> FlowState:
    """Constrained velocity on the batch, then the same rescale as sgd_renorm."""
    vel = velocity(state.ensemble, batch, state.potential)
    moved = _move(state.ensemble, vel.rows, eta)
    return _finish_step(state, moved, eta, normalization or batch, r_max,
                        vel.sigma_mu, vel.local_slope)


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

CSV_COLUMNS = [
    "step", "time_s", "energy", "rayleigh", "sigma_mu", "constraint",
    "local_slope", "l2_error", "r_t", "wall_ms",
]
METRIC_COLUMNS = CSV_COLUMNS[1:]


@dataclass
class RunRow:
    """One evaluation of the running ensemble."""
    step: int
    time_s: float
    energy: float
    rayleigh: float
    sigma_mu: float
    constraint: float
    local_slope: float
    l2_error: float
    r_t: float
    wall_ms: float

    def values(self) -> List[float]:
        return [getattr(self, name) for name in CSV_COLUMNS]


@dataclass
class SupportGrowthReport:
    """Finite-ness and fitted exponential rate of the support radius r_t."""
    finite: bool
    rate: float
    intercept: float
    flat: bool
    cap_events: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RunRecord:
    """Everything one run produces."""
    config: FlowConfig
    rows: List[RunRow] = field(default_factory=list)
    complete: bool = False
    abort_reason: Optional[str] = None
    events: List[Dict[str, Any]] = field(default_factory=list)
    coverage_initial: Optional[CoverageReport] = None
    coverage_final: Optional[CoverageReport] = None
    final_ensemble: Optional[Ensemble] = None
    checkpoint_path: Optional[str] = None
    stationarity_residual: Optional[float] = None
    state_history: List[str] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def final_row(self) -> Optional[RunRow]:
        return self.rows[-1] if self.rows else None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows], dtype=float)

    @property
    def stationarity_gap(self) -> float:
        """|sigma_mu - E_tau| at the final row."""
        row = self.final_row
        return float("nan") if row is None else abs(row.sigma_mu - row.energy)

    def converged(self, threshold: float = 1e-3) -> bool:
        """Final local slope below threshold."""
        row = self.final_row
        return row is not None and bool(row.local_slope < threshold)


def support_growth_check(record: RunRecord) -> SupportGrowthReport:
    """
    Check r_t is finite at every row and fit log r_t = rate t + intercept.

    No bound is asserted on the rate; it is reported.
    """
    radii = record.column("r_t")
    times = record.column("time_s")
    finite = bool(radii.size > 0 and np.all(np.isfinite(radii)))
    flat = bool(radii.size > 0 and np.ptp(radii) <= 1e-12 * max(1.0, float(np.max(np.abs(radii)))))
    rate, intercept = 0.0, float(np.log(radii[0])) if radii.size and radii[0] > 0 else 0.0
    if finite and not flat and np.unique(times).size >= 2 and np.all(radii > 0):
        rate, intercept = (float(c) for c in np.polyfit(times, np.log(radii), 1))
    cap_events = sum(1 for event in record.events if event.get("kind") == "r_max")
    if cap_events:
        logger.warning(f"support reached r_max {cap_events} times")
    return SupportGrowthReport(finite=finite, rate=rate, intercept=intercept, flat=flat,
                               cap_events=cap_events)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def evaluation_quadrature(cfg: FlowConfig) -> QuadratureSet:
    """Tensor grid for d <= 3, an eval_mc_points MC sample otherwise."""
    if cfg.d <= GRID_MAX_DIMENSION:
        return QuadratureSet.tensor_grid(cfg.d, cfg.grid_intervals)
    rng = derived_rng(cfg.seed, STREAM_EVAL)
    return QuadratureSet.monte_carlo(rng.random((cfg.eval_mc_points, cfg.d)))


def evaluate_row(state: FlowState, q: QuadratureSet, reference=None,
                 wall_ms: float = 0.0) -> RunRow:
    """
    Metrics of the current ensemble on the evaluation quadrature.

    The constraint column is carried from the state: it is measured where the
    last rescale enforced it.
    """
    u = state.ensemble
    s = sample_field(u, q, state.potential)
    energy_value = float(np.dot(q.weights, np.sum(s.grad * s.grad, axis=1) + s.potential * s.u * s.u))
    norm2 = float(np.dot(q.weights, s.u * s.u))
    vel = velocity(u, q, state.potential)
    return RunRow(
        step=state.step,
        time_s=state.time,
        energy=energy_value,
        rayleigh=energy_value / norm2,
        sigma_mu=vel.sigma_mu,
        constraint=state.constraint,
        local_slope=vel.local_slope,
        l2_error=l2_error(u, reference, q) if reference is not None else float("nan"),
        r_t=support_box_radius(u),
        wall_ms=wall_ms,
    )


def _batch(dataset: np.ndarray, cursor: int, n: int) -> QuadratureSet:
    idx = (cursor + np.arange(n)) % dataset.shape[0]
    return QuadratureSet.monte_carlo(dataset[idx])


def _initialize(cfg: FlowConfig, q: QuadratureSet, record: RunRecord) -> Ensemble:
    last_error = None
    for attempt in range(INIT_MAX_ATTEMPTS):
        try:
            return init_ensemble(cfg, derived_rng(cfg.seed, STREAM_INIT, attempt), q)
        except InitializationError as exc:
            last_error = exc
            record.events.append({"step": 0, "kind": "init_retry", "detail": str(exc)})
            logger.warning(f"Initialization attempt {attempt + 1} failed, retrying with a new stream")
    raise InitializationError(f"initialization failed after {INIT_MAX_ATTEMPTS} attempts: {last_error}")


def run_flow(cfg: FlowConfig, reference: Optional[ReferenceSolution] = None) -> RunRecord:
    """
    Run one flow to completion.

    Args:
        cfg: Validated configuration
        reference: FD reference; enables the l2_error column

    Returns:
        RunRecord; `complete` is False when a step raised
    """
    machine = RunStateMachine(label=f"run seed={cfg.seed}")
    record = RunRecord(config=cfg)
    started = time.perf_counter()

    def elapsed_ms() -> float:
        return (time.perf_counter() - started) * 1000.0 if cfg.record_timing else 0.0

    eta = cfg.step_size
    logger.info(
        f"Starting {cfg.integrator.value} run: d={cfg.d}, m={cfg.m}, tau={cfg.tau}, "
        f"eta={eta:.3e}, steps={cfg.steps}, potential={cfg.potential}, seed={cfg.seed}"
    )
    state: Optional[FlowState] = None
    try:
        eval_q = evaluation_quadrature(cfg)
        grid_q = (QuadratureSet.tensor_grid(cfg.d, cfg.grid_intervals)
                  if cfg.d <= GRID_MAX_DIMENSION else None)
        dataset = derived_rng(cfg.seed, STREAM_DATASET).random((cfg.dataset_size, cfg.d))
        ref_field = extend_to_d(reference, cfg.d) if reference is not None else None

        u = _initialize(cfg, eval_q, record)
        record.coverage_initial = coverage_report(u, derived_rng(cfg.seed, STREAM_COVERAGE))
        values = u.values(eval_q.points)
        state = FlowState(
            ensemble=u,
            potential=cfg.potential,
            constraint=float(np.sqrt(np.dot(eval_q.weights, values * values)) - 1.0),
        )
        machine.mark_initialized()
        record.rows.append(evaluate_row(state, eval_q, ref_field, elapsed_ms()))
        machine.mark_running()

        normalization_q = grid_q if cfg.normalization is QuadratureChoice.GRID else None
        cursor = 0
        for _ in range(cfg.steps):
            batch = _batch(dataset, cursor, cfg.batch_size)
            cursor = (cursor + cfg.batch_size) % cfg.dataset_size
            if cfg.integrator is Integrator.LAGRANGIAN:
                step_q = grid_q if cfg.step_quadrature is QuadratureChoice.GRID else batch
                state = step_lagrangian(state, eta, step_q, cfg.r_max)
            elif cfg.integrator is Integrator.SGD_RENORM:
                state = step_sgd_renorm(state, eta, batch, normalization_q, cfg.r_max)
            else:
                state = step_sgd_projected(state, eta, batch, normalization_q, cfg.r_max)

            if state.capped:
                record.events.append({"step": state.step, "kind": "r_max",
                                      "detail": f"support clipped to {cfg.r_max}"})
                logger.warning(f"step {state.step}: particles clipped to r_max={cfg.r_max}")
            if state.step % cfg.eval_every == 0 or state.step == cfg.steps:
                row = evaluate_row(state, eval_q, ref_field, elapsed_ms())
                record.rows.append(row)
                logger.info(
                    f"step {row.step}: E={row.energy:.6f}, R={row.rayleigh:.6f}, "
                    f"sigma={row.sigma_mu:.6f}, slope={row.local_slope:.3e}, r={row.r_t:.3f}"
                )

        record.final_ensemble = state.ensemble
        record.coverage_final = coverage_report(state.ensemble, derived_rng(cfg.seed, STREAM_COVERAGE))
        if cfg.probe_count > 0:
            record.stationarity_residual = stationarity_residual(
                state.ensemble, eval_q, cfg.potential, cfg.probe_count,
                derived_rng(cfg.seed, STREAM_PROBES),
            )
        machine.mark_completed()
    except SpectralFlowError as exc:
        logger.error(f"Run aborted: {exc}")
        record.abort_reason = str(exc)
        if state is not None:
            record.final_ensemble = state.ensemble
        machine.mark_aborted(str(exc))

    record.complete = machine.is_complete
    record.state_history = list(machine.state_history)
    record.wall_time_s = time.perf_counter() - started
    logger.info(f"Run finished ({machine.current_state.id}) with {len(record.rows)} rows")
    return record
