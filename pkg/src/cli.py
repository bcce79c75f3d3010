"""Command implementations behind main.py.

Every cmd_* returns a process exit status: 0 on success, 1 when the work ran
but failed its goal (aborted run, failed check), 2 on a configuration or
input error.
"""

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from loguru import logger

from src.checks import create_default_suite
from src.display.report_display import ReportDisplay
from src.errors import ConfigurationError, SpectralFlowError
from src.field import save_ensemble
from src.flow import FlowConfig, Integrator, RunRecord, RunRow, run_flow
from src.plotting import plot_csv_files
from src.potentials import PotentialSpec
from src.records import (
    SweepSummary,
    StudyRow,
    write_record_csv,
    write_sidecar,
    write_study_csv,
    write_summary_csv,
)
from src.reference import (
    ReferenceSolution,
    load_reference,
    richardson,
    richardson_levels,
    save_reference,
    solve_reference,
)
from src.utils.config import config_hash, load_config, serialize_config
from src.utils.defaults import REFERENCE_TOL

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


def _log_sink(out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    return logger.add(out_dir / "run.log", level="DEBUG", mode="w",
                      format="{time:HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} - {message}")


def _load_setup(config_path, seed: Optional[int], reference_file: Optional[str]):
    cfg = load_config(config_path)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    ref_path = reference_file or cfg.reference_file
    reference = load_reference(ref_path) if ref_path else None
    return cfg, reference


def _persist_run(record: RunRecord, out_dir: Path, stem: str) -> None:
    if record.final_ensemble is not None:
        path = save_ensemble(record.final_ensemble, out_dir / f"{stem}_ensemble.npz")
        record.checkpoint_path = path.name
    write_record_csv(record, out_dir / f"{stem}.csv")
    write_sidecar(record, out_dir / f"{stem}.json", extra={"config_hash": config_hash(record.config)})


def _sweep_worker(job: Tuple[FlowConfig, int, Optional[str], Optional[ReferenceSolution]]):
    """One sweep member: run, write its files, hand back the rows."""
    cfg, index, out_dir, reference = job
    record = run_flow(cfg, reference)
    if out_dir is not None:
        _persist_run(record, Path(out_dir), f"run_{index:02d}")
    return index, record.rows, record.complete


def _run_many(cfg: FlowConfig, runs: int, out_dir: Optional[Path], parallel: int,
              reference: Optional[ReferenceSolution]) -> List[Tuple[int, List[RunRow], bool]]:
    """Runs with seeds seed + index, concurrently when parallel > 1."""
    jobs = [(cfg.with_seed(cfg.seed + i), i, str(out_dir) if out_dir else None, reference)
            for i in range(runs)]
    if parallel <= 1 or runs == 1:
        results = [_sweep_worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    return sorted(results, key=lambda r: r[0])


def _integrators(names: Sequence[str]) -> List[Integrator]:
    known = {i.value: i for i in Integrator}
    unknown = [n for n in names if n not in known]
    if unknown:
        raise ConfigurationError(f"unknown integrator(s) {unknown} (known: {', '.join(known)})")
    return [known[n] for n in names]


def cmd_run(config_path, out_dir, seed: Optional[int] = None, reference_file: Optional[str] = None,
            display: Optional[ReportDisplay] = None) -> int:
    """Single run: CSV, JSON sidecar and final checkpoint in out_dir."""
    display = display or ReportDisplay()
    out_dir = Path(out_dir)
    sink = _log_sink(out_dir)
    try:
        cfg, reference = _load_setup(config_path, seed, reference_file)
        (out_dir / "config.cfg").write_text(serialize_config(cfg), encoding="utf-8")
        record = run_flow(cfg, reference)
        _persist_run(record, out_dir, "run")
        for row in record.rows[-5:]:
            display.emit(display.progress_row(row))
        display.emit(display.run_summary(record, reference.lam if reference else None))
        return EXIT_OK if record.complete else EXIT_FAILED
    except SpectralFlowError as e:
        logger.error(f"run failed: {e}")
        display.emit(display.error(str(e)))
        return EXIT_ERROR
    finally:
        logger.remove(sink)


def cmd_sweep(config_path, runs: int, out_dir, seed: Optional[int] = None, parallel: int = 1,
              reference_file: Optional[str] = None, display: Optional[ReportDisplay] = None) -> int:
    """Independent runs (seed + index) and their mean/variance summary."""
    display = display or ReportDisplay()
    out_dir = Path(out_dir)
    sink = _log_sink(out_dir)
    try:
        if runs < 1:
            display.emit(display.error(f"runs must be >= 1, got {runs}"))
            return EXIT_ERROR
        cfg, reference = _load_setup(config_path, seed, reference_file)
        (out_dir / "config.cfg").write_text(serialize_config(cfg), encoding="utf-8")
        logger.info(f"Sweep of {runs} runs from seed {cfg.seed} (parallel={parallel})")
        results = _run_many(cfg, runs, out_dir, parallel, reference)
        summary = SweepSummary.from_rows([rows for _, rows, _ in results], config_hash(cfg))
        write_summary_csv(summary, out_dir / "summary.csv")

        failed = [i for i, _, complete in results if not complete]
        display.emit(display.header(f"SWEEP ({runs} runs)"))
        display.emit(display.status("final Rayleigh mean", f"{summary.means['rayleigh'][-1]:.8f}"))
        display.emit(display.status("final Rayleigh var", f"{summary.variances['rayleigh'][-1]:.3e}"))
        if failed:
            display.emit(display.error(f"incomplete runs: {failed}"))
            return EXIT_FAILED
        display.emit(display.success(f"summary written to {out_dir / 'summary.csv'}"))
        return EXIT_OK
    except SpectralFlowError as e:
        logger.error(f"sweep failed: {e}")
        display.emit(display.error(str(e)))
        return EXIT_ERROR
    finally:
        logger.remove(sink)


def cmd_study(config_path, widths: Sequence[int], batches: Sequence[int], runs: int, out_dir,
              integrators: Optional[Sequence[str]] = None, seed: Optional[int] = None,
              parallel: int = 1, reference_file: Optional[str] = None,
              display: Optional[ReportDisplay] = None) -> int:
    """
    Width/batch (and integrator) comparison of final L2 error and Rayleigh
    quotient, written to study.csv.
    """
    display = display or ReportDisplay()
    out_dir = Path(out_dir)
    sink = _log_sink(out_dir)
    try:
        cfg, reference = _load_setup(config_path, seed, reference_file)
        if reference is None:
            reference = solve_reference(cfg.potential, cfg.reference_n, cfg.reference_tol)
        tags = _integrators(integrators or [cfg.integrator.value])
        rows: List[StudyRow] = []
        for integrator in tags:
            for m in widths:
                for n in batches:
                    variant = dataclasses.replace(cfg, m=m, batch_size=n, integrator=integrator,
                                                  dataset_size=max(cfg.dataset_size, n))
                    sub_dir = out_dir / f"{integrator.value}_m{m}_n{n}"
                    results = _run_many(variant, runs, sub_dir, parallel, reference)
                    records = [RunRecord(config=variant, rows=r, complete=c) for _, r, c in results]
                    row = StudyRow.from_records(integrator.value, m, n, records)
                    rows.append(row)
                    display.emit(display.info(
                        f"{integrator.value} m={m} n={n}: L2 {row.l2_mean:.4e} (var {row.l2_var:.2e}), "
                        f"R {row.rayleigh_mean:.6f} (var {row.rayleigh_var:.2e})"))
        write_study_csv(rows, out_dir / "study.csv")
        display.emit(display.status("reference lambda", f"{reference.lam:.8f}"))
        display.emit(display.success(f"study written to {out_dir / 'study.csv'}"))
        return EXIT_OK
    except SpectralFlowError as e:
        logger.error(f"study failed: {e}")
        display.emit(display.error(str(e)))
        return EXIT_ERROR
    finally:
        logger.remove(sink)


def cmd_reference(potential: str, N: int, out_path, tol: float = REFERENCE_TOL,
                  display: Optional[ReportDisplay] = None) -> int:
    """Solve and save the FD reference; Richardson when N allows three levels."""
    display = display or ReportDisplay()
    try:
        spec = PotentialSpec.parse(potential)
        ref = solve_reference(spec, N, tol)
        save_reference(ref, out_path)
        display.emit(display.status(f"lambda (N={N})", f"{ref.lam:.10f}", "green"))
        levels = richardson_levels(N)
        if levels is not None:
            coarse = [solve_reference(spec, n, tol).lam for n in levels[:2]]
            result = richardson(coarse + [ref.lam])
            if result.degenerate:
                display.emit(display.warning("Richardson sequence is degenerate"))
            display.emit(display.status("lambda (extrapolated)", f"{result.extrapolated:.10f}", "green"))
            display.emit(display.status("observed order", f"{result.order:.3f}"))
        return EXIT_OK
    except SpectralFlowError as e:
        logger.error(f"reference failed: {e}")
        display.emit(display.error(str(e)))
        return EXIT_ERROR


def cmd_check(seed: int = 0, display: Optional[ReportDisplay] = None) -> int:
    """Run the invariant suite; exit 0 iff every check passes."""
    display = display or ReportDisplay()
    results = create_default_suite(seed).run_all()
    display.emit(display.check_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def cmd_plot(csv_paths: Sequence[str], out_svg, metric: str = "rayleigh", log_scale: Optional[bool] = None,
             reference_lambda: Optional[float] = None, reference_file: Optional[str] = None,
             display: Optional[ReportDisplay] = None) -> int:
    """Render run or sweep CSVs to one SVG."""
    display = display or ReportDisplay()
    try:
        if reference_lambda is None and reference_file:
            reference_lambda = load_reference(reference_file).lam
        path = plot_csv_files(csv_paths, out_svg, metric=metric, log_y=log_scale, reference=reference_lambda)
        display.emit(display.success(f"wrote {path}"))
        return EXIT_OK
    except (SpectralFlowError, OSError) as e:
        logger.error(f"plot failed: {e}")
        display.emit(display.error(str(e)))
        return EXIT_ERROR
