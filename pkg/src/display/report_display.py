"""Terminal rendering for command output (check table, run progress, summaries)."""

from typing import Iterable, List, Optional

from blessed import Terminal
from loguru import logger


class ReportDisplay:
    """
    Formats lines for the cli commands with blessed styling.

    Methods return strings; `emit` prints them. Styling falls back to plain
    text when stdout is not a TTY.
    """

    RULE_WIDTH = 78

    def __init__(self, width: int = RULE_WIDTH, force_styling: bool = False, stream=None):
        """
        Initialize display.

        Args:
            width: Width of headers and tables
            force_styling: Keep colors even when stdout is not a TTY
            stream: Stream the terminal capabilities are probed on (default stdout)
        """
        self.term = Terminal(stream=stream, force_styling=force_styling)
        self.width = width
        self.lines: List[str] = []

    def header(self, title: str) -> str:
        rule = "=" * self.width
        return f"{self.term.bold_cyan(rule)}\n{self.term.bold(title.center(self.width))}\n{self.term.bold_cyan(rule)}"

    def success(self, message: str) -> str:
        return self.term.green(f"✓ {message}")

    def error(self, message: str) -> str:
        return self.term.red(f"✗ {message}")

    def warning(self, message: str) -> str:
        return self.term.yellow(f"⚠ {message}")

    def info(self, message: str) -> str:
        return self.term.cyan(f"ℹ {message}")

    def status(self, label: str, value: str, color: str = "white") -> str:
        """`label: value` with the value in the given blessed color."""
        # unstyled terminals hand out empty (falsy) formatters
        painter = getattr(self.term, color, None)
        if not callable(painter):
            painter = str
        return f"{self.term.bold(label)}: {painter(str(value))}"

    def check_table(self, results: Iterable) -> str:
        """Pass/fail table of CheckResult rows."""
        rows = list(results)
        name_width = max([len(r.name) for r in rows] + [5])
        out = [self.header("INVARIANT CHECKS")]
        for r in rows:
            mark = self.term.green("PASS") if r.passed else self.term.red("FAIL")
            out.append(f"{mark}  {r.name.ljust(name_width)}  {r.seconds:7.2f}s  {r.detail}")
        passed = sum(1 for r in rows if r.passed)
        summary = f"{passed}/{len(rows)} checks passed"
        out.append(self.success(summary) if passed == len(rows) else self.error(summary))
        return "\n".join(out)

    def progress_row(self, row) -> str:
        """One evaluation row of a run."""
        return (f"step {row.step:>7d}  E={row.energy:12.6f}  R={row.rayleigh:12.6f}  "
                f"sigma={row.sigma_mu:12.6f}  slope={row.local_slope:9.2e}  r={row.r_t:7.3f}")

    def run_summary(self, record, reference_lam: Optional[float] = None) -> str:
        """Final eigenvalue estimates of a run."""
        row = record.final_row
        out = [self.header("RUN SUMMARY")]
        if row is None:
            out.append(self.error("no rows recorded"))
            return "\n".join(out)
        out.append(self.status("lambda (sigma_mu)", f"{row.sigma_mu:.8f}", "green"))
        out.append(self.status("lambda (Rayleigh)", f"{row.rayleigh:.8f}", "green"))
        if reference_lam is not None:
            rel = abs(row.rayleigh - reference_lam) / max(abs(reference_lam), 1e-300)
            out.append(self.status("reference lambda", f"{reference_lam:.8f} (rel. error {rel:.3e})"))
            out.append(self.status("L2 error", f"{row.l2_error:.6e}"))
        out.append(self.status("local slope", f"{row.local_slope:.3e}"))
        if record.complete:
            out.append(self.success(f"completed after {row.step} steps"))
        else:
            out.append(self.error(f"aborted: {record.abort_reason}"))
        return "\n".join(out)

    def emit(self, text: str) -> None:
        """Print and remember a block of output."""
        self.lines.append(text)
        try:
            print(text, flush=True)
        except Exception as e:
            logger.error(f"Error writing report output: {e}")
