"""Self-contained SVG 1.1 line plots of run and sweep CSVs.

Run CSVs become one polyline; sweep summaries become a mean polyline over a
mean +/- one standard deviation band polygon. An optional reference
eigenvalue is drawn as a horizontal dashed line.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union
from xml.sax.saxutils import escape

import numpy as np
from loguru import logger

from src.errors import ConfigurationError
from src.flow import METRIC_COLUMNS
from src.records import is_summary_csv, read_record_csv, read_summary_csv

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]
WIDTH = 720
HEIGHT = 420
MARGIN_LEFT = 70
MARGIN_RIGHT = 20
MARGIN_TOP = 40
MARGIN_BOTTOM = 50


@dataclass
class Series:
    """One curve, optionally with a band."""
    label: str
    x: np.ndarray
    y: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None


class _Axes:
    def __init__(self, x_range, y_range, log_y: bool):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        self.log_y = log_y

    def _ty(self, y):
        return np.log10(y) if self.log_y else y

    def px(self, x):
        span = (self.x1 - self.x0) or 1.0
        return MARGIN_LEFT + (np.asarray(x, dtype=float) - self.x0) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)

    def py(self, y):
        lo, hi = self._ty(self.y0), self._ty(self.y1)
        span = (hi - lo) or 1.0
        frac = (self._ty(np.asarray(y, dtype=float)) - lo) / span
        return HEIGHT - MARGIN_BOTTOM - frac * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)


def _points(xs, ys) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))


def _usable(series: Series, log_y: bool) -> np.ndarray:
    ok = np.isfinite(series.x) & np.isfinite(series.y)
    if log_y:
        ok &= series.y > 0
    return ok


def render_svg(series: Sequence[Series], title: str = "", y_label: str = "",
               log_y: bool = False, reference: Optional[float] = None) -> str:
    """
    SVG document for the given curves.

    Args:
        series: Curves to draw
        title: Plot title
        y_label: Y axis label
        log_y: Logarithmic y axis (non-positive values are dropped)
        reference: Value drawn as a horizontal line
    """
    xs, ys = [], []
    for s in series:
        ok = _usable(s, log_y)
        xs.append(s.x[ok])
        ys.append(s.y[ok])
        for band in (s.lower, s.upper):
            if band is not None:
                band_ok = ok & np.isfinite(band) & ((band > 0) if log_y else True)
                ys.append(band[band_ok])
    if reference is not None and (not log_y or reference > 0):
        ys.append(np.array([reference]))
    all_x = np.concatenate(xs) if xs else np.array([])
    all_y = np.concatenate(ys) if ys else np.array([])
    if all_x.size == 0 or all_y.size == 0:
        raise ConfigurationError("nothing to plot: no finite data points")

    axes = _Axes((float(all_x.min()), float(all_x.max())), (float(all_y.min()), float(all_y.max())), log_y)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{escape(title)}</text>',
    ]

    # frame and tick labels
    left, right = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    top, bottom = MARGIN_TOP, HEIGHT - MARGIN_BOTTOM
    out.append(f'<rect class="frame" x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
               f'fill="none" stroke="black" stroke-width="1"/>')
    for frac in np.linspace(0.0, 1.0, 5):
        xv = axes.x0 + frac * (axes.x1 - axes.x0)
        if log_y:
            yv = 10 ** (np.log10(axes.y0) + frac * (np.log10(axes.y1) - np.log10(axes.y0)))
        else:
            yv = axes.y0 + frac * (axes.y1 - axes.y0)
        px, py = float(axes.px(xv)), float(axes.py(yv))
        out.append(f'<text x="{px:.1f}" y="{bottom + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{xv:.4g}</text>')
        out.append(f'<text x="{left - 6}" y="{py + 4:.1f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{yv:.4g}</text>')
    out.append(f'<text x="{(left + right) / 2:.0f}" y="{HEIGHT - 10}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">step</text>')
    out.append(f'<text x="16" y="{(top + bottom) / 2:.0f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 16 {(top + bottom) / 2:.0f})">{escape(y_label)}</text>')

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        ok = _usable(s, log_y)
        if s.lower is not None and s.upper is not None:
            band_ok = ok & np.isfinite(s.lower) & np.isfinite(s.upper)
            if log_y:
                band_ok &= (s.lower > 0) & (s.upper > 0)
            if np.count_nonzero(band_ok) >= 2:
                bx = s.x[band_ok]
                upper = _points(axes.px(bx), axes.py(s.upper[band_ok]))
                lower = _points(axes.px(bx[::-1]), axes.py(s.lower[band_ok][::-1]))
                out.append(f'<polygon class="band" points="{upper} {lower}" fill="{color}" '
                           f'fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline class="series" points="{_points(axes.px(s.x[ok]), axes.py(s.y[ok]))}" '
                   f'fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{right - 8}" y="{top + 16 + 14 * i}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11" fill="{color}">{escape(s.label)}</text>')

    if reference is not None and (not log_y or reference > 0):
        ry = float(axes.py(reference))
        out.append(f'<line class="reference" x1="{left}" y1="{ry:.2f}" x2="{right}" y2="{ry:.2f}" '
                   f'stroke="black" stroke-dasharray="6,4" stroke-width="1"/>')

    out.append("</svg>")
    return "\n".join(out) + "\n"


def series_from_csv(path: Union[str, Path], metric: str) -> Series:
    """Series of one metric from a run CSV or a sweep summary CSV."""
    if metric not in METRIC_COLUMNS:
        raise ConfigurationError(f"unknown metric '{metric}' (known: {', '.join(METRIC_COLUMNS)})")
    path = Path(path)
    if is_summary_csv(path):
        summary = read_summary_csv(path)
        mean = summary.means[metric]
        spread = np.sqrt(np.maximum(summary.variances[metric], 0.0))
        return Series(label=f"{path.stem} (mean of {summary.runs})", x=summary.steps.astype(float),
                      y=mean, lower=mean - spread, upper=mean + spread)
    rows = read_record_csv(path)
    return Series(label=path.stem, x=np.array([r.step for r in rows], dtype=float),
                  y=np.array([getattr(r, metric) for r in rows], dtype=float))


def plot_csv_files(paths: Sequence[Union[str, Path]], out_svg: Union[str, Path], metric: str = "rayleigh",
                   log_y: Optional[bool] = None, reference: Optional[float] = None) -> Path:
    """
    Render the given CSVs to one SVG file.

    log_y defaults to True for the l2_error metric.
    """
    if not paths:
        raise ConfigurationError("plot needs at least one CSV file")
    if log_y is None:
        log_y = metric == "l2_error"
    series: List[Series] = [series_from_csv(p, metric) for p in paths]
    svg = render_svg(series, title=metric, y_label=metric, log_y=log_y, reference=reference)
    out_svg = Path(out_svg)
    out_svg.parent.mkdir(parents=True, exist_ok=True)
    out_svg.write_text(svg, encoding="utf-8")
    logger.info(f"Wrote {out_svg} ({len(series)} series, metric={metric})")
    return out_svg
