"""Run records, metrics and artifact writers (CSV tables, static SVG plots)."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np


@dataclass
class RunResult:
    """Time series of one estimator run on one seed."""

    estimator: str
    R_setting: str
    seed: int
    x_true: np.ndarray
    x_hat: np.ndarray
    cost: np.ndarray
    status: list
    solve_ms: np.ndarray
    bound: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.x_true.shape[0]

    @property
    def n(self) -> int:
        return self.x_true.shape[1]

    @property
    def err(self) -> np.ndarray:
        return self.x_hat - self.x_true

    @property
    def err_norm(self) -> np.ndarray:
        return np.linalg.norm(self.err, axis=1)

    @property
    def label(self) -> str:
        return f"{self.estimator}_{self.R_setting}"


def steady_state_window(T: int, fraction: float = 0.5) -> tuple[int, int]:
    """Final ``fraction`` of a run of length ``T`` as ``[start, stop)``."""
    return T - max(1, int(round(fraction * T))), T


def rmse(report: RunResult, state_index: int, window: tuple[int, int]) -> float:
    """Root mean square of the error of one state component over ``[start, stop)``."""
    start, stop = window
    if not 0 <= start < stop <= report.T:
        raise ValueError(f"empty or out-of-range window [{start}, {stop}) for a run of length {report.T}")
    e = report.err[start:stop, state_index]
    return float(np.sqrt(np.mean(e ** 2)))


def _num(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def emit_csv(report: RunResult, path) -> Path:
    """Per-run table ``t, x_true_*, x_hat_*, err_norm, bound, cost, status``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = report.n
    header = (["t"] + [f"x_true_{i + 1}" for i in range(n)] + [f"x_hat_{i + 1}" for i in range(n)]
              + ["err_norm", "bound", "cost", "status"])
    lines = [",".join(header)]
    en = report.err_norm
    for t in range(report.T):
        b = None if report.bound is None else report.bound[t]
        row = ([str(t)] + [repr(float(v)) for v in report.x_true[t]] + [repr(float(v)) for v in report.x_hat[t]]
               + [repr(float(en[t])), _num(b), repr(float(report.cost[t])), report.status[t]])
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_run_csv(path) -> dict:
    """Columns of a per-run CSV as arrays (``status`` stays a list of strings)."""
    rows = Path(path).read_text().strip().splitlines()
    header = rows[0].split(",")
    cols = {h: [] for h in header}
    for line in rows[1:]:
        for h, v in zip(header, line.split(",")):
            cols[h].append(v)
    out = {}
    for h, vals in cols.items():
        out[h] = vals if h == "status" else np.array([np.nan if v == "" else float(v) for v in vals])
    return out


def aggregate_rows(runs: Sequence[RunResult], fraction: float = 0.5) -> list:
    rows = []
    for r in runs:
        win = steady_state_window(r.T, fraction)
        rows.append([r.estimator, r.R_setting, r.seed] + [rmse(r, i, win) for i in range(r.n)]
                    + [float(np.mean(r.solve_ms[1:])) if r.T > 1 else 0.0])
    return rows


def emit_aggregate(runs: Sequence[RunResult], path, fraction: float = 0.5) -> Path:
    """RMSE table over the steady-state window plus mean solve time per step."""
    path = Path(path)
    n = runs[0].n if runs else 4
    header = ["estimator", "R_setting", "seed"] + [f"rmse_x{i + 1}" for i in range(n)] + ["mean_solve_ms"]
    lines = [",".join(header)]
    for row in aggregate_rows(runs, fraction):
        lines.append(",".join([row[0], row[1], str(row[2])] + [repr(v) for v in row[3:-1]] + [f"{row[-1]:.3f}"]))
    path.write_text("\n".join(lines) + "\n")
    return path


def emit_summary(runs: Sequence[RunResult], path, fraction: float = 0.5) -> Path:
    """Mean and sample standard deviation of each RMSE across seeds (timing excluded)."""
    path = Path(path)
    groups = {}
    for row in aggregate_rows(runs, fraction):
        groups.setdefault((row[0], row[1]), []).append(row[3:-1])
    n = runs[0].n if runs else 4
    header = ["estimator", "R_setting", "seeds"]
    for i in range(n):
        header += [f"mean_rmse_x{i + 1}", f"std_rmse_x{i + 1}"]
    lines = [",".join(header)]
    for (est, R), vals in groups.items():
        V = np.array(vals)
        std = V.std(axis=0, ddof=1) if len(V) > 1 else np.zeros(V.shape[1])
        cells = [est, R, str(len(V))]
        for i in range(V.shape[1]):
            cells += [repr(float(V[:, i].mean())), repr(float(std[i]))]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


_COLORS = ["#000000", "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"]


def emit_svg_lineplot(series: dict, path, title: str = "", width: int = 640, height: int = 360,
                      xlabel: str = "t", ylabel: str = "") -> Path:
    """Static SVG line plot; ``series`` maps a label to ``(x, y)`` arrays."""
    if not series:
        raise ValueError("nothing to plot")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ml, mr, mt, mb = 56, 150, 30, 40
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    ys = ys[np.isfinite(ys)]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>']
    for k in range(5):
        yv = y0 + (y1 - y0) * k / 4
        xv = x0 + (x1 - x0) * k / 4
        out.append(f'<text x="{ml - 6}" y="{sy(yv) + 4:.1f}" font-size="10" text-anchor="end">{yv:.3g}</text>')
        out.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 14}" font-size="10" text-anchor="middle">{xv:.3g}</text>')
    if title:
        out.append(f'<text x="{ml + pw / 2:.1f}" y="18" font-size="13" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 6}" font-size="11" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="12" y="{mt + ph / 2:.1f}" font-size="11" text-anchor="middle" '
                   f'transform="rotate(-90 12 {mt + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, (x, y)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(np.asarray(x, float), np.asarray(y, float))
                       if np.isfinite(b))
        dash = ' stroke-dasharray="4 3"' if i else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}"/>')
        ly = mt + 12 + 16 * i
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{color}"{dash}/>')
        out.append(f'<text x="{ml + pw + 34}" y="{ly + 4}" font-size="10">{escape(label)}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")
    return path
