"""Learning curves as self-contained SVG, aggregated across agents."""
from __future__ import annotations

import csv
import math
from html import escape
from pathlib import Path

import numpy as np

PALETTE = ["#d62728", "#2ca02c", "#1f77b4", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#17becf"]


class MetricError(KeyError):
    def __str__(self):
        return self.args[0]


def read_run(run_dir):
    """Rows of every metrics/agent_*.csv in ``run_dir`` as dicts of strings."""
    files = sorted(Path(run_dir, "metrics").glob("agent_*.csv"),
                   key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise FileNotFoundError(f"{run_dir}: no metrics/agent_*.csv files")
    out = {}
    for f in files:
        with open(f, newline="") as fh:
            out[int(f.stem.split("_")[1])] = list(csv.DictReader(fh))
    return out


def aggregate(run_dir, metric):
    """Per env_steps value: (steps, mean, sample std, count) across agents.

    NaN entries are skipped; a single agent gives std 0.
    """
    per_agent = read_run(run_dir)
    columns = list(next(iter(per_agent.values()))[0].keys()) if any(per_agent.values()) else []
    if metric not in columns:
        raise MetricError(f"metric {metric!r} not found; available columns: "
                          f"{', '.join(columns)}")
    by_step = {}
    for rows in per_agent.values():
        for r in rows:
            v = float(r[metric])
            if math.isfinite(v):
                by_step.setdefault(int(r["env_steps"]), []).append(v)
    points = []
    for step in sorted(by_step):
        vals = np.array(by_step[step])
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        points.append((step, float(vals.mean()), std, len(vals)))
    return points


def per_agent_curves(run_dir, metric):
    per_agent = read_run(run_dir)
    curves = {}
    for agent, rows in per_agent.items():
        pts = [(int(r["env_steps"]), float(r[metric])) for r in rows
               if math.isfinite(float(r[metric]))]
        curves[agent] = pts
    return curves


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step) + 1)]


def _fmt_tick(v):
    if v != 0 and (abs(v) >= 1e5 or abs(v) < 1e-3):
        return f"{v:.1e}"
    return f"{v:g}"


def render_svg(series, metric, width=800, height=480):
    """series: list of (label, points[(x, mean, std)], per_agent or None)."""
    left, right, top, bottom = 80, 180, 30, 50
    xs, ys = [], []
    for _, pts, extra in series:
        for x, m, s in pts:
            xs.append(x)
            ys += [m - s, m + s]
        for curve in (extra or {}).values():
            xs += [p[0] for p in curve]
            ys += [p[1] for p in curve]
    if not xs:
        xs, ys = [0, 1], [0, 1]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{sx(t):.2f}" y1="{top + ph}" x2="{sx(t):.2f}" '
                   f'y2="{top + ph + 5}" stroke="#444"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{top + ph + 18}" '
                   f'text-anchor="middle">{_fmt_tick(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{sy(t):.2f}" x2="{left}" y2="{sy(t):.2f}" '
                   f'stroke="#444"/>')
        out.append(f'<text x="{left - 8}" y="{sy(t) + 4:.2f}" '
                   f'text-anchor="end">{_fmt_tick(t)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">'
               f'env steps per agent</text>')
    out.append(f'<text x="18" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + ph / 2})">{escape(metric)}</text>')
    for k, (label, pts, extra) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        if pts:
            upper = " ".join(f"{sx(x):.2f},{sy(m + s):.2f}" for x, m, s in pts)
            lower = " ".join(f"{sx(x):.2f},{sy(m - s):.2f}" for x, m, s in reversed(pts))
            out.append(f'<polygon points="{upper} {lower}" fill="{color}" '
                       f'fill-opacity="0.2" stroke="none"/>')
            line = " ".join(f"{sx(x):.2f},{sy(m):.2f}" for x, m, _ in pts)
            out.append(f'<polyline points="{line}" fill="none" stroke="{color}" '
                       f'stroke-width="2"/>')
        for curve in (extra or {}).values():
            line = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in curve)
            out.append(f'<polyline points="{line}" fill="none" stroke="{color}" '
                       f'stroke-width="0.8" stroke-opacity="0.6"/>')
        ly = top + 16 + 20 * k
        out.append(f'<rect x="{left + pw + 15}" y="{ly - 9}" width="14" height="10" '
                   f'fill="{color}"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_runs(run_dirs, out_file, metric="mean_return_window", per_agent=False, labels=None):
    """Write an SVG of mean +- std curves and the aggregated points as CSV."""
    labels = labels or [Path(d).name for d in run_dirs]
    series, rows = [], []
    for label, run_dir in zip(labels, run_dirs):
        pts = aggregate(run_dir, metric)
        extra = per_agent_curves(run_dir, metric) if per_agent else None
        series.append((label, [(x, m, s) for x, m, s, _ in pts], extra))
        rows += [(label, x, m, s, n) for x, m, s, n in pts]
    out_file = Path(out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    out_file.write_text(render_svg(series, metric))
    csv_path = out_file.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "env_steps", "mean", "std", "count"])
        for label, x, m, s, n in rows:
            w.writerow([label, x, repr(m), repr(s), n])
    return out_file, csv_path
