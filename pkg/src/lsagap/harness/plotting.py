"""Self-contained SVG line charts with byte-deterministic output.

A small hand-rolled emitter (fixed canvas, fixed color cycle, ``%.6g``
number formatting) keeps identical inputs producing identical bytes, which
no general plotting backend guarantees.
"""

from __future__ import annotations

import math
import os
from collections import defaultdict

from .csvio import read_csv

WIDTH, HEIGHT = 640, 440
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 72, 24, 40, 56
COLORS = ("#1f6fb2", "#d1495b", "#3f8f4e", "#8a6fb8", "#c98a2b", "#4f4f4f")


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _nice_ticks(lo: float, hi: float, count: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    value = start
    while value <= hi + 1e-12 * step:
        ticks.append(round(value, 12))
        value += step
    return ticks


class LineChart:
    """Accumulates labelled series and renders one SVG file."""

    def __init__(self, title: str, xlabel: str, ylabel: str,
                 log_y: bool = False):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.log_y = log_y
        self.series = []
        self.hlines = []

    def add(self, label: str, xs, ys, yerr=None):
        xs = [float(v) for v in xs]
        ys = [float(v) for v in ys]
        if yerr is not None:
            yerr = [float(v) for v in yerr]
        self.series.append((label, xs, ys, yerr))

    def add_hline(self, label: str, y: float):
        self.hlines.append((label, float(y)))

    def render(self, path: str) -> None:
        if not self.series:
            raise ValueError("no series to plot")
        xs_all = [x for _, xs, _, _ in self.series for x in xs]
        ys_all = [y for _, _, ys, _ in self.series for y in ys]
        ys_all += [y for _, y in self.hlines]
        if self.log_y:
            ys_all = [y for y in ys_all if y > 0]
            if not ys_all:
                raise ValueError("log axis needs positive values")
        x_lo, x_hi = min(xs_all), max(xs_all)
        y_lo, y_hi = min(ys_all), max(ys_all)
        if x_hi == x_lo:
            x_hi = x_lo + 1.0
        if y_hi == y_lo:
            y_hi = y_lo + 1.0
        if self.log_y:
            y_lo, y_hi = math.log10(y_lo), math.log10(y_hi)
        pad = 0.06 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad

        def px(x):
            return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R)

        def py(y):
            if self.log_y:
                y = math.log10(y)
            return HEIGHT - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B)

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
            f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
            f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{self.title}</text>',
        ]
        axis_y0, axis_y1 = HEIGHT - MARGIN_B, MARGIN_T
        parts.append(f'<line x1="{MARGIN_L}" y1="{axis_y0}" x2="{WIDTH - MARGIN_R}" '
                     f'y2="{axis_y0}" stroke="#000000" stroke-width="1"/>')
        parts.append(f'<line x1="{MARGIN_L}" y1="{axis_y0}" x2="{MARGIN_L}" '
                     f'y2="{axis_y1}" stroke="#000000" stroke-width="1"/>')
        for tick in _nice_ticks(x_lo, x_hi):
            x = px(tick)
            parts.append(f'<line x1="{_fmt(x)}" y1="{axis_y0}" x2="{_fmt(x)}" '
                         f'y2="{axis_y0 + 4}" stroke="#000000"/>')
            parts.append(f'<text x="{_fmt(x)}" y="{axis_y0 + 18}" text-anchor="middle" '
                         f'font-family="sans-serif" font-size="11">{_fmt(tick)}</text>')
        lo_t, hi_t = (y_lo, y_hi)
        for tick in _nice_ticks(lo_t, hi_t):
            value = 10**tick if self.log_y else tick
            y = py(value)
            parts.append(f'<line x1="{MARGIN_L - 4}" y1="{_fmt(y)}" x2="{MARGIN_L}" '
                         f'y2="{_fmt(y)}" stroke="#000000"/>')
            label = _fmt(value)
            parts.append(f'<text x="{MARGIN_L - 8}" y="{_fmt(y + 4)}" text-anchor="end" '
                         f'font-family="sans-serif" font-size="11">{label}</text>')
        parts.append(f'<text x="{WIDTH // 2}" y="{HEIGHT - 14}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12">{self.xlabel}</text>')
        parts.append(f'<text x="18" y="{HEIGHT // 2}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12" '
                     f'transform="rotate(-90 18 {HEIGHT // 2})">{self.ylabel}</text>')

        for label, y in self.hlines:
            yy = py(y)
            parts.append(f'<line x1="{MARGIN_L}" y1="{_fmt(yy)}" x2="{WIDTH - MARGIN_R}" '
                         f'y2="{_fmt(yy)}" stroke="#888888" stroke-dasharray="6,4"/>')
            parts.append(f'<text x="{WIDTH - MARGIN_R - 4}" y="{_fmt(yy - 5)}" '
                         f'text-anchor="end" font-family="sans-serif" '
                         f'font-size="10" fill="#666666">{label}</text>')

        for idx, (label, xs, ys, yerr) in enumerate(self.series):
            color = COLORS[idx % len(COLORS)]
            pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, ys))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                         f'stroke-width="1.8"/>')
            if yerr is not None:
                for x, y, e in zip(xs, ys, yerr):
                    x0 = px(x)
                    parts.append(f'<line x1="{_fmt(x0)}" y1="{_fmt(py(y - e))}" '
                                 f'x2="{_fmt(x0)}" y2="{_fmt(py(y + e))}" '
                                 f'stroke="{color}" stroke-width="1"/>')
            for x, y in zip(xs, ys):
                parts.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="2.4" '
                             f'fill="{color}"/>')
            ly = MARGIN_T + 16 * idx + 8
            lx = WIDTH - MARGIN_R - 150
            parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 22}" y2="{ly}" '
                         f'stroke="{color}" stroke-width="2"/>')
            parts.append(f'<text x="{lx + 28}" y="{ly + 4}" font-family="sans-serif" '
                         f'font-size="11">{label}</text>')
        parts.append("</svg>")
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(parts) + "\n")


PLOT_KINDS = ("scaling", "cmse", "values")


def plot_results(csv_path: str, kind: str, out_dir: str) -> list[str]:
    """Render charts for a results or traces CSV; returns written paths.

    Empty inputs produce no files (callers warn and exit 0).
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"plot kind must be one of {PLOT_KINDS}")
    rows = read_csv(csv_path)
    if not rows:
        return []
    if kind == "scaling":
        return _plot_scaling(rows, out_dir)
    if kind == "cmse":
        return _plot_traces(rows, out_dir, field="cmse",
                            ylab="cumulative MSE", fname="cmse.svg")
    return _plot_traces(rows, out_dir, field="prediction",
                        ylab="value", fname="values.svg", with_truth=True)


def _plot_scaling(rows, out_dir) -> list[str]:
    from .csvio import aggregate_rows
    agg = aggregate_rows(rows)
    metrics = sorted({r["metric"] for r in agg if str(r["metric"]).endswith("_tf_mse")})
    if not metrics:
        return []
    # x axis: n when it varies, else L
    ns = {r["n"] for r in agg if r["metric"] in metrics}
    use_l = len(ns) <= 1
    written = []
    for p in sorted({r["p"] for r in agg if r["metric"] in metrics},
                    key=lambda v: float(v or 0)):
        chart = LineChart(
            title=f"teacher-forcing MSE, p={p}",
            xlabel="layers L" if use_l else "history length n",
            ylabel="test MSE")
        drew = False
        for metric in metrics:
            sel = [r for r in agg if r["metric"] == metric and r["p"] == p
                   and r["mean"] is not None]
            if use_l:
                sel = [r for r in sel if str(r["L"]) != ""]
                sel.sort(key=lambda r: float(r["L"]))
                xs = [float(r["L"]) for r in sel]
            else:
                sel.sort(key=lambda r: float(r["n"]))
                xs = [float(r["n"]) for r in sel]
            if not xs:
                continue
            if len(xs) == 1 and not use_l:
                continue
            chart.add(metric.replace("_tf_mse", ""), xs,
                      [r["mean"] for r in sel], [r["sem"] for r in sel])
            drew = True
        if not drew:
            continue
        path = os.path.join(out_dir, f"scaling_p{p}.svg")
        chart.render(path)
        written.append(path)
    return written


def _plot_traces(rows, out_dir, field: str, ylab: str, fname: str,
                 with_truth: bool = False) -> list[str]:
    seeds = sorted({r["seed"] for r in rows})
    first_seed = seeds[0]
    rows = [r for r in rows if r["seed"] == first_seed and r.get(field, "") != ""]
    if not rows:
        return []
    by_pred = defaultdict(list)
    for r in rows:
        by_pred[r["predictor"]].append((int(r["t"]), float(r[field])))
    chart = LineChart(title=f"{ylab} over rollout steps", xlabel="step t",
                      ylabel=ylab)
    if with_truth:
        truth = sorted((int(r["t"]), float(r["truth"])) for r in rows
                       if r["predictor"] == sorted(by_pred)[0] and r["truth"] != "")
        if truth:
            chart.add("truth", [t for t, _ in truth], [v for _, v in truth])
    else:
        truths = [float(r["truth"]) for r in rows if r["truth"] != ""]
        if truths:
            mean = sum(truths) / len(truths)
            var = sum((v - mean) ** 2 for v in truths) / len(truths)
            chart.add_hline("sample variance", var)
    for pred in sorted(by_pred):
        pts = sorted(by_pred[pred])
        chart.add(pred, [t for t, _ in pts], [v for _, v in pts])
    path = os.path.join(out_dir, fname)
    chart.render(path)
    return [path]
