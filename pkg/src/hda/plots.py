"""Standalone SVG line charts for a run's ``metrics.csv``.

No plotting library is needed: each chart is a small hand-built SVG 1.1
document with labeled axes, tick marks and a legend.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, List, Sequence, Tuple
from xml.sax.saxutils import escape

REQUIRED = ("epoch", "l_cls", "l_trans", "l_h", "cos_gh", "kurt_f", "kurt_g", "kurt_gap",
            "head_pair_cos", "probe_acc_g", "probe_acc_h", "target_acc")

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 150, 40, 55


class MetricsParseError(ValueError):
    """Malformed metrics file; the message names the line or column at fault."""


def read_metrics(path) -> Dict[str, List[float]]:
    """Parse ``metrics.csv`` into column -> values, validating every row."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise MetricsParseError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise MetricsParseError(f"{path}: line 1: missing header")
        header = [h.strip() for h in header]
        for col in REQUIRED:
            if col not in header:
                raise MetricsParseError(f"{path}: missing column '{col}'")
        if not any(h.startswith("h_range_") for h in header):
            raise MetricsParseError(f"{path}: missing column 'h_range_1'")
        cols: Dict[str, List[float]] = {h: [] for h in header}
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise MetricsParseError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            for name, cell in zip(header, row):
                try:
                    cols[name].append(float(cell))
                except ValueError:
                    raise MetricsParseError(
                        f"{path}: line {lineno}: column '{name}' has non-numeric value {cell!r}") from None
    if not cols["epoch"]:
        raise MetricsParseError(f"{path}: no data rows")
    return cols


def _nice_ticks(lo: float, hi: float, n: int = 5) -> List[float]:
    if hi - lo <= 0:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt_tick(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.4g}"


def line_chart_svg(title: str, x: Sequence[float], series: Sequence[Tuple[str, Sequence[float]]],
                   xlabel: str = "epoch", ylabel: str = "value") -> str:
    """Render one chart; non-finite points are dropped from their polyline."""
    finite = [v for _, ys in series for v in ys if math.isfinite(v)]
    ylo, yhi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if yhi - ylo < 1e-12:
        pad = max(abs(ylo) * 0.1, 0.5)
        ylo, yhi = ylo - pad, yhi + pad
    else:
        pad = 0.05 * (yhi - ylo)
        ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = min(x), max(x)
    if xhi - xlo < 1e-12:
        xlo, xhi = xlo - 1, xhi + 1

    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def px(v):
        return MARGIN_L + (v - xlo) / (xhi - xlo) * pw

    def py(v):
        return MARGIN_T + (1 - (v - ylo) / (yhi - ylo)) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{MARGIN_L + pw / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _nice_ticks(xlo, xhi):
        X = px(t)
        out.append(f'<line x1="{X:.2f}" y1="{MARGIN_T + ph}" x2="{X:.2f}" y2="{MARGIN_T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{MARGIN_T + ph + 18}" text-anchor="middle">{_fmt_tick(t)}</text>')
    for t in _nice_ticks(ylo, yhi):
        Y = py(t)
        out.append(f'<line x1="{MARGIN_L - 5}" y1="{Y:.2f}" x2="{MARGIN_L + pw}" y2="{Y:.2f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{MARGIN_L - 8}" y="{Y + 4:.2f}" text-anchor="end">{_fmt_tick(t)}</text>')
    out.append(f'<text x="{MARGIN_L + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{MARGIN_T + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {MARGIN_T + ph / 2:.1f})">{escape(ylabel)}</text>')

    for i, (name, ys) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        pts = [(px(a), py(b)) for a, b in zip(x, ys) if math.isfinite(b)]
        if len(pts) > 1:
            coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{coords}"/>')
        elif pts:
            a, b = pts[0]
            out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{color}"/>')
        ly = MARGIN_T + 14 + 18 * i
        lx = MARGIN_L + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def chart_families(cols: Dict[str, List[float]]) -> Dict[str, Tuple[str, str, list]]:
    """Chart name -> (title, y label, series names)."""
    h_cols = sorted((c for c in cols if c.startswith("h_range_")), key=lambda c: int(c.rsplit("_", 1)[1]))
    return {
        "losses": ("Training losses", "loss", ["l_cls", "l_trans", "l_h"]),
        "cos_gh": ("Cosine similarity of G and H", "cos(G, H)", ["cos_gh"]),
        "kurtosis": ("Excess kurtosis of F and G", "kurtosis", ["kurt_f", "kurt_g", "kurt_gap"]),
        "h_ranges": ("Heuristic head ranges", "mean |H^k(x)|", h_cols),
        "probes": ("Domain probe and target accuracy", "accuracy", ["probe_acc_g", "probe_acc_h", "target_acc"]),
    }


def plot_metrics(metrics_csv, out_dir) -> List[Path]:
    """Write one SVG per diagnostic family into ``out_dir``; returns the paths."""
    cols = read_metrics(metrics_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (title, ylabel, names) in chart_families(cols).items():
        svg = line_chart_svg(title, cols["epoch"], [(n, cols[n]) for n in names], ylabel=ylabel)
        path = out_dir / f"{name}.svg"
        path.write_text(svg)
        written.append(path)
    return written
