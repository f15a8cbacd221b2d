"""Deterministic SVG line charts from stored round CSVs.

No plotting dependency: the charts are assembled as plain SVG text with
fixed-precision coordinates, so rendering the same CSVs twice produces
byte-identical files.  One chart per metric; one polyline per policy,
averaging that policy's runs (seeds) round by round.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from .runner import METRIC_COLUMNS, read_round_csv

log = logging.getLogger(__name__)

WIDTH = 720
HEIGHT = 460
MARGIN_LEFT = 76
MARGIN_RIGHT = 170
MARGIN_TOP = 36
MARGIN_BOTTOM = 56

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _num(x: float) -> str:
    return format(float(x), ".2f")


def _tick_values(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round tick positions covering [lo, hi] on a 1-2-5 grid."""
    if hi <= lo:
        pad = max(abs(lo), 1.0) * 0.5
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / target
    mag = 10.0 ** np.floor(np.log10(raw))
    step = next(m * mag for m in (1.0, 2.0, 5.0, 10.0) if raw <= m * mag + 1e-12 * mag)
    first = np.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else float(v))
        v += step
    return ticks


def _scale(v: float, lo: float, hi: float, out_lo: float, out_hi: float) -> float:
    if hi == lo:
        return (out_lo + out_hi) / 2.0
    return out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)


def render_line_chart(
    title: str,
    xlabel: str,
    ylabel: str,
    curves: list[tuple[str, list[float], list[float]]],
) -> str:
    """Assemble one SVG chart; ``curves`` holds (label, xs, ys) triples."""
    xs_all = [x for _, xs, _ in curves for x in xs]
    ys_all = [y for _, _, ys in curves for y in ys]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if y_hi == y_lo:
        pad = max(abs(y_lo), 1.0) * 0.05
        y_lo, y_hi = y_lo - pad, y_hi + pad
    else:
        pad = (y_hi - y_lo) * 0.05
        y_lo, y_hi = y_lo - pad, y_hi + pad
    if x_hi == x_lo:
        x_hi = x_lo + 1.0

    px_lo, px_hi = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    py_lo, py_hi = HEIGHT - MARGIN_BOTTOM, MARGIN_TOP  # y axis grows upward

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{(px_lo + px_hi) // 2}" y="22" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
    ]
    for tv in _tick_values(x_lo, x_hi):
        if tv < x_lo - 1e-9 or tv > x_hi + 1e-9:
            continue
        px = _scale(tv, x_lo, x_hi, px_lo, px_hi)
        parts.append(
            f'<line x1="{_num(px)}" y1="{py_lo}" x2="{_num(px)}" y2="{py_hi}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_num(px)}" y="{py_lo + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{format(tv, ".6g")}</text>'
        )
    for tv in _tick_values(y_lo, y_hi):
        if tv < y_lo - 1e-9 or tv > y_hi + 1e-9:
            continue
        py = _scale(tv, y_lo, y_hi, py_lo, py_hi)
        parts.append(
            f'<line x1="{px_lo}" y1="{_num(py)}" x2="{px_hi}" y2="{_num(py)}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{px_lo - 8}" y="{_num(py + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{format(tv, ".6g")}</text>'
        )
    parts.append(
        f'<line x1="{px_lo}" y1="{py_lo}" x2="{px_hi}" y2="{py_lo}" stroke="#000000" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{px_lo}" y1="{py_lo}" x2="{px_lo}" y2="{py_hi}" stroke="#000000" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{(px_lo + px_hi) // 2}" y="{HEIGHT - 14}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{xlabel}</text>'
    )
    parts.append(
        f'<text x="20" y="{(py_lo + py_hi) // 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 20 {(py_lo + py_hi) // 2})">{ylabel}</text>'
    )
    for i, (label, xs, ys) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(
            f"{_num(_scale(x, x_lo, x_hi, px_lo, px_hi))},"
            f"{_num(_scale(y, y_lo, y_hi, py_lo, py_hi))}"
            for x, y in zip(xs, ys)
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = MARGIN_TOP + 14 + i * 20
        lx = WIDTH - MARGIN_RIGHT + 14
        parts.append(
            f'<line x1="{lx}" y1="{ly}" x2="{lx + 26}" y2="{ly}" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{lx + 32}" y="{ly + 4}" font-family="sans-serif" '
            f'font-size="12">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def curves_from_rows(rows_by_file: list[list[dict]], metric: str):
    """Group rows by policy and mean the metric across seeds per round."""
    by_policy: dict[str, dict[int, list[float]]] = {}
    for rows in rows_by_file:
        for row in rows:
            v = row[metric]
            if v is None:
                continue
            by_policy.setdefault(row["policy"], {}).setdefault(row["round"], []).append(v)
    curves = []
    for policy in sorted(by_policy):
        per_round = by_policy[policy]
        xs = sorted(per_round)
        ys = [float(np.mean(per_round[t])) for t in xs]
        curves.append((policy, [float(x) for x in xs], ys))
    return curves


def emit_plots(csv_paths: list[str], out_dir: str) -> list[str]:
    """Render one SVG per metric from the given round CSVs.

    Metrics with no recorded values anywhere are skipped with a log note.
    Returns the written file paths.
    """
    rows_by_file = [read_round_csv(p) for p in csv_paths]
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for metric in METRIC_COLUMNS:
        curves = curves_from_rows(rows_by_file, metric)
        if not curves:
            log.info("no data for metric %s; plot skipped", metric)
            continue
        svg = render_line_chart(metric, "round", metric, curves)
        path = os.path.join(out_dir, f"{metric}.svg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(svg)
        written.append(path)
    return written
