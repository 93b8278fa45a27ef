"""Two-panel training-curve chart written as standalone SVG."""
from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import ConfigError

CSV_COLUMNS = ("step", "loss", "reward_total", "reward_acc", "reward_fmt", "kl", "completion_len")

PANEL_W, PANEL_H = 420, 260
MARGIN = dict(left=60, right=20, top=40, bottom=45)


def read_metrics(path) -> dict[str, list[float]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigError(f"{path}: empty CSV, expected header {','.join(CSV_COLUMNS)}")
        missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ConfigError(f"{path}: missing column(s) {', '.join(missing)}")
        cols = {c: [] for c in CSV_COLUMNS}
        for row in reader:
            for c in CSV_COLUMNS:
                cols[c].append(float(row[c]))
    if not cols["step"]:
        raise ConfigError(f"{path}: CSV has a header but no data rows")
    return cols


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".") if abs(x) < 1e4 else f"{x:.3g}"


def _panel(x0: float, title: str, ylabel: str, xs, ys, color: str) -> list[str]:
    left, top = x0 + MARGIN["left"], MARGIN["top"]
    w = PANEL_W - MARGIN["left"] - MARGIN["right"]
    h = PANEL_H - MARGIN["top"] - MARGIN["bottom"]
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)
    if xmax == xmin:
        xmin, xmax = xmin - 1, xmax + 1
    if ymax == ymin:
        pad = abs(ymax) * 0.1 or 1.0
        ymin, ymax = ymin - pad, ymax + pad

    def sx(x):
        return left + (x - xmin) / (xmax - xmin) * w

    def sy(y):
        return top + h - (y - ymin) / (ymax - ymin) * h

    out = [
        f'<g class="panel">',
        f'<text x="{left + w / 2:.1f}" y="{top - 15}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#444"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        yv = ymin + frac * (ymax - ymin)
        xv = xmin + frac * (xmax - xmin)
        out.append(f'<text x="{left - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end" font-size="10">{_fmt(yv)}</text>')
        out.append(f'<text x="{sx(xv):.1f}" y="{top + h + 15}" text-anchor="middle" font-size="10">{_fmt(xv)}</text>')
    out.append(f'<text x="{left + w / 2:.1f}" y="{top + h + 35}" text-anchor="middle" font-size="11">step</text>')
    out.append(
        f'<text x="{x0 + 15}" y="{top + h / 2:.1f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 {x0 + 15} {top + h / 2:.1f})">{escape(ylabel)}</text>'
    )
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    if len(xs) == 1:
        out.append(f'<circle cx="{sx(xs[0]):.2f}" cy="{sy(ys[0]):.2f}" r="3" fill="{color}"/>')
    else:
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
    out.append("</g>")
    return out


def render_svg(metrics: dict[str, list[float]]) -> str:
    steps = metrics["step"]
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * PANEL_W}" height="{PANEL_H}" '
        f'viewBox="0 0 {2 * PANEL_W} {PANEL_H}" font-family="sans-serif">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    parts += _panel(0, "(a) accuracy reward", "mean accuracy reward", steps, metrics["reward_acc"], "#1f77b4")
    parts += _panel(PANEL_W, "(b) completion length", "mean completion length (tokens)", steps, metrics["completion_len"], "#d62728")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_training_curves(csv_path, out_path) -> Path:
    svg = render_svg(read_metrics(csv_path))
    out = Path(out_path)
    out.write_text(svg, encoding="utf-8")
    return out
