"""Self-contained SVG charts for run outputs. Presentation only: the CSV files
are the record."""
import math
from dataclasses import dataclass, field
from typing import Optional
from xml.sax.saxutils import escape

from .errors import ConfigError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 170, 30, 50


@dataclass
class Axes:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    log_y: bool = False
    log_floor: float = 1e-8
    extra: dict = field(default_factory=dict)


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt(v):
    return f"{v:.3g}"


def emit_svg_line_chart(series, axes, path=None):
    """``series`` maps a name to ``(xs, ys)``. Returns the SVG text and writes it
    to ``path`` when given.

    On a log axis, non-positive values are drawn at ``axes.log_floor`` and the
    affected series is marked in the legend.
    """
    if not series:
        raise ConfigError("emit_svg_line_chart needs at least one series", "series")
    prepared = []
    for name, (xs, ys) in series.items():
        xs, ys = [float(x) for x in xs], [float(y) for y in ys]
        if not xs or len(xs) != len(ys):
            raise ConfigError(f"series {name!r} is empty or has mismatched x/y", "series")
        floored = False
        if axes.log_y:
            fixed = []
            for y in ys:
                if not y >= axes.log_floor:
                    y, floored = axes.log_floor, True
                fixed.append(math.log10(y))
            ys = fixed
        prepared.append((name, xs, ys, floored))
    all_x = [x for _, xs, _, _ in prepared for x in xs if math.isfinite(x)]
    all_y = [y for _, _, ys, _ in prepared for y in ys if math.isfinite(y)]
    if not all_x or not all_y:
        raise ConfigError("series contain no finite points", "series")
    x0, x1 = min(all_x), max(all_x)
    y0, y1 = min(all_y), max(all_y)
    if x0 == x1:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y0 == y1:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    if axes.title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
                   f'{escape(axes.title)}</text>')
    for xv in _ticks(x0, x1):
        out.append(f'<text x="{sx(xv):.1f}" y="{TOP + ph + 15}" text-anchor="middle">{_fmt(xv)}</text>')
    for yv in _ticks(y0, y1):
        label = _fmt(10 ** yv) if axes.log_y else _fmt(yv)
        out.append(f'<text x="{LEFT - 5}" y="{sy(yv) + 4:.1f}" text-anchor="end">{label}</text>')
    if axes.xlabel:
        out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">'
                   f'{escape(axes.xlabel)}</text>')
    if axes.ylabel:
        ylabel = axes.ylabel + (" (log)" if axes.log_y else "")
        out.append(f'<text transform="translate(15,{TOP + ph / 2:.1f}) rotate(-90)" '
                   f'text-anchor="middle">{escape(ylabel)}</text>')
    for i, (name, xs, ys, floored) in enumerate(prepared):
        colour = PALETTE[i % len(PALETTE)]
        pts = [(sx(x), sy(y)) for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
        if len(pts) == 1:
            out.append(f'<circle class="marker" cx="{pts[0][0]:.2f}" cy="{pts[0][1]:.2f}" r="3" '
                       f'fill="{colour}"/>')
        elif pts:
            coords = " ".join(f"{px:.2f},{py:.2f}" for px, py in pts)
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{coords}"/>')
        ly = TOP + 12 + 16 * i
        label = name + (" (values floored)" if floored else "")
        out.append(f'<g class="legend"><line x1="{WIDTH - RIGHT + 10}" y1="{ly - 4}" '
                   f'x2="{WIDTH - RIGHT + 28}" y2="{ly - 4}" stroke="{colour}" stroke-width="2"/>'
                   f'<text x="{WIDTH - RIGHT + 32}" y="{ly}">{escape(label)}</text></g>')
    out.append("</svg>\n")
    text = "\n".join(out)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def emit_svg_histogram(counts, edges, title="", path: Optional[str] = None):
    counts = [int(c) for c in counts]
    if not counts or len(edges) != len(counts) + 1:
        raise ConfigError("histogram needs counts and len(counts) + 1 edges", "counts")
    pw, ph = WIDTH - LEFT - 40, HEIGHT - TOP - BOTTOM
    top = max(max(counts), 1)
    bw = pw / len(counts)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
                   f'{escape(title)}</text>')
    for i, c in enumerate(counts):
        h = c / top * ph
        out.append(f'<rect x="{LEFT + i * bw:.2f}" y="{TOP + ph - h:.2f}" width="{max(bw - 1, 0.5):.2f}" '
                   f'height="{h:.2f}" fill="{PALETTE[0]}"/>')
    for v in (edges[0], edges[len(edges) // 2], edges[-1]):
        x = LEFT + (v - edges[0]) / (edges[-1] - edges[0]) * pw
        out.append(f'<text x="{x:.1f}" y="{TOP + ph + 15}" text-anchor="middle">{_fmt(v)}</text>')
    out.append(f'<text x="{LEFT - 5}" y="{TOP + 4}" text-anchor="end">{top}</text>')
    out.append("</svg>\n")
    text = "\n".join(out)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
