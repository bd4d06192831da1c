"""Minimal SVG line charts for sweep curves."""

from typing import Dict, List, Sequence, Tuple
from xml.sax.saxutils import escape

WIDTH = 640
HEIGHT = 400
MARGIN = 56
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")

Point = Tuple[float, float]


def _ticks(lo: float, hi: float, count: int = 5) -> List[float]:
    if hi == lo:
        return [lo]
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def line_chart(
    series: Dict[str, Sequence[Point]],
    title: str,
    x_label: str,
    y_label: str,
    baseline: float = 0.0,
) -> str:
    """Render one polyline per series plus a dashed horizontal baseline.

    Args:
        series: Label to (x, y) points, drawn in insertion order
        title: Chart title
        x_label: X axis label
        y_label: Y axis label
        baseline: Y value of the reference rule (the unreduced model)

    Returns:
        SVG document text
    """
    points = [p for pts in series.values() for p in pts]
    xs = [p[0] for p in points] or [0.0, 1.0]
    ys = [p[1] for p in points] + [baseline]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = (y_hi - y_lo) * 0.05
    y_lo, y_hi = y_lo - pad, y_hi + pad

    plot_w = WIDTH - 2 * MARGIN
    plot_h = HEIGHT - 2 * MARGIN

    def sx(x: float) -> float:
        return MARGIN + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="{MARGIN / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" '
        'stroke="black"/>',
    ]
    for x in _ticks(x_lo, x_hi):
        out.append(
            f'<text x="{sx(x):.1f}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{x:.2f}</text>'
        )
    for y in _ticks(y_lo, y_hi):
        out.append(
            f'<text x="{MARGIN - 4}" y="{sy(y) + 3:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{y:.3g}</text>'
        )
    out.append(
        f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{escape(x_label)}</text>'
    )
    out.append(
        f'<text x="14" y="{HEIGHT / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {HEIGHT / 2:.1f})" '
        f'font-family="sans-serif" font-size="12">{escape(y_label)}</text>'
    )
    out.append(
        f'<line x1="{MARGIN}" y1="{sy(baseline):.1f}" x2="{WIDTH - MARGIN}" '
        f'y2="{sy(baseline):.1f}" stroke="gray" stroke-dasharray="4 3"/>'
    )
    for n, (label, pts) in enumerate(series.items()):
        color = COLORS[n % len(COLORS)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" '
            f'points="{coords}"/>'
        )
        out.append(
            f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * n + 10}" '
            f'font-family="sans-serif" font-size="11" fill="{color}">'
            f"{escape(label)}</text>"
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
