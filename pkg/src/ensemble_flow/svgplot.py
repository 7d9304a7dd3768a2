"""Minimal standalone SVG rendering for experiment artifacts.

Inspection aids only: a value-grid heatmap and a network drawing with
edge widths proportional to mass.  No plotting dependency; output is a
deterministic function of the inputs.
"""

import numpy as np

# five-stop blue -> teal -> green -> yellow ramp
_STOPS = np.array(
    [
        (68, 1, 84),
        (59, 82, 139),
        (33, 145, 140),
        (94, 201, 98),
        (253, 231, 37),
    ],
    dtype=np.float64,
)


def _color(x):
    x = min(max(float(x), 0.0), 1.0)
    pos = x * (len(_STOPS) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(_STOPS) - 1)
    frac = pos - lo
    rgb = _STOPS[lo] * (1.0 - frac) + _STOPS[hi] * frac
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


def heatmap_svg(grid, title="", cell=6):
    """Render a (rows, cols) nonnegative array as an SVG heatmap string.

    Rows run top to bottom (row 0 on top); values are scaled by the grid
    maximum.
    """
    grid = np.asarray(grid, dtype=np.float64)
    rows, cols = grid.shape
    vmax = grid.max() if grid.size and grid.max() > 0 else 1.0
    margin = 22
    width = cols * cell + 2 * margin
    height = rows * cell + 2 * margin
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{margin}" y="14" font-family="monospace" font-size="11">{title}</text>',
    ]
    for r in range(rows):
        for c in range(cols):
            parts.append(
                f'<rect x="{margin + c * cell}" y="{margin + r * cell}" '
                f'width="{cell}" height="{cell}" fill="{_color(grid[r, c] / vmax)}"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def network_svg(model, edge_values, title="", scale=140, max_width=14.0):
    """Render a network with directed-edge stroke widths proportional to value.

    The two directions of a street are drawn with a small perpendicular
    offset so both are visible; sensors are crosses, nodes are circles.
    """
    values = np.asarray(edge_values, dtype=np.float64)
    vmax = values.max() if values.size and values.max() > 0 else 1.0
    xs = [p[0] for p in model.node_positions]
    ys = [p[1] for p in model.node_positions]
    margin = 40

    def pt(x, y):
        return (margin + (x - min(xs)) * scale, margin + (max(ys) - y) * scale)

    width = int((max(xs) - min(xs)) * scale + 2 * margin)
    height = int((max(ys) - min(ys)) * scale + 2 * margin)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="10" y="16" font-family="monospace" font-size="12">{title}</text>',
    ]
    for i, (a, b) in enumerate(model.edges):
        (x1, y1) = pt(*model.node_positions[a - 1])
        (x2, y2) = pt(*model.node_positions[b - 1])
        dx, dy = x2 - x1, y2 - y1
        norm = max((dx * dx + dy * dy) ** 0.5, 1e-9)
        ox, oy = -dy / norm * 3.0, dx / norm * 3.0
        w = max_width * values[i] / vmax
        if w <= 0.0:
            continue
        parts.append(
            f'<line x1="{x1 + ox:.2f}" y1="{y1 + oy:.2f}" x2="{x2 + ox:.2f}" y2="{y2 + oy:.2f}" '
            f'stroke="#2166ac" stroke-width="{max(w, 0.3):.3f}" stroke-linecap="round"/>'
        )
    for k, (x, y) in enumerate(model.node_positions):
        px, py = pt(x, y)
        parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="5" fill="#333"/>')
        parts.append(
            f'<text x="{px + 7:.2f}" y="{py - 7:.2f}" font-family="monospace" font-size="10">{k + 1}</text>'
        )
    for sx, sy in model.sensor_positions:
        px, py = pt(sx, sy)
        parts.append(
            f'<path d="M {px - 5:.2f} {py - 5:.2f} L {px + 5:.2f} {py + 5:.2f} '
            f'M {px - 5:.2f} {py + 5:.2f} L {px + 5:.2f} {py - 5:.2f}" '
            f'stroke="#b2182b" stroke-width="2.5" fill="none"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
