"""SVG overlays: word outlines coloured by group, arrows along each group."""
from __future__ import annotations

import colorsys
from pathlib import Path
from xml.sax.saxutils import escape

from .corpus import Tile
from .geometry import bbox_center


def group_colors(count: int) -> list[str]:
    out = []
    for k in range(count):
        h = (k * 0.61803398875) % 1.0  # golden-ratio hue walk keeps neighbours apart
        r, g, b = colorsys.hsv_to_rgb(h, 0.75, 0.85)
        out.append(f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}")
    return out


def svg_document(tile: Tile, groups=None) -> str:
    groups = [list(g) for g in (tile.groups if groups is None else groups)]
    colors = group_colors(len(groups))
    w, h = tile.width, tile.height
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:g}" height="{h:g}" viewBox="0 0 {w:g} {h:g}">',
        "<defs><marker id=\"arrow\" viewBox=\"0 0 10 10\" refX=\"9\" refY=\"5\" markerWidth=\"6\" markerHeight=\"6\" orient=\"auto\">"
        '<path d="M0,0 L10,5 L0,10 z" fill="#222"/></marker></defs>',
        f'<rect width="{w:g}" height="{h:g}" fill="white"/>',
    ]
    for g, color in zip(groups, colors):
        lines.append(f'<g class="group" stroke="{color}">')
        for wid in g:
            word = tile.words[wid]
            pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in word.polygon.points)
            lines.append(
                f'<polygon points="{pts}" fill="{color}" fill-opacity="0.25" stroke-width="2">'
                f"<title>{wid}: {escape(word.text)}</title></polygon>"
            )
        for a, b in zip(g[:-1], g[1:]):
            (x0, y0), (x1, y1) = bbox_center(tile.words[a].polygon), bbox_center(tile.words[b].polygon)
            lines.append(
                f'<line class="link" x1="{x0:.1f}" y1="{y0:.1f}" x2="{x1:.1f}" y2="{y1:.1f}" '
                'stroke="#222" stroke-width="2" marker-end="url(#arrow)"/>'
            )
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_svg(tile: Tile, groups, out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg_document(tile, groups))
    return out
