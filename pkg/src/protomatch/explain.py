"""SVG overlay export: ground-truth box plus top-K matched patch boxes.

SVG is emitted instead of a raster so the output is dependency-free and
diffable in golden tests.  Element order is stable: the ground-truth
rectangle first, then one rectangle per matched patch in rank order.  Colors
follow the red (ground truth) / blue / green / yellow convention, cycling
for K > 3.
"""

from __future__ import annotations

import json

from .geometry import Box, GridSpec

GT_COLOR = "red"
MATCH_COLORS = ("blue", "green", "yellow")


def _rect(box: Box, color: str, elem_id: str, width: int) -> str:
    return (
        f'  <rect id="{elem_id}" x="{box.x_min}" y="{box.y_min}" '
        f'width="{box.x_max - box.x_min}" height="{box.y_max - box.y_min}" '
        f'fill="none" stroke="{color}" stroke-width="{width}"/>'
    )


def build_overlay_svg(grid: GridSpec, gt_box: Box,
                      matches: list[tuple[int, Box, float]]) -> str:
    """Overlay document with exactly 1 + len(matches) rectangles.

    `matches` carries (patch index, patch box, similarity) in rank order.
    """
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="0 0 {grid.image_width} {grid.image_height}" '
        f'width="{grid.image_width}" height="{grid.image_height}">',
        _rect(gt_box, GT_COLOR, "gt", 3),
    ]
    for rank, (_, box, _) in enumerate(matches):
        color = MATCH_COLORS[rank % len(MATCH_COLORS)]
        lines.append(_rect(box, color, f"match-{rank + 1}", 2))
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def build_sidecar(image_id: str, grid: GridSpec, gt_box: Box,
                  matches: list[tuple[int, Box, float]],
                  k_semantics: str = "top_k_patches") -> str:
    doc = {
        "image_id": image_id,
        "image_width": grid.image_width,
        "image_height": grid.image_height,
        "gt_box": gt_box.to_dict(),
        "matches": [
            {"rank": rank + 1, "patch": patch, "box": box.to_dict(), "sim": sim}
            for rank, (patch, box, sim) in enumerate(matches)
        ],
        "k_semantics": k_semantics,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
