"""Static SVG drawings of a flow graph, its clusters and boxes."""

from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np

from mcn.geometry import RotatedBox
from mcn.grid import NEIGHBOR_STEPS, FlowMaps, GridShape, flatten
from mcn.mcl import ClusterAssignment

W_MIN = 0.5
W_RANGE = 4.0
NODE_RADIUS = 2.5
PALETTE = (
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e",
    "#e6ab02", "#a6761d", "#17becf", "#8c564b", "#bcbd22",
)
BACKGROUND = "#bbbbbb"
PRED_COLOR = "#ffd400"
GT_COLOR = "#e41a1c"
ATTRACTOR_COLOR = "#1f4fff"
FLOW_COLOR = "#444444"
MIN_FLOW = 1e-6


def edge_width(flow: float) -> float:
    return W_MIN + float(flow) * W_RANGE


def _num(x: float) -> str:
    return f"{x:.2f}"


def _points(corners) -> str:
    return " ".join(f"{_num(x)},{_num(y)}" for x, y in corners)


def render_svg(
    shape: GridShape,
    flows: FlowMaps | None = None,
    assignment: ClusterAssignment | None = None,
    boxes: list[RotatedBox] | None = None,
    gt_boxes: list[RotatedBox] | None = None,
) -> str:
    """SVG text for one scene; identical inputs give byte-identical output."""
    U, off = shape.stride, shape.offset
    width, height = shape.cols * U, shape.rows * U
    svg = ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "width": str(width),
            "height": str(height),
            "viewBox": f"0 0 {width} {height}",
        },
    )
    ET.SubElement(svg, "rect", {"x": "0", "y": "0", "width": str(width), "height": str(height), "fill": "white"})

    def center(m: int) -> tuple[float, float]:
        return (m // shape.rows) * U + off, (m % shape.rows) * U + off

    if flows is not None:
        group = ET.SubElement(svg, "g", {"id": "flows", "stroke": FLOW_COLOR, "fill": "none"})
        planes = [flatten(p) for p in flows.planes]
        for m in range(shape.n_nodes):
            x, y = center(m)
            i, j = m % shape.rows, m // shape.rows
            f0 = planes[0][m]
            if f0 > MIN_FLOW:
                # small loop above the node, closed back onto it
                r = U * 0.22
                ET.SubElement(
                    group,
                    "path",
                    {
                        "class": "self-loop",
                        "d": f"M {_num(x - r * 0.6)} {_num(y - r * 0.4)} "
                        f"A {_num(r)} {_num(r)} 0 1 1 {_num(x + r * 0.6)} {_num(y - r * 0.4)}",
                        "stroke-width": _num(edge_width(f0)),
                    },
                )
            for k, (di, dj) in NEIGHBOR_STEPS.items():
                f = planes[k][m]
                ti, tj = i + di, j + dj
                if f <= MIN_FLOW or not (0 <= ti < shape.rows and 0 <= tj < shape.cols):
                    continue
                tx, ty = center(ti + shape.rows * tj)
                ET.SubElement(
                    group,
                    "line",
                    {
                        "class": "flow",
                        "x1": _num(x),
                        "y1": _num(y),
                        "x2": _num(x + 0.8 * (tx - x)),
                        "y2": _num(y + 0.8 * (ty - y)),
                        "stroke-width": _num(edge_width(f)),
                    },
                )

    colors = {}
    if assignment is not None:
        for rank, a in enumerate(sorted(assignment.clusters)):
            for m in assignment.clusters[a]:
                colors[m] = PALETTE[rank % len(PALETTE)]
    nodes = ET.SubElement(svg, "g", {"id": "nodes"})
    for m in range(shape.n_nodes):
        x, y = center(m)
        ET.SubElement(
            nodes, "circle", {"cx": _num(x), "cy": _num(y), "r": _num(NODE_RADIUS), "fill": colors.get(m, BACKGROUND)}
        )

    for layer, color, items in (("gt-boxes", GT_COLOR, gt_boxes), ("pred-boxes", PRED_COLOR, boxes)):
        if not items:
            continue
        group = ET.SubElement(svg, "g", {"id": layer, "fill": "none", "stroke": color, "stroke-width": "2"})
        for box in items:
            ET.SubElement(group, "polygon", {"points": _points(box.corners())})

    if assignment is not None and assignment.clusters:
        group = ET.SubElement(svg, "g", {"id": "attractors", "fill": ATTRACTOR_COLOR})
        for a in sorted(assignment.clusters):
            x, y = center(a)
            ET.SubElement(group, "circle", {"cx": _num(x), "cy": _num(y), "r": _num(NODE_RADIUS * 1.8)})

    ET.indent(svg)
    return ET.tostring(svg, encoding="unicode") + "\n"
