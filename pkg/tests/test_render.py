import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import node_box
from mcn.grid import FlowMaps, GridShape, random_flow_maps
from mcn.labeling import build_attractor_mask, ground_truth_flows
from mcn.mcl import ClusterAssignment
from mcn.render import W_MIN, W_RANGE, edge_width, render_svg

NS = {"s": "http://www.w3.org/2000/svg"}


def parse(svg):
    return ET.fromstring(svg)


def test_empty_scene_is_grid_only_and_stable():
    shape = GridShape(5, 7)
    a, b = render_svg(shape), render_svg(shape)
    assert a == b
    root = parse(a)
    assert len(root.findall(".//s:circle", NS)) == 35
    assert not root.findall(".//s:line", NS)
    assert root.get("width") == str(7 * 16) and root.get("height") == str(5 * 16)


def test_absorbing_node_draws_self_loop_only():
    shape = GridShape(3, 3)
    fm = FlowMaps.background(shape)
    root = parse(render_svg(shape, fm))
    assert len(root.findall(".//s:path[@class='self-loop']", NS)) == 9
    assert not root.findall(".//s:line[@class='flow']", NS)


def test_flow_edges_point_at_neighbors():
    shape = GridShape(2, 2)
    z = np.zeros((2, 2))
    f1 = z.copy()
    f1[0, 0] = 1.0  # node (0, 0) sends everything down
    fm = FlowMaps(1.0 - f1, f1, z.copy(), z.copy())
    root = parse(render_svg(shape, fm))
    lines = root.findall(".//s:line[@class='flow']", NS)
    assert len(lines) == 1
    ln = lines[0]
    assert float(ln.get("x1")) == float(ln.get("x2")) == 8.0
    assert float(ln.get("y2")) > float(ln.get("y1"))
    assert len(root.findall(".//s:path[@class='self-loop']", NS)) == 3


def test_widths_strictly_increase_with_flow():
    flows = np.linspace(0, 1, 50)
    widths = [edge_width(f) for f in flows]
    assert np.all(np.diff(widths) > 0)
    assert edge_width(0) == W_MIN and edge_width(1) == W_MIN + W_RANGE


def test_drawn_widths_follow_flow(rng):
    shape = GridShape(4, 4)
    fm = random_flow_maps(shape, rng)
    root = parse(render_svg(shape, fm))
    widths = [float(e.get("stroke-width")) for e in root.findall(".//s:line[@class='flow']", NS)]
    assert widths and all(W_MIN <= w <= W_MIN + W_RANGE for w in widths)


def test_full_figure_colors_and_layers(two_rect_scene):
    shape, boxes = two_rect_scene
    mask = build_attractor_mask(boxes, shape)
    fm = ground_truth_flows(mask)
    clusters = {a: sorted(int(m) for m in mem) for a, mem in zip(mask.attractors, mask.members)}
    fg = {m for mem in clusters.values() for m in mem}
    assignment = ClusterAssignment(mask.index.copy(), clusters, [m for m in range(shape.n_nodes) if m not in fg])
    svg = render_svg(shape, fm, assignment, boxes=boxes, gt_boxes=[node_box(1, 2, 1, 3)])
    root = parse(svg)
    assert root.find(".//s:g[@id='gt-boxes']", NS).get("stroke") == "#e41a1c"
    assert root.find(".//s:g[@id='pred-boxes']", NS).get("stroke") == "#ffd400"
    assert len(root.findall(".//s:g[@id='pred-boxes']/s:polygon", NS)) == 2
    assert len(root.findall(".//s:g[@id='attractors']/s:circle", NS)) == 2
    fills = {c.get("fill") for c in root.findall(".//s:g[@id='nodes']/s:circle", NS)}
    assert len(fills) == 3  # two cluster colors plus background
    assert svg == render_svg(shape, fm, assignment, boxes=boxes, gt_boxes=[node_box(1, 2, 1, 3)])
    assert not re.search(r"\d\.\d{3,}", svg)
