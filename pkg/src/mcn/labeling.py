"""Ground-truth generation: attractors, attractor masks, flow labels and object masks.

Also synthesizes ground-truth flows whose Markov clustering provably recovers
the attractor mask; these drive the oracle tests.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from mcn.errors import LabelingError
from mcn.geometry import RotatedBox
from mcn.grid import NEIGHBOR_STEPS, FlowMaps, GridShape, unflatten


def node_centers(shape: GridShape) -> np.ndarray:
    """Image-space (x, y) center of every node, in node-id order."""
    m = np.arange(shape.n_nodes)
    i, j = m % shape.rows, m // shape.rows
    return np.stack([j * shape.stride + shape.offset, i * shape.stride + shape.offset], axis=1).astype(np.float64)


def nodes_in_box(box: RotatedBox, shape: GridShape) -> np.ndarray:
    """Sorted ids of nodes whose centers fall inside the box (edges included)."""
    return np.flatnonzero(box.contains(node_centers(shape)))


def _anchor_point(box: RotatedBox) -> np.ndarray:
    """Point where the major axis meets the lower short side.

    For a horizontal major axis both short sides are equally low; the midpoint
    of the bottom edge is used instead so the attractor sits mid-box.
    """
    b = box.normalized()
    u, v = b.axes
    ends = [b.center + b.w / 2 * u, b.center - b.w / 2 * u]
    if abs(ends[0][1] - ends[1][1]) <= 1e-9 * max(1.0, b.w):
        down = v if v[1] >= 0 else -v
        return b.center + b.h / 2 * down
    return ends[0] if ends[0][1] > ends[1][1] else ends[1]


def locate_attractor(box: RotatedBox, shape: GridShape) -> tuple[int, RotatedBox]:
    """Attractor node of a box and the box grown just enough to contain it.

    The attractor takes the row of the lowest in-box node (largest row index,
    rows grow downward) and the column of the in-box node nearest the anchor
    point on the lower short side.
    """
    nodes = nodes_in_box(box, shape)
    if nodes.size == 0:
        raise LabelingError(f"box {box.to_json()} contains no node center at stride {shape.stride}")
    centers = node_centers(shape)
    anchor = _anchor_point(box)
    nearest = nodes[np.argmin(np.linalg.norm(centers[nodes] - anchor, axis=1))]
    col = nearest // shape.rows
    row = int((nodes % shape.rows).max())
    attractor = int(row + shape.rows * col)
    if box.contains(centers[attractor])[0]:
        return attractor, box
    loc = box.local(centers[attractor])[0]
    grow = 1.0 + 1e-9
    adjusted = RotatedBox(
        box.cx, box.cy, max(box.w, 2 * abs(loc[0]) * grow), max(box.h, 2 * abs(loc[1]) * grow), box.theta
    )
    return attractor, adjusted


@dataclass
class AttractorMask:
    """Attractor id for every node (flat, node order) plus per-box bookkeeping."""

    index: np.ndarray
    shape: GridShape
    attractors: list[int] = field(default_factory=list)
    boxes: list[RotatedBox] = field(default_factory=list)
    members: list[np.ndarray] = field(default_factory=list)

    def grid(self) -> np.ndarray:
        return unflatten(self.index, self.shape)


def build_attractor_mask(boxes: list[RotatedBox], shape: GridShape) -> AttractorMask:
    n = shape.n_nodes
    index = np.arange(n)
    owner = np.full(n, -1)
    out = AttractorMask(index=index, shape=shape)
    for b, box in enumerate(boxes):
        attractor, adjusted = locate_attractor(box, shape)
        members = nodes_in_box(adjusted, shape)
        clash = members[owner[members] >= 0]
        if clash.size:
            m = int(clash[0])
            raise LabelingError(f"node {m} is claimed by box {int(owner[m])} and box {b}; overlapping boxes are not supported")
        owner[members] = b
        index[members] = attractor
        out.attractors.append(attractor)
        out.boxes.append(adjusted)
        out.members.append(members)
    return out


@dataclass
class FlowLabel:
    """Compact flow label: the target attractor of every node."""

    index: np.ndarray
    shape: GridShape

    def one_hot(self, m: int) -> np.ndarray:
        vec = np.zeros(self.shape.n_nodes)
        vec[self.index[m]] = 1.0
        return vec

    def dense(self) -> np.ndarray:
        """The full (R, C, R*C) target tensor."""
        n = self.shape.n_nodes
        flat = np.zeros((n, n))
        flat[np.arange(n), self.index] = 1.0
        return flat.reshape(self.shape.rows, self.shape.cols, n, order="F")


def build_flow_label(mask: AttractorMask) -> FlowLabel:
    return FlowLabel(index=np.asarray(mask.index, dtype=np.int64).copy(), shape=mask.shape)


def object_mask(mask: AttractorMask) -> np.ndarray:
    """Boolean (R, C) grid: True for nodes that belong to some box."""
    fg = np.zeros(mask.shape.n_nodes, dtype=bool)
    for members in mask.members:
        fg[members] = True
    return unflatten(fg, mask.shape)


def _route(mask: AttractorMask) -> tuple[np.ndarray, np.ndarray]:
    """Shortest bottom/right/left path length to the attractor, and per-node flows (n, 4)."""
    shape = mask.shape
    R, C = shape.dims
    n = shape.n_nodes
    dist = np.full(n, -1)
    flows = np.zeros((n, 4))
    flows[:, 0] = 1.0
    for attractor, members in zip(mask.attractors, mask.members):
        inside = np.zeros(n, dtype=bool)
        inside[members] = True
        dist[attractor] = 0
        queue = deque([attractor])
        while queue:
            v = queue.popleft()
            vi, vj = v % R, v // R
            # nodes u with u + step == v, for each move direction
            for di, dj in NEIGHBOR_STEPS.values():
                ui, uj = vi - di, vj - dj
                if 0 <= ui < R and 0 <= uj < C:
                    u = ui + R * uj
                    if inside[u] and dist[u] < 0:
                        dist[u] = dist[v] + 1
                        queue.append(u)
        stuck = members[dist[members] < 0]
        if stuck.size:
            m = int(stuck[0])
            raise LabelingError(
                f"node {m} cannot reach attractor {attractor} with bottom/right/left moves inside its box"
            )
        for u in members:
            if u == attractor:
                continue
            ui, uj = u % R, u // R
            ks = []
            for k, (di, dj) in NEIGHBOR_STEPS.items():
                wi, wj = ui + di, uj + dj
                if 0 <= wi < R and 0 <= wj < C:
                    w = wi + R * wj
                    if inside[w] and dist[w] == dist[u] - 1:
                        ks.append(k)
            flows[u, 0] = 0.0
            flows[u, ks] = 1.0 / len(ks)
    return dist, flows


def ground_truth_flows(mask: AttractorMask, shape: GridShape | None = None) -> FlowMaps:
    """Flows that walk every box node along shortest paths to its attractor."""
    shape = shape or mask.shape
    if shape.dims != mask.shape.dims:
        raise ValueError(f"mask is {mask.shape.dims}, grid is {shape.dims}")
    _, flows = _route(mask)
    return FlowMaps(*(unflatten(flows[:, k], shape) for k in range(4)))


def max_path_length(mask: AttractorMask) -> int:
    """Longest ground-truth walk to an attractor (0 when there are no boxes)."""
    dist, _ = _route(mask)
    return int(dist.max()) if dist.size else 0
