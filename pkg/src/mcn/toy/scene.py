"""Synthetic scenes: non-overlapping rotated boxes on a lattice plus per-node features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mcn.errors import LabelingError, McnError
from mcn.formats import Scene
from mcn.geometry import RotatedBox
from mcn.grid import GridShape, unflatten
from mcn.labeling import (
    AttractorMask,
    FlowLabel,
    build_attractor_mask,
    build_flow_label,
    max_path_length,
    node_centers,
    object_mask,
)

N_FEATURES = 8


@dataclass(frozen=True)
class SceneConfig:
    rows: int = 16
    cols: int = 16
    stride: int = 16
    box_count: tuple[int, int] = (1, 3)
    box_length: tuple[int, int] = (3, 7)  # nodes along the major axis
    box_thickness: tuple[int, int] = (2, 3)  # nodes along the minor axis
    angles: tuple[float, ...] = (0.0, math.pi / 12, -math.pi / 12, math.pi / 2)
    noise: float = 0.1
    gap: int = 1  # free nodes required between boxes
    max_path: int | None = 9  # longest allowed ground-truth walk to an attractor
    max_tries: int = 200

    @property
    def grid(self) -> GridShape:
        return GridShape(self.rows, self.cols, self.stride, self.stride / 2)


@dataclass
class ToyScene:
    shape: GridShape
    boxes: list[RotatedBox]
    features: np.ndarray  # (R, C, F)
    mask: AttractorMask
    label: FlowLabel = field(init=False)
    y_o: np.ndarray = field(init=False)

    def __post_init__(self):
        self.label = build_flow_label(self.mask)
        self.y_o = object_mask(self.mask).astype(np.float64)

    def to_scene(self) -> Scene:
        return Scene(
            width=self.shape.cols * self.shape.stride,
            height=self.shape.rows * self.shape.stride,
            stride=self.shape.stride,
            boxes=list(self.boxes),
        )


def _dilate(members: np.ndarray, shape: GridShape, gap: int) -> np.ndarray:
    grid = np.zeros(shape.n_nodes, dtype=bool)
    grid[members] = True
    g = unflatten(grid, shape)
    out = g.copy()
    for di in range(-gap, gap + 1):
        for dj in range(-gap, gap + 1):
            shifted = np.zeros_like(g)
            src = g[max(0, -di) : g.shape[0] - max(0, di), max(0, -dj) : g.shape[1] - max(0, dj)]
            shifted[max(0, di) : max(0, di) + src.shape[0], max(0, dj) : max(0, dj) + src.shape[1]] = src
            out |= shifted
    return np.flatnonzero(out.ravel(order="F"))


def _random_box(cfg: SceneConfig, rng: np.random.Generator) -> RotatedBox:
    U = cfg.stride
    length = int(rng.integers(cfg.box_length[0], cfg.box_length[1] + 1))
    thick = int(rng.integers(cfg.box_thickness[0], cfg.box_thickness[1] + 1))
    theta = float(cfg.angles[int(rng.integers(len(cfg.angles)))])
    w, h = length * U, thick * U
    # half-size of the axis-aligned bounding rectangle
    hx = 0.5 * (abs(w * math.cos(theta)) + abs(h * math.sin(theta)))
    hy = 0.5 * (abs(w * math.sin(theta)) + abs(h * math.cos(theta)))
    W, H = cfg.cols * U, cfg.rows * U
    if 2 * hx > W or 2 * hy > H:
        raise McnError(f"box of {length}x{thick} nodes does not fit a {cfg.rows}x{cfg.cols} grid")
    # centers sit on the half-stride lattice so a box of k nodes covers exactly
    # k node centers along each axis when it is axis-aligned
    horizontal = abs(math.sin(theta)) < 1e-9
    vertical = abs(math.cos(theta)) < 1e-9
    nx = length if horizontal else thick if vertical else 0
    ny = thick if horizontal else length if vertical else 0
    cx = _snap(rng.uniform(hx, W - hx), U, nx, hx, W)
    cy = _snap(rng.uniform(hy, H - hy), U, ny, hy, H)
    return RotatedBox(cx, cy, float(w), float(h), theta)


def _snap(value: float, U: int, n_nodes: int, half: float, limit: float) -> float:
    """Round to a node center (odd ``n_nodes``), a cell edge (even), or either (0)."""
    step = U if n_nodes else U / 2
    base = U / 2 if n_nodes % 2 else 0.0
    lo = math.ceil((half - base) / step)
    hi = math.floor((limit - half - base) / step)
    k = min(max(round((value - base) / step), lo), hi)
    return float(base + k * step)


def place_boxes(cfg: SceneConfig, rng: np.random.Generator) -> list[RotatedBox]:
    shape = cfg.grid
    count = int(rng.integers(cfg.box_count[0], cfg.box_count[1] + 1))
    boxes: list[RotatedBox] = []
    blocked = np.zeros(shape.n_nodes, dtype=bool)
    tries = 0
    while len(boxes) < count:
        tries += 1
        if tries > cfg.max_tries:
            raise McnError(f"could not place {count} boxes without overlap after {cfg.max_tries} tries")
        box = _random_box(cfg, rng)
        try:
            single = build_attractor_mask([box], shape)
            members = single.members[0]
            if members.size < 2 or blocked[members].any():
                continue
            if cfg.max_path is not None and max_path_length(single) > cfg.max_path:
                continue
        except LabelingError:
            continue
        boxes.append(box)
        blocked[_dilate(members, shape, cfg.gap)] = True
    return boxes


def scene_features(shape: GridShape, mask: AttractorMask, cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-node features, shape (R, C, 8).

    Channels: noisy in-box indicator; cos 2theta and sin 2theta of the covering
    box; signed horizontal distance to the attractor column; vertical distance
    to the box's lowest row; distance to the nearest box edge; two pure-noise
    channels. Geometric channels are squashed with tanh and are zero outside
    boxes.
    """
    n = shape.n_nodes
    U = shape.stride
    feats = np.zeros((n, N_FEATURES))
    centers = node_centers(shape)
    rows = np.arange(n) % shape.rows
    cols = np.arange(n) // shape.rows
    for attractor, box, members in zip(mask.attractors, mask.boxes, mask.members):
        b = box.normalized()
        feats[members, 0] = 1.0
        feats[members, 1] = math.cos(2 * b.theta)
        feats[members, 2] = math.sin(2 * b.theta)
        a_col = attractor // shape.rows
        feats[members, 3] = np.tanh((a_col - cols[members]) / 2.0)
        bottom = rows[members].max()
        feats[members, 4] = np.tanh((bottom - rows[members]) / 2.0)
        loc = np.abs(box.local(centers[members]))
        edge = np.minimum(box.w / 2 - loc[:, 0], box.h / 2 - loc[:, 1])
        feats[members, 5] = np.tanh(np.maximum(edge, 0.0) / U)
    feats[:, 0] += cfg.noise * rng.standard_normal(n)
    feats[:, 6:] = rng.standard_normal((n, N_FEATURES - 6))
    return feats.reshape(shape.rows, shape.cols, N_FEATURES, order="F")


def synth_scene(cfg: SceneConfig, seed: int) -> ToyScene:
    """Deterministic scene for a given config and seed."""
    rng = np.random.default_rng(seed)
    shape = cfg.grid
    boxes = place_boxes(cfg, rng)
    mask = build_attractor_mask(boxes, shape)
    feats = scene_features(shape, mask, cfg, rng)
    return ToyScene(shape=shape, boxes=boxes, features=feats, mask=mask)
