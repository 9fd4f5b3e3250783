"""Clusters to rotated boxes, detection scoring, and the local-link baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from mcn.fml import NodeSignals
from mcn.geometry import RotatedBox, rotated_iou
from mcn.grid import NEIGHBOR_STEPS, GridShape, flatten
from mcn.mcl import ClusterAssignment

EXTENT_MODES = ("stddev", "paper_literal")


@dataclass(frozen=True)
class PcaBoxParams:
    scale: float = 1.75
    extent_mode: str = "stddev"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.extent_mode not in EXTENT_MODES:
            raise ValueError(f"extent_mode must be one of {EXTENT_MODES}, got {self.extent_mode!r}")


def nodes_to_image_coords(nodes, shape: GridShape) -> np.ndarray:
    """(x, y) pixel centers; the column maps to x and the row to y."""
    nodes = np.asarray(list(nodes), dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("cannot map an empty node set to image coordinates")
    i, j = nodes % shape.rows, nodes // shape.rows
    return np.stack([j * shape.stride + shape.offset, i * shape.stride + shape.offset], axis=1).astype(np.float64)


def pca_box(points, params: PcaBoxParams = PcaBoxParams(), stride: float = 16.0) -> RotatedBox:
    """Oriented box from the principal axes of a point set.

    Half-extents are ``scale * e_k`` where ``e_k`` is the standard deviation
    along axis k (``stddev``) or the raw covariance eigenvalue
    (``paper_literal``). Half-extents never drop below ``stride / 2``, so a
    single point gives a ``stride``-sided square.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    center = pts.mean(axis=0)
    floor = stride / 2
    if len(pts) == 1:
        return RotatedBox(float(center[0]), float(center[1]), 2 * floor, 2 * floor, 0.0)
    d = pts - center
    cov = d.T @ d / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    major = evecs[:, order[0]]
    if major[0] < 0 or (major[0] == 0 and major[1] < 0):
        major = -major
    extent = np.sqrt(evals) if params.extent_mode == "stddev" else evals
    half = np.maximum(params.scale * extent, floor)
    theta = math.atan2(major[1], major[0])
    if theta <= -math.pi / 2:
        theta += math.pi
    return RotatedBox(float(center[0]), float(center[1]), float(2 * half[0]), float(2 * half[1]), theta)


def clusters_to_boxes(
    assignment: ClusterAssignment, shape: GridShape, params: PcaBoxParams = PcaBoxParams()
) -> list[RotatedBox]:
    """One box per foreground cluster, in ascending attractor order."""
    return [
        pca_box(nodes_to_image_coords(assignment.clusters[a], shape), params, stride=shape.stride)
        for a in sorted(assignment.clusters)
    ]


@dataclass
class DetectionScore:
    precision: float
    recall: float
    f_score: float
    matches: list[tuple[int, int, float]] = field(default_factory=list)
    n_pred: int = 0
    n_gt: int = 0

    @classmethod
    def from_counts(cls, tp: int, n_pred: int, n_gt: int, matches=None) -> "DetectionScore":
        if n_pred == 0 and n_gt == 0:
            p = r = 1.0
        else:
            p = tp / n_pred if n_pred else 0.0
            r = tp / n_gt if n_gt else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f, list(matches or []), n_pred, n_gt)


def evaluate_detections(pred: list[RotatedBox], gt: list[RotatedBox], iou_threshold: float = 0.5) -> DetectionScore:
    """Greedy one-to-one matching by descending IoU."""
    if not 0 < iou_threshold < 1:
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    pairs = []
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            iou = rotated_iou(p, g)
            if iou >= iou_threshold:
                pairs.append((iou, i, j))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p, used_g, matches = set(), set(), []
    for iou, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        matches.append((i, j, iou))
    return DetectionScore.from_counts(len(matches), len(pred), len(gt), matches)


def local_link_baseline(sig: NodeSignals, link_threshold: float = 0.5, fg_threshold: float = 0.5) -> ClusterAssignment:
    """Connected components of foreground nodes joined by undirected strong links."""
    if not (0 < link_threshold < 1 and 0 < fg_threshold < 1):
        raise ValueError("thresholds must lie in (0, 1)")
    R, C = sig.P.shape
    n = R * C
    fg = flatten(sig.P) > fg_threshold
    rows, cols = [], []
    for k, (di, dj) in NEIGHBOR_STEPS.items():
        score = flatten(sig.S[k - 1])
        for m in np.flatnonzero(fg & (score > link_threshold)):
            i, j = m % R + di, m // R + dj
            if 0 <= i < R and 0 <= j < C:
                t = i + R * j
                if fg[t]:
                    rows.append(m)
                    cols.append(t)
    graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    attractor = np.arange(n)
    clusters: dict[int, list[int]] = {}
    for label in np.unique(comp[fg]):
        members = np.flatnonzero((comp == label) & fg)
        a = int(members.min())
        attractor[members] = a
        clusters[a] = members.tolist()
    background = np.flatnonzero(~fg).tolist()
    return ClusterAssignment(attractor=attractor, clusters=dict(sorted(clusters.items())), background=background)


__all__ = [
    "DetectionScore",
    "PcaBoxParams",
    "clusters_to_boxes",
    "evaluate_detections",
    "local_link_baseline",
    "nodes_to_image_coords",
    "pca_box",
    "rotated_iou",
]
