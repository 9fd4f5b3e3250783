"""Request-level operations shared by the command line and the HTTP service.

Each function takes and returns plain JSON-compatible data (or container
bytes), so the same call serves an in-process pipe and a network request.
"""

from __future__ import annotations

from dataclasses import dataclass

from mcn.boxgen import PcaBoxParams, clusters_to_boxes, evaluate_detections
from mcn.errors import FlowValidationError
from mcn.fml import NodeSignals
from mcn.formats import (
    Scene,
    boxes_from_detections,
    cluster_json,
    detections_json,
    dumps_sfg,
    dumps_sig,
    grid_from_json,
    loads_sfg,
)
from mcn.grid import GridShape, build_flow_matrix, validate_flow_maps
from mcn.labeling import ground_truth_flows
from mcn.mcl import ClusterAssignment, ExtractConfig, MclConfig, extract_clusters, markov_cluster
from mcn.toy.scene import SceneConfig, ToyScene, synth_scene


@dataclass
class Generated:
    scene: ToyScene
    sfg: bytes
    sig: bytes

    @property
    def scene_json(self) -> dict:
        return self.scene.to_scene().to_json()


def oracle_signals(scene: ToyScene) -> NodeSignals:
    """Objectness from the object mask and link scores from the ground-truth flows."""
    fm = ground_truth_flows(scene.mask)
    return NodeSignals(scene.y_o.copy(), fm.f1, fm.f2, fm.f3)


def generate(shape: GridShape, seed: int, box_count: tuple[int, int] = (1, 3), max_path: int | None = 6) -> Generated:
    """Synthetic scene with its ground-truth flows and oracle signals.

    ``max_path`` bounds the longest ground-truth walk; a walk of length L
    needs L - 1 clustering iterations to reach its attractor.
    """
    cfg = SceneConfig(rows=shape.rows, cols=shape.cols, stride=shape.stride, box_count=box_count, max_path=max_path)
    scene = synth_scene(cfg, seed)
    fm = ground_truth_flows(scene.mask)
    return Generated(scene, dumps_sfg(fm, scene.shape), dumps_sig(oracle_signals(scene), scene.shape))


def cluster_sfg(data: bytes, cfg: MclConfig, source: str = "<bytes>", min_cluster_size: int = 1) -> dict:
    fm, shape = loads_sfg(data, source)
    report = validate_flow_maps(fm)
    if not report.passed:
        raise FlowValidationError(f"{source}: {report.summary()}")
    M0 = build_flow_matrix(fm, shape, validate=False)
    res = markov_cluster(M0, cfg)
    assignment = extract_clusters(res.matrix, cfg=ExtractConfig(min_cluster_size=min_cluster_size))
    return cluster_json(assignment, res.iterations_run, shape)


def boxes_from_clusters(data: dict, params: PcaBoxParams = PcaBoxParams()) -> list[dict]:
    if "grid" not in data:
        raise FlowValidationError("cluster JSON carries no grid; cannot place boxes")
    shape = grid_from_json(data["grid"])
    assignment = ClusterAssignment.from_json(data)
    boxes = clusters_to_boxes(assignment, shape, params)
    return detections_json(boxes, sorted(assignment.clusters))


def score_detections(detections: list[dict], scene: dict, iou_threshold: float = 0.5) -> dict:
    gt = Scene.from_json(scene).boxes
    pred = boxes_from_detections(detections)
    s = evaluate_detections(pred, gt, iou_threshold)
    return {
        "precision": s.precision,
        "recall": s.recall,
        "f_score": s.f_score,
        "n_pred": s.n_pred,
        "n_gt": s.n_gt,
        "matches": [{"pred": i, "gt": j, "iou": iou} for i, j, iou in s.matches],
    }


def format_score(score: dict) -> str:
    return f"precision {score['precision']:.4f}  recall {score['recall']:.4f}  f_score {score['f_score']:.4f}"


__all__ = [
    "Generated",
    "boxes_from_clusters",
    "cluster_sfg",
    "format_score",
    "generate",
    "oracle_signals",
    "score_detections",
]

