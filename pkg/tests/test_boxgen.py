import math

import numpy as np
import pytest

from mcn.boxgen import (
    DetectionScore,
    PcaBoxParams,
    clusters_to_boxes,
    evaluate_detections,
    local_link_baseline,
    nodes_to_image_coords,
    pca_box,
)
from mcn.fml import NodeSignals
from mcn.geometry import RotatedBox, rotated_iou, wrap_angle
from mcn.grid import GridShape, build_flow_matrix, node_index
from mcn.labeling import build_attractor_mask, ground_truth_flows, nodes_in_box
from mcn.mcl import ClusterAssignment, MclConfig, extract_clusters, markov_cluster
from mcn.toy.scene import SceneConfig, synth_scene

from conftest import node_box


def eig2(cov):
    """Closed-form eigen-decomposition of a symmetric 2x2 matrix, larger first."""
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    mid, rad = (a + c) / 2, math.hypot((a - c) / 2, b)
    l1, l2 = mid + rad, mid - rad
    if abs(b) > 1e-12:
        v = np.array([b, l1 - a])
    else:
        v = np.array([1.0, 0.0]) if a >= c else np.array([0.0, 1.0])
    return l1, l2, v / np.linalg.norm(v)


def axis_angle_diff(a, b):
    return abs(wrap_angle(a - b))


class TestCoords:
    def test_examples(self):
        shape = GridShape(4, 5)
        assert nodes_to_image_coords([0], shape).tolist() == [[8.0, 8.0]]
        assert nodes_to_image_coords([node_index(2, 3, shape)], shape).tolist() == [[56.0, 40.0]]

    def test_column_shift(self):
        shape = GridShape(4, 5)
        nodes = [node_index(i, j, shape) for i, j in ((0, 0), (1, 2), (3, 1))]
        moved = [m + shape.rows for m in nodes]
        d = nodes_to_image_coords(moved, shape) - nodes_to_image_coords(nodes, shape)
        assert d.tolist() == [[16.0, 0.0]] * 3

    def test_empty(self):
        with pytest.raises(ValueError):
            nodes_to_image_coords([], GridShape(2, 2))


class TestPcaBox:
    def test_square_corners(self):
        box = pca_box([[0, 0], [10, 0], [0, 10], [10, 10]])
        assert (box.cx, box.cy) == (5.0, 5.0)
        assert axis_angle_diff(box.theta, 0.0) < 1e-9 or axis_angle_diff(box.theta, math.pi / 2) < 1e-9

    def test_two_by_five_against_closed_form(self):
        shape = GridShape(2, 5)
        pts = nodes_to_image_coords(range(10), shape)
        box = pca_box(pts)
        d = pts - pts.mean(axis=0)
        l1, l2, v = eig2(d.T @ d / len(pts))
        assert box.w == pytest.approx(2 * 1.75 * math.sqrt(l1))
        assert box.h == pytest.approx(2 * 1.75 * math.sqrt(l2))
        assert box.w / box.h == pytest.approx(pts[:, 0].std() / pts[:, 1].std())
        assert axis_angle_diff(box.theta, math.atan2(v[1], v[0])) < 1e-12

    def test_paper_literal_extent(self):
        pts = nodes_to_image_coords(range(10), GridShape(2, 5))
        box = pca_box(pts, PcaBoxParams(extent_mode="paper_literal"))
        d = pts - pts.mean(axis=0)
        l1, l2, _ = eig2(d.T @ d / len(pts))
        assert box.w == pytest.approx(2 * 1.75 * l1)
        assert box.h == pytest.approx(2 * 1.75 * l2)

    def test_degenerate(self):
        single = pca_box([[40, 24]])
        assert (single.cx, single.cy, single.w, single.h) == (40, 24, 16, 16)
        line = pca_box([[8, 8], [24, 8], [40, 8]])
        assert line.h == 16 and line.w > 16

    def test_rotation_and_translation_equivariant(self, rng):
        pts = rng.normal(size=(30, 2)) * [40, 9] + [100, 60]
        pts -= pts.mean(axis=0) - [100, 60]
        base = pca_box(pts)
        for psi in (0.3, -0.7, 1.2):
            c, s = math.cos(psi), math.sin(psi)
            rot = (pts - [100, 60]) @ np.array([[c, s], [-s, c]]) + [100, 60] + [7, -3]
            box = pca_box(rot)
            assert axis_angle_diff(box.theta, base.theta + psi) < 1e-6
            assert box.w == pytest.approx(base.w) and box.h == pytest.approx(base.h)
            assert box.cx == pytest.approx(base.cx + 7) and box.cy == pytest.approx(base.cy - 3)

    def test_permutation_invariant(self, rng):
        pts = rng.normal(size=(12, 2)) * 20
        a, b = pca_box(pts), pca_box(pts[rng.permutation(12)])
        assert a.same_as(b, tol=1e-9)

    def test_major_axis_points_right(self, rng):
        for _ in range(50):
            box = pca_box(rng.normal(size=(8, 2)) * rng.uniform(1, 30, 2))
            assert math.cos(box.theta) >= 0

    def test_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            PcaBoxParams(scale=0)


class TestClustersToBoxes:
    def test_empty(self):
        a = ClusterAssignment(attractor=np.arange(4), clusters={}, background=[0, 1, 2, 3])
        assert clusters_to_boxes(a, GridShape(2, 2)) == []

    def test_order_follows_attractor(self, two_rect_scene):
        shape, boxes = two_rect_scene
        mask = build_attractor_mask(boxes, shape)
        a = extract_clusters(markov_cluster(build_flow_matrix(ground_truth_flows(mask), shape)).matrix)
        out = clusters_to_boxes(a, shape)
        assert len(out) == 2
        assert sorted(a.clusters) == list(a.clusters)
        assert out[0].cy < out[1].cy
        assert clusters_to_boxes(a, shape) == out

    def test_ground_truth_round_trip_iou(self):
        cfg = SceneConfig()
        checked = 0
        for seed in range(100):
            scene = synth_scene(cfg, 5000 + seed)
            M0 = build_flow_matrix(ground_truth_flows(scene.mask), scene.shape)
            a = extract_clusters(markov_cluster(M0, MclConfig(max_iters=8)).matrix)
            pred = clusters_to_boxes(a, scene.shape)
            by_attractor = dict(zip(scene.mask.attractors, scene.boxes))
            for attractor, box in zip(sorted(a.clusters), pred):
                gt = by_attractor[attractor]
                if min(gt.w, gt.h) >= 2 * scene.shape.stride and max(gt.w, gt.h) >= 3 * scene.shape.stride:
                    assert rotated_iou(box, gt) >= 0.5
                    checked += 1
        assert checked >= 100


class TestIou:
    def test_self_and_symmetry(self, rng):
        for _ in range(30):
            a = RotatedBox(*rng.uniform(20, 80, 2), *rng.uniform(5, 40, 2), rng.uniform(-3, 3))
            b = RotatedBox(*rng.uniform(20, 80, 2), *rng.uniform(5, 40, 2), rng.uniform(-3, 3))
            assert rotated_iou(a, a) == pytest.approx(1.0)
            assert rotated_iou(a, b) == pytest.approx(rotated_iou(b, a))
            assert 0.0 <= rotated_iou(a, b) <= 1.0

    def test_half_overlap(self):
        a = RotatedBox(10, 10, 20, 20)
        b = RotatedBox(20, 10, 20, 20)
        assert rotated_iou(a, b) == pytest.approx(1 / 3)

    def test_rotation_about_center(self):
        a = RotatedBox(0, 0, 10, 10, 0.0)
        b = RotatedBox(0, 0, 10, 10, math.pi / 4)
        inter = 100 * (2 * math.sqrt(2) - 2)  # regular octagon
        assert rotated_iou(a, b) == pytest.approx(inter / (200 - inter))


class TestEvaluate:
    def test_perfect(self):
        boxes = [RotatedBox(20, 20, 30, 10, 0.2), RotatedBox(80, 60, 40, 16, -0.4)]
        s = evaluate_detections(boxes, boxes)
        assert (s.precision, s.recall, s.f_score) == (1.0, 1.0, 1.0)

    def test_no_predictions(self):
        s = evaluate_detections([], [RotatedBox(20, 20, 30, 10)])
        assert (s.precision, s.recall, s.f_score) == (0.0, 0.0, 0.0)

    def test_one_to_one(self):
        gt = [RotatedBox(20, 20, 20, 20), RotatedBox(36, 20, 20, 20)]
        pred = [RotatedBox(23, 20, 20, 20)]
        s = evaluate_detections(pred, gt, 0.3)
        assert [(i, j) for i, j, _ in s.matches] == [(0, 0)]
        assert s.precision == 1.0 and s.recall == 0.5
        assert s.f_score == pytest.approx(2 / 3)

    def test_threshold_range(self):
        with pytest.raises(ValueError):
            evaluate_detections([], [], 1.0)

    def test_f_convention(self):
        assert DetectionScore.from_counts(0, 3, 2).f_score == 0.0


def fused_scene():
    """Two boxes side by side on one row band with a strong link across the seam."""
    shape = GridShape(6, 10)
    boxes = [node_box(2, 3, 1, 3), node_box(2, 3, 4, 6)]
    P = np.zeros((6, 10))
    P[2:4, 1:7] = 1.0
    S1, S2, S3 = (np.zeros((6, 10)) for _ in range(3))
    S1[2, 1:7] = 0.9
    S2[2:4, 1:6] = 0.9
    S3[2:4, 2:7] = 0.9
    return shape, boxes, NodeSignals(P, S1, S2, S3)


class TestBaseline:
    def test_all_background(self):
        z = np.zeros((4, 4))
        a = local_link_baseline(NodeSignals(z, z, z, z))
        assert a.clusters == {} and a.background == list(range(16))

    def test_fuses_adjacent_boxes(self):
        shape, boxes, sig = fused_scene()
        a = local_link_baseline(sig, 0.5, 0.5)
        assert len(a.clusters) == 1
        (members,) = a.clusters.values()
        assert len(members) == 12

    def test_directed_flows_keep_them_apart(self):
        shape, boxes, _ = fused_scene()
        mask = build_attractor_mask(boxes, shape)
        a = extract_clusters(markov_cluster(build_flow_matrix(ground_truth_flows(mask), shape)).matrix)
        assert len(a.clusters) == 2
        for box, attractor in zip(boxes, mask.attractors):
            assert a.clusters[attractor] == nodes_in_box(box, shape).tolist()

    def test_lowest_id_is_attractor(self):
        shape, _, sig = fused_scene()
        a = local_link_baseline(sig)
        assert list(a.clusters) == [node_index(2, 1, shape)]

    def test_thresholds_checked(self):
        z = np.zeros((2, 2))
        with pytest.raises(ValueError):
            local_link_baseline(NodeSignals(z, z, z, z), link_threshold=1.0)
