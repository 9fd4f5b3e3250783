"""Markov clustering over stochastic flow graphs.

Per-node flow predictions on a lattice are turned into a column-stochastic
flow matrix, clustered by expand/inflate/prune iterations, and converted to
rotated boxes. Gradients of the flow loss are propagated back through the
clustering iterations so the whole pipeline can be trained.
"""

__version__ = "0.1.0"

from mcn.grid import (
    FlowMaps,
    GridShape,
    ValidationReport,
    build_flow_matrix,
    node_coords,
    node_index,
    validate_flow_maps,
)
from mcn.geometry import RotatedBox
from mcn.mcl import (
    ClusterAssignment,
    ExtractConfig,
    MclConfig,
    MclTape,
    expand,
    extract_clusters,
    inflate,
    markov_cluster,
    prune,
)
from mcn.mcl_grad import FlowLossResult, finite_diff_grad, flow_loss, mcl_backward
from mcn.fml import FmlParams, NodeSignals, fml_backward, fml_forward, mu
from mcn.labeling import (
    AttractorMask,
    FlowLabel,
    build_attractor_mask,
    build_flow_label,
    ground_truth_flows,
    locate_attractor,
    nodes_in_box,
    object_mask,
)
from mcn.boxgen import (
    DetectionScore,
    PcaBoxParams,
    clusters_to_boxes,
    evaluate_detections,
    local_link_baseline,
    nodes_to_image_coords,
    pca_box,
    rotated_iou,
)

__all__ = [
    "AttractorMask",
    "ClusterAssignment",
    "DetectionScore",
    "ExtractConfig",
    "FlowLabel",
    "FlowLossResult",
    "FlowMaps",
    "FmlParams",
    "GridShape",
    "MclConfig",
    "MclTape",
    "NodeSignals",
    "PcaBoxParams",
    "RotatedBox",
    "ValidationReport",
    "build_attractor_mask",
    "build_flow_label",
    "build_flow_matrix",
    "clusters_to_boxes",
    "evaluate_detections",
    "expand",
    "extract_clusters",
    "finite_diff_grad",
    "flow_loss",
    "fml_backward",
    "fml_forward",
    "ground_truth_flows",
    "inflate",
    "local_link_baseline",
    "locate_attractor",
    "markov_cluster",
    "mcl_backward",
    "mu",
    "node_coords",
    "node_index",
    "nodes_in_box",
    "nodes_to_image_coords",
    "object_mask",
    "pca_box",
    "prune",
    "rotated_iou",
    "validate_flow_maps",
]
