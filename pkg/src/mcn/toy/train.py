"""End-to-end training of the toy predictor through flow mapping and Markov clustering."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from mcn.boxgen import DetectionScore, PcaBoxParams, clusters_to_boxes, evaluate_detections
from mcn.errors import ClusteringError, TrainingError
from mcn.fml import FmlParams, NodeSignals, fml_backward, fml_forward
from mcn.grid import build_flow_matrix, flatten, flow_matrix_backward
from mcn.mcl import TEST_CONFIG, TRAIN_CONFIG, ExtractConfig, MclConfig, extract_clusters, markov_cluster
from mcn.mcl_grad import flow_loss, mcl_backward
from mcn.toy.model import WEIGHT_NAMES, ToyPredictor, predict, predictor_backward
from mcn.toy.scene import SceneConfig, ToyScene, synth_scene

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
PARAM_FLOOR = 1e-3


@dataclass
class TrainConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    steps: int = 2000
    lr: float = 1e-2
    momentum: float = 0.9
    seed: int = 0
    grad_mode: str = "exact"
    hidden: int = 16
    mcl: MclConfig = TRAIN_CONFIG
    n_train_scenes: int = 200
    object_weight: float = 1.0
    clip_norm: float | None = 5.0


@dataclass
class TrainState:
    model: ToyPredictor
    velocity: dict[str, np.ndarray]
    step: int = 0
    history: list[dict] = field(default_factory=list)

    @classmethod
    def fresh(cls, model: ToyPredictor) -> "TrainState":
        vel = {name: np.zeros_like(w) for name, w in model.weights().items()}
        vel["fml"] = np.zeros(3)
        return cls(model=model, velocity=vel)


def object_loss(P: np.ndarray, y_o: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy of objectness and its gradient w.r.t. ``P``."""
    P = np.asarray(P, dtype=np.float64)
    y = np.asarray(y_o, dtype=np.float64)
    if P.shape != y.shape:
        raise ValueError(f"P is {P.shape}, object mask is {y.shape}")
    n = P.size
    lo = P > LOG_CLAMP
    hi = (1.0 - P) > LOG_CLAMP
    loss = -(y * np.log(np.maximum(P, LOG_CLAMP)) + (1.0 - y) * np.log(np.maximum(1.0 - P, LOG_CLAMP)))
    grad = np.zeros_like(P)
    grad = grad - np.where(lo, y / np.where(lo, P, 1.0), 0.0)
    grad = grad + np.where(hi, (1.0 - y) / np.where(hi, 1.0 - P, 1.0), 0.0)
    return float(loss.mean()), grad / n


@dataclass
class StepResult:
    C_o: float
    C_f: float
    C_total: float
    grads: dict[str, np.ndarray]
    iterations: int


def losses_and_grads(
    model: ToyPredictor,
    scene: ToyScene,
    mcl: MclConfig = TRAIN_CONFIG,
    grad_mode: str = "exact",
    object_weight: float = 1.0,
) -> StepResult:
    """Forward pass through the whole pipeline, then backpropagate ``C_total``."""
    shape = scene.shape
    sig, cache = predict(model, scene.features, return_cache=True)
    flows = fml_forward(sig, model.fml)
    M0 = build_flow_matrix(flows, shape)
    res = markov_cluster(M0, mcl, record_tape=True)
    C_f = flow_loss(res.matrix, scene.label).C_f
    C_o, g_P_obj = object_loss(sig.P, scene.y_o)

    g_M0 = mcl_backward(res.tape, scene.label, grad_mode)
    g_flows = flow_matrix_backward(g_M0, shape)
    g_fml = fml_backward(sig, model.fml, g_flows)
    g_sig = NodeSignals(g_fml.P + object_weight * g_P_obj, g_fml.S1, g_fml.S2, g_fml.S3)
    grads = predictor_backward(model, cache, g_sig)
    grads["fml"] = g_fml.params
    return StepResult(C_o, C_f, object_weight * C_o + C_f, grads, res.iterations_run)


def total_loss(model: ToyPredictor, scene: ToyScene, mcl: MclConfig = TRAIN_CONFIG, object_weight: float = 1.0) -> float:
    sig = predict(model, scene.features)
    flows = fml_forward(sig, model.fml)
    res = markov_cluster(build_flow_matrix(flows, scene.shape), mcl)
    C_o, _ = object_loss(sig.P, scene.y_o)
    return object_weight * C_o + flow_loss(res.matrix, scene.label).C_f


def train_step(state: TrainState, scene: ToyScene, cfg: TrainConfig) -> TrainState:
    """One SGD-with-momentum update on a single scene; appends to the loss history."""
    out = losses_and_grads(state.model, scene, cfg.mcl, cfg.grad_mode, cfg.object_weight)
    if not all(np.isfinite(v) for v in (out.C_o, out.C_f, out.C_total)):
        raise TrainingError(f"non-finite loss at step {state.step}: C_o={out.C_o}, C_f={out.C_f}")
    grads = out.grads
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingError(f"non-finite gradient at step {state.step}")
    norm = float(np.sqrt(sum(np.sum(g**2) for g in grads.values())))
    if cfg.clip_norm is not None and norm > cfg.clip_norm:
        grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}

    model = state.model
    for name in WEIGHT_NAMES:
        v = state.velocity[name] = cfg.momentum * state.velocity[name] + grads[name]
        setattr(model, name, getattr(model, name) - cfg.lr * v)
    v = state.velocity["fml"] = cfg.momentum * state.velocity["fml"] + grads["fml"]
    if cfg.lr != 0:
        alpha, beta, gamma = model.fml.as_array() - cfg.lr * v
        model.fml = FmlParams(max(alpha, PARAM_FLOOR), max(beta, PARAM_FLOOR), gamma)

    state.history.append(
        {"step": state.step, "C_o": out.C_o, "C_f": out.C_f, "C_total": out.C_total, "grad_norm": norm}
    )
    state.step += 1
    return state


def training_scenes(cfg: TrainConfig) -> list[ToyScene]:
    base = 1_000_003 * (cfg.seed + 1)
    return [synth_scene(cfg.scene, base + k) for k in range(cfg.n_train_scenes)]


def heldout_scenes(scene_cfg: SceneConfig, count: int = 50, seed: int = 0) -> list[ToyScene]:
    base = 7_777_777 + 1_000_003 * (seed + 1)
    return [synth_scene(scene_cfg, base + k) for k in range(count)]


def train(cfg: TrainConfig, scenes: list[ToyScene] | None = None, progress_every: int = 0):
    """Train from a seeded initialization; returns ``(model, metrics)``."""
    scenes = scenes if scenes is not None else training_scenes(cfg)
    model = ToyPredictor.init(n_features=scenes[0].features.shape[2], hidden=cfg.hidden, seed=cfg.seed)
    state = TrainState.fresh(model)
    order = np.random.default_rng(cfg.seed).permutation(len(scenes) * max(1, -(-cfg.steps // len(scenes))))
    start = time.perf_counter()
    for step in range(cfg.steps):
        train_step(state, scenes[order[step] % len(scenes)], cfg)
        if progress_every and (step + 1) % progress_every == 0:
            recent = np.mean([h["C_total"] for h in state.history[-progress_every:]])
            log.info("step %d  C_total %.4f", step + 1, recent)
    metrics = {
        "history": state.history,
        "seconds": time.perf_counter() - start,
        "steps": cfg.steps,
    }
    return state.model, metrics


@dataclass
class EvalResult:
    score: DetectionScore
    node_accuracy: float
    fallback_scenes: int = 0


def infer(model: ToyPredictor, features: np.ndarray, shape, mcl: MclConfig = TEST_CONFIG, extract: ExtractConfig = ExtractConfig()):
    """Inference path: predictor -> flows -> clustering -> cluster assignment."""
    sig = predict(model, features)
    flows = fml_forward(sig, model.fml)
    M0 = build_flow_matrix(flows, shape)
    fallback = False
    try:
        res = markov_cluster(M0, mcl)
    except ClusteringError:
        # a column lost all its mass to pruning; rerun without pruning
        res = markov_cluster(M0, replace(mcl, prune_threshold=0.0))
        fallback = True
    assignment = extract_clusters(res.matrix, sig.P, extract)
    return sig, assignment, fallback


def evaluate_model(
    model: ToyPredictor,
    scenes: list[ToyScene],
    mcl: MclConfig = TEST_CONFIG,
    iou_threshold: float = 0.5,
    box_params: PcaBoxParams = PcaBoxParams(),
) -> EvalResult:
    tp = n_pred = n_gt = 0
    correct = total = fallbacks = 0
    for scene in scenes:
        _, assignment, fb = infer(model, scene.features, scene.shape, mcl)
        fallbacks += fb
        boxes = clusters_to_boxes(assignment, scene.shape, box_params)
        s = evaluate_detections(boxes, scene.boxes, iou_threshold)
        tp += len(s.matches)
        n_pred += s.n_pred
        n_gt += s.n_gt
        labels = assignment.labels()
        correct += int(np.sum(labels == flatten(scene.mask.grid())))
        total += labels.size
    return EvalResult(DetectionScore.from_counts(tp, n_pred, n_gt), correct / total, fallbacks)
