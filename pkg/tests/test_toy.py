import math

import numpy as np
import pytest

from mcn.errors import McnError
from mcn.fml import FmlParams, NodeSignals
from mcn.labeling import build_attractor_mask
from mcn.mcl import MclConfig
from mcn.toy.model import ToyPredictor, predict, predictor_backward
from mcn.toy.scene import N_FEATURES, SceneConfig, synth_scene
from mcn.toy.train import (
    TrainConfig,
    TrainState,
    evaluate_model,
    heldout_scenes,
    losses_and_grads,
    object_loss,
    total_loss,
    train,
    train_step,
)

SMALL = SceneConfig(rows=4, cols=4, box_count=(1, 1), box_length=(2, 3), box_thickness=(1, 2))
EIGHT = SceneConfig(rows=8, cols=8, box_count=(1, 2), box_length=(3, 5))


class TestScene:
    def test_deterministic(self):
        a, b = synth_scene(SceneConfig(), 11), synth_scene(SceneConfig(), 11)
        assert np.array_equal(a.features, b.features)
        assert a.boxes == b.boxes

    def test_no_boxes(self):
        scene = synth_scene(SceneConfig(box_count=(0, 0)), 3)
        assert scene.boxes == []
        assert scene.y_o.sum() == 0
        assert np.isfinite(scene.features).all()
        assert scene.features.shape == (16, 16, N_FEATURES)

    def test_boxes_label_cleanly(self):
        cfg = SceneConfig()
        for seed in range(100):
            scene = synth_scene(cfg, seed)
            mask = build_attractor_mask(scene.boxes, scene.shape)
            assert all(len(m) >= 2 for m in mask.members)
            assert 1 <= len(scene.boxes) <= 3

    def test_impossible_request(self):
        with pytest.raises(McnError):
            synth_scene(SceneConfig(rows=4, cols=4, box_count=(5, 5), max_tries=20), 0)


class TestPredictor:
    def test_zero_weights(self):
        sig = predict(ToyPredictor.zeros(), np.random.default_rng(0).normal(size=(5, 6, 8)))
        for plane in sig.planes:
            assert np.array_equal(plane, np.full((5, 6), 0.5))

    def test_locality(self, rng):
        model = ToyPredictor.init(seed=1)
        feats = rng.normal(size=(7, 7, 8))
        base = predict(model, feats).stack()
        moved = feats.copy()
        moved[5, 5] += 3.0
        out = predict(model, moved).stack()
        changed = np.any(out != base, axis=0)
        assert changed[4:7, 4:7].all()
        changed[4:7, 4:7] = False
        assert not changed.any()

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            predict(ToyPredictor.zeros(n_features=8), np.zeros((3, 3, 5)))

    def test_backward_finite_differences(self, rng):
        model = ToyPredictor.init(seed=2, scale=1.0)
        feats = rng.normal(size=(4, 5, 8))
        up = [rng.standard_normal((4, 5)) for _ in range(4)]

        def loss(m):
            return sum(float(np.sum(u * p)) for u, p in zip(up, predict(m, feats).planes))

        _, cache = predict(model, feats, return_cache=True)
        grads = predictor_backward(model, cache, NodeSignals(*up))
        eps = 1e-6
        for name, g in grads.items():
            W = getattr(model, name)
            fd = np.zeros_like(W)
            for idx in np.ndindex(W.shape):
                orig = W[idx]
                W[idx] = orig + eps
                hi = loss(model)
                W[idx] = orig - eps
                lo = loss(model)
                W[idx] = orig
                fd[idx] = (hi - lo) / (2 * eps)
            rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)
            assert rel.max() < 1e-5, name

    def test_json_round_trip(self, tmp_path):
        model = ToyPredictor.init(seed=4)
        model.fml = FmlParams(2.0, 7.0, 0.25)
        path = tmp_path / "model.json"
        model.save(path)
        back = ToyPredictor.load(path)
        for name, w in model.weights().items():
            assert np.array_equal(getattr(back, name), w)
        assert back.fml == model.fml


class TestObjectLoss:
    def test_exact_labels(self):
        y = np.array([[0.0, 1.0], [1.0, 0.0]])
        C_o, _ = object_loss(y, y)
        assert C_o <= 1e-9

    def test_half(self):
        C_o, _ = object_loss(np.full((3, 3), 0.5), np.eye(3))
        assert C_o == pytest.approx(math.log(2))

    def test_gradient(self, rng):
        P = rng.uniform(0.05, 0.95, (4, 4))
        y = (rng.random((4, 4)) > 0.5).astype(float)
        _, g = object_loss(P, y)
        np.testing.assert_allclose(g, (P - y) / (P * (1 - P)) / 16, rtol=1e-12)
        eps = 1e-6
        fd = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            hi, lo = P.copy(), P.copy()
            hi[idx] += eps
            lo[idx] -= eps
            fd[idx] = (object_loss(hi, y)[0] - object_loss(lo, y)[0]) / (2 * eps)
        np.testing.assert_allclose(g, fd, rtol=1e-5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            object_loss(np.zeros((2, 2)), np.zeros((2, 3)))


def _perturbed(model, direction, t):
    out = model.copy()
    for name in ("W1", "b1", "W2", "b2"):
        setattr(out, name, getattr(model, name) + t * direction[name])
    a, b, g = model.fml.as_array() + t * direction["fml"]
    out.fml = FmlParams(a, b, g)
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_end_to_end_directional_derivative(seed):
    scene = synth_scene(SMALL, seed)
    cfg = MclConfig(max_iters=2, early_stop=False)
    model = ToyPredictor.init(seed=seed, scale=1.0)
    rng = np.random.default_rng(seed)
    out = losses_and_grads(model, scene, cfg, "exact")
    direction = {k: rng.standard_normal(np.shape(g)) for k, g in out.grads.items()}
    analytic = sum(float(np.sum(out.grads[k] * d)) for k, d in direction.items())
    eps = 1e-6
    fd = (total_loss(_perturbed(model, direction, eps), scene, cfg) - total_loss(_perturbed(model, direction, -eps), scene, cfg)) / (2 * eps)
    assert analytic == pytest.approx(fd, rel=1e-3)


class TestTraining:
    def test_lr_zero_keeps_weights(self):
        scene = synth_scene(EIGHT, 0)
        model = ToyPredictor.init(seed=0)
        before = model.copy()
        state = TrainState.fresh(model)
        cfg = TrainConfig(scene=EIGHT, lr=0.0)
        for _ in range(3):
            train_step(state, scene, cfg)
        for name, w in before.weights().items():
            assert np.array_equal(getattr(state.model, name), w)
        assert state.model.fml == before.fml
        assert len(state.history) == 3 and state.step == 3

    def test_total_is_sum(self):
        cfg = TrainConfig(scene=EIGHT, steps=5, n_train_scenes=5)
        _, metrics = train(cfg)
        for h in metrics["history"]:
            assert h["C_total"] == h["C_o"] + h["C_f"]

    def test_bitwise_reproducible(self):
        cfg = TrainConfig(scene=EIGHT, steps=6, n_train_scenes=4, seed=3)
        m1, h1 = train(cfg)
        m2, h2 = train(cfg)
        assert h1["history"] == h2["history"]
        assert np.array_equal(m1.W1, m2.W1)

    def test_loss_decreases_quickly(self):
        cfg = TrainConfig(scene=EIGHT, steps=150, n_train_scenes=30)
        _, metrics = train(cfg)
        hist = [h["C_total"] for h in metrics["history"]]
        assert np.mean(hist[-20:]) < 0.7 * np.mean(hist[:20])

    def test_untrained_scores_near_zero(self):
        cfg = SceneConfig()
        result = evaluate_model(ToyPredictor.zeros(), heldout_scenes(cfg, 10))
        assert result.score.f_score < 0.1
