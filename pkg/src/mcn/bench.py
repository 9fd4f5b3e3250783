"""Wall-time of Markov clustering against the iteration count, with a linear fit."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from mcn.grid import GridShape, build_flow_matrix
from mcn.labeling import ground_truth_flows
from mcn.mcl import MclConfig, markov_cluster
from mcn.toy.scene import SceneConfig, synth_scene

# published per-iteration reference times (ms) for N = 1..8, used to exercise the fitter
REFERENCE_MS = (0.32, 0.51, 0.67, 0.86, 1.05, 1.23, 1.41, 1.60)


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r2: float


@dataclass
class BenchResult:
    iters: list[int]
    mean_ms: list[float]
    std_ms: list[float]
    trials: int
    fit: LinearFit | None = None
    raw_ms: dict[int, list[float]] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "mean_ms", "std_ms"])
        for n, m, s in zip(self.iters, self.mean_ms, self.std_ms):
            w.writerow([n, f"{m:.6f}", f"{s:.6f}"])
        return buf.getvalue()

    def summary(self) -> str:
        if self.fit is None:
            return f"fit: degenerate (single N), mean {self.mean_ms[0]:.4f} ms"
        f = self.fit
        return f"fit: time_ms = {f.slope:.6f} * N + {f.intercept:.6f}  R^2 = {f.r2:.4f}"


def linear_fit(x, y) -> LinearFit | None:
    """Least-squares line through ``(x, y)``; ``None`` when x takes a single value."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.unique(x).size < 2:
        return None
    res = stats.linregress(x, y)
    return LinearFit(float(res.slope), float(res.intercept), float(res.rvalue**2))


def bench_matrix(shape: GridShape, seed: int):
    """A fixed absorbing flow matrix: ground-truth flows of a crowded synthetic scene."""
    n_boxes = max(1, shape.n_nodes // 128)
    cfg = SceneConfig(rows=shape.rows, cols=shape.cols, stride=shape.stride, box_count=(n_boxes, n_boxes), max_path=None, max_tries=2000)
    scene = synth_scene(cfg, seed)
    return build_flow_matrix(ground_truth_flows(scene.mask), scene.shape)


def bench_mcl(
    shape: GridShape = GridShape(32, 32),
    iters=range(1, 9),
    trials: int = 20,
    seed: int = 0,
    threshold: float = 0.0,
    threads: int = 1,
) -> BenchResult:
    iters = [int(n) for n in iters]
    if not iters:
        raise ValueError("iteration range is empty")
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    M0 = bench_matrix(shape, seed)
    configs = {n: MclConfig(max_iters=n, prune_threshold=threshold, early_stop=False, threads=threads) for n in iters}
    raw: dict[int, list[float]] = {n: [] for n in iters}
    # one untimed warm-up so allocation and import costs stay out of the numbers
    markov_cluster(M0, configs[max(iters)])
    # round-robin over N so slow drifts in machine load hit every N alike
    for _ in range(trials):
        for n in iters:
            t0 = time.perf_counter()
            markov_cluster(M0, configs[n])
            raw[n].append((time.perf_counter() - t0) * 1e3)
    means = [float(np.mean(raw[n])) for n in iters]
    stds = [float(np.std(raw[n])) for n in iters]
    return BenchResult(iters, means, stds, trials, linear_fit(iters, means), raw)
