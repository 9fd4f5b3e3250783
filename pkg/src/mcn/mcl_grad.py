"""Flow loss and its gradient through the Markov clustering iterations.

Two backward variants share one tape:

``exact``
    the true Jacobians of column normalization and pruning, so the result
    matches finite differences of the forward pass.
``paper_approx``
    normalization is treated as the identity and pruning as a 0/1 mask on
    the surviving entries. Cheaper and only approximately a gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from mcn.mcl import MclConfig, MclTape, column_sums, markov_cluster, to_dense

LOG_CLAMP = 1e-12
GRAD_MODES = ("exact", "paper_approx")


@dataclass
class FlowLossResult:
    C_f: float
    per_node: np.ndarray


def label_indices(y_f) -> np.ndarray:
    idx = getattr(y_f, "index", y_f)
    return np.asarray(idx, dtype=np.int64).ravel()


def flow_loss(M_N, y_f, shape=None) -> FlowLossResult:
    """Mean cross-entropy between converged columns and one-hot attractor targets.

    ``per_node`` is an (R, C) grid when a grid shape is known (from ``shape`` or
    from the label), otherwise a flat vector in node order.
    """
    a = label_indices(y_f)
    n = M_N.shape[1]
    if a.size != n or M_N.shape[0] != n:
        raise ValueError(f"label has {a.size} nodes, matrix is {M_N.shape}")
    if sp.issparse(M_N):
        vals = np.asarray(M_N.tocsc()[a, np.arange(n)]).ravel()
    else:
        vals = np.asarray(M_N)[a, np.arange(n)]
    per_node = -np.log(np.maximum(vals, LOG_CLAMP))
    if shape is None and not isinstance(y_f, np.ndarray):
        shape = getattr(y_f, "shape", None)
    if shape is not None:
        per_node = per_node.reshape(shape.dims, order="F")
    return FlowLossResult(C_f=float(per_node.mean()), per_node=per_node)


def loss_grad_final(M_N, y_f) -> np.ndarray:
    """Gradient of the mean clamped cross-entropy w.r.t. the final matrix."""
    a = label_indices(y_f)
    F = to_dense(M_N)
    n = F.shape[1]
    cols = np.arange(n)
    vals = F[a, cols]
    g = np.zeros_like(F)
    live = vals > LOG_CLAMP  # clamp acts as stop-gradient
    g[a[live], cols[live]] = -1.0 / (n * vals[live])
    return g


def inflate_vjp(X: np.ndarray, g_out: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of column normalization ``X / colsum(X)``."""
    s = column_sums(X)
    Y = X / s
    inner = np.sum(g_out * Y, axis=0)
    return (g_out - inner) / s


def mcl_backward(tape: MclTape, y_f, mode: str = "exact") -> np.ndarray:
    """Gradient of the flow loss w.r.t. the initial flow matrix (dense)."""
    if mode not in GRAD_MODES:
        raise ValueError(f"mode must be one of {GRAD_MODES}, got {mode!r}")
    if tape is None or tape.iterations == 0 or tape.final is None:
        raise ValueError("tape holds no recorded iterations")
    if not (len(tape.expanded) == len(tape.inflated) == len(tape.pruned)):
        raise ValueError("tape records are incomplete")
    exact = mode == "exact"
    cfg = tape.config
    X = to_dense(tape.m0)
    g = loss_grad_final(tape.final, y_f)
    if cfg.final_renormalize and exact:
        g = inflate_vjp(to_dense(tape.pruned[-1]), g)
    g_X = np.zeros_like(X)
    for t in range(tape.iterations, 0, -1):
        inflated = to_dense(tape.inflated[t - 1])
        if exact:
            mask = inflated >= cfg.prune_threshold
        else:
            mask = to_dense(tape.pruned[t - 1]) > 0
        g = g * mask
        if exact:
            g = inflate_vjp(to_dense(tape.expanded[t - 1]), g)
        prev = X if t == 1 else to_dense(tape.pruned[t - 2])
        g_X += prev.T @ g
        g = g @ X.T
    # direct path: the first expansion consumes M0 itself as its left factor
    g_X += g
    return g_X


def loss_of(M0, y_f, cfg: MclConfig) -> float:
    return flow_loss(markov_cluster(M0, cfg).matrix, y_f).C_f


def finite_diff_grad(M0, y_f, cfg: MclConfig, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the flow loss on the nonzero support of ``M0``."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    X = to_dense(M0).copy()
    grad = np.zeros_like(X)
    for i, j in zip(*np.nonzero(X)):
        orig = X[i, j]
        X[i, j] = orig + eps
        up = loss_of(X, y_f, cfg)
        X[i, j] = orig - eps
        down = loss_of(X, y_f, cfg)
        X[i, j] = orig
        grad[i, j] = (up - down) / (2 * eps)
    return grad


def grad_errors(g: np.ndarray, ref: np.ndarray, support: np.ndarray, small: float = 1e-3) -> tuple[float, float, bool]:
    """Max absolute error, max relative error where ``|ref| >= small``, and pass flag.

    Passing means relative error < 1e-4 where the reference is large and absolute
    error < 1e-7 where it is small.
    """
    diff = np.abs(g - ref)[support]
    mag = np.abs(ref)[support]
    big = mag >= small
    rel = float(np.max(diff[big] / mag[big])) if big.any() else 0.0
    abs_small = float(np.max(diff[~big])) if (~big).any() else 0.0
    ok = rel < 1e-4 and abs_small < 1e-7
    return float(diff.max()) if diff.size else 0.0, rel, ok


@dataclass
class GradCheck:
    mode: str
    max_abs: float
    max_rel: float
    fd_ok: bool
    descent: bool
    loss: float

    @property
    def passed(self) -> bool:
        # the approximate gradient is judged by whether it still points downhill
        return self.fd_ok if self.mode == "exact" else self.descent


def reachable_labels(M0, rng: np.random.Generator) -> np.ndarray:
    """A random target per node, drawn from the nodes its walk can reach."""
    M = to_dense(M0)
    n = M.shape[0]
    # boolean closure by repeated squaring keeps the entries bounded
    reach = (M + np.eye(n)) > 0
    for _ in range(max(1, int(np.ceil(np.log2(n))))):
        reach = (reach.astype(np.float64) @ reach.astype(np.float64)) > 0
    return np.array([rng.choice(np.flatnonzero(reach[:, m])) for m in range(n)])


def gradient_check(
    shape,
    iters: int = 3,
    mode: str = "exact",
    seed: int = 0,
    eps: float = 1e-5,
    threshold: float = 0.0,
    step: float = 1e-3,
) -> GradCheck:
    """Compare ``mcl_backward`` with central differences on random flows."""
    from mcn.grid import build_flow_matrix, random_flow_maps

    rng = np.random.default_rng(seed)
    M0 = build_flow_matrix(random_flow_maps(shape, rng), shape)
    y = reachable_labels(M0, rng)
    cfg = MclConfig(max_iters=iters, prune_threshold=threshold, early_stop=False)
    res = markov_cluster(M0, cfg, record_tape=True)
    loss = flow_loss(res.matrix, y).C_f
    g = mcl_backward(res.tape, y, mode)
    X = M0.toarray()
    support = X > 0
    max_abs, max_rel, ok = grad_errors(g, finite_diff_grad(M0, y, cfg, eps), support)
    stepped = np.where(support, np.maximum(X - step * g, LOG_CLAMP), 0.0)
    stepped /= stepped.sum(axis=0)
    descent = loss_of(stepped, y, cfg) <= loss + 1e-12
    return GradCheck(mode, max_abs, max_rel, ok, bool(descent), loss)
