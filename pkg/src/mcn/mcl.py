"""Markov clustering: expand, inflate and prune until columns turn one-hot.

Matrices may be dense ``ndarray`` or ``scipy.sparse``. The initial flow matrix
is sparse; iterates are switched to dense once fill-in exceeds
``MclConfig.dense_fraction`` of all entries.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from mcn.errors import ClusteringError


@dataclass(frozen=True)
class MclConfig:
    max_iters: int = 8
    prune_threshold: float = 0.0
    convergence_eps: float = 1e-6
    final_renormalize: bool = True
    early_stop: bool = True
    threads: int = 1
    dense_fraction: float = 0.25

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not 0.0 <= self.prune_threshold < 1.0:
            raise ValueError(f"prune_threshold must lie in [0, 1), got {self.prune_threshold}")
        if not self.convergence_eps > 0:
            raise ValueError(f"convergence_eps must be > 0, got {self.convergence_eps}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")


TRAIN_CONFIG = MclConfig(max_iters=8, prune_threshold=0.0)
TEST_CONFIG = MclConfig(max_iters=8, prune_threshold=0.15)


@dataclass
class MclTape:
    """Intermediate matrices of one forward pass, indexed by iteration."""

    m0: object
    config: MclConfig
    expanded: list = field(default_factory=list)
    inflated: list = field(default_factory=list)
    pruned: list = field(default_factory=list)
    final: object = None

    @property
    def iterations(self) -> int:
        return len(self.pruned)


class MclResult(NamedTuple):
    matrix: object
    tape: MclTape | None
    iterations_run: int


def to_dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=np.float64)


def column_sums(M) -> np.ndarray:
    return np.asarray(M.sum(axis=0)).ravel()


def _column_chunks(n: int, parts: int) -> list[slice]:
    bounds = np.linspace(0, n, min(parts, n) + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def expand(M_prev, M0, threads: int = 1):
    """Return ``M_prev @ M0``, optionally computed over column blocks in parallel."""
    if M_prev.shape[1] != M0.shape[0] or M_prev.shape[0] != M0.shape[0]:
        raise ValueError(f"cannot expand {M_prev.shape} with {M0.shape}")
    if threads <= 1 or M0.shape[1] < 2:
        out = M_prev @ M0
    else:
        if sp.issparse(M0):
            M0 = M0.tocsc()
        blocks = _column_chunks(M0.shape[1], threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda s: M_prev @ M0[:, s], blocks))
        if any(sp.issparse(p) for p in parts):
            out = sp.hstack([sp.csc_matrix(p) for p in parts], format="csc")
        else:
            out = np.hstack(parts)
    if sp.issparse(out):
        return out.tocsc()
    return np.asarray(out)


def inflate(M):
    """Normalize every column to sum to one."""
    s = column_sums(M)
    zero = np.flatnonzero(s <= 0)
    if zero.size:
        raise ClusteringError(f"column {int(zero[0])} has no mass left to normalize", column=int(zero[0]))
    if sp.issparse(M):
        return (M @ sp.diags(1.0 / s)).tocsc()
    return M / s


def prune(M, threshold: float):
    """Zero entries strictly below ``threshold``."""
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    if sp.issparse(M):
        out = M.copy().tocsc()
        out.data[out.data < threshold] = 0.0
        out.eliminate_zeros()
        return out
    return np.where(M < threshold, 0.0, M)


def _max_abs_change(A, B) -> float:
    if sp.issparse(A) and sp.issparse(B):
        diff = abs(A - B)
        return float(diff.max()) if diff.nnz else 0.0
    return float(np.max(np.abs(to_dense(A) - to_dense(B))))


def _maybe_densify(M, fraction: float):
    if sp.issparse(M) and M.nnz > fraction * M.shape[0] * M.shape[1]:
        return M.toarray()
    return M


def markov_cluster(M0, cfg: MclConfig = MclConfig(), record_tape: bool = False) -> MclResult:
    """Run up to ``cfg.max_iters`` expand -> inflate -> prune rounds."""
    if sp.issparse(M0):
        M0 = M0.tocsc()
    else:
        M0 = np.asarray(M0, dtype=np.float64)
    tape = MclTape(m0=M0, config=cfg) if record_tape else None
    prev = M0
    iterations = 0
    for t in range(1, cfg.max_iters + 1):
        expanded = _maybe_densify(expand(prev, M0, cfg.threads), cfg.dense_fraction)
        try:
            inflated = inflate(expanded)
        except ClusteringError as exc:
            raise ClusteringError(f"iteration {t}: {exc}", column=exc.column, iteration=t) from None
        pruned = prune(inflated, cfg.prune_threshold)
        iterations = t
        if tape is not None:
            tape.expanded.append(expanded)
            tape.inflated.append(inflated)
            tape.pruned.append(pruned)
        change = _max_abs_change(pruned, prev)
        prev = pruned
        if cfg.early_stop and change < cfg.convergence_eps:
            break
    if cfg.final_renormalize:
        try:
            final = inflate(prev)
        except ClusteringError as exc:
            raise ClusteringError(
                f"final renormalization: {exc}", column=exc.column, iteration=iterations
            ) from None
    else:
        final = prev
    if tape is not None:
        tape.final = final
    return MclResult(final, tape, iterations)


@dataclass(frozen=True)
class ExtractConfig:
    fg_cutoff: float = 0.5
    min_cluster_size: int = 1


@dataclass
class ClusterAssignment:
    """Per-node attractor plus foreground clusters and background nodes."""

    attractor: np.ndarray
    clusters: dict[int, list[int]]
    background: list[int]

    @property
    def n_nodes(self) -> int:
        return len(self.attractor)

    def labels(self) -> np.ndarray:
        """Attractor per node with background nodes pointing to themselves."""
        out = np.arange(self.n_nodes)
        for a, members in self.clusters.items():
            out[members] = a
        return out

    def foreground(self) -> np.ndarray:
        fg = np.zeros(self.n_nodes, dtype=bool)
        for members in self.clusters.values():
            fg[members] = True
        return fg

    def to_json(self) -> dict:
        return {
            "attractor": [int(a) for a in self.attractor],
            "clusters": {str(a): [int(m) for m in mem] for a, mem in self.clusters.items()},
            "background": [int(b) for b in self.background],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ClusterAssignment":
        clusters = {int(a): [int(m) for m in mem] for a, mem in data["clusters"].items()}
        return cls(
            attractor=np.asarray(data["attractor"], dtype=np.int64),
            clusters=dict(sorted(clusters.items())),
            background=[int(b) for b in data["background"]],
        )


def attractors_of(M_N) -> np.ndarray:
    """Row of the largest entry in every column; ties go to the lowest row."""
    return np.argmax(to_dense(M_N), axis=0).astype(np.int64)


def extract_clusters(M_N, fg_prob=None, cfg: ExtractConfig = ExtractConfig()) -> ClusterAssignment:
    attractor = attractors_of(M_N)
    n = attractor.size
    fg = None if fg_prob is None else np.asarray(fg_prob, dtype=np.float64).ravel(order="F")
    if fg is not None and fg.size != n:
        raise ValueError(f"fg_prob has {fg.size} entries, matrix has {n} columns")
    groups: dict[int, list[int]] = {}
    for m, a in enumerate(attractor):
        groups.setdefault(int(a), []).append(m)
    clusters: dict[int, list[int]] = {}
    background: list[int] = []
    for a in sorted(groups):
        members = groups[a]
        is_bg = (len(members) == 1 and members[0] == a) or len(members) < cfg.min_cluster_size
        if not is_bg and fg is not None:
            is_bg = float(fg[members].mean()) < cfg.fg_cutoff
        if is_bg:
            background.extend(members)
        else:
            clusters[a] = members
    return ClusterAssignment(attractor=attractor, clusters=clusters, background=sorted(background))
