"""Lattice geometry and construction of the initial flow matrix.

Nodes are flattened column-major: node ``m`` sits at row ``m % R`` and column
``m // R``. Every per-node grid in the package is an ``(R, C)`` array and is
flattened with ``order="F"`` so the flat index equals the node id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from mcn.errors import FlowValidationError

SUM_TOL = 1e-6

# direction k of f_k -> (row step, col step); k = 1 bottom, 2 right, 3 left
NEIGHBOR_STEPS = {1: (1, 0), 2: (0, 1), 3: (0, -1)}


@dataclass(frozen=True)
class GridShape:
    rows: int
    cols: int
    stride: int = 16
    offset: float = 8.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def n_nodes(self) -> int:
        return self.rows * self.cols

    @property
    def dims(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @classmethod
    def from_image(cls, width: int, height: int, stride: int = 16) -> "GridShape":
        return cls(rows=height // stride, cols=width // stride, stride=stride, offset=stride / 2)

    @classmethod
    def parse(cls, text: str, stride: int = 16) -> "GridShape":
        """Parse ``"RxC"``."""
        try:
            r, c = text.lower().split("x")
            return cls(int(r), int(c), stride=stride, offset=stride / 2)
        except ValueError as exc:
            raise ValueError(f"grid must look like RxC, got {text!r}") from exc


def node_index(i: int, j: int, shape: GridShape) -> int:
    if not (0 <= i < shape.rows and 0 <= j < shape.cols):
        raise IndexError(f"node ({i}, {j}) outside {shape.rows}x{shape.cols} grid")
    return i + shape.rows * j


def node_coords(m: int, shape: GridShape) -> tuple[int, int]:
    if not 0 <= m < shape.n_nodes:
        raise IndexError(f"node id {m} outside [0, {shape.n_nodes})")
    return m % shape.rows, m // shape.rows


def flatten(grid: np.ndarray) -> np.ndarray:
    return np.asarray(grid).ravel(order="F")


def unflatten(vec: np.ndarray, shape: GridShape) -> np.ndarray:
    return np.asarray(vec).reshape(shape.dims, order="F")


@dataclass
class FlowMaps:
    """Self-loop, bottom, right and left flows, each an (R, C) grid."""

    f0: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray

    def __post_init__(self):
        self.f0, self.f1, self.f2, self.f3 = (
            np.asarray(f, dtype=np.float64) for f in (self.f0, self.f1, self.f2, self.f3)
        )

    @property
    def planes(self) -> list[np.ndarray]:
        return [self.f0, self.f1, self.f2, self.f3]

    @property
    def dims(self) -> tuple[int, int]:
        return self.f0.shape

    def stack(self) -> np.ndarray:
        return np.stack(self.planes)

    @classmethod
    def from_stack(cls, arr) -> "FlowMaps":
        arr = np.asarray(arr)
        return cls(arr[0], arr[1], arr[2], arr[3])

    @classmethod
    def background(cls, shape: GridShape) -> "FlowMaps":
        ones = np.ones(shape.dims)
        zeros = np.zeros(shape.dims)
        return cls(ones, zeros.copy(), zeros.copy(), zeros.copy())


@dataclass
class ValidationReport:
    passed: bool
    max_deviation: float
    worst_node: int | None
    min_entry: float
    negative_nodes: list[int] = field(default_factory=list)
    bad_sum_nodes: list[int] = field(default_factory=list)

    def summary(self) -> str:
        if self.passed:
            return f"ok (max |sum-1| = {self.max_deviation:.3g})"
        parts = []
        if self.bad_sum_nodes:
            parts.append(
                f"{len(self.bad_sum_nodes)} node(s) with |sum-1| > {SUM_TOL:g}; "
                f"worst node {self.worst_node} deviates by {self.max_deviation:.6g}"
            )
        if self.negative_nodes:
            parts.append(f"{len(self.negative_nodes)} node(s) with negative flow (min {self.min_entry:.6g})")
        return "; ".join(parts)


def validate_flow_maps(fm: FlowMaps) -> ValidationReport:
    shapes = {p.shape for p in fm.planes}
    if len(shapes) != 1 or len(fm.f0.shape) != 2:
        raise FlowValidationError(f"flow planes must share one 2D shape, got {sorted(shapes)}")
    stack = np.stack([flatten(p) for p in fm.planes])
    dev = np.abs(stack.sum(axis=0) - 1.0)
    worst = int(np.argmax(dev))
    min_per_node = stack.min(axis=0)
    bad_sum = np.flatnonzero(~(dev <= SUM_TOL))
    negative = np.flatnonzero(min_per_node < 0)
    return ValidationReport(
        passed=bad_sum.size == 0 and negative.size == 0,
        max_deviation=float(dev[worst]),
        worst_node=worst,
        min_entry=float(min_per_node.min()),
        negative_nodes=negative.tolist(),
        bad_sum_nodes=bad_sum.tolist(),
    )


def _targets(shape: GridShape) -> dict[int, np.ndarray]:
    """Destination node id of each outgoing flow; off-grid flows fold onto the source."""
    ii, jj = np.meshgrid(np.arange(shape.rows), np.arange(shape.cols), indexing="ij")
    src = flatten(ii + shape.rows * jj)
    out = {0: src}
    for k, (di, dj) in NEIGHBOR_STEPS.items():
        ti, tj = ii + di, jj + dj
        inside = (ti >= 0) & (ti < shape.rows) & (tj >= 0) & (tj < shape.cols)
        dest = np.where(inside, ti + shape.rows * tj, ii + shape.rows * jj)
        out[k] = flatten(dest)
    return out


def build_flow_matrix(fm: FlowMaps, shape: GridShape | None = None, validate: bool = True) -> sp.csc_matrix:
    """Column ``n`` of the result holds node ``n``'s outgoing flows.

    Flow pointing off the lattice is added to the diagonal, so a valid input
    always gives a column-stochastic matrix with at most four nonzeros per
    column.
    """
    if shape is None:
        shape = GridShape(*fm.dims)
    if fm.dims != shape.dims:
        raise FlowValidationError(f"flow maps are {fm.dims}, grid is {shape.dims}")
    if validate:
        report = validate_flow_maps(fm)
        if not report.passed:
            raise FlowValidationError(f"invalid flow maps: {report.summary()}")
    n = shape.n_nodes
    targets = _targets(shape)
    cols = np.tile(np.arange(n), 4)
    rows = np.concatenate([targets[k] for k in range(4)])
    vals = np.concatenate([flatten(p) for p in fm.planes])
    # duplicates (folded boundary flows) are summed by the COO -> CSC conversion
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def flow_matrix_backward(g_M, shape: GridShape) -> FlowMaps:
    """Gather the gradient w.r.t. each flow plane from a gradient w.r.t. the flow matrix."""
    g = g_M.toarray() if sp.issparse(g_M) else np.asarray(g_M)
    targets = _targets(shape)
    src = np.arange(shape.n_nodes)
    planes = [unflatten(g[targets[k], src], shape) for k in range(4)]
    return FlowMaps(*planes)


def random_flow_maps(shape: GridShape, rng: np.random.Generator, concentration: float = 1.0) -> FlowMaps:
    """Dirichlet-distributed flows per node."""
    draws = rng.dirichlet(np.full(4, concentration), size=shape.n_nodes)
    planes = [unflatten(draws[:, k], shape) for k in range(4)]
    return FlowMaps(*planes)
