"""File formats: ``.sfg`` flow containers, ``SIG1`` signal containers, scene JSON,
cluster JSON and detections JSON.

Binary layout (little-endian): 4 magic bytes, uint32 R, C, U, then four
planes of R*C float32 values each, in column-major node order.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mcn.errors import FormatError
from mcn.fml import NodeSignals
from mcn.geometry import RotatedBox
from mcn.grid import FlowMaps, GridShape, flatten, unflatten
from mcn.mcl import ClusterAssignment

SFG_MAGIC = b"SFG1"
SIG_MAGIC = b"SIG1"
_HEADER = struct.Struct("<4sIII")


def pack_planes(magic: bytes, planes, shape: GridShape) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(magic, shape.rows, shape.cols, shape.stride))
    for plane in planes:
        if np.shape(plane) != shape.dims:
            raise FormatError(f"plane shape {np.shape(plane)} does not match grid {shape.dims}")
        buf.write(flatten(plane).astype("<f4").tobytes())
    return buf.getvalue()


def unpack_planes(data: bytes, magic: bytes, source: str = "<bytes>") -> tuple[list[np.ndarray], GridShape]:
    if len(data) < _HEADER.size:
        raise FormatError(f"{source}: file too short for a {magic.decode()} header")
    got, R, C, U = _HEADER.unpack_from(data)
    if got != magic:
        raise FormatError(f"{source}: bad magic {got!r}, expected {magic!r}")
    if R < 1 or C < 1 or U < 1:
        raise FormatError(f"{source}: invalid header R={R} C={C} U={U}")
    n = R * C
    expected = _HEADER.size + 4 * 4 * n
    if len(data) != expected:
        raise FormatError(f"{source}: expected {expected} bytes for a {R}x{C} grid, got {len(data)}")
    shape = GridShape(R, C, stride=U, offset=U / 2)
    flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(4, n)
    return [unflatten(flat[k], shape) for k in range(4)], shape


def dumps_sfg(fm: FlowMaps, shape: GridShape) -> bytes:
    return pack_planes(SFG_MAGIC, fm.planes, shape)


def loads_sfg(data: bytes, source: str = "<bytes>") -> tuple[FlowMaps, GridShape]:
    planes, shape = unpack_planes(data, SFG_MAGIC, source)
    return FlowMaps(*planes), shape


def dumps_sig(sig: NodeSignals, shape: GridShape) -> bytes:
    return pack_planes(SIG_MAGIC, sig.planes, shape)


def loads_sig(data: bytes, source: str = "<bytes>") -> tuple[NodeSignals, GridShape]:
    planes, shape = unpack_planes(data, SIG_MAGIC, source)
    return NodeSignals(*planes), shape


def write_sfg(path, fm: FlowMaps, shape: GridShape) -> None:
    Path(path).write_bytes(dumps_sfg(fm, shape))


def read_sfg(path) -> tuple[FlowMaps, GridShape]:
    return loads_sfg(Path(path).read_bytes(), str(path))


def write_sig(path, sig: NodeSignals, shape: GridShape) -> None:
    Path(path).write_bytes(dumps_sig(sig, shape))


def read_sig(path) -> tuple[NodeSignals, GridShape]:
    return loads_sig(Path(path).read_bytes(), str(path))


@dataclass
class Scene:
    width: int
    height: int
    stride: int = 16
    boxes: list[RotatedBox] = field(default_factory=list)

    @property
    def grid(self) -> GridShape:
        return GridShape.from_image(self.width, self.height, self.stride)

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "stride": self.stride,
            "boxes": [b.to_json() for b in self.boxes],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Scene":
        try:
            return cls(
                width=int(data["width"]),
                height=int(data["height"]),
                stride=int(data.get("stride", 16)),
                boxes=[RotatedBox.from_json(b) for b in data.get("boxes", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed scene JSON: {exc}") from exc


def read_scene(path) -> Scene:
    try:
        return Scene.from_json(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def write_scene(path, scene: Scene) -> None:
    Path(path).write_text(json.dumps(scene.to_json(), indent=2))


def grid_json(shape: GridShape) -> dict:
    return {"rows": shape.rows, "cols": shape.cols, "stride": shape.stride, "offset": shape.offset}


def grid_from_json(data: dict) -> GridShape:
    return GridShape(int(data["rows"]), int(data["cols"]), int(data.get("stride", 16)), float(data.get("offset", 8.0)))


def cluster_json(assignment: ClusterAssignment, iterations_run: int, shape: GridShape | None = None) -> dict:
    out = assignment.to_json()
    out["iterations_run"] = int(iterations_run)
    if shape is not None:
        out["grid"] = grid_json(shape)
    return out


def detections_json(boxes: list[RotatedBox], attractors: list[int]) -> list[dict]:
    return [
        {"corners": [[float(x), float(y)] for x, y in box.corners()], "cluster": int(a)}
        for a, box in zip(attractors, boxes)
    ]


def boxes_from_detections(data: list[dict]) -> list[RotatedBox]:
    try:
        return [RotatedBox.from_corners(d["corners"]) for d in data]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed detections JSON: {exc}") from exc
