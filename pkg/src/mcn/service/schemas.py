from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class GridModel(BaseModel):
    rows: int = Field(gt=0)
    cols: int = Field(gt=0)
    stride: int = Field(16, gt=0)
    offset: float = 8.0


class BoxModel(BaseModel):
    cx: float
    cy: float
    w: float = Field(gt=0)
    h: float = Field(gt=0)
    theta: float = 0.0


class SceneModel(BaseModel):
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    stride: int = Field(16, gt=0)
    boxes: list[BoxModel] = []


class GenerateRequest(BaseModel):
    rows: int = Field(16, gt=0)
    cols: int = Field(16, gt=0)
    seed: int = 0
    min_boxes: int = Field(1, ge=0)
    max_boxes: int = Field(3, ge=0)
    max_path: int | None = 6


class GenerateResponse(BaseModel):
    scene: SceneModel
    sfg_b64: str
    sig_b64: str


class ClusterRequest(BaseModel):
    sfg_b64: str = Field(description="base64 of an .sfg flow container")
    iters: int = Field(8, ge=1)
    threshold: float = Field(0.15, ge=0.0, lt=1.0)
    eps: float = Field(1e-6, gt=0.0)
    renormalize: bool = True
    early_stop: bool = True
    min_cluster_size: int = Field(1, ge=1)


class ClusterResponse(BaseModel):
    attractor: list[int]
    clusters: dict[str, list[int]]
    background: list[int]
    iterations_run: int
    grid: GridModel


class BoxesRequest(BaseModel):
    clusters: ClusterResponse
    scale: float = Field(1.75, gt=0.0)
    extent_mode: Literal["stddev", "paper_literal"] = "stddev"


class Detection(BaseModel):
    corners: list[list[float]]
    cluster: int


class EvalRequest(BaseModel):
    detections: list[Detection]
    scene: SceneModel
    iou_threshold: float = Field(0.5, gt=0.0, lt=1.0)


class Match(BaseModel):
    pred: int
    gt: int
    iou: float


class EvalResponse(BaseModel):
    precision: float
    recall: float
    f_score: float
    n_pred: int
    n_gt: int
    matches: list[Match]


class ErrorResponse(BaseModel):
    error: str
    detail: str
