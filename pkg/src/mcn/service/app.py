"""HTTP front end over the shared pipeline functions."""

from __future__ import annotations

import base64
import binascii

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from mcn import __version__
from mcn.boxgen import PcaBoxParams
from mcn.errors import FormatError, McnError
from mcn.grid import GridShape
from mcn.mcl import MclConfig
from mcn.pipeline import boxes_from_clusters, cluster_sfg, generate, score_detections
from mcn.service.schemas import (
    BoxesRequest,
    ClusterRequest,
    ClusterResponse,
    Detection,
    EvalRequest,
    EvalResponse,
    GenerateRequest,
    GenerateResponse,
)

app = FastAPI(title="mcn", version=__version__)


@app.exception_handler(McnError)
async def mcn_error(request: Request, exc: McnError):
    return JSONResponse(status_code=422, content={"error": type(exc).__name__, "detail": str(exc)})


def _b64decode(text: str) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise FormatError(f"sfg_b64 is not valid base64: {exc}") from exc


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/generate", response_model=GenerateResponse)
def generate_scene(req: GenerateRequest):
    if req.min_boxes > req.max_boxes:
        raise McnError(f"min_boxes {req.min_boxes} exceeds max_boxes {req.max_boxes}")
    out = generate(GridShape(req.rows, req.cols), req.seed, (req.min_boxes, req.max_boxes), req.max_path)
    return {
        "scene": out.scene_json,
        "sfg_b64": base64.b64encode(out.sfg).decode("ascii"),
        "sig_b64": base64.b64encode(out.sig).decode("ascii"),
    }


@app.post("/cluster", response_model=ClusterResponse)
def cluster(req: ClusterRequest):
    cfg = MclConfig(
        max_iters=req.iters,
        prune_threshold=req.threshold,
        convergence_eps=req.eps,
        final_renormalize=req.renormalize,
        early_stop=req.early_stop,
    )
    return cluster_sfg(_b64decode(req.sfg_b64), cfg, source="request", min_cluster_size=req.min_cluster_size)


@app.post("/boxes", response_model=list[Detection])
def boxes(req: BoxesRequest):
    return boxes_from_clusters(req.clusters.model_dump(), PcaBoxParams(req.scale, req.extent_mode))


@app.post("/eval", response_model=EvalResponse)
def evaluate(req: EvalRequest):
    detections = [d.model_dump() for d in req.detections]
    return score_detections(detections, req.scene.model_dump(), req.iou_threshold)
