"""Read-only HTTP query service over a trained checkpoint.

Endpoints: GET /scene, POST /query, GET /render (PNG, optionally with one
object highlighted), GET /export/{object_id} (PLY). Everything operates on an
immutable scene snapshot; renders go through a bounded worker semaphore.
"""

from __future__ import annotations

import tempfile
import threading
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel

from . import fileio
from .embeddings import EmbeddingTable, associate_all, export_object, query as run_query
from .render import GaussianStore, project, render
from .scene import GranularityLevel, SceneModel


def render_highlight(scene: SceneModel, object_id: int, granularity: GranularityLevel,
                     camera, time: float = 0.0) -> np.ndarray:
    """Full-scene render with everything but the object dimmed to 20% luminance."""
    oset = scene.object_set(object_id, granularity)
    store = scene.gaussians
    colors = store.colors.detach().clone()
    lum = (0.299 * colors[:, 0] + 0.587 * colors[:, 1] + 0.114 * colors[:, 2]) * 0.2
    dimmed = lum[:, None].expand(-1, 3).contiguous()
    keep = torch.zeros(len(store), dtype=torch.bool)
    keep[torch.as_tensor(oset.gaussian_indices, dtype=torch.int64)] = True
    colors = torch.where(keep[:, None], colors, dimmed)
    highlighted = GaussianStore(store.means, store.rotations, store.log_scales,
                                store.opacities, colors, store.object_ids)
    with torch.no_grad():
        splats = project(highlighted, camera, time=time, deformation=scene.deformation)
        return render(splats, camera.width, camera.height).image_array()


class QueryBody(BaseModel):
    embedding: Optional[list[float]] = None
    text: Optional[str] = None
    granularity: Optional[str] = None
    top_k: int = 5


def create_app(checkpoint_path, embeddings_path=None, embed_endpoint: Optional[str] = None,
               ui_dir=None, render_workers: int = 2, defer_load: bool = False) -> FastAPI:
    app = FastAPI(title="objsplat query service")
    state = {"scene": None, "error": None}
    render_gate = threading.Semaphore(max(1, render_workers))

    def load():
        try:
            scene, _ = fileio.load_checkpoint(checkpoint_path)
            if embeddings_path:
                table = EmbeddingTable.load(embeddings_path)
                associate_all(scene, table)
            state["scene"] = scene
        except Exception as exc:  # noqa: BLE001 - surfaced via 503 detail
            state["error"] = str(exc)

    if defer_load:
        threading.Thread(target=load, daemon=True).start()
    else:
        load()

    def scene_or_503() -> SceneModel:
        if state["scene"] is None:
            detail = state["error"] or "checkpoint still loading"
            raise HTTPException(status_code=503, detail=detail)
        return state["scene"]

    def parse_level(code: Optional[str]):
        if code in (None, "", "all"):
            return None
        try:
            return GranularityLevel.from_code(code)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

    @app.get("/scene")
    def get_scene():
        scene = scene_or_503()
        return {
            "objects": {lv.value: scene.foreground_ids(lv) for lv in GranularityLevel},
            "granularities": [lv.value for lv in GranularityLevel],
            "cameras": [{"index": i, "frame_index": c.frame_index, "time": c.time}
                        for i, c in enumerate(scene.cameras)],
            "dynamic": scene.deformation is not None,
        }

    @app.post("/query")
    def post_query(body: QueryBody):
        scene = scene_or_503()
        level = parse_level(body.granularity)
        if body.embedding is not None:
            vec = np.asarray(body.embedding, dtype=np.float32)
        elif body.text is not None:
            vec = _embed_text(body.text)
        else:
            raise HTTPException(status_code=400, detail="provide 'embedding' or 'text'")
        try:
            result = run_query(vec, level, scene)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        top = result.matches[:max(1, body.top_k)]
        return {"matches": [{"object_id": m.object_id, "granularity": m.granularity.value,
                             "score": m.score} for m in top]}

    def _embed_text(text: str) -> np.ndarray:
        if not embed_endpoint:
            raise HTTPException(
                status_code=400,
                detail="text queries need a configured embedding endpoint; "
                       "pass a raw 'embedding' vector instead")
        import requests
        try:
            resp = requests.post(embed_endpoint, json={"text": text}, timeout=30)
            resp.raise_for_status()
            return np.asarray(resp.json()["vector"], dtype=np.float32)
        except Exception as exc:  # noqa: BLE001
            raise HTTPException(status_code=502, detail=f"embedding endpoint failed: {exc}")

    @app.get("/render")
    def get_render(camera: int = 0, object_id: Optional[int] = None,
                   object: Optional[int] = None, granularity: Optional[str] = None,
                   time: float = 0.0):
        scene = scene_or_503()
        if object_id is None:
            object_id = object
        if not (0 <= camera < len(scene.cameras)):
            raise HTTPException(status_code=404, detail=f"no camera {camera}")
        cam = scene.cameras[camera]
        time = min(max(time, 0.0), 1.0)
        with render_gate:
            if object_id is None:
                from .render import render_scene
                with torch.no_grad():
                    img = render_scene(scene, cam, time=time).image_array()
            else:
                level = parse_level(granularity) or GranularityLevel.SMALL
                try:
                    img = render_highlight(scene, object_id, level, cam, time=time)
                except KeyError as exc:
                    raise HTTPException(status_code=404, detail=str(exc)) from None
        return Response(content=fileio.png_bytes(img), media_type="image/png")

    @app.get("/export/{object_id}")
    def get_export(object_id: int, granularity: str = "S"):
        scene = scene_or_503()
        level = parse_level(granularity) or GranularityLevel.SMALL
        with tempfile.NamedTemporaryFile(suffix=".ply") as tmp:
            try:
                export_object(scene, object_id, level, tmp.name)
            except KeyError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from None
            data = Path(tmp.name).read_bytes()
        return Response(content=data, media_type="application/octet-stream",
                        headers={"Content-Disposition":
                                 f"attachment; filename=object_{object_id}.ply"})

    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
