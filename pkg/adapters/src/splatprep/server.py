"""Text-embedding endpoint: POST /embed {text} -> {vector}."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .backends import HashEmbedder


class EmbedBody(BaseModel):
    text: str


def create_app(dimension: int = 512) -> FastAPI:
    app = FastAPI(title="splatprep text embeddings")
    embedder = HashEmbedder(dimension=dimension)

    @app.post("/embed")
    def embed(body: EmbedBody):
        if not body.text.strip():
            raise HTTPException(status_code=400, detail="empty text")
        return {"vector": embedder.embed_text(body.text).tolist(),
                "dimension": dimension}

    return app
