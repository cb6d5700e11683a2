"""HTTP inference service over a frozen checkpoint.

Endpoints: POST /predict, POST /explain, POST /suggest, GET /prototypes,
GET /health. Requests may carry a precomputed parse block (CoNLL-U subset);
without one the structural view runs on fallback subgraphs and responses
flag it as degraded. The service never trains: the checkpoint is immutable
and concurrent requests read it lock-free.
"""

from __future__ import annotations

import logging
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from .corpus import Email
from .edits import EditError, suggest_edits
from .explain import ExplainError, explain
from .parsing import DependencyGraph, load_parses_text
from .protonet import CheckpointBundle, load_checkpoint

log = logging.getLogger(__name__)


class EmailPayload(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    subject: str = ""
    body: str = Field(min_length=1)
    recipient_org: str | None = None
    interests: list[str] | None = None
    parse_block: str | None = None


class ExplainPayload(EmailPayload):
    top_n: int = Field(default=3, ge=1)


class SuggestPayload(EmailPayload):
    position: str = "main"
    seed: int = 0
    topic_threshold: float = 0.5
    max_suggestions: int = 3


class PredictResponse(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    probability: float
    predicted_label: int
    model_version: str
    structural_view: str  # "ok" | "degraded"


REQUEST_EMAIL_ID = "request"


def _request_email(payload: EmailPayload) -> tuple[Email, dict[tuple[str, int], DependencyGraph]]:
    parses: dict[tuple[str, int], DependencyGraph] = {}
    if payload.parse_block:
        raw = load_parses_text(payload.parse_block)
        for (eid, si), g in raw.items():
            g.source = (REQUEST_EMAIL_ID, si)
            parses[(REQUEST_EMAIL_ID, si)] = g
    email = Email(
        id=REQUEST_EMAIL_ID,
        subject=payload.subject,
        body=payload.body,
        recipient_org=payload.recipient_org,
        interests=payload.interests,
    )
    return email, parses


def create_app(bundle: CheckpointBundle) -> FastAPI:
    app = FastAPI(title="protomail inference service")
    model = bundle.model
    model.eval()
    sources = {le.email.id: le for le in bundle.sources}

    def require_projected() -> None:
        if not model.is_projected():
            raise HTTPException(
                status_code=503,
                detail=(
                    "prototype banks are not projected; retrain or run projection "
                    "and re-save the checkpoint before requesting explanations"
                ),
            )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "model_version": bundle.model_version}

    @app.post("/predict", response_model=PredictResponse)
    def predict(payload: EmailPayload) -> PredictResponse:
        email, parses = _request_email(payload)
        prob, label, degraded = model.predict_proba(email, parses)
        return PredictResponse(
            probability=prob,
            predicted_label=label,
            model_version=bundle.model_version,
            structural_view="degraded" if degraded else "ok",
        )

    @app.post("/explain")
    def explain_endpoint(payload: ExplainPayload) -> dict:
        require_projected()
        email, parses = _request_email(payload)
        try:
            report = explain(model, email, parses, top_n=payload.top_n)
        except ExplainError as err:
            raise HTTPException(status_code=503, detail=str(err)) from err
        doc = report.to_dict()
        doc["model_version"] = bundle.model_version
        return doc

    @app.post("/suggest")
    def suggest_endpoint(payload: SuggestPayload) -> dict:
        require_projected()
        email, request_parses = _request_email(payload)
        merged = dict(bundle.parses)
        merged.update(request_parses)
        try:
            suggestions = suggest_edits(
                model, email, merged, payload.position, sources,
                seed=payload.seed,
                topic_threshold=payload.topic_threshold,
                max_suggestions=payload.max_suggestions,
            )
        except EditError as err:
            raise HTTPException(status_code=400, detail=str(err)) from err
        return {
            "model_version": bundle.model_version,
            "position": payload.position,
            "suggestions": [s.to_dict() for s in suggestions],
        }

    @app.get("/prototypes")
    def prototypes() -> dict:
        require_projected()
        out = {}
        for g, bank in model.banks.items():
            out[g] = [
                {
                    "index": i,
                    "class": int(bank.class_of[i]),
                    "source_id": p.source_id,
                    "unit_index": p.unit_index,
                    "surface_text": p.surface_text,
                    "distance": p.distance,
                }
                for i, p in enumerate(bank.projection)
            ]
        return {"model_version": bundle.model_version, "prototypes": out}

    return app


def serve(checkpoint: str | Path, host: str = "127.0.0.1", port: int = 8000) -> None:
    """Load a checkpoint and run the service (blocking)."""
    import uvicorn

    bundle = load_checkpoint(checkpoint)
    app = create_app(bundle)
    uvicorn.run(app, host=host, port=port)
