"""HTTP guardrail service.

POST /v1/check   GuardrailInput document -> GuardrailVerdict record
GET  /v1/taxonomy  active taxonomy document
POST /v1/retrieve  RetrievalQuery document -> RetrievedPair records
GET  /healthz

The app factory validates the taxonomy (and index, when configured) before
the app is returned, so a service never starts serving with an invalid
ontology. Request logs carry message-text digests, never the text itself.
"""

from __future__ import annotations

import hashlib
import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import judge as judge_mod
from .config import ServiceConfig
from .embedding import make_embedder
from .errors import (
    BackendError,
    BackendTimeout,
    ConfigError,
    ParseError,
    RaecError,
    UnknownCodeError,
    ValidationError,
)
from .judge import GuardrailInput, JudgeConfig, verdict_to_record
from .llm import make_backend
from .retrieval import Index, RetrievalQuery, load_index, retrieve
from .taxonomy import Taxonomy, load_taxonomy, taxonomy_to_dict

logger = logging.getLogger("raec.service")


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _error_response(status: int, reason: str, kind: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"type": kind, "reason": reason}})


def _status_for(exc: Exception) -> tuple[int, str]:
    if isinstance(exc, UnknownCodeError):
        return 422, "unknown-taxonomy-code"
    if isinstance(exc, ParseError):
        return 502, "backend-output-unparseable"
    if isinstance(exc, (ValidationError, ConfigError)):
        return 400, "schema-violation"
    if isinstance(exc, BackendTimeout):
        return 504, "backend-timeout"
    if isinstance(exc, BackendError):
        return 503, "backend-unavailable"
    if isinstance(exc, RaecError):
        return 500, "internal-error"
    return 500, "internal-error"


def _parse_check_request(body: object, default_mode: str) -> GuardrailInput:
    if not isinstance(body, dict):
        raise ValidationError("request body must be a JSON object")
    for name in ("patient_message", "llm_draft"):
        value = body.get(name)
        if not isinstance(value, str) or not value.strip():
            raise ValidationError(f"missing or empty field: {name}")
    metadata = body.get("metadata", {})
    if not isinstance(metadata, dict):
        raise ValidationError("metadata must be an object")
    mode = body.get("mode", default_mode)
    return GuardrailInput(
        patient_message=body["patient_message"],
        llm_draft=body["llm_draft"],
        metadata={str(k): str(v) for k, v in metadata.items()},
        mode=mode,
        thread_id=body.get("thread_id"),
        message_id=body.get("message_id"),
    )


def _parse_retrieve_request(body: object, default_k: int) -> RetrievalQuery:
    if not isinstance(body, dict):
        raise ValidationError("request body must be a JSON object")
    return RetrievalQuery(
        query_text=body.get("query_text"),
        query_vector=body.get("query_vector"),
        recipient_name=body.get("recipient_name"),
        department=body.get("department"),
        specialty=body.get("specialty"),
        k=int(body.get("k", default_k)),
        exclude_thread_id=body.get("exclude_thread_id"),
    )


def create_app(config: ServiceConfig) -> FastAPI:
    """Build the service; raises (fails fast) on invalid taxonomy or index."""
    if not config.taxonomy_path:
        raise ConfigError("service requires taxonomy_path")
    taxonomy: Taxonomy = load_taxonomy(config.taxonomy_path)
    embedder = make_embedder(config.embedder)
    backend = make_backend(config.llm)
    index: Index | None = None
    if config.index_path:
        index = load_index(config.index_path, embedder=embedder)
    if config.mode_default == "enhanced" and index is None:
        raise ConfigError("mode_default=enhanced requires index_path")
    judge_config = JudgeConfig(
        k=config.k,
        relax_filters=config.relax_filters,
        fail_hard_on_retrieval_error=config.fail_hard_on_retrieval_error,
    )

    app = FastAPI(title="raec guardrail service")

    def _authorized(request: Request) -> bool:
        if not config.service_token:
            return True
        return request.headers.get("Authorization") == f"Bearer {config.service_token}"

    @app.get("/healthz")
    def healthz() -> dict:
        return {
            "status": "ok",
            "taxonomy_version": taxonomy.version,
            "index_size": len(index) if index is not None else None,
            "mode_default": config.mode_default,
        }

    @app.get("/v1/taxonomy")
    def get_taxonomy(request: Request):
        if not _authorized(request):
            return _error_response(401, "missing or bad bearer token", "unauthorized")
        return taxonomy_to_dict(taxonomy)

    @app.post("/v1/retrieve")
    async def post_retrieve(request: Request):
        if not _authorized(request):
            return _error_response(401, "missing or bad bearer token", "unauthorized")
        try:
            query = _parse_retrieve_request(await request.json(), config.k)
            if index is None:
                raise ValidationError("no index configured")
            pairs = retrieve(index, query, relax_filters=config.relax_filters)
        except Exception as exc:  # noqa: BLE001 - mapped to a structured error body
            status, kind = _status_for(exc)
            return JSONResponse(status_code=status,
                                content={"error": {"type": kind, "reason": str(exc)}})
        return {"pairs": [p.to_record() for p in pairs]}

    @app.post("/v1/check")
    async def post_check(request: Request):
        if not _authorized(request):
            return _error_response(401, "missing or bad bearer token", "unauthorized")
        try:
            body = await request.json()
        except Exception:  # noqa: BLE001
            return _error_response(400, "request body is not valid JSON", "schema-violation")
        try:
            inp = _parse_check_request(body, config.mode_default)
            if inp.mode == "enhanced" and index is None:
                raise ValidationError("enhanced mode requires a configured index")
            logger.info(
                "check mode=%s message_digest=%s draft_digest=%s",
                inp.mode, _digest(inp.patient_message), _digest(inp.llm_draft),
            )
            verdict = judge_mod.check(
                inp, taxonomy, backend,
                retriever=index if inp.mode == "enhanced" else None,
                config=judge_config,
            )
        except Exception as exc:  # noqa: BLE001 - mapped to a structured error body
            status, kind = _status_for(exc)
            return JSONResponse(status_code=status,
                                content={"error": {"type": kind, "reason": str(exc)}})
        return verdict_to_record(verdict, include_timings=config.include_timings)

    return app
