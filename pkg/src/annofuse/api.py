"""HTTP interface to a workspace: source upload, fusion, dataset and
annotation queries, edits, findings, comments, votes, blobs, and the feed.

Every request carries an X-User-Id header checked against the user registry.
All module errors map to one machine-readable code each; malformed input
never surfaces as an unmapped 500. Request bodies reuse the same JSON shapes
as the event log, so what the API returns is what the log stores.
"""

from __future__ import annotations

import json
from typing import Mapping, Sequence

from fastapi import FastAPI, Form, Request, Response, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .cleansing import EditRequest, EmptyScope
from .exploration import AnnotationView
from .fusion import FusionResult, ToleranceConfig
from .ingestion import ConfigError, SourceFormatError, descriptor_to_jsonable
from .model import (
    AnnofuseError,
    Edit,
    Finding,
    InsufficientQualification,
    InvalidAnnotation,
    LifecycleState,
    NotVotable,
    RedundancyStatus,
    SchemaMismatch,
    SourceHierarchy,
    UnknownTarget,
    Verdict,
    annotation_to_jsonable,
    cell_from_jsonable,
    cell_to_jsonable,
    format_timestamp,
    scalar_from_jsonable,
    scalar_to_jsonable,
    scope_from_jsonable,
)
from .store import AnnotationEvent, LogCorruption, ReplayError, StepFilter
from .workspace import (
    AlreadyFused,
    NotFused,
    ServiceLockHeld,
    UnknownUser,
    Workspace,
)


class ApiError(AnnofuseError):
    """Error with a fixed HTTP status and machine code."""

    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        super().__init__(message)


# Ordered by specificity: first matching class wins.
_ERROR_MAP: list[tuple[type, int, str]] = [
    (UnknownUser, 401, "UNKNOWN_USER"),
    (InsufficientQualification, 403, "INSUFFICIENT_QUALIFICATION"),
    (UnknownTarget, 404, "UNKNOWN_TARGET"),
    (NotVotable, 409, "NOT_VOTABLE"),
    (NotFused, 409, "NOT_FUSED"),
    (AlreadyFused, 409, "ALREADY_FUSED"),
    (ServiceLockHeld, 409, "SERVICE_LOCKED"),
    (EmptyScope, 400, "EMPTY_SCOPE"),
    (SchemaMismatch, 400, "SCHEMA_MISMATCH"),
    (SourceFormatError, 400, "SOURCE_FORMAT"),
    (ConfigError, 400, "CONFIG_ERROR"),
    (InvalidAnnotation, 400, "INVALID_ANNOTATION"),
    (LogCorruption, 500, "LOG_CORRUPTION"),
    (ReplayError, 500, "REPLAY_ERROR"),
    (AnnofuseError, 400, "INVALID_REQUEST"),
]


def _error_response(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"error": {"code": code, "message": message}},
    )


def _classify_error(exc: Exception) -> tuple[int, str]:
    if isinstance(exc, ApiError):
        return exc.status, exc.code
    for cls, status, code in _ERROR_MAP:
        if isinstance(exc, cls):
            return status, code
    return 500, "INTERNAL"


# --------------------------------------------------------------------------
# serialization helpers

def _event_jsonable(
    event: AnnotationEvent, states: Mapping[str, LifecycleState]
) -> dict:
    out = {
        "seq": event.seq,
        "wall_time": format_timestamp(event.wall_time),
        "annotation": annotation_to_jsonable(event.payload),
    }
    state = states.get(event.payload.annotation_id)
    if state is not None:
        out["state"] = state.value
    return out


def _view_jsonable(view: AnnotationView) -> dict:
    return {
        "annotation_id": view.annotation_id,
        "author": {
            "user_id": view.author.user_id,
            "display_name": view.author.display_name,
            "qualification": (
                None if view.author.qualification is None
                else view.author.qualification.value
            ),
        },
        "thumbnail_ref": view.thumbnail_ref,
        "body": view.body,
        "state": view.state.value,
        "comments": [annotation_to_jsonable(c) for c in view.comments],
        "tally": {"confirms": view.tally.confirms, "rejects": view.tally.rejects},
        "created_at": format_timestamp(view.created_at),
    }


def _fusion_summary(result: FusionResult) -> dict:
    counts = {status: 0 for status in RedundancyStatus}
    for fused in result.cells.values():
        counts[fused.status] += 1
    resolutions = sum(
        1 for a in result.annotations if type(a).__name__ == "Resolution"
    )
    return {
        "cells": len(result.cells),
        "single_source": counts[RedundancyStatus.SINGLE_SOURCE],
        "redundant_consistent": counts[RedundancyStatus.REDUNDANT_CONSISTENT],
        "discrepant": counts[RedundancyStatus.DISCREPANT],
        "auto_resolved": resolutions,
        "unresolved": len(result.unresolved),
        "warnings": list(result.warnings),
    }


async def _json_body(request: Request) -> dict:
    raw = await request.body()
    if not raw:
        return {}
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError, ValueError) as exc:
        raise ApiError(400, "VALIDATION", f"request body is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ApiError(400, "VALIDATION", "request body must be a JSON object")
    return data


def _parse_cells(data: object) -> list:
    if not isinstance(data, list):
        raise ApiError(400, "VALIDATION", "visible_cells must be a JSON array")
    try:
        return [cell_from_jsonable(entry) for entry in data]
    except (KeyError, TypeError, ValueError) as exc:
        raise ApiError(400, "VALIDATION", f"bad cell key: {exc}")


# --------------------------------------------------------------------------
# application factory

def create_app(
    workspace: Workspace,
    hierarchies: Sequence[SourceHierarchy] = (),
) -> FastAPI:
    app = FastAPI(title="annofuse", docs_url=None, redoc_url=None)

    @app.exception_handler(AnnofuseError)
    async def on_domain_error(request: Request, exc: AnnofuseError):
        status, code = _classify_error(exc)
        return _error_response(status, code, str(exc))

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return _error_response(400, "VALIDATION", str(exc))

    @app.exception_handler(Exception)
    async def on_unexpected_error(request: Request, exc: Exception):
        return _error_response(500, "INTERNAL", f"{type(exc).__name__}: {exc}")

    def current_user(request: Request):
        return workspace.require_user(request.headers.get("X-User-Id"))

    # -- sources and fusion --------------------------------------------------

    @app.post("/api/sources", status_code=201)
    async def upload_source(
        request: Request, file: UploadFile, descriptor: str = Form(...)
    ):
        current_user(request)
        try:
            descriptor_data = json.loads(descriptor)
        except json.JSONDecodeError as exc:
            raise ApiError(400, "VALIDATION", f"descriptor is not valid JSON: {exc}")
        if not isinstance(descriptor_data, dict):
            raise ApiError(400, "VALIDATION", "descriptor must be a JSON object")
        payload = await file.read()
        registered = workspace.register_source(descriptor_data, payload)
        return {"source": descriptor_to_jsonable(registered, workspace.sources_dir)}

    @app.post("/api/fuse")
    async def trigger_fusion(request: Request):
        current_user(request)
        body = await _json_body(request)
        tolerance = None
        if "tolerance" in body:
            try:
                tolerance = ToleranceConfig.from_jsonable(body["tolerance"])
            except (TypeError, ValueError, KeyError) as exc:
                raise ApiError(400, "VALIDATION", f"bad tolerance config: {exc}")
        result = workspace.run_fusion(hierarchies, tolerance)
        return _fusion_summary(result)

    # -- dataset reads ---------------------------------------------------------

    @app.get("/api/cells")
    async def get_cells(
        request: Request,
        entity: str | None = None,
        dimension: str | None = None,
    ):
        current_user(request)
        fused = workspace.fused_cells()
        dataset = workspace.require_dataset()
        cells = []
        for key in sorted(fused):
            if entity is not None and key.entity_id != entity:
                continue
            if dimension is not None and key.dimension != dimension:
                continue
            cell = fused[key]
            current = dataset.get(key)
            cells.append({
                "cell": cell_to_jsonable(key),
                "status": cell.status.value,
                "fused": scalar_to_jsonable(cell.chosen),
                "current": scalar_to_jsonable(current),
                "edited": current != cell.chosen,
                "sources": [
                    {
                        "source": sv.source,
                        "value": scalar_to_jsonable(sv.value),
                        "recorded_at": format_timestamp(sv.recorded_at),
                        "reliability": sv.reliability.value,
                    }
                    for sv in cell.contributing
                ],
            })
        return {"cells": cells}

    # -- annotation reads --------------------------------------------------------

    @app.get("/api/annotations")
    async def get_annotations(
        request: Request,
        step: str | None = None,
        state: str | None = None,
        entity: str | None = None,
        dimension: str | None = None,
    ):
        current_user(request)
        step_filter = None
        if step is not None:
            try:
                step_filter = StepFilter(step.lower())
            except ValueError:
                raise ApiError(400, "VALIDATION", f"unknown step {step!r}")
        state_filter = None
        if state is not None:
            try:
                state_filter = LifecycleState(state.lower())
            except ValueError:
                raise ApiError(400, "VALIDATION", f"unknown state {state!r}")
        events = workspace.query_annotations(
            step=step_filter, state=state_filter, entity_id=entity, dimension=dimension
        )
        states = workspace.annotation_states()
        return {"annotations": [_event_jsonable(e, states) for e in events]}

    @app.get("/api/feed")
    async def get_feed(request: Request, include_edits: bool = False):
        current_user(request)
        return {"feed": [_view_jsonable(v) for v in workspace.feed(include_edits)]}

    # -- cleansing writes -----------------------------------------------------------

    @app.post("/api/edits", status_code=201)
    async def post_edit(request: Request):
        user = current_user(request)
        body = await _json_body(request)
        if "scope" not in body:
            raise ApiError(400, "VALIDATION", "edit needs a scope")
        try:
            scope = scope_from_jsonable(body["scope"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ApiError(400, "VALIDATION", f"bad scope: {exc}")
        new_value = None
        new_values = None
        if "new_values" in body:
            entries = body["new_values"]
            if not isinstance(entries, list):
                raise ApiError(400, "VALIDATION", "new_values must be an array")
            try:
                new_values = {
                    cell_from_jsonable(e["cell"]): scalar_from_jsonable(e["value"])
                    for e in entries
                }
            except (KeyError, TypeError, ValueError) as exc:
                raise ApiError(400, "VALIDATION", f"bad new_values entry: {exc}")
            if any(v is None for v in new_values.values()):
                raise ApiError(400, "VALIDATION", "new_values entries must not be null")
        elif "new_value" in body:
            try:
                new_value = scalar_from_jsonable(body["new_value"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ApiError(400, "VALIDATION", f"bad new_value: {exc}")
            if new_value is None:
                raise ApiError(400, "VALIDATION", "new_value must not be null")
        edit_request = EditRequest(
            scope=scope,
            author=user.user_id,
            rationale=str(body.get("rationale", "")),
            new_value=new_value,
            new_values=new_values,
            rule_set=body.get("rule_set"),
        )
        annotation = workspace.submit_edit(edit_request)
        states = workspace.annotation_states()
        return {
            "annotation": annotation_to_jsonable(annotation),
            "state": states[annotation.annotation_id].value,
        }

    # -- exploration writes ------------------------------------------------------------

    @app.post("/api/findings", status_code=201)
    async def post_finding(
        request: Request,
        file: UploadFile,
        text: str = Form(...),
        visible_cells: str = Form("[]"),
        allow_empty_refs: bool = Form(False),
    ):
        user = current_user(request)
        try:
            cells_data = json.loads(visible_cells)
        except json.JSONDecodeError as exc:
            raise ApiError(400, "VALIDATION", f"visible_cells is not valid JSON: {exc}")
        cells = _parse_cells(cells_data)
        payload = await file.read()
        media_type = file.content_type or "image/png"
        annotation = workspace.submit_finding(
            text=text,
            payload=payload,
            visible_cells=cells,
            author_id=user.user_id,
            media_type=media_type,
            allow_empty_refs=allow_empty_refs,
        )
        return {
            "annotation": annotation_to_jsonable(annotation),
            "blob_id": annotation.snapshot_ref,
        }

    @app.post("/api/annotations/{annotation_id}/comments", status_code=201)
    async def post_comment(request: Request, annotation_id: str):
        user = current_user(request)
        body = await _json_body(request)
        text = body.get("text")
        if not isinstance(text, str):
            raise ApiError(400, "VALIDATION", "comment needs a text field")
        annotation = workspace.submit_comment(annotation_id, text, user.user_id)
        return {"annotation": annotation_to_jsonable(annotation)}

    def _vote(target_id: str, body: dict, user_id: str, expected: type) -> dict:
        target = workspace.get_annotation(target_id)
        if not isinstance(target, expected):
            raise UnknownTarget(
                f"no {expected.__name__.lower()} with id {target_id!r}"
            )
        verdict_raw = body.get("verdict")
        try:
            verdict = Verdict(str(verdict_raw).lower())
        except ValueError:
            raise ApiError(400, "VALIDATION", f"unknown verdict {verdict_raw!r}")
        annotation = workspace.submit_vote(target_id, verdict, user_id)
        states = workspace.annotation_states()
        return {
            "annotation": annotation_to_jsonable(annotation),
            "target_state": states[target_id].value,
        }

    @app.post("/api/edits/{edit_id}/votes", status_code=201)
    async def post_edit_vote(request: Request, edit_id: str):
        user = current_user(request)
        body = await _json_body(request)
        return _vote(edit_id, body, user.user_id, Edit)

    @app.post("/api/findings/{finding_id}/votes", status_code=201)
    async def post_finding_vote(request: Request, finding_id: str):
        user = current_user(request)
        body = await _json_body(request)
        return _vote(finding_id, body, user.user_id, Finding)

    # -- blobs -------------------------------------------------------------------------

    @app.get("/api/blobs/{blob_id}")
    async def get_blob(request: Request, blob_id: str):
        current_user(request)
        blob = workspace.blobs.get(blob_id)
        return Response(content=blob.payload, media_type=blob.media_type)

    return app


def serve(
    data_dir: str,
    port: int = 8000,
    hierarchy_path: str | None = None,
    users_path: str | None = None,
    host: str = "127.0.0.1",
) -> None:
    """Run the service: acquire the directory lock, serve until interrupted."""
    import signal

    import uvicorn

    from .ingestion import load_hierarchies_file
    from .workspace import load_users

    users = load_users(users_path) if users_path else None
    workspace = Workspace(data_dir, users=users)
    hierarchies = load_hierarchies_file(hierarchy_path) if hierarchy_path else []
    workspace.acquire_service_lock()

    def _terminate(signum: int, frame: object) -> None:
        raise SystemExit(128 + signum)

    # uvicorn re-raises a captured INT/TERM with the caller's handler restored
    # once its graceful shutdown finishes; with the OS default disposition that
    # re-raise would kill the process before the finally below releases the
    # lock. Converting the signal into SystemExit routes it through cleanup.
    previous_handlers = {
        sig: signal.signal(sig, _terminate)
        for sig in (signal.SIGINT, signal.SIGTERM)
    }
    try:
        app = create_app(workspace, hierarchies)
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        for sig, handler in previous_handlers.items():
            signal.signal(sig, handler)
        workspace.release_service_lock()
        workspace.close()
