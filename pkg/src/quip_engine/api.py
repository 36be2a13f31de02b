"""HTTP boundary over the session service.

Endpoints:
    POST /sessions                    create a session (JSON overrides)
    GET  /sessions/{id}               current snapshot
    POST /sessions/{id}/commands      submit a command, returns ack seq
    GET  /sessions/{id}/log           persisted events (line-delimited JSON)
    GET  /sessions/{id}/stream        replay + live events (LDJSON)
    WS   /sessions/{id}/stream        bidirectional: commands in, events out

Stream events carry exactly (session_id, seq, kind, payload, ts).
"""

from __future__ import annotations

import asyncio
import contextlib
import json

from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, StreamingResponse

from .config import ServiceConfig
from .errors import InvalidConfig, QuipError, SchemaViolation, SessionNotFound
from .service import SessionService

_STATUS = {
    "session_not_found": 404,
    "invalid_config": 400,
    "schema_violation": 400,
    "corrupt_log": 409,
}


def _error_response(exc: QuipError) -> JSONResponse:
    return JSONResponse(status_code=_STATUS.get(exc.code, 500), content=exc.to_payload())


def create_app(config: ServiceConfig | None = None, service: SessionService | None = None) -> FastAPI:
    config = config or ServiceConfig()

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.service = service or SessionService(config)
        try:
            yield
        finally:
            await app.state.service.close()

    app = FastAPI(title="quip-engine", lifespan=lifespan)

    @app.exception_handler(QuipError)
    async def handle_quip_error(request: Request, exc: QuipError):
        return _error_response(exc)

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        body = await request.body()
        overrides = json.loads(body) if body else {}
        if not isinstance(overrides, dict):
            raise InvalidConfig("session overrides must be a JSON object")
        session_id = await request.app.state.service.create_session(overrides)
        return {"session_id": session_id}

    @app.get("/sessions/{session_id}")
    async def get_session(session_id: str, request: Request):
        return request.app.state.service.snapshot(session_id)

    @app.post("/sessions/{session_id}/commands", status_code=202)
    async def submit_command(session_id: str, request: Request):
        body = await request.json()
        if not isinstance(body, dict) or "kind" not in body:
            raise SchemaViolation("command body must be an object with a 'kind'")
        payload = body.get("payload", {})
        if not isinstance(payload, dict):
            raise SchemaViolation("command payload must be an object")
        ack = await request.app.state.service.submit(
            session_id, body["kind"], payload, client_ts=body.get("client_ts")
        )
        return {"seq": ack}

    @app.get("/sessions/{session_id}/log")
    async def get_log(session_id: str, request: Request):
        events = request.app.state.service.session_events(session_id)
        body = "".join(ev.canonical_json() + "\n" for ev in events)
        return StreamingResponse(iter([body]), media_type="application/x-ndjson")

    @app.get("/sessions/{session_id}/stream")
    async def stream_events(session_id: str, request: Request, from_seq: int = 0):
        service: SessionService = request.app.state.service
        service.snapshot(session_id)  # 404 before the stream starts

        async def event_lines():
            async for ev in service.subscribe(session_id, from_seq=from_seq):
                yield ev.canonical_json() + "\n"

        return StreamingResponse(event_lines(), media_type="application/x-ndjson")

    @app.websocket("/sessions/{session_id}/stream")
    async def stream_socket(ws: WebSocket, session_id: str, from_seq: int = 0):
        service: SessionService = ws.app.state.service
        try:
            service.snapshot(session_id)
        except SessionNotFound:
            await ws.close(code=4404)
            return
        await ws.accept()

        async def pump_out():
            async for ev in service.subscribe(session_id, from_seq=from_seq):
                await ws.send_text(ev.canonical_json())

        out_task = asyncio.create_task(pump_out())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    body = json.loads(raw)
                    await service.submit(
                        session_id,
                        body.get("kind", ""),
                        body.get("payload", {}),
                        client_ts=body.get("client_ts"),
                    )
                except QuipError as exc:
                    await ws.send_text(json.dumps({"kind": "command_rejected", **exc.to_payload()}))
                except json.JSONDecodeError:
                    await ws.send_text(
                        json.dumps({"kind": "command_rejected", "code": "schema_violation"})
                    )
        except WebSocketDisconnect:
            pass
        finally:
            out_task.cancel()

    return app
