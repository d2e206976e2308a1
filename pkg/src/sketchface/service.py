"""Local service exposing editing sessions over HTTP and a message channel.

Wire protocol: JSON messages with a per-session strictly increasing sequence
number.  Client kinds: stroke, erase, gesture, switch_mode, undo, redo,
get_mesh.  Server kinds: model_update, coalesced, error.  Vertex payloads
travel as base64-packed little-endian f32.
"""

import base64
import uuid
from collections import deque

import numpy as np

from .mesh import save_obj
from .session import (
    EraseTarget, SessionError, apply_stroke, dispatch_gesture, erase,
    new_session, redo, switch_mode, undo,
)

CLIENT_KINDS = ("stroke", "erase", "gesture", "switch_mode", "undo", "redo",
                "get_mesh")
MAX_PENDING = 32


def pack_vertices(vertices):
    return base64.b64encode(
        np.ascontiguousarray(vertices, dtype="<f4").tobytes()).decode("ascii")


def unpack_vertices(payload):
    flat = np.frombuffer(base64.b64decode(payload), dtype="<f4")
    return flat.reshape(-1, 3).astype(np.float64)


class SessionWorker:
    """Serialized message handling for one session.

    Operations apply strictly in arrival order.  When more than MAX_PENDING
    messages are queued, bursts of consecutive strokes are coalesced: only
    the newest stroke of each burst is executed and the skipped ones are
    acknowledged with kind="coalesced".
    """

    def __init__(self, assets, start_mode="followup_sketching",
                 max_pending=MAX_PENDING):
        self.state = new_session(assets, start_mode)
        self.max_pending = max_pending
        self.pending = deque()
        self.last_seq = 0

    def enqueue(self, message):
        self.pending.append(message)

    def _coalesce(self):
        if len(self.pending) <= self.max_pending:
            return []
        kept, acks = [], []
        run = []
        for msg in self.pending:
            if msg.get("kind") == "stroke":
                run.append(msg)
                continue
            if run:
                acks += run[:-1]
                kept.append(run[-1])
                run = []
            kept.append(msg)
        if run:
            acks += run[:-1]
            kept.append(run[-1])
        self.pending = deque(kept)
        return [{"kind": "coalesced", "seq": m.get("seq")} for m in acks]

    def drain(self):
        replies = self._coalesce()
        while self.pending:
            replies.append(self.handle(self.pending.popleft()))
        return replies

    def _error(self, seq, detail):
        return {"kind": "error", "seq": seq, "detail": detail}

    def _update_reply(self, seq, extra=None):
        s = self.state
        reply = {
            "kind": "model_update",
            "seq": seq,
            "mode": s.mode,
            "coeffs": {"u": s.coeffs.u.tolist(), "v": s.coeffs.v.tolist()},
            "vertices_b64": pack_vertices(s.vertices),
            "handle_rms_px": s.last_handle_rms_px,
            "state_hash": s.state_hash(),
        }
        if extra:
            reply.update(extra)
        return reply

    def handle(self, message):
        if not isinstance(message, dict):
            return self._error(None, "message must be a JSON object")
        seq = message.get("seq")
        kind = message.get("kind")
        if not isinstance(seq, int):
            return self._error(seq, "missing integer sequence number")
        if seq <= self.last_seq:
            return self._error(
                seq, f"sequence must increase (last was {self.last_seq})")
        self.last_seq = seq
        if kind not in CLIENT_KINDS:
            return self._error(seq, f"unknown kind {kind!r}")

        payload = message.get("payload") or {}
        try:
            if kind == "stroke":
                pts = np.asarray(payload["points"], dtype=np.float64)
                apply_stroke(self.state, pts)
                return self._update_reply(seq)
            if kind == "erase":
                target = EraseTarget(
                    payload["target"], payload.get("name"),
                    payload.get("index", 0),
                    tuple(payload["span"]) if payload.get("span") else None)
                erase(self.state, target)
                return self._update_reply(seq)
            if kind == "gesture":
                pts = np.asarray(payload["points"], dtype=np.float64)
                action, _ = dispatch_gesture(self.state, pts)
                return self._update_reply(seq, {
                    "action": action.kind, "label": action.label,
                    "confidence": action.confidence})
            if kind == "switch_mode":
                switch_mode(self.state, payload["mode"])
                return self._update_reply(seq)
            if kind == "undo":
                undo(self.state)
                return self._update_reply(seq)
            if kind == "redo":
                redo(self.state)
                return self._update_reply(seq)
            if kind == "get_mesh":
                return self._update_reply(seq)
        except (KeyError, TypeError, ValueError, SessionError) as e:
            return self._error(seq, f"{type(e).__name__}: {e}")


def create_app(make_assets, default_mode="followup_sketching"):
    """FastAPI app; `make_assets` is a zero-argument factory so each worker
    gets its own solver cache while sharing the read-only model arrays."""
    import json as _json

    from fastapi import FastAPI, WebSocket, WebSocketDisconnect
    from fastapi.responses import PlainTextResponse, JSONResponse

    app = FastAPI()
    workers = {}

    @app.get("/health")
    def health():
        return {"status": "ok", "sessions": len(workers)}

    @app.post("/sessions")
    def create_session(body: dict = None):
        mode = (body or {}).get("mode", default_mode)
        try:
            worker = SessionWorker(make_assets(), mode)
        except SessionError as e:
            return JSONResponse({"detail": str(e)}, status_code=400)
        sid = uuid.uuid4().hex[:12]
        workers[sid] = worker
        return {"session": sid, "mode": mode,
                "n_vertices": int(worker.state.assets.template.n)}

    @app.delete("/sessions/{sid}")
    def delete_session(sid: str):
        if sid not in workers:
            return JSONResponse({"detail": "unknown session"}, status_code=404)
        del workers[sid]
        return {"deleted": sid}

    @app.get("/sessions/{sid}/mesh.obj")
    def mesh_obj(sid: str):
        worker = workers.get(sid)
        if worker is None:
            return JSONResponse({"detail": "unknown session"}, status_code=404)
        mesh = worker.state.assets.template.with_vertices(worker.state.vertices)
        return PlainTextResponse(save_obj(mesh).decode("utf-8"),
                                 media_type="text/plain")

    @app.websocket("/sessions/{sid}/channel")
    async def channel(ws: WebSocket, sid: str):
        await ws.accept()
        while True:
            try:
                raw = await ws.receive_text()
            except WebSocketDisconnect:
                return
            worker = workers.get(sid)
            if worker is None:
                await ws.send_json({"kind": "error", "seq": None,
                                    "detail": "unknown session"})
                continue
            try:
                msg = _json.loads(raw)
            except ValueError:
                await ws.send_json({"kind": "error", "seq": None,
                                    "detail": "malformed JSON payload"})
                continue
            worker.enqueue(msg)
            for reply in worker.drain():
                await ws.send_json(reply)

    return app


def serve(make_assets, host="127.0.0.1", port=8642, default_mode="followup_sketching"):
    import uvicorn
    uvicorn.run(create_app(make_assets, default_mode), host=host, port=port)
