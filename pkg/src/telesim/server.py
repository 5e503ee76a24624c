"""FastAPI wrapper: WebSocket endpoint per session plus a tiny REST surface.

The session core is transport-free; this module owns the sockets, pumps the
10 Hz tick loop, and routes the outbox (broadcast vs direct) to connections.
Frames are newline-terminated UTF-8 JSON, one message per frame.
"""
from __future__ import annotations

import asyncio
import json
import os
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, Field

from .session import Session, encode
from .world import generate_layout, layout_from_json

TICK_SECONDS = 0.1
DEFAULT_PORT = 8750


def pick_port(cli_port: Optional[int] = None) -> int:
    """CLI flag wins, then TELESIM_PORT, then the default."""
    if cli_port is not None:
        return int(cli_port)
    env = os.environ.get("TELESIM_PORT")
    return int(env) if env else DEFAULT_PORT


class SessionSpec(BaseModel):
    session_id: str = Field(default="s0", min_length=1, max_length=64)
    layout_seed: int = 1
    sim_seed: int = 0
    budget: int = 500


class SessionInfo(BaseModel):
    session: str
    tick: int
    clients: int


class _Room:
    """One live session and the sockets watching it."""

    def __init__(self, session: Session):
        self.session = session
        self.conns: dict[int, WebSocket] = {}
        self.by_client: dict[str, int] = {}
        self.lock = asyncio.Lock()
        self.pump: Optional[asyncio.Task] = None

    async def deliver(self, outbox):
        for rcpt, msg in outbox:
            data = encode(msg)
            if rcpt is None:
                targets = list(self.conns.values())
            else:
                conn_id = self.by_client.get(rcpt)
                ws = self.conns.get(conn_id)
                targets = [ws] if ws is not None else []
            for ws in targets:
                try:
                    await ws.send_text(data)
                except Exception:
                    pass    # reader task handles the disconnect

    async def run(self):
        while True:
            await asyncio.sleep(TICK_SECONDS)
            async with self.lock:
                outbox = self.session.tick()
            await self.deliver(outbox)


def create_app(layout=None, layout_seed: int = 1, sim_seed: int = 0,
               budget: int = 500) -> FastAPI:
    app = FastAPI(title="telesim")
    rooms: dict[str, _Room] = {}

    def make_room(session_id: str, seed: int, sseed: int, bud: int) -> _Room:
        lay = layout if layout is not None else generate_layout(seed=seed)
        room = _Room(Session(lay, session_id=session_id, seed=sseed,
                             budget=bud))
        rooms[session_id] = room
        return room

    @app.post("/sessions", response_model=SessionInfo)
    async def create_session(spec: SessionSpec):
        room = rooms.get(spec.session_id)
        if room is None:
            room = make_room(spec.session_id, spec.layout_seed,
                             spec.sim_seed, spec.budget)
        s = room.session
        return SessionInfo(session=s.id, tick=s.tick_no,
                           clients=len(s.clients))

    @app.get("/sessions", response_model=list[SessionInfo])
    async def list_sessions():
        return [SessionInfo(session=r.session.id, tick=r.session.tick_no,
                            clients=len(r.session.clients))
                for r in rooms.values()]

    @app.websocket("/session/{session_id}")
    async def session_socket(ws: WebSocket, session_id: str):
        await ws.accept()
        room = rooms.get(session_id)
        if room is None:
            room = make_room(session_id, layout_seed, sim_seed, budget)
        if room.pump is None or room.pump.done():
            room.pump = asyncio.create_task(room.run())
        conn_id = id(ws)
        room.conns[conn_id] = ws
        try:
            while True:
                raw = await ws.receive_text()
                for line in raw.splitlines():
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        msg = json.loads(line)
                    except ValueError:
                        await ws.send_text(encode(
                            {"type": "error", "code": "bad_message",
                             "message": "not JSON", "session": session_id,
                             "tick": room.session.tick_no}))
                        continue
                    cid = msg.get("client_id") if isinstance(msg, dict) else None
                    if isinstance(cid, str):
                        # joins (and rejoins) bind this socket to the id
                        room.by_client[cid] = conn_id
                    async with room.lock:
                        room.session.submit(msg)
        except WebSocketDisconnect:
            pass
        finally:
            room.conns.pop(conn_id, None)
            for cid, c in list(room.by_client.items()):
                if c == conn_id:
                    room.by_client.pop(cid, None)

    return app


def load_layout_file(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return layout_from_json(f.read())


def serve(port: Optional[int] = None, layout_file: Optional[str] = None,
          seed: int = 1):
    """Blocking entry point used by the CLI."""
    import uvicorn
    lay = load_layout_file(layout_file) if layout_file else None
    app = create_app(layout=lay, layout_seed=seed)
    uvicorn.run(app, host="127.0.0.1", port=pick_port(port),
                log_level="warning")
