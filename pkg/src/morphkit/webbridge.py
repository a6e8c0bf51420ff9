"""Browser bridge: WebSocket endpoint speaking the same JSON protocol,
plus static hosting for the built drag UI.  Requires the optional web
extra (fastapi + uvicorn); the TCP server works without it.
"""

from __future__ import annotations

import asyncio
import json
from pathlib import Path
from typing import Callable, Optional

from .server import MessageExecutor
from .session import Session


def create_app(make_session: Callable[[], Session], web_root=None):
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI()

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        session = make_session()
        closed = asyncio.Event()

        async def send(reply: dict) -> None:
            if closed.is_set():
                return
            try:
                await ws.send_text(json.dumps(reply, separators=(",", ":")))
            except Exception:
                closed.set()

        executor = MessageExecutor(session, send)
        pump = asyncio.create_task(executor.run())
        try:
            while True:
                text = await ws.receive_text()
                try:
                    msg = json.loads(text)
                except json.JSONDecodeError as exc:
                    await executor.submit(("bad", f"invalid JSON: {exc}"))
                else:
                    await executor.submit(("msg", msg))
        except WebSocketDisconnect:
            pass
        finally:
            closed.set()
            await executor.close()
            await pump

    if web_root is not None and Path(web_root).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(web_root), html=True), name="ui")

    return app


async def serve_web(
    host: str,
    port: int,
    make_session: Callable[[], Session],
    web_root=None,
    announce: Optional[Callable[[str], None]] = None,
) -> None:
    import uvicorn

    app = create_app(make_session, web_root)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    if announce:
        announce(f"morphkit web bridge on http://{host}:{port}")
    await server.serve()
