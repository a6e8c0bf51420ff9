"""Asyncio TCP server speaking the newline-delimited JSON protocol.

One session per connection.  Each session's messages are consumed strictly
in order by a single executor; solves run in worker threads so the reader
keeps accepting messages while a solve is in flight.  Consecutive queued
drags for the same handle are coalesced: the superseded ones are applied
and acknowledged without solving, only the newest triggers a solve.
"""

from __future__ import annotations

import asyncio
import json
import sys
from typing import Callable, Optional

from . import protocol
from .errors import MorphkitError
from .session import Session, SessionConfig

READ_LIMIT = 16 * 1024 * 1024
_EOF = object()


def encode(reply: dict) -> bytes:
    return json.dumps(reply, separators=(",", ":")).encode("utf-8") + b"\n"


def _coalescible(item) -> bool:
    return (
        isinstance(item, tuple)
        and item[0] == "msg"
        and isinstance(item[1], dict)
        and item[1].get("kind") == "drag"
        and "node" in item[1]
        and "target" in item[1]
    )


class MessageExecutor:
    """Ordered message pump for one session with drag coalescing."""

    def __init__(self, session: Session, send):
        self.session = session
        self._send = send
        self._queue: asyncio.Queue = asyncio.Queue()

    async def submit(self, item) -> None:
        await self._queue.put(item)

    async def close(self) -> None:
        await self._queue.put(_EOF)

    async def _reply_bad(self, message: str) -> None:
        await self._send(protocol.error_reply(self.session, {}, message))

    async def _ack_superseded(self, msg: dict) -> None:
        """Apply a superseded drag's target and acknowledge it, no solve."""
        try:
            self.session.apply_drag(msg["node"], msg["target"])
            reply = protocol.ack_reply(self.session, msg, {"coalesced": True})
        except MorphkitError as exc:
            reply = protocol.error_reply(
                self.session, msg, str(exc), protocol.error_code_for(exc)
            )
        await self._send(reply)

    async def run(self) -> None:
        buffer: list = []
        while True:
            if not buffer:
                buffer.append(await self._queue.get())
            while True:
                try:
                    buffer.append(self._queue.get_nowait())
                except asyncio.QueueEmpty:
                    break
            item = buffer.pop(0)
            if item is _EOF:
                return
            tag, payload = item
            if tag == "bad":
                await self._reply_bad(payload)
                continue
            msg = payload
            if _coalescible(item):
                while (
                    buffer
                    and _coalescible(buffer[0])
                    and buffer[0][1]["node"] == msg["node"]
                ):
                    await self._ack_superseded(msg)
                    msg = buffer.pop(0)[1]
            reply = await asyncio.to_thread(protocol.handle_message, self.session, msg)
            await self._send(reply)


async def serve_connection(reader, writer, make_session: Callable[[], Session]) -> None:
    session = make_session()

    async def send(reply: dict) -> None:
        writer.write(encode(reply))
        await writer.drain()

    executor = MessageExecutor(session, send)
    pump = asyncio.create_task(executor.run())
    try:
        while True:
            line = await reader.readline()
            if not line:
                break
            text = line.decode("utf-8", errors="replace").strip()
            if not text:
                continue
            try:
                msg = json.loads(text)
            except json.JSONDecodeError as exc:
                await executor.submit(("bad", f"invalid JSON: {exc}"))
            else:
                await executor.submit(("msg", msg))
    except (ConnectionResetError, asyncio.IncompleteReadError):
        pass
    finally:
        await executor.close()
        try:
            await pump
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionResetError, OSError):
                pass


async def serve_async(
    host: str = "127.0.0.1",
    port: int = 7777,
    config: Optional[SessionConfig] = None,
    web_port: Optional[int] = None,
    web_root=None,
    announce=None,
) -> None:
    """Run the TCP protocol server (and optionally the browser bridge)."""

    def make_session() -> Session:
        return Session(config or SessionConfig())

    async def handler(reader, writer):
        await serve_connection(reader, writer, make_session)

    server = await asyncio.start_server(handler, host, port, limit=READ_LIMIT)
    actual_port = server.sockets[0].getsockname()[1]
    say = announce or (lambda text: print(text, flush=True))
    say(f"morphkit protocol listening on {host}:{actual_port}")

    tasks = [asyncio.create_task(server.serve_forever())]
    if web_port is not None:
        from .webbridge import serve_web

        tasks.append(
            asyncio.create_task(serve_web(host, web_port, make_session, web_root, say))
        )
    try:
        await asyncio.gather(*tasks)
    finally:
        server.close()
        await server.wait_closed()


def run_server(
    host: str = "127.0.0.1",
    port: int = 7777,
    config: Optional[SessionConfig] = None,
    web_port: Optional[int] = None,
    web_root=None,
) -> int:
    try:
        asyncio.run(serve_async(host, port, config, web_port, web_root))
    except KeyboardInterrupt:
        print("shutting down", file=sys.stderr)
    return 0
