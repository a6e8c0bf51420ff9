"""Message dispatch for the newline-delimited JSON editing protocol.

Requests and replies are single JSON objects, one per line.  Every request
produces exactly one reply: ack, preview, or error, carrying the session
revision after the request was applied (or the unchanged revision when the
request failed).  An optional client "id" field is echoed back verbatim.

See PROTOCOL.md in the repository root for the full message schemas.
"""

from __future__ import annotations

import base64
import os
import tempfile
from typing import Optional

from .errors import (
    ArgumentError,
    ConstraintError,
    DataError,
    IoError,
    MorphkitError,
    ParseError,
    ProtocolError,
    SchemaError,
)
from .session import Session

MUTATING_KINDS = ("load", "build", "set_handles", "drag", "solve", "reset")
REQUEST_KINDS = MUTATING_KINDS + ("preview_request", "render_request", "export")

_ERROR_CODES = (
    (ProtocolError, "protocol"),
    (ConstraintError, "constraint"),
    (ArgumentError, "argument"),
    (ParseError, "data"),
    (SchemaError, "data"),
    (DataError, "data"),
    (IoError, "io"),
)


def _with_id(reply: dict, msg: dict) -> dict:
    if isinstance(msg, dict) and "id" in msg:
        reply["id"] = msg["id"]
    return reply


def ack_reply(session: Session, msg: dict, payload: Optional[dict] = None) -> dict:
    reply = {"kind": "ack", "revision": session.revision}
    if payload:
        reply.update(payload)
    return _with_id(reply, msg)


def preview_reply(session: Session, msg: dict, payload: dict) -> dict:
    reply = {"kind": "preview", "revision": session.revision}
    reply.update(payload)
    return _with_id(reply, msg)


def error_reply(session: Session, msg, message: str, code: str = "protocol") -> dict:
    reply = {
        "kind": "error",
        "revision": session.revision,
        "code": code,
        "message": message,
    }
    return _with_id(reply, msg if isinstance(msg, dict) else {})


def error_code_for(exc: Exception) -> str:
    for cls, code in _ERROR_CODES:
        if isinstance(exc, cls):
            return code
    if isinstance(exc, (OSError, FileNotFoundError)):
        return "io"
    return "internal"


def _field(msg: dict, name: str):
    if name not in msg:
        raise ProtocolError(f"{msg.get('kind', '?')} message missing field {name!r}")
    return msg[name]


def _handle_entries(raw) -> list:
    if not isinstance(raw, list):
        raise ProtocolError("handles must be a list of {node, target} objects")
    entries = []
    for item in raw:
        if not isinstance(item, dict) or "node" not in item or "target" not in item:
            raise ProtocolError("each handle needs node and target fields")
        entries.append((item["node"], item["target"]))
    return entries


def _render(session: Session, msg: dict) -> dict:
    from .splat_render import Camera, default_camera

    cam_spec = msg.get("camera")
    if cam_spec is not None:
        try:
            camera = Camera.from_dict(cam_spec)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad camera specification: {exc}") from exc
    else:
        camera = default_camera(session.deformed_cloud())

    background = tuple(msg.get("background", (0.0, 0.0, 0.0)))
    out = msg.get("out")
    payload = {}
    if out is not None:
        session.commit_and_render(camera, out, background)
        payload["path"] = str(out)
    if msg.get("inline") or out is None:
        fd, tmp = tempfile.mkstemp(suffix=".png")
        os.close(fd)
        try:
            session.commit_and_render(camera, tmp, background)
            with open(tmp, "rb") as fh:
                payload["png_base64"] = base64.b64encode(fh.read()).decode("ascii")
        finally:
            os.unlink(tmp)
    return payload


def handle_message(session: Session, msg) -> dict:
    """Apply one request to the session and build its reply.

    Never raises for malformed or failing requests: those come back as
    error replies, leaving the session revision untouched.
    """
    if not isinstance(msg, dict) or "kind" not in msg:
        return error_reply(session, msg, "request must be an object with a kind field")
    kind = msg["kind"]
    try:
        if kind == "load":
            info = session.load(_field(msg, "path"))
            limit = msg.get("preview_points")
            if limit:
                info.update(session.decimated_points(int(limit)))
            return ack_reply(session, msg, info)
        if kind == "build":
            summary = session.build(msg.get("nodes"))
            return ack_reply(session, msg, {"graph": summary})
        if kind == "set_handles":
            info = session.set_handles(_handle_entries(_field(msg, "handles")))
            return ack_reply(session, msg, info)
        if kind == "drag":
            payload = session.drag(_field(msg, "node"), _field(msg, "target"))
            return preview_reply(session, msg, payload)
        if kind == "solve":
            return ack_reply(session, msg, session.solve_dense())
        if kind == "preview_request":
            return preview_reply(session, msg, session.preview_payload())
        if kind == "render_request":
            return ack_reply(session, msg, _render(session, msg))
        if kind == "export":
            path = session.export(_field(msg, "path"))
            return ack_reply(session, msg, {"path": str(path)})
        if kind == "reset":
            return ack_reply(session, msg, session.reset())
        return error_reply(session, msg, f"unknown message kind {kind!r}")
    except MorphkitError as exc:
        return error_reply(session, msg, str(exc), error_code_for(exc))
    except OSError as exc:
        return error_reply(session, msg, str(exc), "io")
