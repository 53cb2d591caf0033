"""Live bridge between the engine and the browser cockpit.

One bidirectional websocket per session at ``/session``: inbound text
records (event / set_camera / set_tf / load_scene / request_state) drive the
same reducer that replay uses, frames stream out as binary messages at a
fixed cadence, and scene summaries follow every structural change.  A
second concurrent connection is refused with ``error code=busy``.  Message
schemas are documented in docs/protocol.md.
"""

from __future__ import annotations

import asyncio
import struct
import threading
from dataclasses import dataclass, field, replace
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse

from vislens import textio
from vislens.config import DEFAULT_CONFIG
from vislens.interaction import IDLE_MODE, InteractionMode, step
from vislens.render import Camera, TransferFunction, render_frame
from vislens.scene import SceneState, serialize_scene
from vislens.session import (
    SceneSource,
    _grabbed_ids,
    load_scene_source,
    parse_event,
    parse_tf_points,
)

FRAME_MAGIC = b"VLFR"
FRAME_HEADER = struct.Struct("<4sIHHBxxx")  # magic, seq, w, h, encoding
ENCODING_RGBA8 = 0


def scene_summary(scene: SceneState, mode: InteractionMode) -> str:
    """Text pushed to the cockpit: one summary record, then the scene lines.

    Contains no sequence numbers or timestamps of its own, so an offline
    replay of the same events yields the identical summary.
    """
    header = textio.format_record(
        "summary",
        {
            "mode": mode.kind,
            "lens_count": len(scene.lenses),
            "menu": scene.menu.visible,
            "page": scene.menu.page,
        },
    )
    return header + "\n" + serialize_scene(scene)


def _structure_signature(scene: SceneState):
    return tuple((l.id, len(l.stack), l.semi_transparent) for l in scene.lenses)


@dataclass
class EngineSession:
    """Reducer state shared between the receive loop and the render loop."""

    scene: SceneState
    mode: InteractionMode = IDLE_MODE
    tf: TransferFunction = field(default_factory=TransferFunction)
    fov: float = 60.0
    resolution: tuple[int, int] = (320, 240)
    step_len: Optional[float] = None
    workers: int = 1
    seq: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)

    def apply_event(self, fields: dict) -> tuple[bool, tuple]:
        """Apply one input event; True when the lens structure changed."""
        event = parse_event(fields)
        with self.lock:
            before = _structure_signature(self.scene)
            self.scene, self.mode, feedback = step(self.scene, self.mode, event, DEFAULT_CONFIG)
            changed = _structure_signature(self.scene) != before
        return changed, feedback

    def snapshot(self):
        with self.lock:
            return self.scene, self.mode

    def render_latest(self) -> bytes:
        scene, mode = self.snapshot()
        camera = Camera(scene.head, self.fov, self.resolution)
        fb = render_frame(
            scene, camera, self.tf, step=self.step_len,
            workers=self.workers, grabbed=_grabbed_ids(mode),
        )
        self.seq += 1
        header = FRAME_HEADER.pack(
            FRAME_MAGIC, self.seq, self.resolution[0], self.resolution[1], ENCODING_RGBA8
        )
        return header + fb.tobytes()


def create_app(
    scene_spec: str = "default",
    fps: float = 10.0,
    resolution: tuple[int, int] = (320, 240),
    workers: int = 1,
    frontend_dir=None,
) -> FastAPI:
    app = FastAPI(title="vislens cockpit bridge")
    source = SceneSource("phantom", spec=scene_spec if scene_spec else "default")
    volume = load_scene_source(source)
    engine = EngineSession(
        scene=SceneState(volume=volume, volume_source=source.tag()),
        resolution=resolution,
        workers=workers,
    )
    app.state.engine = engine
    app.state.fps = fps
    app.state.busy = False

    if frontend_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=str(frontend_dir), html=True), name="app")

    @app.get("/")
    def index() -> HTMLResponse:
        return HTMLResponse(
            "<html><body><h3>vislens bridge</h3>"
            "<p>websocket endpoint: <code>/session</code></p></body></html>"
        )

    @app.websocket("/session")
    async def session_ws(ws: WebSocket):
        await ws.accept()
        if app.state.busy:
            await ws.send_text(
                textio.format_record("error", {"code": "busy", "message": "another controller is connected"})
            )
            await ws.close()
            return
        app.state.busy = True
        frame_task = None
        try:
            if app.state.fps > 0:
                frame_task = asyncio.create_task(_frame_loop(ws, engine, app.state.fps))
            while True:
                message = await ws.receive()
                if message["type"] == "websocket.disconnect":
                    break
                text = message.get("text")
                if text is None:
                    await ws.send_text(
                        textio.format_record(
                            "error", {"code": "malformed", "message": "binary inbound not supported"}
                        )
                    )
                    continue
                for line in text.splitlines():
                    if line.strip():
                        await _handle_line(ws, engine, line)
        except WebSocketDisconnect:
            pass
        finally:
            if frame_task is not None:
                frame_task.cancel()
            app.state.busy = False

    return app


async def _handle_line(ws: WebSocket, engine: EngineSession, line: str) -> None:
    try:
        kind, fields = textio.parse_record(line)
    except textio.RecordError as e:
        await ws.send_text(textio.format_record("error", {"code": "malformed", "message": str(e)}))
        return
    try:
        if kind == "event":
            changed, feedback = engine.apply_event(fields)
            for fb in feedback:
                await ws.send_text(
                    textio.format_record(
                        "feedback", {"kind": fb.kind, "target": fb.target, "code": fb.code}
                    )
                )
            if changed:
                await ws.send_text(scene_summary(*engine.snapshot()))
            else:
                scene, mode = engine.snapshot()
                await ws.send_text(
                    textio.format_record("tick", {"t": scene.time_ms, "mode": mode.kind})
                )
        elif kind == "request_state":
            await ws.send_text(scene_summary(*engine.snapshot()))
        elif kind == "set_camera":
            with engine.lock:
                if "fov" in fields:
                    engine.fov = float(fields["fov"])
                if "width" in fields and "height" in fields:
                    engine.resolution = (int(fields["width"]), int(fields["height"]))
                if "step" in fields:
                    engine.step_len = float(fields["step"])
            await ws.send_text(scene_summary(*engine.snapshot()))
        elif kind == "set_tf":
            engine.tf = parse_tf_points(fields["points"])
            await ws.send_text(scene_summary(*engine.snapshot()))
        elif kind == "load_scene":
            source = SceneSource(
                fields.get("kind", "phantom"),
                spec=fields.get("spec", "default"),
                data=fields.get("data"),
                meta=fields.get("meta"),
            )
            volume = load_scene_source(source)
            with engine.lock:
                engine.scene = SceneState(volume=volume, volume_source=source.tag())
                engine.mode = IDLE_MODE
            await ws.send_text(scene_summary(*engine.snapshot()))
        else:
            await ws.send_text(
                textio.format_record("error", {"code": "malformed", "message": f"unknown kind {kind!r}"})
            )
    except (ValueError, KeyError) as e:
        await ws.send_text(textio.format_record("error", {"code": "malformed", "message": str(e)}))
    except Exception as e:  # reducer/render trouble: keep the connection alive
        await ws.send_text(textio.format_record("error", {"code": "internal", "message": str(e)}))


async def _frame_loop(ws: WebSocket, engine: EngineSession, fps: float) -> None:
    """Render from the latest snapshot at a fixed cadence.  Rendering runs in
    a worker thread so message intake is never blocked."""
    loop = asyncio.get_running_loop()
    interval = 1.0 / fps
    try:
        while True:
            started = loop.time()
            payload = await loop.run_in_executor(None, engine.render_latest)
            await ws.send_bytes(payload)
            remaining = interval - (loop.time() - started)
            if remaining > 0:
                await asyncio.sleep(remaining)
    except (WebSocketDisconnect, asyncio.CancelledError, RuntimeError):
        return
