"""Operator-console bridge: JSON over WebSocket, same payload schema as
the binary protocol.

The bus decouples the actor loop (producer of frames, consumer of
intervention commands) from the socket event loop.  Everything the console
sends besides intervention commands is ignored; all other traffic is
read-only telemetry.
"""

from __future__ import annotations

import asyncio
import threading
from collections import deque
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .protocol import StatsPush, UiFrame, UiIntervene, from_json_obj


class UiBus:
    def __init__(self, maxlen: int = 2048):
        self._lock = threading.Lock()
        self._outbound: deque = deque(maxlen=maxlen)
        self._command: UiIntervene | None = None

    def publish_frame(self, env, episode, step, k, c, reward, version, intervening) -> None:
        record = env.frame_record()
        frame = UiFrame(
            episode=episode,
            step=step,
            chunk_step=k,
            chunk_size=c,
            reward=bool(reward),
            policy_version=version,
            gripper=np.asarray(record["gripper"], dtype=float),
            objects=[(name, np.asarray(pose, dtype=float)) for name, pose in sorted(record["objects"].items())],
            intervening=bool(intervening),
        )
        with self._lock:
            self._outbound.append(frame.to_json_obj())

    def publish_stats(self, stats: dict) -> None:
        msg = StatsPush(
            step=int(stats.get("step", 0)),
            critic_loss=float(stats.get("critic_loss", 0.0)),
            edit_loss=float(stats.get("edit_loss", 0.0)),
            cfm_loss=float(stats.get("cfm_loss", 0.0)),
            alpha=float(stats.get("alpha", 0.0)),
            q_mean=float(stats.get("q_mean", 0.0)),
        )
        with self._lock:
            self._outbound.append(msg.to_json_obj())

    def drain_outbound(self, limit: int = 256) -> list[dict]:
        out = []
        with self._lock:
            while self._outbound and len(out) < limit:
                out.append(self._outbound.popleft())
        return out

    def set_command(self, cmd: UiIntervene) -> None:
        with self._lock:
            self._command = cmd

    def current_command(self) -> UiIntervene | None:
        with self._lock:
            return self._command


def make_ui_app(bus: UiBus, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI()

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()

        async def sender():
            while True:
                for obj in bus.drain_outbound():
                    await ws.send_json(obj)
                await asyncio.sleep(0.01)

        send_task = asyncio.create_task(sender())
        try:
            while True:
                obj = await ws.receive_json()
                try:
                    msg = from_json_obj(obj)
                except Exception:
                    continue  # malformed input: logged upstream, skipped
                if isinstance(msg, UiIntervene):
                    msg.command = np.clip(msg.command, -1.0, 1.0)
                    bus.set_command(msg)
        except WebSocketDisconnect:
            pass
        finally:
            send_task.cancel()

    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")
    return app


def run_ui_server(bus: UiBus, port: int, static_dir: str | Path | None = None):
    """Serve the console bridge in a daemon thread; returns the server."""
    import uvicorn

    app = make_ui_app(bus, static_dir=static_dir)
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    return server
