"""Websocket teleoperation bridge: live sim streaming, human steering, recording.

The sim loop and the network side run as separate logical threads (asyncio
tasks) talking only through queues. Websocket handlers push parsed client
events onto one inbound queue; the sim task owns every piece of mutable
session state, drains events between control ticks, and pushes outbound
messages onto per-client bounded queues that drop the oldest message when a
reader lags. The sim never awaits a network send.

Message schema, version 1 (JSON text over the ``/teleop`` websocket):

  server -> client, once on connect::

    {"type": "hello", "version": 1, "session": "f3ab12c0", "role": "driver",
     "state": "idle", "scenario": "open-field", "m": 21,
     "w_values": [-1.0, ..., 1.0], "image": {"width": 640, "height": 480},
     "legend": {"0": "non_traversable", "1": "water", ...},
     "path": [[x, y], ...],
     "overlay": [{"bin": 0, "segments": [[[u, v], ...], ...]}, ...]}

  server -> client, one per perception tick while driving, plus one on every
  state change (``rows`` is the segmentation frame as run-length-encoded
  label rows, top row first; ``overlay`` is as in hello, repeated because it
  is part of what the driver is steering by)::

    {"type": "frame", "version": 1, "tick": 42, "time": 1.4,
     "state": "driving", "bin": 12, "pose": [x, y, theta], "progress": 7,
     "path_window": [[x, y], ...], "records": 15,
     "rows": [[[count, label], ...], ...], "overlay": [...]}

  client -> server::

    {"type": "input", "w_raw": 0.23}     or    {"type": "input", "bin": 12}
    {"type": "control", "action": "start" | "pause" | "finish",
     "duration": 60.0}

  ``duration`` is optional and only meaningful with start: the session
  finishes itself after that many sim seconds of driving.

  server -> client, on any rejected message::

    {"type": "error", "version": 1, "message": "..."}

The first connected client drives; later clients spectate. Spectator input
or control is a protocol violation, like any malformed message: the server
replies with an error and disconnects that client, and the session itself
survives. A well-formed control that is merely invalid for the current
state (pause while idle, anything after finish) earns an error reply with
the connection kept open. With no driver connected the sim does not run:
the session starts idle, and losing the driver mid-drive pauses it. The
next new connection takes the free driver slot.

Recording happens only in the driving state, one record per perception
tick, labelled with the bin the sim is executing on that tick. The frame
broadcast for that tick carries the same bin, so display, execution, and
label cannot disagree. On finish the records are written as a dataset file.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import math
import time
import uuid
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
import uvicorn
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles

from .camera import CameraModel, SegmentationImage, render_segmentation
from .kinematics import ControlSet, PreferenceSet, build_preference_set
from .learner import Dataset, DemoRecord, save_dataset
from .sim import SimClock, step
from .utility import PROGRESS_WINDOW, ProjectedPreferenceSet, compute_tick_features
from .world import Scenario, TerrainLabel

__all__ = [
    "SCHEMA_VERSION",
    "ProtocolError",
    "TeleopState",
    "TeleopSession",
    "snap_to_bin",
    "encode_label_rows",
    "overlay_segments",
    "parse_client_message",
    "create_app",
    "serve",
]

SCHEMA_VERSION = 1
OUTBOUND_QUEUE_LIMIT = 8
DEFAULT_STALL_TIMEOUT = 1.0


class ProtocolError(ValueError):
    """A client message violates the wire protocol; the client gets dropped."""


class TeleopState(Enum):
    IDLE = "idle"
    DRIVING = "driving"
    PAUSED = "paused"
    FINISHED = "finished"


def snap_to_bin(raw_w: float, control_set: ControlSet) -> int:
    """Map a raw angular velocity onto the nearest command bin.

    Values beyond the bin range clamp to the end bins. An exact midpoint
    between two bins rounds toward the bin whose w is nearer zero; rational
    arithmetic keeps that exact, since the float subtractions on either side
    of a midpoint need not err by the same amount.
    """
    if not math.isfinite(raw_w):
        raise ValueError(f"raw angular velocity must be finite, got {raw_w!r}")
    ws = control_set.w_values
    if raw_w <= ws[0]:
        return 0
    if raw_w >= ws[-1]:
        return len(ws) - 1
    raw = Fraction(raw_w)
    best = 0
    best_dist = abs(Fraction(float(ws[0])) - raw)
    best_mag = abs(Fraction(float(ws[0])))
    for i in range(1, len(ws)):
        w = Fraction(float(ws[i]))
        dist = abs(w - raw)
        # strict inequalities keep the first (lowest-index) winner on full ties
        if dist < best_dist or (dist == best_dist and abs(w) < best_mag):
            best, best_dist, best_mag = i, dist, abs(w)
    return best


def encode_label_rows(labels: np.ndarray) -> list[list[list[int]]]:
    """Run-length encode a label grid: per row, [count, label] pairs."""
    rows = []
    for row in np.asarray(labels):
        cuts = np.flatnonzero(np.diff(row)) + 1
        starts = np.concatenate(([0], cuts))
        ends = np.concatenate((cuts, [row.size]))
        rows.append([[int(e - s), int(row[s])] for s, e in zip(starts, ends)])
    return rows


def overlay_segments(projected: ProjectedPreferenceSet) -> list[dict]:
    """Image-space candidate polylines, split where points leave the frame."""
    out = []
    m, n = projected.visible.shape
    for b in range(m):
        segments: list[list[list[float]]] = []
        current: list[list[float]] = []
        for t in range(n):
            if projected.visible[b, t]:
                u, v = projected.uv[b, t]
                current.append([round(float(u), 1), round(float(v), 1)])
            elif current:
                segments.append(current)
                current = []
        if current:
            segments.append(current)
        out.append({"bin": b, "segments": segments})
    return out


def parse_client_message(text: str, m: int) -> dict[str, Any]:
    """Validate one inbound message; raise ProtocolError on any violation."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"message is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProtocolError("message must be a JSON object")
    kind = doc.get("type")
    if kind == "input":
        has_raw, has_bin = "w_raw" in doc, "bin" in doc
        if has_raw == has_bin:
            raise ProtocolError("input needs exactly one of w_raw or bin")
        if has_bin:
            bin_index = doc["bin"]
            if isinstance(bin_index, bool) or not isinstance(bin_index, int):
                raise ProtocolError("input bin must be an integer")
            if not 0 <= bin_index < m:
                raise ProtocolError(f"input bin {bin_index} outside [0, {m})")
            return {"type": "input", "bin": bin_index}
        raw = doc["w_raw"]
        if isinstance(raw, bool) or not isinstance(raw, (int, float)) or not math.isfinite(raw):
            raise ProtocolError("input w_raw must be a finite number")
        return {"type": "input", "w_raw": float(raw)}
    if kind == "control":
        action = doc.get("action")
        if action not in ("start", "pause", "finish"):
            raise ProtocolError(f"unknown control action {action!r}")
        event: dict[str, Any] = {"type": "control", "action": action}
        if "duration" in doc and doc["duration"] is not None:
            if action != "start":
                raise ProtocolError("duration is only valid with start")
            duration = doc["duration"]
            if (
                isinstance(duration, bool)
                or not isinstance(duration, (int, float))
                or not math.isfinite(duration)
                or duration <= 0.0
            ):
                raise ProtocolError("duration must be a positive number of seconds")
            event["duration"] = float(duration)
        return event
    raise ProtocolError(f"unknown message type {kind!r}")


@dataclass
class ClientSlot:
    queue: asyncio.Queue  # str to send, or None to close after draining
    role: str
    hello: str = ""


class TeleopSession:
    """One teleoperation world: sim state, recorder, connected clients.

    All mutation happens on a single event loop; the sim task owns the
    tick/record path, while attach and detach are synchronous and therefore
    atomic with respect to it.
    """

    def __init__(
        self,
        scenario: Scenario,
        *,
        prefset: PreferenceSet | None = None,
        cam: CameraModel | None = None,
        out: str | Path | None = None,
        pace: float = 1.0,
        stall_timeout: float | None = DEFAULT_STALL_TIMEOUT,
        control_hz: int = 30,
        perception_every: int = 3,
        window: int = PROGRESS_WINDOW,
        session_id: str | None = None,
    ) -> None:
        self.scenario = scenario
        self.prefset = prefset if prefset is not None else build_preference_set()
        self.cam = cam if cam is not None else CameraModel()
        self.out = Path(out) if out is not None else None
        self.pace = float(pace)
        self.stall_timeout = stall_timeout
        self.window = window
        self.session_id = session_id if session_id is not None else uuid.uuid4().hex[:8]
        self.projected = ProjectedPreferenceSet.build(self.prefset, self.cam)
        self.overlay = overlay_segments(self.projected)

        self.state = TeleopState.IDLE
        self.clock = SimClock(control_hz=control_hz, perception_every=perception_every)
        self.pose = scenario.start_pose
        self.progress = 0
        self.held_bin = snap_to_bin(0.0, self.prefset.control_set)
        self.records: list[DemoRecord] = []
        self.finish_at: float | None = None
        self.write_error: str | None = None

        self.inbound: asyncio.Queue = asyncio.Queue()
        self.clients: dict[int, ClientSlot] = {}
        self.driver_id: int | None = None
        self._next_client_id = 0
        self._last_input_wall = 0.0
        self._next_tick_wall: float | None = None

    @property
    def m(self) -> int:
        return self.prefset.m

    # ---- network side (synchronous, called from handler tasks) ----

    def attach(self) -> tuple[int, ClientSlot]:
        self._next_client_id += 1
        cid = self._next_client_id
        role = "driver" if self.driver_id is None else "spectator"
        if role == "driver":
            self.driver_id = cid
        slot = ClientSlot(asyncio.Queue(maxsize=OUTBOUND_QUEUE_LIMIT), role)
        slot.hello = _dumps(self.build_hello(role))
        self.clients[cid] = slot
        return cid, slot

    def detach(self, cid: int) -> None:
        if self.clients.pop(cid, None) is None:
            return
        if cid == self.driver_id:
            self.driver_id = None
            if self.state is TeleopState.DRIVING:
                self._set_state(TeleopState.PAUSED)

    def post_error(self, cid: int, message: str, close: bool = False) -> None:
        slot = self.clients.get(cid)
        if slot is None:
            return
        self._offer(slot.queue, _dumps(self._error_message(message)))
        if close:
            self._offer(slot.queue, None)

    # ---- messages ----

    def build_hello(self, role: str) -> dict:
        path = self.scenario.reference_path.waypoints
        return {
            "type": "hello",
            "version": SCHEMA_VERSION,
            "session": self.session_id,
            "role": role,
            "state": self.state.value,
            "scenario": self.scenario.name,
            "m": self.m,
            "w_values": [c.w for c in self.prefset.control_set.commands],
            "image": {"width": self.cam.width, "height": self.cam.height},
            "legend": {str(int(label)): label.key for label in TerrainLabel},
            "path": _points(path),
            "overlay": self.overlay,
        }

    def _error_message(self, message: str) -> dict:
        return {"type": "error", "version": SCHEMA_VERSION, "message": message}

    def _frame_message(self, seg: SegmentationImage, progress: int) -> dict:
        start = min(progress, len(self.scenario.reference_path) - 1)
        stop = min(start + self.window, len(self.scenario.reference_path))
        window = self.scenario.reference_path.waypoints[start:stop]
        return {
            "type": "frame",
            "version": SCHEMA_VERSION,
            "tick": self.clock.tick,
            "time": self.clock.time,
            "state": self.state.value,
            "bin": self.held_bin,
            "pose": [self.pose.x, self.pose.y, self.pose.theta],
            "progress": progress,
            "path_window": _points(window),
            "records": len(self.records),
            "rows": encode_label_rows(seg.labels),
            "overlay": self.overlay,
        }

    # ---- sim side ----

    async def sim_loop(self) -> None:
        """Own the session state: drain events, tick while driving."""
        while True:
            if self.state is not TeleopState.DRIVING:
                self._next_tick_wall = None
                self._apply(await self.inbound.get())
                continue
            while True:
                try:
                    self._apply(self.inbound.get_nowait())
                except asyncio.QueueEmpty:
                    break
            if self.state is not TeleopState.DRIVING:
                continue
            self._tick()
            await self._pace_sleep()

    def _apply(self, event: dict) -> None:
        cid = event.get("client", 0)
        if event["type"] == "input":
            if "bin" in event:
                self.held_bin = event["bin"]
            else:
                self.held_bin = snap_to_bin(event["w_raw"], self.prefset.control_set)
            self._last_input_wall = time.monotonic()
            return
        action = event["action"]
        if action == "start":
            if self.state in (TeleopState.IDLE, TeleopState.PAUSED):
                if "duration" in event:
                    self.finish_at = self.clock.time + event["duration"]
                self._last_input_wall = time.monotonic()
                self._set_state(TeleopState.DRIVING)
            else:
                self.post_error(cid, f"cannot start from state {self.state.value!r}")
        elif action == "pause":
            if self.state is TeleopState.DRIVING:
                self._set_state(TeleopState.PAUSED)
            else:
                self.post_error(cid, f"cannot pause from state {self.state.value!r}")
        else:
            if self.state is TeleopState.FINISHED:
                self.post_error(cid, "session already finished")
            else:
                self._finish()

    def _tick(self) -> None:
        # epsilon absorbs float drift in tick * dt so a 60 s run is 600 ticks
        if self.finish_at is not None and self.clock.time >= self.finish_at - 1e-9:
            self._finish()
            return
        if (
            self.pace > 0
            and self.stall_timeout is not None
            and time.monotonic() - self._last_input_wall > self.stall_timeout
        ):
            # silent driver while paced means a stalled client; stop labelling
            self._set_state(TeleopState.PAUSED)
            return
        if self.clock.is_perception_tick:
            seg = render_segmentation(self.scenario, self.pose, self.cam)
            features = compute_tick_features(
                self.projected,
                self.pose,
                seg,
                self.scenario.reference_path,
                self.progress,
                self.window,
            )
            self.progress = features.progress_index
            self.records.append(
                DemoRecord(
                    utility_feature=features.utility.values,
                    label_index=self.held_bin,
                    timestamp=self.clock.time,
                    vehicle_pose=self.pose,
                )
            )
            self._broadcast(_dumps(self._frame_message(seg, self.progress)))
        command = self.prefset.control_set[self.held_bin]
        self.pose = step(self.pose, command, self.clock.dt)
        self.clock.advance()

    async def _pace_sleep(self) -> None:
        if self.pace <= 0.0:
            await asyncio.sleep(0)  # free-run still yields to the network side
            return
        period = self.clock.dt / self.pace
        now = time.monotonic()
        if self._next_tick_wall is None:
            self._next_tick_wall = now
        self._next_tick_wall += period
        delay = self._next_tick_wall - now
        if delay > 0.0:
            await asyncio.sleep(delay)
        elif delay < -1.0:
            self._next_tick_wall = now  # fell far behind; resync, do not spiral

    def _set_state(self, state: TeleopState) -> None:
        self.state = state
        seg = render_segmentation(self.scenario, self.pose, self.cam)
        self._broadcast(_dumps(self._frame_message(seg, self.progress)))

    def _finish(self) -> None:
        self.finish_at = None
        if self.out is not None:
            dataset = Dataset(
                records=list(self.records),
                metadata={
                    "scenario": self.scenario.name,
                    "source": "teleop",
                    "session": self.session_id,
                    "records": len(self.records),
                    "m": self.m,
                    "dt": self.prefset.dt,
                    "horizon": self.prefset.horizon,
                    "control_hz": self.clock.control_hz,
                    "perception_every": self.clock.perception_every,
                },
            )
            try:
                save_dataset(dataset, self.out)
            except OSError as exc:
                self.write_error = f"could not write dataset to {self.out}: {exc}"
                for cid in list(self.clients):
                    self.post_error(cid, self.write_error)
        self._set_state(TeleopState.FINISHED)

    def _broadcast(self, text: str) -> None:
        for slot in self.clients.values():
            self._offer(slot.queue, text)

    @staticmethod
    def _offer(queue: asyncio.Queue, item: str | None) -> None:
        while True:
            try:
                queue.put_nowait(item)
                return
            except asyncio.QueueFull:
                with contextlib.suppress(asyncio.QueueEmpty):
                    queue.get_nowait()  # drop the oldest; a laggard loses frames


def _dumps(message: dict) -> str:
    return json.dumps(message, separators=(",", ":"))


def _points(array: np.ndarray) -> list[list[float]]:
    return [[round(float(x), 4), round(float(y), 4)] for x, y in array]


async def _pump(slot: ClientSlot, ws: WebSocket) -> None:
    try:
        await ws.send_text(slot.hello)
        while True:
            item = await slot.queue.get()
            if item is None:
                return
            await ws.send_text(item)
    except asyncio.CancelledError:
        raise
    except Exception:
        return  # client went away mid-send; the receive loop cleans up


def create_app(session: TeleopSession, ui_dir: str | Path | None = None) -> FastAPI:
    """Wrap a session in a FastAPI app: /teleop websocket plus static UI files."""

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        sim_task = asyncio.create_task(session.sim_loop(), name="teleop-sim")
        try:
            yield
        finally:
            sim_task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await sim_task

    app = FastAPI(lifespan=lifespan)

    @app.websocket("/teleop")
    async def teleop_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        cid, slot = session.attach()
        pump = asyncio.create_task(_pump(slot, ws))
        try:
            while True:
                text = await ws.receive_text()
                try:
                    event = parse_client_message(text, session.m)
                    if slot.role != "driver":
                        raise ProtocolError("spectators are read-only")
                except ProtocolError as exc:
                    session.post_error(cid, str(exc), close=True)
                    await pump  # let the error reach the client before closing
                    break
                event["client"] = cid
                session.inbound.put_nowait(event)
        except WebSocketDisconnect:
            pass
        finally:
            pump.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await pump
            session.detach(cid)

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app


def serve(
    session: TeleopSession,
    *,
    host: str = "127.0.0.1",
    port: int = 8000,
    ui_dir: str | Path | None = None,
) -> None:
    """Run the app until interrupted."""
    uvicorn.run(create_app(session, ui_dir), host=host, port=port, log_level="warning")
