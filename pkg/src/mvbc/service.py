"""Demonstration-recording service: the simulator behind a local socket.

A single client drives episodes over a JSON message protocol (one JSON object
per websocket text message).  The server paces the loop at a fixed rate:
after each frame it applies the most recent velocity/grip command
(zero-order hold; zero action until the first command arrives), steps the
simulator, and sends the next frame.  Saved episodes use the exact dataset
episode format, so teleoperated demos feed the trainer unchanged.

server to client: ``info {task, action_dim, horizon}``,
``frame {seq, time_step, rgb, ee_pose, finger, done, success}``,
``saved {episode_file}``, ``error {msg}``.
client to server: ``start {}``, ``cmd {lin, ang, grip}``,
``stop {save}``, ``shutdown {}``.
"""

from __future__ import annotations

import base64
import json
import threading
import time
from pathlib import Path

import numpy as np
from websockets.exceptions import ConnectionClosed
from websockets.sync.server import serve as ws_serve

from . import sim
from . import dataset as ds_mod
from .dataset import EpisodeData
from .expert import clamp_vector
from .seeding import derive_seed, stream

DEFAULT_HZ = 10.0


class ServiceError(RuntimeError):
    pass


def _encode_frame(seq: int, state: sim.WorldState, obs: sim.Observation) -> str:
    return json.dumps(
        {
            "type": "frame",
            "seq": seq,
            "time_step": state.time_step,
            "rgb": base64.b64encode(np.ascontiguousarray(obs.rgb).tobytes()).decode("ascii"),
            "ee_pose": [float(v) for v in obs.ee_pose_base],
            "finger": [float(v) for v in obs.finger_positions[0]],
            "done": bool(state.done),
            "success": bool(sim.success(state)),
        },
        separators=(",", ":"),
    )


def _cmd_to_vector(msg: dict, task: str) -> np.ndarray:
    lin = msg.get("lin", [0.0, 0.0, 0.0])
    ang = msg.get("ang", [0.0, 0.0, 0.0])
    grip = msg.get("grip", 0.0)
    if len(lin) != 3 or len(ang) != 3:
        raise ValueError("cmd lin/ang must be 3-vectors")
    action = sim.Action(
        linear_velocity=np.asarray(lin, dtype=float),
        angular_velocity=np.asarray(ang, dtype=float),
        grip=float(grip),
    )
    vec = action.to_vector(task)
    clamps = clamp_vector(task)
    return np.clip(vec, -clamps, clamps).astype(np.float32)


class _Episode:
    """One in-progress teleop episode: sim state plus recorded frames."""

    def __init__(self, cfg: sim.EpisodeConfig, rng: np.random.Generator, seed: int, attempt: int):
        self.cfg = cfg
        self.seed = seed
        self.attempt = attempt
        self.state, self.obs = sim.reset(cfg, rng)
        self.seq = 0
        self.rgb: list[np.ndarray] = []
        self.depth: list[np.ndarray] = []
        self.proprio: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []

    def step(self, vec: np.ndarray) -> None:
        self.rgb.append(self.obs.rgb)
        self.depth.append(self.obs.depth)
        self.proprio.append(self.obs.proprio_vector().astype(np.float32))
        self.actions.append(vec)
        action = sim.Action.from_vector(vec.astype(float), self.cfg.task)
        self.state, self.obs, _ = sim.step(self.state, action, self.cfg)
        self.seq += 1

    def to_episode_data(self) -> EpisodeData:
        if not self.actions:
            raise ServiceError("cannot save an episode with no executed steps")
        return EpisodeData(
            rgb=np.stack(self.rgb),
            depth=np.stack(self.depth),
            proprio=np.stack(self.proprio),
            actions=np.stack(self.actions),
            success=sim.success(self.state),
            base_pose=self.state.base,
            prenoise_phi=self.state.prenoise_phi,
            seed=self.seed,
            attempt=self.attempt,
        )


class TeleopServer:
    def __init__(
        self,
        task: str,
        view_mode: str,
        out_dir: Path,
        seed: int = 0,
        hz: float = DEFAULT_HZ,
    ):
        if task not in sim.HORIZONS:
            raise ValueError(f"unknown task {task!r}")
        if view_mode not in ("multi", "fixed"):
            raise ValueError(f"unknown view mode {view_mode!r}")
        self.task = task
        self.view_mode = view_mode
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.tick = 1.0 / hz
        self.episode_counter = 0
        self._client_slot = threading.Semaphore(1)
        self._server = None
        self._ready = threading.Event()

    # -- message plumbing ---------------------------------------------------

    def _send(self, conn, obj: dict) -> None:
        conn.send(json.dumps(obj, separators=(",", ":")))

    def _error(self, conn, msg: str) -> None:
        self._send(conn, {"type": "error", "msg": msg})

    def _parse(self, raw) -> dict | None:
        try:
            obj = json.loads(raw)
        except (json.JSONDecodeError, TypeError):
            return None
        return obj if isinstance(obj, dict) and "type" in obj else None

    # -- episode handling ---------------------------------------------------

    def _begin_episode(self) -> _Episode:
        attempt = self.episode_counter
        self.episode_counter += 1
        cfg = sim.make_episode_config(self.task, self.view_mode)
        rng = stream(self.seed, "teleop", attempt)
        return _Episode(cfg, rng, derive_seed(self.seed, "teleop", attempt), attempt)

    def _finish_episode(self, conn, episode: _Episode, save: bool) -> None:
        if save:
            filename = ds_mod.append_episode(
                self.out_dir, episode.to_episode_data(), self.task, self.view_mode
            )
            self._send(conn, {"type": "saved", "episode_file": filename})

    def _run_episode(self, conn, episode: _Episode) -> str:
        """Paced frame/command loop; returns 'stopped' or 'shutdown'."""
        last_vec = np.zeros(sim.ACTION_DIMS[self.task], dtype=np.float32)
        while True:
            conn.send(_encode_frame(episode.seq, episode.state, episode.obs))
            deadline = time.monotonic() + self.tick
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0 and not episode.state.done:
                    break
                try:
                    raw = conn.recv(timeout=max(remaining, 0.001) if not episode.state.done else None)
                except TimeoutError:
                    break
                msg = self._parse(raw)
                if msg is None:
                    self._error(conn, "malformed message")
                    continue
                mtype = msg["type"]
                if mtype == "cmd":
                    if episode.state.done:
                        continue
                    try:
                        last_vec = _cmd_to_vector(msg, self.task)
                    except (ValueError, TypeError) as exc:
                        self._error(conn, f"bad cmd: {exc}")
                elif mtype == "start":
                    self._error(conn, "episode already active")
                elif mtype == "stop":
                    self._finish_episode(conn, episode, bool(msg.get("save", False)))
                    return "stopped"
                elif mtype == "shutdown":
                    return "shutdown"
                else:
                    self._error(conn, f"unknown message type {mtype!r}")
            if not episode.state.done:
                episode.step(last_vec)

    # -- connection handler -------------------------------------------------

    def _handle(self, conn) -> None:
        if not self._client_slot.acquire(blocking=False):
            self._error(conn, "another client is connected")
            conn.close()
            return
        try:
            self._send(
                conn,
                {
                    "type": "info",
                    "task": self.task,
                    "action_dim": sim.ACTION_DIMS[self.task],
                    "horizon": sim.HORIZONS[self.task],
                },
            )
            while True:
                raw = conn.recv()
                msg = self._parse(raw)
                if msg is None:
                    self._error(conn, "malformed message")
                    continue
                mtype = msg["type"]
                if mtype == "start":
                    episode = self._begin_episode()
                    outcome = self._run_episode(conn, episode)
                    if outcome == "shutdown":
                        self._shutdown()
                        return
                elif mtype == "shutdown":
                    self._shutdown()
                    return
                elif mtype == "cmd":
                    self._error(conn, "no active episode")
                elif mtype == "stop":
                    self._error(conn, "no active episode")
                else:
                    self._error(conn, f"unknown message type {mtype!r}")
        except (ConnectionClosed, OSError):
            pass  # active episode (if any) is discarded
        finally:
            self._client_slot.release()

    def _shutdown(self) -> None:
        if self._server is not None:
            threading.Thread(target=self._server.shutdown, daemon=True).start()

    def run(self, port: int, host: str = "127.0.0.1") -> None:
        with ws_serve(self._handle, host, port) as server:
            self._server = server
            self._ready.set()
            server.serve_forever()


def serve(
    port: int,
    task: str,
    view_mode: str,
    out_dir: Path,
    seed: int = 0,
    hz: float = DEFAULT_HZ,
    host: str = "127.0.0.1",
) -> None:
    TeleopServer(task, view_mode, out_dir, seed=seed, hz=hz).run(port, host=host)
