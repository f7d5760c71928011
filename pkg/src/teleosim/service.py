"""Live teleoperation service: one simulated session behind a WebSocket.

The physics run on a dedicated thread at real time, paced by a monotonic
clock that skips missed deadlines instead of double-stepping. Network
I/O runs on an asyncio loop in a second thread. The two sides meet in a
few lock-guarded slots: the latest operator command (latest-wins),
pending configuration swaps (each applied whole at a tick boundary, or
not at all), and per-client outbound buffers. State frames go through a
bounded buffer that drops oldest first, so a stalled reader can never
delay the control tick; acks and errors ride an unbounded control lane.

The first connection holds command authority; later connections are
observers until the owner disconnects, at which point the oldest
observer is promoted and told so with a fresh hello frame. Every frame
is JSON text carrying a schema_version field.
"""

from __future__ import annotations

import asyncio
import json
import math
import os
import threading
import time
from collections import deque
from dataclasses import replace
from typing import Sequence

import numpy as np
from websockets.asyncio.server import serve
from websockets.exceptions import ConnectionClosed

from .contact import Scenario, env_to_dict, make_drawer_scenario
from .controllers import (
    FP,
    PP,
    FourC,
    ImpedanceGains,
    OperatorModel,
    default_follower_gains,
    scheme_to_dict,
)
from .datalog import DemonstrationRecord, write_demonstration
from .kinematics import FloatArray, forward_kinematics, geometric_jacobian
from .policy import episode_success
from .session import Session, SessionConfig, trace_from_records

WIRE_SCHEMA_VERSION = "1"
DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 8765
BIND_ENV_VAR = "TELEOP_BIND"
# Per-client state backlog; at 50 Hz this is 160 ms of slack before drops.
CLIENT_BUFFER_FRAMES = 8

SCHEME_LABELS = ("FP", "PP", "4C")


def resolve_bind(host: str | None = None, port: int | None = None) -> tuple[str, int]:
    """Bind address: explicit arguments beat TELEOP_BIND beats the default."""
    env = os.environ.get(BIND_ENV_VAR)
    env_host, env_port = None, None
    if env:
        head, sep, tail = env.rpartition(":")
        if not sep or not head:
            raise ValueError(f"{BIND_ENV_VAR} must look like host:port, got {env!r}")
        try:
            env_port = int(tail)
        except ValueError:
            raise ValueError(f"{BIND_ENV_VAR} port must be an integer, got {tail!r}") from None
        env_host = head
    out_host = host if host is not None else (env_host if env_host is not None else DEFAULT_HOST)
    out_port = port if port is not None else (env_port if env_port is not None else DEFAULT_PORT)
    return out_host, int(out_port)


class FrameError(Exception):
    """A client frame that cannot be honored; maps onto an error reply."""

    def __init__(self, code: str, msg: str):
        super().__init__(msg)
        self.code = code
        self.msg = msg


def _frame(kind: str, **fields) -> str:
    payload = {"type": kind, "schema_version": WIRE_SCHEMA_VERSION}
    payload.update(fields)
    return json.dumps(payload)


def error_frame(code: str, msg: str, seq: int | None = None) -> str:
    fields = {"code": code, "msg": msg}
    if seq is not None:
        fields["seq"] = seq
    return _frame("error", **fields)


def ack_frame(seq: int, **extra) -> str:
    return _frame("ack", seq=seq, **extra)


def _as_number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise FrameError("bad-frame", f"{name} must be a finite number")
    return float(value)


def _as_vector(value, n: int, name: str) -> FloatArray:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise FrameError("bad-frame", f"{name} must be a list of {n} numbers")
    return np.array([_as_number(v, name) for v in value], dtype=np.float64)


def _parse_seq(payload: dict) -> int | None:
    seq = payload.get("seq")
    if seq is None:
        return None
    if isinstance(seq, bool) or not isinstance(seq, int):
        raise FrameError("bad-frame", "seq must be an integer")
    return seq


def _default_leader_gains(dof: int) -> ImpedanceGains:
    # The leader device is light; soft gains keep it backdrivable.
    return ImpedanceGains(kp=np.full(dof, 30.0), kd=np.full(dof, 3.0))


def _parse_gains(payload, dof: int) -> ImpedanceGains:
    if not isinstance(payload, dict) or set(payload) - {"kp", "kd"}:
        raise FrameError("bad-configure", "gains must be an object with kp and kd")
    kp = _as_vector(payload.get("kp"), dof, "gains.kp")
    kd = _as_vector(payload.get("kd"), dof, "gains.kd")
    if np.any(kp <= 0.0) or np.any(kd < 0.0):
        raise FrameError("bad-configure", "gains must have kp > 0 and kd >= 0")
    return ImpedanceGains(kp=kp, kd=kd)


def build_scheme(current, payload: dict, dof: int):
    """Construct the control scheme a configure frame asks for.

    Returns a complete scheme object so the swap is all-or-nothing;
    anything invalid raises FrameError and leaves the session untouched.
    """
    unknown = set(payload) - {"type", "schema_version", "seq", "scheme", "k_f", "gains"}
    if unknown:
        raise FrameError("bad-configure", f"unknown configure fields: {sorted(unknown)}")
    label = payload.get("scheme")
    k_f = payload.get("k_f")
    if k_f is not None:
        k_f = _as_number(k_f, "k_f")
        if k_f <= 0.0:
            raise FrameError("bad-configure", "k_f must be positive")
    gains = None if payload.get("gains") is None else _parse_gains(payload["gains"], dof)
    if label is None and k_f is None and gains is None:
        raise FrameError("bad-configure", "configure frame changes nothing")

    if label is not None:
        if label not in SCHEME_LABELS:
            raise FrameError("bad-configure", f"scheme must be one of {list(SCHEME_LABELS)}")
        follower = gains if gains is not None else default_follower_gains(dof)
        if label == "FP":
            inherited = current.k_f if isinstance(current, FP) else 0.5
            return FP(k_f=k_f if k_f is not None else inherited, follower_gains=follower)
        if label == "4C":
            return FourC(follower_gains=follower, force_gain=k_f if k_f is not None else 1.0)
        if k_f is not None:
            raise FrameError("bad-configure", "k_f does not apply to the PP scheme")
        return PP(leader_gains=_default_leader_gains(dof), follower_gains=follower)

    if isinstance(current, FP):
        return replace(
            current,
            k_f=k_f if k_f is not None else current.k_f,
            follower_gains=gains if gains is not None else current.follower_gains,
        )
    if isinstance(current, FourC):
        return replace(
            current,
            force_gain=k_f if k_f is not None else current.force_gain,
            follower_gains=gains if gains is not None else current.follower_gains,
        )
    if k_f is not None:
        raise FrameError("bad-configure", "k_f does not apply to the PP scheme")
    return replace(current, follower_gains=gains)


def scheme_label(scheme) -> str:
    return scheme_to_dict(scheme)["scheme"]


def scheme_k_f(scheme) -> float | None:
    if isinstance(scheme, FP):
        return float(scheme.k_f)
    if isinstance(scheme, FourC):
        return float(scheme.force_gain)
    return None


def solve_planar_target(chain, q_start: FloatArray, goal_xy: Sequence[float]) -> FloatArray:
    """Joint target whose fingertip lands on a planar end-effector goal.

    Damped least-squares steps on the linear Jacobian, clipped to the
    joint limits; good enough for drag targets, which arrive as a stream
    of small displacements.
    """
    q = np.asarray(q_start, dtype=np.float64).copy()
    goal = np.asarray(goal_xy, dtype=np.float64)
    lo, hi = chain.joint_limits[:, 0], chain.joint_limits[:, 1]
    for _ in range(12):
        err = goal - forward_kinematics(chain, q).position[:2]
        if np.linalg.norm(err) < 1e-9:
            break
        jac = geometric_jacobian(chain, q).linear[:2]
        dq = jac.T @ np.linalg.solve(jac @ jac.T + 1e-6 * np.eye(2), err)
        q = np.clip(q + np.clip(dq, -0.3, 0.3), lo, hi)
    return q


class _Client:
    """One connection's send side, fed by both threads."""

    __slots__ = ("conn", "role", "control", "states", "wakeup")

    def __init__(self, conn, buffer_frames: int):
        self.conn = conn
        self.role = "observer"
        self.control: deque[str] = deque()
        self.states: deque[str] = deque(maxlen=buffer_frames)
        self.wakeup = asyncio.Event()


class TeleopService:
    """A live Session served over the wire protocol.

    start() returns once the socket is bound (the chosen port is then in
    .port, useful with port=0); stop() shuts both threads down. run()
    blocks until interrupted.
    """

    def __init__(
        self,
        cfg: SessionConfig,
        scenario: Scenario | None = None,
        host: str | None = None,
        port: int | None = None,
        record_dir: str | os.PathLike = ".",
        task: str = "live",
        hand_kp: float = 60.0,
        hand_kd: float = 6.0,
        client_buffer: int = CLIENT_BUFFER_FRAMES,
    ):
        self.host, self.requested_port = resolve_bind(host, port)
        self.port: int | None = None
        self.scenario = scenario
        self.record_dir = os.fspath(record_dir)
        self.task = task
        n = cfg.follower.chain.dof
        q0 = (
            np.zeros(n)
            if cfg.q0_follower is None
            else np.asarray(cfg.q0_follower, dtype=np.float64)
        )
        operator = OperatorModel(
            hand_kp=np.full(n, hand_kp),
            hand_kd=np.full(n, hand_kd),
            target_trajectory=lambda t, view: self._current_target(),
        )
        self._session = Session(cfg, operator, gripper=lambda t: self._current_gripper())
        self._dof = n
        self._client_buffer = client_buffer
        self._lock = threading.Lock()
        self._command = {"target_q": q0.copy(), "gripper": True}
        self._pending_configs: list[tuple[object, _Client, int | None]] = []
        self._pending_records: list[tuple[str, str, _Client, int | None]] = []
        self._recording: dict | None = None
        self._clients: dict[object, _Client] = {}
        self._loop: asyncio.AbstractEventLoop | None = None
        self._shutdown: asyncio.Event | None = None
        self._ready = threading.Event()
        self._stop_stepping = threading.Event()
        self._startup_error: BaseException | None = None
        self._net_thread: threading.Thread | None = None
        self._sim_thread: threading.Thread | None = None
        self._announced_divergence = False

    # ------------------------------------------------------------ lifecycle

    def start(self) -> None:
        self._net_thread = threading.Thread(target=self._net_main, daemon=True)
        self._net_thread.start()
        if not self._ready.wait(timeout=10.0):
            raise RuntimeError("service failed to bind within 10 s")
        if self._startup_error is not None:
            raise self._startup_error
        self._sim_thread = threading.Thread(target=self._session_loop, daemon=True)
        self._sim_thread.start()

    def stop(self) -> None:
        self._stop_stepping.set()
        if self._sim_thread is not None:
            self._sim_thread.join(timeout=5.0)
        if self._loop is not None and self._shutdown is not None:
            self._loop.call_soon_threadsafe(self._shutdown.set)
        if self._net_thread is not None:
            self._net_thread.join(timeout=5.0)

    def run(self) -> None:
        self.start()
        print(f"serving on ws://{self.host}:{self.port} (rate {self._session.cfg.rate_hz:g} Hz)")
        try:
            while self._sim_thread is not None and self._sim_thread.is_alive():
                self._sim_thread.join(timeout=0.5)
        except KeyboardInterrupt:
            print("interrupted, shutting down")
        finally:
            self.stop()

    def _net_main(self) -> None:
        try:
            asyncio.run(self._serve())
        except BaseException as exc:  # surface bind failures to start()
            self._startup_error = exc
            self._ready.set()

    async def _serve(self) -> None:
        self._loop = asyncio.get_running_loop()
        self._shutdown = asyncio.Event()
        async with serve(self._handler, self.host, self.requested_port) as server:
            self.port = server.sockets[0].getsockname()[1]
            self._ready.set()
            await self._shutdown.wait()

    # ------------------------------------------------------------- session

    def _current_target(self) -> FloatArray:
        with self._lock:
            return self._command["target_q"]

    def _current_gripper(self) -> bool:
        with self._lock:
            return self._command["gripper"]

    def _session_loop(self) -> None:
        dt = self._session.cfg.dt
        deadline = time.monotonic()
        while not self._stop_stepping.is_set():
            self._apply_pending()
            rec = self._session.tick()
            if rec is None:
                if not self._announced_divergence:
                    self._announced_divergence = True
                    self._fanout(
                        error_frame("diverged", "simulation went non-finite; stepping halted"),
                        control=True,
                    )
                return
            if self._recording is not None:
                self._recording["records"].append(rec)
            self._fanout(self._state_frame(rec))
            deadline += dt
            now = time.monotonic()
            if now < deadline:
                time.sleep(deadline - now)
            else:
                # Behind schedule: skip the missed wall deadlines rather
                # than stepping repeatedly to catch up.
                missed = int((now - deadline) / dt) + 1
                deadline += missed * dt

    def _apply_pending(self) -> None:
        with self._lock:
            configs, self._pending_configs = self._pending_configs, []
            records, self._pending_records = self._pending_records, []
        for scheme, client, seq in configs:
            try:
                self._session.cfg = replace(self._session.cfg, scheme=scheme)
            except ValueError as err:
                self._send_control(client, error_frame("bad-configure", str(err), seq))
                continue
            if seq is not None:
                self._send_control(client, ack_frame(seq))
        for action, rec_task, client, seq in records:
            try:
                result = self._apply_record(action, rec_task)
            except FrameError as err:
                self._send_control(client, error_frame(err.code, err.msg, seq))
                continue
            if seq is not None:
                self._send_control(client, ack_frame(seq, **result))

    def _apply_record(self, action: str, rec_task: str) -> dict:
        if action == "start":
            if self._recording is not None:
                raise FrameError("bad-record", "a recording is already running")
            self._recording = {
                "task": rec_task,
                "records": [],
                "start_tick": self._session.tick_index,
            }
            return {"recording": True}
        if self._recording is None:
            raise FrameError("bad-record", "no recording is running")
        recording, self._recording = self._recording, None
        trace = trace_from_records(recording["records"], self._session)
        if trace.n_ticks == 0:
            raise FrameError("bad-record", "recording stopped before any tick completed")
        if self.scenario is not None and self.scenario.success_threshold is not None:
            success = episode_success(trace, self.scenario)
        else:
            success = not trace.diverged
        record = DemonstrationRecord.from_trace(
            trace,
            task=recording["task"],
            scheme=scheme_to_dict(self._session.cfg.scheme),
            seed=self._session.cfg.seed,
            success=success,
        )
        name = f"{recording['task']}_{recording['start_tick']:06d}.jsonl"
        path = os.path.join(self.record_dir, name)
        write_demonstration(record, path)
        return {"recording": False, "path": path, "ticks": trace.n_ticks, "success": success}

    def _state_frame(self, rec: dict) -> str:
        scheme = self._session.cfg.scheme
        return _frame(
            "state",
            tick=rec["tick"],
            t=rec["t"],
            q_l=rec["q_leader"].tolist(),
            q_f=rec["q_follower"].tolist(),
            tau_ext=rec["tau_ext"].tolist(),
            tau_fb=rec["tau_feedback"].tolist(),
            wrench=rec["wrench"].tolist(),
            contact={
                "in_contact": bool(rec["in_contact"]),
                "grasped": bool(rec["grasped"]),
                "drawer_extension": float(rec["drawer_extension"]),
            },
            k_f=scheme_k_f(scheme),
            scheme=scheme_label(scheme),
            recording=self._recording is not None,
        )

    # ------------------------------------------------------------- network

    def _fanout(self, frame_json: str, control: bool = False) -> None:
        with self._lock:
            clients = list(self._clients.values())
        for client in clients:
            (client.control if control else client.states).append(frame_json)
            if self._loop is not None:
                self._loop.call_soon_threadsafe(client.wakeup.set)

    def _send_control(self, client: _Client, frame_json: str) -> None:
        client.control.append(frame_json)
        if self._loop is not None:
            self._loop.call_soon_threadsafe(client.wakeup.set)

    def _hello_frame(self, role: str) -> str:
        cfg = self._session.cfg
        chain = cfg.follower.chain
        fields = {
            "role": role,
            "dof": self._dof,
            "rate_hz": cfg.rate_hz,
            "dt": cfg.dt,
            "scheme": scheme_label(cfg.scheme),
            "k_f": scheme_k_f(cfg.scheme),
            "joint_limits": chain.joint_limits.tolist(),
            "link_lengths": [row.a for row in chain.rows],
            "env": env_to_dict(cfg.env),
            "task": self.task,
            "recording": self._recording is not None,
        }
        if self.scenario is not None and self.scenario.q_home is not None:
            fields["waypoints"] = {
                "home": np.asarray(self.scenario.q_home).tolist(),
                "grasp": np.asarray(self.scenario.q_grasp).tolist(),
                "open": np.asarray(self.scenario.q_open).tolist(),
            }
        return _frame("hello", **fields)

    async def _handler(self, conn) -> None:
        client = _Client(conn, self._client_buffer)
        with self._lock:
            taken = any(c.role == "operator" for c in self._clients.values())
            client.role = "observer" if taken else "operator"
            self._clients[conn] = client
        sender = asyncio.create_task(self._sender(client))
        self._send_control(client, self._hello_frame(client.role))
        try:
            async for message in conn:
                for reply in self._handle_frame(client, message):
                    self._send_control(client, reply)
        except ConnectionClosed:
            pass
        finally:
            sender.cancel()
            promoted = None
            with self._lock:
                was_owner = client.role == "operator"
                self._clients.pop(conn, None)
                if was_owner:
                    for other in self._clients.values():
                        other.role = "operator"
                        promoted = other
                        break
            if promoted is not None:
                self._send_control(promoted, self._hello_frame("operator"))

    async def _sender(self, client: _Client) -> None:
        try:
            while True:
                await client.wakeup.wait()
                client.wakeup.clear()
                while client.control:
                    await client.conn.send(client.control.popleft())
                while client.states:
                    await client.conn.send(client.states.popleft())
        except (ConnectionClosed, asyncio.CancelledError):
            return

    # ------------------------------------------------------------ dispatch

    def _handle_frame(self, client: _Client, message) -> list[str]:
        if isinstance(message, (bytes, bytearray)):
            return [error_frame("bad-frame", "binary frames are not supported")]
        try:
            payload = json.loads(message)
        except json.JSONDecodeError as err:
            return [error_frame("bad-json", f"frame is not valid JSON: {err.msg}")]
        if not isinstance(payload, dict):
            return [error_frame("bad-frame", "frame must be a JSON object")]
        seq = None
        try:
            seq = _parse_seq(payload)
            version = payload.get("schema_version")
            if version != WIRE_SCHEMA_VERSION:
                raise FrameError(
                    "bad-schema-version",
                    f"expected schema_version {WIRE_SCHEMA_VERSION!r}, got {version!r}",
                )
            kind = payload.get("type")
            if kind == "command":
                return self._on_command(client, payload, seq)
            if kind == "configure":
                return self._on_configure(client, payload, seq)
            if kind == "record":
                return self._on_record(client, payload, seq)
            raise FrameError("unknown-type", f"unknown frame type {kind!r}")
        except FrameError as err:
            return [error_frame(err.code, err.msg, seq)]

    def _require_authority(self, client: _Client) -> None:
        if client.role != "operator":
            raise FrameError("not-authorized", "command authority belongs to the operator connection")

    def _on_command(self, client: _Client, payload: dict, seq: int | None) -> list[str]:
        self._require_authority(client)
        has_q = payload.get("target_q") is not None
        has_ee = payload.get("target_ee") is not None
        if has_q == has_ee:
            raise FrameError("bad-command", "command needs exactly one of target_q or target_ee")
        chain = self._session.follower_model.chain
        if has_q:
            target = _as_vector(payload["target_q"], self._dof, "target_q")
            target = np.clip(target, chain.joint_limits[:, 0], chain.joint_limits[:, 1])
        else:
            goal = _as_vector(payload["target_ee"], 2, "target_ee")
            target = solve_planar_target(chain, self._session.leader_state.q, goal)
        gripper = payload.get("gripper")
        if gripper is not None and not isinstance(gripper, bool):
            raise FrameError("bad-command", "gripper must be a boolean")
        with self._lock:
            self._command["target_q"] = target
            if gripper is not None:
                self._command["gripper"] = gripper
        return [ack_frame(seq)] if seq is not None else []

    def _on_configure(self, client: _Client, payload: dict, seq: int | None) -> list[str]:
        self._require_authority(client)
        scheme = build_scheme(self._session.cfg.scheme, payload, self._dof)
        try:
            # Trial swap: cfg-level invariants (4C needs identical arms)
            # reject here, before anything is queued.
            replace(self._session.cfg, scheme=scheme)
        except ValueError as err:
            raise FrameError("bad-configure", str(err)) from None
        with self._lock:
            self._pending_configs.append((scheme, client, seq))
        return []  # acked from the session thread once applied

    def _on_record(self, client: _Client, payload: dict, seq: int | None) -> list[str]:
        self._require_authority(client)
        action = payload.get("action")
        if action not in ("start", "stop"):
            raise FrameError("bad-record", "record action must be start or stop")
        rec_task = payload.get("task", self.task)
        if not isinstance(rec_task, str) or not rec_task or len(rec_task) > 64:
            raise FrameError("bad-record", "task must be a short nonempty string")
        if not all(c.isalnum() or c in "-_" for c in rec_task):
            raise FrameError("bad-record", "task may use letters, digits, - and _")
        with self._lock:
            self._pending_records.append((action, rec_task, client, seq))
        return []


def drawer_service(
    seed: int = 0,
    k_f: float = 0.5,
    grasp_success_prob: float = 1.0,
    leader_scale: float = 0.5,
    host: str | None = None,
    port: int | None = None,
    record_dir: str | os.PathLike = ".",
    hand_kp: float = 60.0,
    hand_kd: float = 6.0,
    client_buffer: int = CLIENT_BUFFER_FRAMES,
) -> TeleopService:
    """A service wrapping the interactive drawer scene under FP feedback.

    leader_scale sizes the leader device relative to the follower; pass
    1.0 to allow switching the live session to the 4C scheme, which
    demands identical arms.
    """
    scn = make_drawer_scenario(seed=seed, grasp_success_prob=grasp_success_prob)
    cfg = SessionConfig(
        follower=scn.arm,
        scheme=FP(k_f=k_f, follower_gains=default_follower_gains(scn.arm.chain.dof)),
        env=scn.env,
        leader_scale=leader_scale,
        dt=scn.dt,
        rate_hz=1.0 / scn.dt,
        substeps=scn.substeps,
        seed=scn.seed,
        q0_follower=scn.q_home,
    )
    return TeleopService(
        cfg,
        scenario=scn,
        host=host,
        port=port,
        record_dir=record_dir,
        task="drawer-open",
        hand_kp=hand_kp,
        hand_kd=hand_kd,
        client_buffer=client_buffer,
    )
