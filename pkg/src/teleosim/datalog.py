"""Demonstration recording: JSONL files, datasets, and playback.

One file per demonstration. The first line is a header with the schema
version and episode metadata; every following line is one control tick.
Floats are serialized with Python's shortest round-trip repr, so reading a
file back reproduces the recorded arrays bit for bit, and playback through
the follower rollout reproduces the original trajectory exactly.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .contact import Scenario
from .controllers import scheme_from_dict
from .kinematics import FloatArray
from .session import SessionTrace, run_follower

SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class DemonstrationRecord:
    """One teleoperated episode, downsampled to exactly the control ticks."""

    task: str
    dof: int
    rate_hz: float
    scheme: dict
    seed: int
    success: bool
    t: FloatArray
    q_leader: FloatArray
    q_follower: FloatArray
    qdot_follower: FloatArray
    tau_ext: FloatArray
    action: FloatArray

    def __post_init__(self):
        n = self.n_steps
        for name in ("q_leader", "q_follower", "qdot_follower", "tau_ext", "action"):
            arr = getattr(self, name)
            if arr.shape != (n, self.dof):
                raise ValueError(f"{name} must have shape ({n}, {self.dof}), got {arr.shape}")

    @property
    def n_steps(self) -> int:
        return len(self.t)

    @classmethod
    def from_trace(
        cls, trace: SessionTrace, task: str, scheme: dict, seed: int, success: bool
    ) -> "DemonstrationRecord":
        return cls(
            task=task,
            dof=trace.q_follower.shape[1],
            rate_hz=trace.rate_hz,
            scheme=scheme,
            seed=seed,
            success=success,
            t=trace.t.copy(),
            q_leader=trace.q_leader.copy(),
            q_follower=trace.q_follower.copy(),
            qdot_follower=trace.qdot_follower.copy(),
            tau_ext=trace.tau_ext.copy(),
            # The action channel is the leader position at each tick: the
            # reference the follower was asked to track.
            action=trace.q_leader.copy(),
        )


def write_demonstration(record: DemonstrationRecord, path: str | os.PathLike) -> None:
    """Write a record as JSONL, atomically: temp file then rename."""
    header = {
        "schema_version": SCHEMA_VERSION,
        "task": record.task,
        "dof": record.dof,
        "rate_hz": record.rate_hz,
        "scheme": record.scheme,
        "seed": record.seed,
        "success": record.success,
        "n_steps": record.n_steps,
    }
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".demo_", suffix=".jsonl.tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(json.dumps(header) + "\n")
            for i in range(record.n_steps):
                step = {
                    "t": record.t[i],
                    "q_leader": record.q_leader[i].tolist(),
                    "q_follower": record.q_follower[i].tolist(),
                    "qdot_follower": record.qdot_follower[i].tolist(),
                    "tau_ext": record.tau_ext[i].tolist(),
                    "action": record.action[i].tolist(),
                }
                fh.write(json.dumps(step) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def read_demonstration(path: str | os.PathLike) -> DemonstrationRecord:
    """Parse a JSONL demonstration; malformed or truncated input names the line."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: line 1: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: line 1: malformed header: {exc}") from exc
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: line 1: unsupported schema version {version!r}")
    try:
        n_steps = int(header["n_steps"])
        dof = int(header["dof"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: line 1: bad header field: {exc}") from exc

    if len(lines) - 1 < n_steps:
        raise ValueError(
            f"{path}: line {len(lines) + 1}: file truncated, expected {n_steps} steps "
            f"but found {len(lines) - 1}"
        )

    cols: dict[str, list] = {k: [] for k in ("t", "q_leader", "q_follower", "qdot_follower", "tau_ext", "action")}
    for i in range(n_steps):
        line_no = i + 2
        try:
            step = json.loads(lines[i + 1])
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {line_no}: malformed step: {exc}") from exc
        try:
            for key in cols:
                cols[key].append(step[key])
        except KeyError as exc:
            raise ValueError(f"{path}: line {line_no}: missing field {exc}") from exc

    try:
        return DemonstrationRecord(
            task=header["task"],
            dof=dof,
            rate_hz=float(header["rate_hz"]),
            scheme=header["scheme"],
            seed=int(header["seed"]),
            success=bool(header["success"]),
            t=np.asarray(cols["t"], dtype=np.float64),
            q_leader=np.asarray(cols["q_leader"], dtype=np.float64).reshape(n_steps, dof),
            q_follower=np.asarray(cols["q_follower"], dtype=np.float64).reshape(n_steps, dof),
            qdot_follower=np.asarray(cols["qdot_follower"], dtype=np.float64).reshape(n_steps, dof),
            tau_ext=np.asarray(cols["tau_ext"], dtype=np.float64).reshape(n_steps, dof),
            action=np.asarray(cols["action"], dtype=np.float64).reshape(n_steps, dof),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: inconsistent record: {exc}") from exc


def replay_demonstration(record: DemonstrationRecord, scenario: Scenario) -> SessionTrace:
    """Re-run a recorded action stream open loop against the scenario physics.

    Assumes the record was captured with the follower tracking the action
    stream directly (the zero-latency local link used by the recorder), so
    the replayed follower trajectory matches the logged one exactly when
    the scenario (environment, seed, timing) is the one used at recording
    time. Position-coupled schemes only: a feed-forward operator torque is
    not part of the log.
    """
    scheme = scheme_from_dict(record.scheme)
    actions = record.action
    return run_follower(
        scenario.arm,
        scenario.env,
        scheme.follower_gains,
        lambda k, q, qdot, tau: actions[k],
        record.n_steps,
        dt=scenario.dt,
        substeps=scenario.substeps,
        seed=scenario.seed,
        q0=record.q_follower[0],
    )


@dataclass(frozen=True)
class Dataset:
    """An ordered bundle of demonstrations."""

    records: tuple[DemonstrationRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def split(self, n_val: int = 3, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Shuffle by seed and hold out n_val records for validation."""
        if not 0 <= n_val <= len(self.records):
            raise ValueError(f"n_val must be in [0, {len(self.records)}]")
        perm = np.random.default_rng(seed).permutation(len(self.records))
        val_idx = set(perm[:n_val].tolist())
        train = tuple(r for i, r in enumerate(self.records) if i not in val_idx)
        val = tuple(r for i, r in enumerate(self.records) if i in val_idx)
        return Dataset(records=train), Dataset(records=val)


def load_dataset(paths) -> Dataset:
    """Read many demonstration files. Accepts a directory or an iterable of paths."""
    if isinstance(paths, (str, os.PathLike)) and os.path.isdir(paths):
        directory = os.fspath(paths)
        paths = sorted(
            os.path.join(directory, name) for name in os.listdir(directory) if name.endswith(".jsonl")
        )
    records = tuple(read_demonstration(p) for p in paths)
    return Dataset(records=records)
