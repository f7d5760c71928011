"""Force-aware behavioral cloning on demonstration logs.

A deliberately small learner: chunked ridge regression from the follower
observation to the next chunk_size leader positions, with overlapping
chunks blended at playback time. The interesting variable is not model
capacity but whether the observation carries the external-torque channel.
A scripted expert that retries missed drawer grasps provides training
data in which that channel is the only early cue separating an engaged
pull from an empty one.
"""

from __future__ import annotations

import json
import os
import tempfile
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .contact import DrawerHandle, Scenario, make_drawer_scenario
from .controllers import FP, OperatorModel, default_follower_gains, scheme_to_dict
from .datalog import Dataset, DemonstrationRecord, write_demonstration
from .kinematics import FloatArray
from .session import SessionConfig, SessionTrace, run_follower, run_session

FEATURE_MAPS = ("linear", "polynomial-2")
ENSEMBLE_MODES = ("uniform", "exponential")
PREDICTOR_SCHEMA_VERSION = "1"
EVAL_CSV_HEADER = "seed,input_mode,rollout,success"

# Missed-grasp probe: a pull that has produced less than this much felt
# torque for a full probe window means the hand closed on nothing.
EPS_FORCE = 0.05
PROBE_TICKS = 10
MAX_GRASP_ATTEMPTS = 3

# The torque channel enters the regression through a saturating squash.
# The missed-grasp cue is presence versus absence of force, and squashing
# removes the policy's sensitivity to torque fluctuations around the much
# larger in-contact levels, which otherwise closes an unstable feedback
# loop with the stiff grip spring while holding a pulled-open drawer.
TORQUE_SQUASH_SCALE = 1.0


def squash_torque(tau: FloatArray) -> FloatArray:
    return np.tanh(np.asarray(tau, dtype=np.float64) / TORQUE_SQUASH_SCALE)


@dataclass(frozen=True)
class PolicyConfig:
    """Learner settings shared by training and playback."""

    chunk_size: int = 50
    include_force: bool = True
    feature_map: str = "linear"
    ridge_lambda: float = 1e-6
    ensemble_mode: str = "uniform"
    ensemble_decay: float = 0.1
    obs_history_len: int = 1

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be at least 1")
        if self.ridge_lambda < 0.0:
            raise ValueError("ridge_lambda must be nonnegative")
        if self.feature_map not in FEATURE_MAPS:
            raise ValueError(f"feature_map must be one of {FEATURE_MAPS}")
        if self.ensemble_mode not in ENSEMBLE_MODES:
            raise ValueError(f"ensemble_mode must be one of {ENSEMBLE_MODES}")
        if self.ensemble_decay <= 0.0:
            raise ValueError("ensemble_decay must be positive")
        if self.obs_history_len < 1:
            raise ValueError("obs_history_len must be at least 1")

    def to_dict(self) -> dict:
        return {
            "chunk_size": self.chunk_size,
            "include_force": self.include_force,
            "feature_map": self.feature_map,
            "ridge_lambda": self.ridge_lambda,
            "ensemble_mode": self.ensemble_mode,
            "ensemble_decay": self.ensemble_decay,
            "obs_history_len": self.obs_history_len,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyConfig":
        return cls(
            chunk_size=int(data["chunk_size"]),
            include_force=bool(data["include_force"]),
            feature_map=str(data["feature_map"]),
            ridge_lambda=float(data["ridge_lambda"]),
            ensemble_mode=str(data["ensemble_mode"]),
            ensemble_decay=float(data["ensemble_decay"]),
            obs_history_len=int(data["obs_history_len"]),
        )


def input_mode_label(cfg: PolicyConfig) -> str:
    return "position_force" if cfg.include_force else "position_only"


@dataclass(frozen=True)
class Observation:
    """What the policy sees at one tick: follower positions and, when the
    force channel is enabled, the external joint torque."""

    q: FloatArray
    tau_ext: FloatArray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=np.float64))
        object.__setattr__(self, "tau_ext", np.asarray(self.tau_ext, dtype=np.float64))
        if self.q.shape != self.tau_ext.shape:
            raise ValueError("q and tau_ext must have matching shapes")

    def vector(self, include_force: bool) -> FloatArray:
        if include_force:
            return np.concatenate([self.q, squash_torque(self.tau_ext)])
        return self.q.copy()


def _window_vector(window: Sequence[Observation], cfg: PolicyConfig) -> FloatArray:
    if len(window) != cfg.obs_history_len:
        raise ValueError(
            f"observation window must hold {cfg.obs_history_len} ticks, got {len(window)}"
        )
    return np.concatenate([obs.vector(cfg.include_force) for obs in window])


def _feature_vector(vec: FloatArray, kind: str) -> FloatArray:
    if kind == "linear":
        return vec
    i, j = np.triu_indices(len(vec))
    return np.concatenate([vec, vec[i] * vec[j]])


def _feature_matrix(rows: FloatArray, kind: str) -> FloatArray:
    if kind == "linear":
        return rows
    i, j = np.triu_indices(rows.shape[1])
    return np.hstack([rows, rows[:, i] * rows[:, j]])


def build_dataset(ds: Dataset | Iterable[DemonstrationRecord], cfg: PolicyConfig) -> tuple[FloatArray, FloatArray]:
    """Turn demonstration records into a regression problem.

    Every tick of every record yields one example: the (optionally
    history-stacked) observation against the next chunk_size actions
    flattened row-major, holding the final action past the end of the
    episode. Features are raw here; fit() owns the normalization so the
    statistics travel with the weights.
    """
    k = cfg.chunk_size
    h = cfg.obs_history_len
    feats: list[FloatArray] = []
    targets: list[FloatArray] = []
    for rec in ds:
        length = rec.n_steps
        if length < k:
            raise ValueError(f"record of length {length} is shorter than chunk_size {k}")
        pad = np.tile(rec.action[-1], (k - 1, 1))
        padded = np.vstack([rec.action, pad])
        obs_rows = (
            np.hstack([rec.q_follower, squash_torque(rec.tau_ext)])
            if cfg.include_force
            else rec.q_follower
        )
        for t in range(length):
            idx = [max(0, t - (h - 1) + j) for j in range(h)]
            feats.append(np.concatenate([obs_rows[i] for i in idx]))
            targets.append(padded[t : t + k].ravel())
    if not feats:
        raise ValueError("no records to build a dataset from")
    features = _feature_matrix(np.asarray(feats, dtype=np.float64), cfg.feature_map)
    return features, np.asarray(targets, dtype=np.float64)


@dataclass(frozen=True)
class ChunkPredictor:
    """Closed-form chunk regressor plus the statistics needed to apply it."""

    config: PolicyConfig
    weights: FloatArray
    feature_mean: FloatArray
    feature_scale: FloatArray
    action_mean: FloatArray
    dof: int
    joint_limits: FloatArray | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")
        if np.any(self.feature_scale <= 0.0):
            raise ValueError("feature_scale must be positive")


def fit(
    features: FloatArray,
    targets: FloatArray,
    cfg: PolicyConfig,
    joint_limits: FloatArray | None = None,
) -> ChunkPredictor:
    """Ridge regression in closed form on z-scored features.

    Targets are centered instead of carrying a bias column, so a
    zero-weight predictor falls back to the mean action chunk.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("features and targets must be 2d with matching row counts")
    if x.shape[0] < 1:
        raise ValueError("need at least one training example")
    if y.shape[1] % cfg.chunk_size != 0:
        raise ValueError("target width must be a multiple of chunk_size")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std < 1e-12, 1.0, std)
    xn = (x - mean) / scale
    action_mean = y.mean(axis=0)
    yc = y - action_mean

    d = x.shape[1]
    gram = xn.T @ xn + cfg.ridge_lambda * np.eye(d)
    if cfg.ridge_lambda == 0.0 and np.linalg.matrix_rank(gram) < d:
        raise ValueError("normal equations are singular at ridge_lambda 0; set ridge_lambda > 0")
    weights = np.linalg.solve(gram, xn.T @ yc)

    limits = None if joint_limits is None else np.asarray(joint_limits, dtype=np.float64)
    return ChunkPredictor(
        config=cfg,
        weights=weights,
        feature_mean=mean,
        feature_scale=scale,
        action_mean=action_mean,
        dof=y.shape[1] // cfg.chunk_size,
        joint_limits=limits,
    )


def train_policy(
    ds: Dataset | Iterable[DemonstrationRecord],
    cfg: PolicyConfig,
    joint_limits: FloatArray | None = None,
) -> ChunkPredictor:
    features, targets = build_dataset(ds, cfg)
    return fit(features, targets, cfg, joint_limits=joint_limits)


@dataclass(frozen=True)
class ActionChunk:
    """chunk_size future joint targets, stamped with the tick that issued them."""

    actions: FloatArray
    issued_at: int

    def __post_init__(self):
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.float64))
        if self.actions.ndim != 2:
            raise ValueError("actions must be a (chunk_size, dof) matrix")
        if not np.all(np.isfinite(self.actions)):
            raise ValueError("actions must be finite")

    def covers(self, tick: int) -> bool:
        return self.issued_at <= tick < self.issued_at + len(self.actions)

    def action_at(self, tick: int) -> FloatArray:
        if not self.covers(tick):
            raise ValueError(f"chunk issued at {self.issued_at} does not cover tick {tick}")
        return self.actions[tick - self.issued_at]


def predict_chunk(
    predictor: ChunkPredictor,
    obs: Observation | Sequence[Observation],
    tick: int = 0,
) -> ActionChunk:
    """Run the regressor on one observation window and clamp to joint limits."""
    cfg = predictor.config
    window = [obs] if isinstance(obs, Observation) else list(obs)
    vec = _window_vector(window, cfg)
    phi = _feature_vector(vec, cfg.feature_map)
    if phi.shape != predictor.feature_mean.shape:
        raise ValueError(
            f"observation produced {phi.shape[0]} features, predictor expects "
            f"{predictor.feature_mean.shape[0]}"
        )
    z = (phi - predictor.feature_mean) / predictor.feature_scale
    flat = predictor.action_mean + z @ predictor.weights
    chunk = flat.reshape(cfg.chunk_size, predictor.dof)
    if predictor.joint_limits is not None:
        chunk = np.clip(chunk, predictor.joint_limits[:, 0], predictor.joint_limits[:, 1])
    return ActionChunk(actions=chunk, issued_at=int(tick))


class EnsembleBuffer:
    """Ring of recent chunks that still cover the current tick."""

    def __init__(self):
        self._chunks: deque[ActionChunk] = deque()

    def push(self, chunk: ActionChunk) -> None:
        self._chunks.append(chunk)

    def prune(self, tick: int) -> None:
        while self._chunks and not self._chunks[0].covers(tick):
            self._chunks.popleft()

    def covering(self, tick: int) -> list[ActionChunk]:
        return [c for c in self._chunks if c.covers(tick)]

    def __len__(self) -> int:
        return len(self._chunks)


def temporal_ensemble(buf: EnsembleBuffer, tick: int, cfg: PolicyConfig) -> FloatArray:
    """Blend every live chunk's opinion about the current tick.

    Uniform mode averages them; exponential mode weights chunk i by
    exp(-decay * age_i) with age measured in ticks since issue, then
    normalizes, so fresher predictions dominate.
    """
    buf.prune(tick)
    chunks = buf.covering(tick)
    if not chunks:
        raise ValueError(f"no chunk covers tick {tick}")
    rows = np.stack([c.action_at(tick) for c in chunks])
    if cfg.ensemble_mode == "exponential":
        ages = np.array([tick - c.issued_at for c in chunks], dtype=np.float64)
        weights = np.exp(-cfg.ensemble_decay * ages)
    else:
        weights = np.ones(len(chunks))
    weights = weights / weights.sum()
    return weights @ rows


def save_predictor(predictor: ChunkPredictor, path: str | os.PathLike) -> None:
    """Write the predictor as JSON, atomically."""
    payload = {
        "schema_version": PREDICTOR_SCHEMA_VERSION,
        "config": predictor.config.to_dict(),
        "normalization": {
            "feature_mean": predictor.feature_mean.tolist(),
            "feature_scale": predictor.feature_scale.tolist(),
            "action_mean": predictor.action_mean.tolist(),
        },
        "weights": predictor.weights.tolist(),
        "dof": predictor.dof,
        "joint_limits": None if predictor.joint_limits is None else predictor.joint_limits.tolist(),
    }
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(prefix=".predictor_", suffix=".json.tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_predictor(path: str | os.PathLike) -> ChunkPredictor:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("schema_version")
    if version != PREDICTOR_SCHEMA_VERSION:
        raise ValueError(f"unsupported predictor schema version {version!r}")
    norm = payload["normalization"]
    limits = payload.get("joint_limits")
    return ChunkPredictor(
        config=PolicyConfig.from_dict(payload["config"]),
        weights=np.asarray(payload["weights"], dtype=np.float64),
        feature_mean=np.asarray(norm["feature_mean"], dtype=np.float64),
        feature_scale=np.asarray(norm["feature_scale"], dtype=np.float64),
        action_mean=np.asarray(norm["action_mean"], dtype=np.float64),
        dof=int(payload["dof"]),
        joint_limits=None if limits is None else np.asarray(limits, dtype=np.float64),
    )


class DrawerExpert:
    """Scripted operator target for drawer scenarios.

    Walks the leader from home to the handle, settles, pulls, and watches
    the felt feedback torque. A pull whose felt torque has stayed below
    eps_force for a full probe window means the hand closed on nothing:
    the expert backs off to home and re-approaches for another grasp, up
    to max_attempts pulls, then parks.
    """

    def __init__(
        self,
        scenario: Scenario,
        eps_force: float = EPS_FORCE,
        probe_ticks: int = PROBE_TICKS,
        max_attempts: int = MAX_GRASP_ATTEMPTS,
        approach_s: float = 1.5,
        settle_s: float = 0.4,
        pull_s: float = 3.0,
        retreat_s: float = 0.6,
    ):
        if scenario.q_home is None or scenario.q_grasp is None or scenario.q_open is None:
            raise ValueError("scenario does not define guide waypoints")
        self.q_home = np.asarray(scenario.q_home, dtype=np.float64)
        self.q_grasp = np.asarray(scenario.q_grasp, dtype=np.float64)
        self.q_open = np.asarray(scenario.q_open, dtype=np.float64)
        # Approach aims slightly past the handle so the fingertip sweeps
        # through the capture region instead of stalling at its edge.
        self.q_dive = self.q_grasp + 0.1 * (self.q_open - self.q_grasp)
        self.eps_force = eps_force
        self.probe_ticks = probe_ticks
        self.max_attempts = max_attempts
        self.approach_s = approach_s
        self.settle_s = settle_s
        self.pull_s = pull_s
        self.retreat_s = retreat_s
        self.phase = "approach"
        self.phase_start = 0.0
        self.pulls = 0
        self.phase_log: list[tuple[float, str]] = [(0.0, "approach")]
        self._felt: deque[float] = deque(maxlen=probe_ticks)
        self._retreat_from = self.q_grasp

    def _enter(self, phase: str, t: float) -> None:
        self.phase = phase
        self.phase_start = t
        self.phase_log.append((t, phase))

    @staticmethod
    def _lerp(a: FloatArray, b: FloatArray, alpha: float) -> FloatArray:
        return a + (b - a) * min(max(alpha, 0.0), 1.0)

    def __call__(self, t: float, view) -> FloatArray:
        self._felt.append(float(np.max(np.abs(view.felt_torque))))
        elapsed = t - self.phase_start

        if self.phase == "approach":
            if elapsed >= self.approach_s:
                self._enter("settle", t)
                return self.q_grasp.copy()
            return self._lerp(self.q_home, self.q_dive, elapsed / self.approach_s)

        if self.phase == "settle":
            if elapsed >= self.settle_s:
                self.pulls += 1
                self._enter("pull", t)
            return self.q_grasp.copy()

        if self.phase == "pull":
            alpha = elapsed / self.pull_s
            target = self._lerp(self.q_grasp, self.q_open, alpha)
            probe_ready = elapsed >= self.probe_ticks * 0.02 and len(self._felt) == self._felt.maxlen
            if probe_ready and max(self._felt) < self.eps_force:
                self._retreat_from = target
                self._enter("park" if self.pulls >= self.max_attempts else "retreat", t)
                return target
            if alpha >= 1.0:
                self._enter("hold", t)
            return target

        if self.phase == "retreat":
            if elapsed >= self.retreat_s:
                self._enter("approach", t)
                return self.q_home.copy()
            return self._lerp(self._retreat_from, self.q_home, elapsed / self.retreat_s)

        if self.phase == "park":
            return self._lerp(self._retreat_from, self.q_home, elapsed / self.retreat_s)

        return self.q_open.copy()


def _drawer_session_config(scenario: Scenario, seed: int, k_f: float) -> SessionConfig:
    n = scenario.arm.chain.dof
    return SessionConfig(
        follower=scenario.arm,
        scheme=FP(k_f=k_f, follower_gains=default_follower_gains(n)),
        env=scenario.env,
        dt=scenario.dt,
        rate_hz=1.0 / scenario.dt,
        substeps=scenario.substeps,
        seed=seed,
        q0_follower=scenario.q_home,
    )


def scripted_demonstrator(
    scenario: Scenario,
    seed: int | None = None,
    duration_s: float = 16.0,
    k_f: float = 0.5,
    eps_force: float = EPS_FORCE,
    probe_ticks: int = PROBE_TICKS,
    max_attempts: int = MAX_GRASP_ATTEMPTS,
) -> SessionTrace:
    """Run the scripted expert over one episode and return the trace.

    The session seed controls the grasp outcome draws, so the same
    scenario replayed with different seeds produces both clean pulls and
    recovery episodes.
    """
    if not isinstance(scenario.env, DrawerHandle):
        raise ValueError("the scripted demonstrator requires a drawer scenario")
    session_seed = scenario.seed if seed is None else int(seed)
    cfg = _drawer_session_config(scenario, session_seed, k_f)
    expert = DrawerExpert(
        scenario, eps_force=eps_force, probe_ticks=probe_ticks, max_attempts=max_attempts
    )
    n = scenario.arm.chain.dof
    operator = OperatorModel(
        hand_kp=np.full(n, 60.0), hand_kd=np.full(n, 6.0), target_trajectory=expert
    )
    return run_session(cfg, operator, duration_s)


def episode_success(trace: SessionTrace, scenario: Scenario) -> bool:
    return bool(
        trace.n_ticks > 0
        and not trace.diverged
        and trace.drawer_extension[-1] > scenario.success_threshold
    )


def collect_demonstrations(
    n_demos: int = 25,
    base_seed: int = 0,
    grasp_success_prob: float = 0.7,
    duration_s: float = 16.0,
    k_f: float = 0.5,
    out_dir: str | os.PathLike | None = None,
    task: str = "drawer-open",
) -> Dataset:
    """Collect scripted drawer episodes, each with fresh handle geometry.

    Demo i uses scenario seed base_seed * 10000 + i for both the handle
    placement and the grasp draws, so a dataset is reproducible from its
    base seed alone.
    """
    records = []
    scheme_dict = scheme_to_dict(FP(k_f=k_f, follower_gains=default_follower_gains(2)))
    for i in range(n_demos):
        demo_seed = int(base_seed) * 10000 + i
        scn = make_drawer_scenario(seed=demo_seed, grasp_success_prob=grasp_success_prob)
        trace = scripted_demonstrator(scn, seed=demo_seed, duration_s=duration_s, k_f=k_f)
        record = DemonstrationRecord.from_trace(
            trace,
            task=task,
            scheme=scheme_dict,
            seed=demo_seed,
            success=episode_success(trace, scn),
        )
        records.append(record)
        if out_dir is not None:
            write_demonstration(record, os.path.join(os.fspath(out_dir), f"demo_{i:03d}.jsonl"))
    return Dataset(records=tuple(records))


def rollout_policy(
    predictor: ChunkPredictor,
    scenario: Scenario,
    duration_s: float = 16.0,
    session_seed: int | None = None,
    ensembled: bool = True,
) -> SessionTrace:
    """Close the loop: observe, predict a chunk, blend, command the follower.

    With ensembled False the newest chunk plays open loop until exhausted
    and only then is a new one predicted, which is the non-blended
    baseline the ensemble is compared against.
    """
    if predictor.dof != scenario.arm.chain.dof:
        raise ValueError("predictor and scenario joint counts differ")
    cfg = predictor.config
    gains = default_follower_gains(predictor.dof)
    buf = EnsembleBuffer()
    history: deque[Observation] = deque(maxlen=cfg.obs_history_len)
    current: dict[str, ActionChunk | None] = {"chunk": None}

    def ref_fn(k: int, q: FloatArray, qdot: FloatArray, tau_ext: FloatArray) -> FloatArray:
        obs = Observation(q=q, tau_ext=tau_ext)
        history.append(obs)
        window = [history[0]] * (cfg.obs_history_len - len(history)) + list(history)
        if ensembled:
            buf.push(predict_chunk(predictor, window, tick=k))
            return temporal_ensemble(buf, k, cfg)
        chunk = current["chunk"]
        if chunk is None or not chunk.covers(k):
            chunk = predict_chunk(predictor, window, tick=k)
            current["chunk"] = chunk
        return chunk.action_at(k)

    n_ticks = int(round(duration_s / scenario.dt))
    seed = scenario.seed if session_seed is None else int(session_seed)
    return run_follower(
        scenario.arm,
        scenario.env,
        gains,
        ref_fn,
        n_ticks,
        dt=scenario.dt,
        substeps=scenario.substeps,
        seed=seed,
        q0=scenario.q_home,
    )


@dataclass(frozen=True)
class EvalRow:
    seed: int
    input_mode: str
    rollout: int
    success: bool


@dataclass(frozen=True)
class EvaluationReport:
    """Rollout outcomes for one input mode, with per-seed and pooled rates."""

    input_mode: str
    rows: tuple[EvalRow, ...]

    @property
    def success_rate(self) -> float:
        return float(np.mean([r.success for r in self.rows])) if self.rows else 0.0

    @property
    def per_seed(self) -> dict[int, float]:
        seeds: dict[int, list[bool]] = {}
        for r in self.rows:
            seeds.setdefault(r.seed, []).append(r.success)
        return {s: float(np.mean(v)) for s, v in sorted(seeds.items())}

    @property
    def seed_mean(self) -> float:
        rates = list(self.per_seed.values())
        return float(np.mean(rates)) if rates else 0.0

    @property
    def seed_std(self) -> float:
        rates = list(self.per_seed.values())
        return float(np.std(rates)) if rates else 0.0

    @property
    def rollout_std(self) -> float:
        return float(np.std([float(r.success) for r in self.rows])) if self.rows else 0.0


def evaluate_policy(
    predictor: ChunkPredictor,
    scenario: Scenario | Callable[[int], Scenario],
    n_rollouts: int = 15,
    seeds: Sequence[int] = (0, 1, 2),
    duration_s: float = 16.0,
) -> EvaluationReport:
    """Closed-loop evaluation over seeded rollouts.

    scenario may be a fixed Scenario or a factory called with the rollout
    seed, in which case every rollout also gets fresh handle geometry. A
    rollout that raises inside the simulation is recorded as a failure.
    """
    mode = input_mode_label(predictor.config)
    rows = []
    for s in seeds:
        for i in range(n_rollouts):
            rollout_seed = int(s) * 10000 + 5000 + i
            scn = scenario(rollout_seed) if callable(scenario) else scenario
            try:
                trace = rollout_policy(
                    predictor, scn, duration_s=duration_s, session_seed=rollout_seed
                )
                ok = episode_success(trace, scn)
            except Exception:
                ok = False
            rows.append(EvalRow(seed=int(s), input_mode=mode, rollout=i, success=ok))
    return EvaluationReport(input_mode=mode, rows=tuple(rows))


def write_eval_csv(reports: EvaluationReport | Iterable[EvaluationReport], path: str | os.PathLike) -> None:
    if isinstance(reports, EvaluationReport):
        reports = [reports]
    lines = [EVAL_CSV_HEADER]
    for report in reports:
        for r in report.rows:
            lines.append(f"{r.seed},{r.input_mode},{r.rollout},{int(r.success)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class InputModeComparison:
    force_aware: EvaluationReport
    position_only: EvaluationReport

    def summary(self) -> str:
        fa, po = self.force_aware, self.position_only
        return (
            f"position_force {fa.success_rate:.2f} +/- {fa.rollout_std:.2f} | "
            f"position_only {po.success_rate:.2f} +/- {po.rollout_std:.2f}"
        )


def compare_input_modes(
    train_seeds: Sequence[int] = (0, 1, 2),
    n_demos: int = 25,
    n_val: int = 3,
    n_rollouts: int = 15,
    grasp_success_prob: float = 0.7,
    duration_s: float = 16.0,
    config: PolicyConfig = PolicyConfig(feature_map="polynomial-2", obs_history_len=2),
    csv_path: str | os.PathLike | None = None,
) -> InputModeComparison:
    """Train per-seed policies with and without the force channel and
    evaluate both on the same rollout seeds.

    Each training seed collects its own demonstrations, holds out n_val
    records, fits one predictor per input mode on the shared training
    split, and runs n_rollouts closed-loop episodes per mode. The default
    learner uses quadratic features and a two-tick observation window:
    the interaction terms gate the pull on force presence and the short
    history disambiguates approach from retreat where torque is silent.
    """
    limits = make_drawer_scenario(seed=0).arm.chain.joint_limits
    rows: dict[bool, list[EvalRow]] = {True: [], False: []}
    for s in train_seeds:
        ds = collect_demonstrations(
            n_demos=n_demos,
            base_seed=s,
            grasp_success_prob=grasp_success_prob,
            duration_s=duration_s,
        )
        train, _val = ds.split(n_val=n_val, seed=int(s))

        def factory(rollout_seed: int) -> Scenario:
            return make_drawer_scenario(seed=rollout_seed, grasp_success_prob=grasp_success_prob)

        for include_force in (True, False):
            mode_cfg = replace(config, include_force=include_force)
            predictor = train_policy(train, mode_cfg, joint_limits=limits)
            report = evaluate_policy(
                predictor, factory, n_rollouts=n_rollouts, seeds=(int(s),), duration_s=duration_s
            )
            rows[include_force].extend(report.rows)

    comparison = InputModeComparison(
        force_aware=EvaluationReport(input_mode="position_force", rows=tuple(rows[True])),
        position_only=EvaluationReport(input_mode="position_only", rows=tuple(rows[False])),
    )
    if csv_path is not None:
        write_eval_csv([comparison.force_aware, comparison.position_only], csv_path)
    return comparison
