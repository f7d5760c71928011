"""Fixed-rate bilateral session loop, metrics, and the gain/delay sweep.

One tick runs at 50 Hz by default: sample the operator, ship the leader
state down the up-channel, let the follower track whatever reference has
arrived, evaluate contact at the follower fingertip, ship the follower
state and its external torque back, apply the scheme's leader feedback,
and integrate both arms. Time is derived from the integer tick index, so
a trace timestamp is exactly tick * dt.
"""

from __future__ import annotations

import csv
import inspect
import os
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .channel import Channel, ChannelConfig
from .contact import ArmModel, ArmState, ContactState, Environment, contact_wrench, ee_kinematics, step
from .controllers import (
    FP,
    PP,
    ControlScheme,
    FourC,
    ImpedanceGains,
    OperatorModel,
    fp_leader_torque,
    impedance_torque,
    operator_torque,
    pp_leader_torque,
)
from .kinematics import FloatArray, external_joint_torque, geometric_jacobian, scale_chain


def derive_leader_model(follower: ArmModel, scale: float) -> ArmModel:
    """A leader device as a scaled copy of the follower.

    Link lengths scale by `scale`; inertia and viscous damping scale by
    scale**2 (a smaller device is proportionally lighter and less damped).
    """
    return ArmModel(
        chain=scale_chain(follower.chain, scale),
        inertia=follower.inertia * scale**2,
        viscous_damping=follower.viscous_damping * scale**2,
    )


@dataclass(frozen=True)
class SessionConfig:
    follower: ArmModel
    scheme: ControlScheme
    env: Environment = None
    leader: ArmModel | None = None
    leader_scale: float = 0.5
    rate_hz: float = 50.0
    dt: float = 0.02
    substeps: int = 4
    seed: int = 0
    up_channel: ChannelConfig | None = None
    down_channel: ChannelConfig | None = None
    q0_leader: FloatArray | None = None
    q0_follower: FloatArray | None = None

    def __post_init__(self):
        if abs(self.dt * self.rate_hz - 1.0) > 1e-9:
            raise ValueError("dt and rate_hz must satisfy dt * rate_hz == 1")
        if isinstance(self.scheme, FourC):
            leader = self.leader
            if self.leader_scale != 1.0 and leader is None:
                raise ValueError("the 4C scheme requires identical arms (leader_scale 1)")
            if leader is not None and (
                leader.chain.dof != self.follower.chain.dof
                or not np.array_equal(leader.inertia, self.follower.inertia)
                or not np.array_equal(leader.viscous_damping, self.follower.viscous_damping)
            ):
                raise ValueError("the 4C scheme requires identical arms")

    def resolved_leader(self) -> ArmModel:
        if self.leader is not None:
            return self.leader
        return derive_leader_model(self.follower, self.leader_scale)

    def resolved_channel(self, cfg: ChannelConfig | None, seed_offset: int) -> ChannelConfig:
        if cfg is not None:
            return cfg
        return ChannelConfig(rate_hz=self.rate_hz, seed=self.seed + seed_offset)


@dataclass
class SessionTrace:
    """Per-tick history of one session. All arrays share the tick axis."""

    t: FloatArray
    q_leader: FloatArray
    qdot_leader: FloatArray
    q_follower: FloatArray
    qdot_follower: FloatArray
    q_ref_follower: FloatArray
    tau_operator: FloatArray
    tau_feedback: FloatArray
    tau_ext: FloatArray
    wrench: FloatArray
    in_contact: np.ndarray
    grasped: np.ndarray
    drawer_extension: FloatArray
    dt: float = 0.02
    rate_hz: float = 50.0
    diverged: bool = False
    diverged_tick: int | None = None
    final_contact: ContactState = field(default_factory=ContactState)

    @property
    def n_ticks(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class OperatorView:
    """What the operator can sense at the start of a tick."""

    t: float
    q_leader: FloatArray
    qdot_leader: FloatArray
    felt_torque: FloatArray


def _target_caller(model: OperatorModel) -> Callable[[float, OperatorView], FloatArray]:
    """Adapt target_trajectory, which may take (t) or (t, view)."""
    fn = model.target_trajectory
    try:
        n_params = len(inspect.signature(fn).parameters)
    except (TypeError, ValueError):
        n_params = 1
    if n_params >= 2:
        return lambda t, view: fn(t, view)
    return lambda t, view: fn(t)


def _follower_command(
    scheme: ControlScheme, q_ref: FloatArray, q: FloatArray, qdot: FloatArray, tau_ff: FloatArray | None
) -> FloatArray:
    gains = scheme.follower_gains
    tau = impedance_torque(gains, q_ref, q, qdot)
    if isinstance(scheme, FourC) and tau_ff is not None:
        tau = tau + tau_ff
    return tau


def run_follower(
    arm: ArmModel,
    env: Environment,
    gains: ImpedanceGains,
    ref_fn: Callable[[int, FloatArray, FloatArray, FloatArray], FloatArray],
    n_ticks: int,
    dt: float = 0.02,
    substeps: int = 4,
    seed: int = 0,
    q0: FloatArray | None = None,
) -> SessionTrace:
    """Follower-only rollout: a reference source drives the impedance loop.

    Used for playback of recorded action streams and for policy rollouts;
    the arithmetic per tick is identical to the follower half of a full
    session over a zero-latency link, so a recorded action stream replays
    the original trajectory bit for bit.
    """
    n = arm.chain.dof
    state = ArmState(q=np.zeros(n) if q0 is None else np.asarray(q0, dtype=np.float64), qdot=np.zeros(n))
    contact = ContactState()
    rows = {k: [] for k in ("t", "q", "qdot", "ref", "tau_ext", "wrench", "in_contact", "grasped", "ext")}
    diverged = False
    diverged_tick = None
    for k in range(n_ticks):
        t = k * dt
        if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qdot))):
            diverged, diverged_tick = True, k
            break
        pose, linvel = ee_kinematics(arm.chain, state.q, state.qdot)
        wrench, contact = contact_wrench(env, pose, linvel, contact, seed=seed)
        tau_ext = external_joint_torque(geometric_jacobian(arm.chain, state.q), wrench)
        q_ref = np.asarray(ref_fn(k, state.q, state.qdot, tau_ext), dtype=np.float64)
        tau_cmd = impedance_torque(gains, q_ref, state.q, state.qdot)
        rows["t"].append(t)
        rows["q"].append(state.q)
        rows["qdot"].append(state.qdot)
        rows["ref"].append(q_ref)
        rows["tau_ext"].append(tau_ext)
        rows["wrench"].append(wrench.stacked())
        rows["in_contact"].append(contact.in_contact)
        rows["grasped"].append(contact.grasped)
        rows["ext"].append(contact.drawer_extension)
        state = replace(step(arm, state, tau_cmd - tau_ext, dt, substeps), t=(k + 1) * dt)
    m = len(rows["t"])
    zeros = np.zeros((m, n))
    return SessionTrace(
        t=np.asarray(rows["t"]),
        q_leader=np.asarray(rows["ref"]).reshape(m, n),
        qdot_leader=zeros,
        q_follower=np.asarray(rows["q"]).reshape(m, n),
        qdot_follower=np.asarray(rows["qdot"]).reshape(m, n),
        q_ref_follower=np.asarray(rows["ref"]).reshape(m, n),
        tau_operator=zeros,
        tau_feedback=zeros,
        tau_ext=np.asarray(rows["tau_ext"]).reshape(m, n),
        wrench=np.asarray(rows["wrench"]).reshape(m, 6),
        in_contact=np.asarray(rows["in_contact"], dtype=bool),
        grasped=np.asarray(rows["grasped"], dtype=bool),
        drawer_extension=np.asarray(rows["ext"], dtype=np.float64),
        dt=dt,
        rate_hz=1.0 / dt,
        diverged=diverged,
        diverged_tick=diverged_tick,
        final_contact=contact,
    )


class Session:
    """Incremental bilateral simulation; one call to tick() advances one period.

    Splitting the loop out of run_session lets the wire service drive the
    same physics in real time and swap operator targets or schemes between
    ticks.
    """

    def __init__(
        self,
        cfg: SessionConfig,
        operator: OperatorModel,
        gripper: Callable[[float], bool] | None = None,
    ):
        self.cfg = cfg
        self.operator = operator
        self._target = _target_caller(operator)
        self.gripper = gripper
        self.leader_model = cfg.resolved_leader()
        self.follower_model = cfg.follower
        n = cfg.follower.chain.dof
        if self.leader_model.chain.dof != n:
            raise ValueError("leader and follower must share joint count")
        q0f = np.zeros(n) if cfg.q0_follower is None else np.asarray(cfg.q0_follower, dtype=np.float64)
        q0l = q0f.copy() if cfg.q0_leader is None else np.asarray(cfg.q0_leader, dtype=np.float64)
        self.leader_state = ArmState(q=q0l, qdot=np.zeros(n))
        self.follower_state = ArmState(q=q0f.copy(), qdot=np.zeros(n))
        self.contact_state = ContactState()
        self.up = Channel(cfg.resolved_channel(cfg.up_channel, 1))
        self.down = Channel(cfg.resolved_channel(cfg.down_channel, 2))
        self.tick_index = 0
        self.tau_feedback = np.zeros(n)
        # Latest delivered samples, held until something newer arrives.
        self._ref_follower = q0f.copy()
        self._ff_torque = np.zeros(n)
        self._leader_view_q = q0f.copy()
        self._leader_view_tau = np.zeros(n)
        self.diverged = False

    def tick(self) -> dict | None:
        """Advance one control period; returns the tick record, or None once diverged."""
        if self.diverged:
            return None
        cfg = self.cfg
        k = self.tick_index
        t = k * cfg.dt
        ls, fs = self.leader_state, self.follower_state

        finite = (
            np.all(np.isfinite(ls.q))
            and np.all(np.isfinite(ls.qdot))
            and np.all(np.isfinite(fs.q))
            and np.all(np.isfinite(fs.qdot))
        )
        if not finite:
            self.diverged = True
            return None

        view = OperatorView(t=t, q_leader=ls.q, qdot_leader=ls.qdot, felt_torque=self.tau_feedback)
        target = np.asarray(self._target(t, view), dtype=np.float64)
        tau_op = np.clip(
            self.operator.hand_kp * (target - ls.q) - self.operator.hand_kd * ls.qdot,
            -self.operator.tau_max,
            self.operator.tau_max,
        )

        self.up.send({"q": ls.q, "qdot": ls.qdot, "tau_op": tau_op}, t)
        for msg in self.up.deliver(t):
            self._ref_follower = msg["q"]
            self._ff_torque = msg["tau_op"]

        closed = True if self.gripper is None else bool(self.gripper(t))
        pose, linvel = ee_kinematics(self.follower_model.chain, fs.q, fs.qdot)
        wrench, self.contact_state = contact_wrench(
            cfg.env, pose, linvel, self.contact_state, seed=cfg.seed, gripper_close=closed
        )
        tau_ext = external_joint_torque(geometric_jacobian(self.follower_model.chain, fs.q), wrench)

        self.down.send({"q": fs.q, "qdot": fs.qdot, "tau_ext": tau_ext}, t)
        for msg in self.down.deliver(t):
            self._leader_view_q = msg["q"]
            self._leader_view_tau = msg["tau_ext"]

        scheme = cfg.scheme
        if isinstance(scheme, FP):
            tau_fb = fp_leader_torque(scheme.k_f, self._leader_view_tau)
        elif isinstance(scheme, PP):
            tau_fb = pp_leader_torque(scheme.leader_gains, self._leader_view_q, ls.q, ls.qdot)
        else:
            tau_fb = impedance_torque(scheme.follower_gains, self._leader_view_q, ls.q, ls.qdot)
            tau_fb = tau_fb - scheme.force_gain * self._leader_view_tau

        tau_f_cmd = _follower_command(scheme, self._ref_follower, fs.q, fs.qdot, self._ff_torque)

        record = {
            "tick": k,
            "t": t,
            "q_leader": ls.q,
            "qdot_leader": ls.qdot,
            "q_follower": fs.q,
            "qdot_follower": fs.qdot,
            "q_ref_follower": self._ref_follower,
            "tau_operator": tau_op,
            "tau_feedback": tau_fb,
            "tau_ext": tau_ext,
            "wrench": wrench.stacked(),
            "in_contact": self.contact_state.in_contact,
            "grasped": self.contact_state.grasped,
            "drawer_extension": self.contact_state.drawer_extension,
            "target": target,
        }

        tau_leader_total = tau_op + tau_fb
        tau_follower_total = tau_f_cmd - tau_ext
        if not (np.all(np.isfinite(tau_leader_total)) and np.all(np.isfinite(tau_follower_total))):
            self.diverged = True
            return None

        self.leader_state = replace(
            step(self.leader_model, ls, tau_leader_total, cfg.dt, cfg.substeps), t=(k + 1) * cfg.dt
        )
        self.follower_state = replace(
            step(self.follower_model, fs, tau_follower_total, cfg.dt, cfg.substeps), t=(k + 1) * cfg.dt
        )
        self.tau_feedback = tau_fb
        self.tick_index = k + 1
        return record


def run_session(
    cfg: SessionConfig,
    operator: OperatorModel,
    duration_s: float,
    gripper: Callable[[float], bool] | None = None,
) -> SessionTrace:
    """Run a session for a fixed duration and collect the trace.

    A run that goes non-finite is truncated at the offending tick and
    flagged diverged rather than raising, so sweeps can grade it.
    """
    n_ticks = int(round(duration_s * cfg.rate_hz))
    session = Session(cfg, operator, gripper=gripper)
    records = []
    for _ in range(n_ticks):
        rec = session.tick()
        if rec is None:
            break
        records.append(rec)
    return trace_from_records(records, session)


TRACE_KEYS = (
    "t",
    "q_leader",
    "qdot_leader",
    "q_follower",
    "qdot_follower",
    "q_ref_follower",
    "tau_operator",
    "tau_feedback",
    "tau_ext",
    "wrench",
    "in_contact",
    "grasped",
    "drawer_extension",
)


def trace_from_records(records: list[dict], session: Session) -> SessionTrace:
    """Assemble tick records (as produced by Session.tick) into a trace."""
    cfg = session.cfg
    rows: dict[str, list] = {k: [rec[k] for rec in records] for k in TRACE_KEYS}
    m = len(records)
    n = cfg.follower.chain.dof
    return SessionTrace(
        t=np.asarray(rows["t"], dtype=np.float64),
        q_leader=np.asarray(rows["q_leader"]).reshape(m, n),
        qdot_leader=np.asarray(rows["qdot_leader"]).reshape(m, n),
        q_follower=np.asarray(rows["q_follower"]).reshape(m, n),
        qdot_follower=np.asarray(rows["qdot_follower"]).reshape(m, n),
        q_ref_follower=np.asarray(rows["q_ref_follower"]).reshape(m, n),
        tau_operator=np.asarray(rows["tau_operator"]).reshape(m, n),
        tau_feedback=np.asarray(rows["tau_feedback"]).reshape(m, n),
        tau_ext=np.asarray(rows["tau_ext"]).reshape(m, n),
        wrench=np.asarray(rows["wrench"]).reshape(m, 6),
        in_contact=np.asarray(rows["in_contact"], dtype=bool),
        grasped=np.asarray(rows["grasped"], dtype=bool),
        drawer_extension=np.asarray(rows["drawer_extension"], dtype=np.float64),
        dt=cfg.dt,
        rate_hz=cfg.rate_hz,
        diverged=session.diverged,
        diverged_tick=session.tick_index if session.diverged else None,
        final_contact=session.contact_state,
    )


def tracking_rmse(trace: SessionTrace) -> float:
    """Root mean square leader/follower joint error over the whole trace."""
    if trace.n_ticks == 0:
        return float("nan")
    err = trace.q_leader - trace.q_follower
    return float(np.sqrt(np.mean(err**2)))


def _longest_true_run(mask: np.ndarray) -> tuple[int, int]:
    """Start (inclusive) and stop (exclusive) of the longest True run."""
    best = (0, 0)
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    if start is not None and len(mask) - start > best[1] - best[0]:
        best = (start, len(mask))
    return best


def _slope(x: np.ndarray, y: np.ndarray) -> float:
    coeffs = np.polyfit(x, y, 1)
    return float(coeffs[0])


@dataclass(frozen=True)
class StiffnessEstimate:
    perceived: float
    environment: float

    @property
    def ratio(self) -> float:
        return self.perceived / self.environment


def perceived_stiffness(trace: SessionTrace) -> StiffnessEstimate:
    """Least-squares stiffness the operator feels versus what the wall has.

    Both slopes are taken on the longest in-contact segment, on the joint
    carrying the largest external torque: feedback torque against leader
    position, and external torque against follower position.
    """
    start, stop = _longest_true_run(trace.in_contact)
    if stop - start < 10:
        raise ValueError("no usable contact segment in trace")
    seg = slice(start, stop)
    joint = int(np.argmax(np.max(np.abs(trace.tau_ext[seg]), axis=0)))
    perceived = abs(_slope(trace.q_leader[seg, joint], trace.tau_feedback[seg, joint]))
    environment = abs(_slope(trace.q_follower[seg, joint], trace.tau_ext[seg, joint]))
    if environment == 0.0:
        raise ValueError("external torque carries no stiffness signal")
    return StiffnessEstimate(perceived=perceived, environment=environment)


@dataclass(frozen=True)
class InstabilityReport:
    unstable: bool
    onset_s: float
    reason: str | None


def detect_instability(
    trace: SessionTrace,
    qdot_limit: float = 20.0,
    growth_ratio: float = 1.05,
    growth_windows: int = 5,
    window_ticks: int = 25,
    amp_floor: float = 1e-3,
) -> InstabilityReport:
    """Grade a trace as stable or unstable.

    Unstable if the run diverged to non-finite values, if any joint speed
    exceeds qdot_limit, or if the per-window velocity envelope grows by
    more than growth_ratio for at least growth_windows consecutive windows
    above a small amplitude floor.
    """
    if trace.diverged:
        onset = (trace.diverged_tick if trace.diverged_tick is not None else trace.n_ticks) * trace.dt
        return InstabilityReport(unstable=True, onset_s=float(onset), reason="divergence")
    if trace.n_ticks == 0:
        return InstabilityReport(unstable=True, onset_s=0.0, reason="empty")

    speed = np.maximum(
        np.max(np.abs(trace.qdot_leader), axis=1), np.max(np.abs(trace.qdot_follower), axis=1)
    )
    over = np.flatnonzero(speed > qdot_limit)
    if over.size:
        return InstabilityReport(unstable=True, onset_s=float(over[0] * trace.dt), reason="velocity")

    n_windows = trace.n_ticks // window_ticks
    if n_windows >= 2:
        env = np.array([speed[w * window_ticks : (w + 1) * window_ticks].max() for w in range(n_windows)])
        streak = 0
        for w in range(1, n_windows):
            growing = env[w] > max(env[w - 1], amp_floor) * growth_ratio
            streak = streak + 1 if growing else 0
            if streak >= growth_windows:
                onset_window = w - growth_windows + 1
                return InstabilityReport(
                    unstable=True, onset_s=float(onset_window * window_ticks * trace.dt), reason="growth"
                )
    return InstabilityReport(unstable=False, onset_s=float("nan"), reason=None)


def make_wall_probe(
    k_f: float = 0.5,
    scheme: ControlScheme | None = None,
    wall_stiffness: float = 1000.0,
    wall_damping: float = 5.0,
    latency_s: float = 0.0,
    jitter_s: float = 0.0,
    drop_prob: float = 0.0,
    leader_scale: float = 0.5,
    seed: int = 0,
) -> tuple[SessionConfig, OperatorModel]:
    """A single-joint arm pressing into a compliant wall.

    The 0.2 m lever keeps the joint-space wall stiffness (K L^2, about
    40 N m/rad at 1000 N/m) well under the 2000 N m/rad follower stiffness,
    so the coupling transmits the wall almost losslessly and a measured
    stiffness ratio reads the force gain directly. Also the standard rig
    for the gain/delay stability sweep.
    """
    from .contact import HalfSpace
    from .kinematics import DHRow, KinematicChain

    chain = KinematicChain(
        name="probe1",
        rows=(DHRow(a=0.2, alpha=0.0, d=0.0, theta_offset=0.0),),
        joint_limits=np.array([[-2.5, 2.5]]),
    )
    follower = ArmModel(chain=chain, inertia=np.array([0.5]), viscous_damping=np.array([2.0]))
    gains = ImpedanceGains(kp=np.array([2000.0]), kd=np.array([40.0]))
    if scheme is None:
        scheme = FP(k_f=k_f, follower_gains=gains)
    # Free space is y <= 0.02; the fingertip crosses the wall near q = 0.1.
    env = HalfSpace(normal=np.array([0.0, -1.0, 0.0]), offset=-0.02, stiffness=wall_stiffness, damping=wall_damping)
    channel = lambda off: ChannelConfig(
        rate_hz=50.0, latency_s=latency_s, jitter_s=jitter_s, drop_prob=drop_prob, seed=seed + off
    )
    cfg = SessionConfig(
        follower=follower,
        scheme=scheme,
        env=env,
        leader_scale=1.0 if isinstance(scheme, FourC) else leader_scale,
        seed=seed,
        up_channel=channel(1),
        down_channel=channel(2),
    )
    operator = OperatorModel(
        hand_kp=np.array([50.0]),
        hand_kd=np.array([5.0]),
        target_trajectory=lambda t: np.array([min(0.075 * t, 0.3)]),
        tau_max=20.0,
    )
    return cfg, operator


@dataclass(frozen=True)
class SweepPoint:
    k_f: float
    delay_s: float
    unstable: bool
    onset_s: float
    rmse: float
    stiffness_ratio: float


SWEEP_CSV_HEADER = "k_f,delay_s,unstable,onset_s,rmse,stiffness_ratio"


def sweep_kf(
    kf_values,
    delays_s,
    duration_s: float = 8.0,
    csv_path: str | os.PathLike | None = None,
    seed: int = 0,
) -> list[SweepPoint]:
    """Grade the wall-press rig over a grid of force gains and channel delays.

    Runs are deterministic for a given seed. Each grid point is scored with
    detect_instability plus tracking error and, where measurable, the
    perceived-stiffness ratio.
    """
    points = []
    for delay in delays_s:
        for k_f in kf_values:
            cfg, operator = make_wall_probe(k_f=k_f, latency_s=float(delay), seed=seed)
            trace = run_session(cfg, operator, duration_s)
            report = detect_instability(trace)
            try:
                ratio = perceived_stiffness(trace).ratio
            except ValueError:
                ratio = float("nan")
            points.append(
                SweepPoint(
                    k_f=float(k_f),
                    delay_s=float(delay),
                    unstable=report.unstable,
                    onset_s=report.onset_s,
                    rmse=tracking_rmse(trace),
                    stiffness_ratio=ratio,
                )
            )
    if csv_path is not None:
        write_sweep_csv(points, csv_path)
    return points


def write_sweep_csv(points: list[SweepPoint], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_HEADER.split(","))
        for p in points:
            writer.writerow(
                [
                    repr(p.k_f),
                    repr(p.delay_s),
                    int(p.unstable),
                    repr(p.onset_s),
                    repr(p.rmse),
                    repr(p.stiffness_ratio),
                ]
            )
