"""Arm dynamics and penalty-based environment contact.

Arms are torque-driven double integrators with diagonal inertia and viscous
damping, integrated with semi-implicit Euler substeps. Environments are
either a compliant half-space wall or a sliding drawer handle grasped with
a Bernoulli success model. Contact forces follow a penalty formulation and
the wrench reported outward is the one the end effector applies on the
environment, so its joint-space image is the external torque the follower
arm feels as a reaction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import (
    ZERO_WRENCH,
    DHRow,
    FloatArray,
    KinematicChain,
    Pose,
    Wrench,
    chain_from_dict,
    chain_to_dict,
    forward_kinematics,
    geometric_jacobian,
)


@dataclass(frozen=True)
class ArmModel:
    """Diagonal-inertia torque-controlled arm."""

    chain: KinematicChain
    inertia: FloatArray
    viscous_damping: FloatArray

    def __post_init__(self):
        inertia = np.asarray(self.inertia, dtype=np.float64)
        damping = np.asarray(self.viscous_damping, dtype=np.float64)
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "viscous_damping", damping)
        n = self.chain.dof
        if inertia.shape != (n,) or damping.shape != (n,):
            raise ValueError(f"inertia and damping must have shape ({n},)")
        if np.any(inertia <= 0.0):
            raise ValueError("inertia entries must be positive")
        if np.any(damping < 0.0):
            raise ValueError("viscous damping entries must be nonnegative")


@dataclass(frozen=True)
class ArmState:
    q: FloatArray
    qdot: FloatArray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=np.float64))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=np.float64))


@dataclass(frozen=True)
class HalfSpace:
    """Compliant wall: free space is where normal . p >= offset.

    Penetration depth is offset - normal . p when positive; the wall pushes
    the end effector back along +normal with max(0, K*depth - D*(normal . v)),
    never pulling (non-adhesive).
    """

    normal: FloatArray
    offset: float
    stiffness: float
    damping: float = 0.0

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=np.float64)
        norm = float(np.linalg.norm(normal))
        if norm == 0.0:
            raise ValueError("half-space normal must be nonzero")
        object.__setattr__(self, "normal", normal / norm)
        if self.stiffness <= 0.0:
            raise ValueError("stiffness must be positive")
        if self.damping < 0.0:
            raise ValueError("damping must be nonnegative")


@dataclass(frozen=True)
class DrawerHandle:
    """A drawer sliding along a fixed axis, grasped at a handle point.

    The handle sits at handle_home + extension * axis with extension in
    [0, travel_max]. A grasp attempt happens on each rising edge of
    "end effector inside capture_radius while the gripper is closed" and
    succeeds with probability grasp_success_prob. While grasped, an axial
    spring-damper (grip_stiffness, grip_damping) couples hand and handle;
    the drawer is quasi-static and only slides when the spring force beats
    static_friction, then tracks the hand with a residual force equal to
    dynamic_friction.
    """

    axis: FloatArray
    handle_home: FloatArray
    travel_max: float
    static_friction: float
    dynamic_friction: float
    capture_radius: float
    grasp_success_prob: float
    grip_stiffness: float = 500.0
    grip_damping: float = 10.0

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=np.float64)
        norm = float(np.linalg.norm(axis))
        if norm == 0.0:
            raise ValueError("drawer axis must be nonzero")
        object.__setattr__(self, "axis", axis / norm)
        object.__setattr__(self, "handle_home", np.asarray(self.handle_home, dtype=np.float64))
        if self.travel_max <= 0.0:
            raise ValueError("travel_max must be positive")
        if not 0.0 <= self.dynamic_friction <= self.static_friction:
            raise ValueError("friction must satisfy 0 <= dynamic_friction <= static_friction")
        if self.capture_radius <= 0.0:
            raise ValueError("capture_radius must be positive")
        if not 0.0 <= self.grasp_success_prob <= 1.0:
            raise ValueError("grasp_success_prob must be in [0, 1]")
        if self.grip_stiffness <= 0.0 or self.grip_damping < 0.0:
            raise ValueError("grip_stiffness must be > 0 and grip_damping >= 0")


Environment = HalfSpace | DrawerHandle | None


@dataclass(frozen=True)
class ContactState:
    """Contact bookkeeping carried across ticks. Treat as immutable."""

    in_contact: bool = False
    grasped: bool = False
    drawer_extension: float = 0.0
    wrench: Wrench = ZERO_WRENCH
    attempts: int = 0
    engaged_prev: bool = False
    sliding: bool = False
    # Axial hand coordinate at the instant of a successful grasp. The hand
    # holds the handle wherever it caught it, so the grip spring is relaxed
    # at that moment instead of snapping across the capture radius.
    grasp_offset: float = 0.0


def _grasp_draw(seed: int, attempt: int, prob: float) -> bool:
    # Independent stream per attempt so outcomes do not depend on how much
    # randomness anything else consumed.
    if prob >= 1.0:
        return True
    if prob <= 0.0:
        return False
    rng = np.random.default_rng([int(seed), int(attempt)])
    return bool(rng.random() < prob)


def contact_wrench(
    env: Environment,
    ee_pose: Pose,
    ee_linvel: FloatArray,
    state: ContactState,
    seed: int = 0,
    gripper_close: bool = True,
) -> tuple[Wrench, ContactState]:
    """Wrench the end effector applies on the environment, plus the next contact state."""
    p = ee_pose.position
    v = np.asarray(ee_linvel, dtype=np.float64)

    if env is None:
        return ZERO_WRENCH, replace(state, in_contact=False, wrench=ZERO_WRENCH, engaged_prev=False)

    if isinstance(env, HalfSpace):
        depth = env.offset - float(env.normal @ p)
        if depth > 0.0:
            push = max(0.0, env.stiffness * depth - env.damping * float(env.normal @ v))
            wrench = Wrench(force=-push * env.normal, moment=np.zeros(3))
            return wrench, replace(state, in_contact=True, wrench=wrench)
        return ZERO_WRENCH, replace(state, in_contact=False, wrench=ZERO_WRENCH)

    if isinstance(env, DrawerHandle):
        return _drawer_wrench(env, p, v, state, seed, gripper_close)

    raise TypeError(f"unsupported environment {type(env).__name__}")


def _drawer_wrench(
    env: DrawerHandle,
    p: FloatArray,
    v: FloatArray,
    state: ContactState,
    seed: int,
    gripper_close: bool,
) -> tuple[Wrench, ContactState]:
    extension = state.drawer_extension
    handle_pos = env.handle_home + extension * env.axis
    inside = float(np.linalg.norm(p - handle_pos)) <= env.capture_radius
    engaged = inside and gripper_close

    grasped = state.grasped and gripper_close
    attempts = state.attempts
    grasp_offset = state.grasp_offset
    if engaged and not state.engaged_prev and not grasped:
        attempts += 1
        grasped = _grasp_draw(seed, attempts, env.grasp_success_prob)
        if grasped:
            grasp_offset = float(env.axis @ (p - env.handle_home)) - extension

    sliding = state.sliding
    if grasped:
        xi = float(env.axis @ (p - env.handle_home)) - grasp_offset
        gap = xi - extension
        residual = env.dynamic_friction / env.grip_stiffness
        if sliding or abs(env.grip_stiffness * gap) > env.static_friction:
            if gap > residual:
                new_ext = xi - residual
            elif gap < -residual:
                new_ext = xi + residual
            else:
                new_ext = extension
            new_ext = float(np.clip(new_ext, 0.0, env.travel_max))
            sliding = new_ext != extension
            extension = new_ext
        gap = xi - extension
        axial = env.grip_stiffness * gap + env.grip_damping * float(env.axis @ v)
        wrench = Wrench(force=axial * env.axis, moment=np.zeros(3))
        in_contact = True
    else:
        sliding = False
        wrench = ZERO_WRENCH
        in_contact = False

    next_state = ContactState(
        in_contact=in_contact,
        grasped=grasped,
        drawer_extension=extension,
        wrench=wrench,
        attempts=attempts,
        engaged_prev=engaged,
        sliding=sliding,
        grasp_offset=grasp_offset,
    )
    return wrench, next_state


def step(model: ArmModel, state: ArmState, tau: FloatArray, dt: float, substeps: int = 4) -> ArmState:
    """Advance the arm one control period under constant joint torque.

    Semi-implicit Euler: velocity first, then position, repeated over
    substeps. Joint limits clamp position and zero the offending velocity.
    """
    tau = np.asarray(tau, dtype=np.float64)
    if tau.shape != (model.chain.dof,):
        raise ValueError(f"torque must have shape ({model.chain.dof},)")
    bad = np.flatnonzero(~np.isfinite(tau))
    if bad.size:
        raise ValueError(f"non-finite torque at joint {int(bad[0])}")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")

    h = dt / substeps
    q = state.q.copy()
    qdot = state.qdot.copy()
    lo = model.chain.joint_limits[:, 0]
    hi = model.chain.joint_limits[:, 1]
    for _ in range(substeps):
        qddot = (tau - model.viscous_damping * qdot) / model.inertia
        qdot = qdot + h * qddot
        q = q + h * qdot
        below = q < lo
        above = q > hi
        if below.any() or above.any():
            q = np.clip(q, lo, hi)
            qdot = np.where(below | above, 0.0, qdot)
    return ArmState(q=q, qdot=qdot, t=state.t + dt)


def ee_kinematics(chain: KinematicChain, q: FloatArray, qdot: FloatArray) -> tuple[Pose, FloatArray]:
    """End-effector pose and linear velocity for contact evaluation."""
    pose = forward_kinematics(chain, q)
    jac = geometric_jacobian(chain, q)
    return pose, jac.linear @ np.asarray(qdot, dtype=np.float64)


@dataclass(frozen=True)
class Scenario:
    """A simulation setup: one arm, one environment, timing, and task metadata."""

    arm: ArmModel
    env: Environment
    dt: float = 0.02
    substeps: int = 4
    seed: int = 0
    success_threshold: float = 0.15
    q_home: FloatArray | None = None
    q_grasp: FloatArray | None = None
    q_open: FloatArray | None = None


def _planar2_chain() -> KinematicChain:
    rows = (
        DHRow(a=0.5, alpha=0.0, d=0.0, theta_offset=0.0),
        DHRow(a=0.5, alpha=0.0, d=0.0, theta_offset=0.0),
    )
    return KinematicChain(
        name="planar2",
        rows=rows,
        joint_limits=np.array([[-2.5, 2.5], [-2.5, 2.5]]),
    )


def make_drawer_scenario(
    seed: int = 0,
    randomization: float = 0.03,
    grasp_success_prob: float = 1.0,
    success_threshold: float = 0.15,
) -> Scenario:
    """A planar two-link arm in front of a drawer whose handle position is randomized.

    randomization is the half-range, in meters of handle arc displacement,
    of the uniform scene jitter. The pull direction and handle location are
    derived from the jittered grasp configuration, so no inverse kinematics
    is involved anywhere.
    """
    if randomization < 0.0:
        raise ValueError("randomization must be nonnegative")
    chain = _planar2_chain()
    arm = ArmModel(chain=chain, inertia=np.array([0.5, 0.3]), viscous_damping=np.array([2.0, 1.5]))

    q_nominal = np.array([0.35, 0.45])
    jac_nom = geometric_jacobian(chain, q_nominal)
    lever = float(np.linalg.norm(jac_nom.linear[:, 0]))
    rng = np.random.default_rng([int(seed), 17])
    dq1 = float(rng.uniform(-1.0, 1.0)) * randomization / lever
    q_grasp = q_nominal + np.array([dq1, 0.0])

    handle_home = forward_kinematics(chain, q_grasp).position
    jac = geometric_jacobian(chain, q_grasp)
    pull_dir = -jac.linear[:, 0]
    axis = pull_dir / np.linalg.norm(pull_dir)

    env = DrawerHandle(
        axis=axis,
        handle_home=handle_home,
        travel_max=0.6,
        static_friction=6.0,
        dynamic_friction=4.0,
        capture_radius=0.05,
        grasp_success_prob=grasp_success_prob,
    )
    # The open waypoint pulls 0.4 rad past the handle. A grasp caught on a
    # re-approach anchors up to one capture radius late, so the stroke keeps
    # enough margin for retried grasps to clear the success threshold.
    return Scenario(
        arm=arm,
        env=env,
        dt=0.02,
        substeps=4,
        seed=int(seed),
        success_threshold=success_threshold,
        q_home=q_grasp + np.array([0.25, 0.0]),
        q_grasp=q_grasp,
        q_open=q_grasp + np.array([-0.4, 0.0]),
    )


def env_to_dict(env: Environment) -> dict | None:
    if env is None:
        return None
    if isinstance(env, HalfSpace):
        return {
            "type": "half_space",
            "normal": env.normal.tolist(),
            "offset": env.offset,
            "stiffness": env.stiffness,
            "damping": env.damping,
        }
    if isinstance(env, DrawerHandle):
        return {
            "type": "drawer",
            "axis": env.axis.tolist(),
            "handle_home": env.handle_home.tolist(),
            "travel_max": env.travel_max,
            "static_friction": env.static_friction,
            "dynamic_friction": env.dynamic_friction,
            "capture_radius": env.capture_radius,
            "grasp_success_prob": env.grasp_success_prob,
            "grip_stiffness": env.grip_stiffness,
            "grip_damping": env.grip_damping,
        }
    raise TypeError(f"unsupported environment {type(env).__name__}")


def env_from_dict(data: dict | None) -> Environment:
    if data is None:
        return None
    try:
        kind = data["type"]
        if kind == "half_space":
            return HalfSpace(
                normal=np.asarray(data["normal"], dtype=np.float64),
                offset=float(data["offset"]),
                stiffness=float(data["stiffness"]),
                damping=float(data.get("damping", 0.0)),
            )
        if kind == "drawer":
            return DrawerHandle(
                axis=np.asarray(data["axis"], dtype=np.float64),
                handle_home=np.asarray(data["handle_home"], dtype=np.float64),
                travel_max=float(data["travel_max"]),
                static_friction=float(data["static_friction"]),
                dynamic_friction=float(data["dynamic_friction"]),
                capture_radius=float(data["capture_radius"]),
                grasp_success_prob=float(data["grasp_success_prob"]),
                grip_stiffness=float(data.get("grip_stiffness", 500.0)),
                grip_damping=float(data.get("grip_damping", 10.0)),
            )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed environment description: {exc}") from exc
    raise ValueError(f"unknown environment type {data.get('type')!r}")


def scenario_to_dict(scn: Scenario) -> dict:
    data = {
        "arm": {
            "chain": chain_to_dict(scn.arm.chain),
            "inertia": scn.arm.inertia.tolist(),
            "viscous_damping": scn.arm.viscous_damping.tolist(),
        },
        "env": env_to_dict(scn.env),
        "dt": scn.dt,
        "substeps": scn.substeps,
        "seed": scn.seed,
        "success_threshold": scn.success_threshold,
    }
    if scn.q_grasp is not None:
        data["guide"] = {
            "q_home": np.asarray(scn.q_home).tolist(),
            "q_grasp": np.asarray(scn.q_grasp).tolist(),
            "q_open": np.asarray(scn.q_open).tolist(),
        }
    return data


def scenario_from_dict(data: dict) -> Scenario:
    try:
        arm = ArmModel(
            chain=chain_from_dict(data["arm"]["chain"]),
            inertia=np.asarray(data["arm"]["inertia"], dtype=np.float64),
            viscous_damping=np.asarray(data["arm"]["viscous_damping"], dtype=np.float64),
        )
        guide = data.get("guide") or {}
        return Scenario(
            arm=arm,
            env=env_from_dict(data.get("env")),
            dt=float(data["dt"]),
            substeps=int(data["substeps"]),
            seed=int(data["seed"]),
            success_threshold=float(data["success_threshold"]),
            q_home=np.asarray(guide["q_home"]) if "q_home" in guide else None,
            q_grasp=np.asarray(guide["q_grasp"]) if "q_grasp" in guide else None,
            q_open=np.asarray(guide["q_open"]) if "q_open" in guide else None,
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed scenario description: {exc}") from exc


def save_scenario(scn: Scenario, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scn), fh, indent=2)
        fh.write("\n")


def load_scenario(path: str | os.PathLike) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))
