"""Joint-space control laws for the leader and follower arms.

Three coupling schemes are provided. PP exchanges positions both ways. FP
tracks position on the follower and reflects the follower's external torque
to the leader scaled by a force gain, so the operator feels contact but no
feedback at all in free motion. The four-channel scheme exchanges positions
and forces symmetrically and is only meaningful for identical arms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kinematics import FloatArray


@dataclass(frozen=True)
class ImpedanceGains:
    """Per-joint stiffness and damping. Scalars broadcast across joints."""

    kp: FloatArray
    kd: FloatArray

    def __post_init__(self):
        kp = np.atleast_1d(np.asarray(self.kp, dtype=np.float64))
        kd = np.atleast_1d(np.asarray(self.kd, dtype=np.float64))
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)
        if np.any(kp <= 0.0):
            raise ValueError("kp must be positive")
        if np.any(kd < 0.0):
            raise ValueError("kd must be nonnegative")


def default_follower_gains(dof: int) -> ImpedanceGains:
    return ImpedanceGains(kp=np.full(dof, 100.0), kd=np.full(dof, 10.0))


@dataclass(frozen=True)
class PP:
    """Position-position coupling: each side tracks the other's position."""

    leader_gains: ImpedanceGains
    follower_gains: ImpedanceGains


@dataclass(frozen=True)
class FP:
    """Force-position coupling: follower tracks position, leader feels -k_f * tau_ext."""

    k_f: float
    follower_gains: ImpedanceGains

    def __post_init__(self):
        if not self.k_f > 0.0:
            raise ValueError("k_f must be positive")


@dataclass(frozen=True)
class FourC:
    """Symmetric position + force exchange. Assumes leader and follower are identical."""

    follower_gains: ImpedanceGains
    force_gain: float = 1.0

    def __post_init__(self):
        if not self.force_gain > 0.0:
            raise ValueError("force_gain must be positive")


ControlScheme = PP | FP | FourC


def impedance_torque(gains: ImpedanceGains, q_ref: FloatArray, q: FloatArray, qdot: FloatArray) -> FloatArray:
    """Spring toward q_ref with damping on absolute joint velocity."""
    return gains.kp * (np.asarray(q_ref) - np.asarray(q)) - gains.kd * np.asarray(qdot)


def fp_leader_torque(k_f: float, tau_ext: FloatArray) -> FloatArray:
    """Leader feedback torque: the follower's external torque scaled and sign-flipped.

    Zero external torque yields exactly zero feedback, so free motion is
    completely transparent to the operator.
    """
    return -k_f * np.asarray(tau_ext, dtype=np.float64)


def pp_leader_torque(
    leader_gains: ImpedanceGains, q_follower: FloatArray, q_leader: FloatArray, qdot_leader: FloatArray
) -> FloatArray:
    """Leader-side coupling for PP: spring toward the follower's position."""
    return impedance_torque(leader_gains, q_follower, q_leader, qdot_leader)


def four_channel_torques(
    scheme: FourC,
    q_leader: FloatArray,
    qdot_leader: FloatArray,
    q_follower: FloatArray,
    qdot_follower: FloatArray,
    tau_operator: FloatArray,
    tau_ext: FloatArray,
) -> tuple[FloatArray, FloatArray]:
    """Leader feedback torque and follower command torque for the 4C scheme.

    The follower receives the position spring plus the operator torque fed
    forward; the leader receives the mirrored spring minus the scaled
    external torque. With identical arms the pair behaves as one arm in free
    motion and reflects contact torque one to one at steady state.
    """
    tau_l = impedance_torque(scheme.follower_gains, q_follower, q_leader, qdot_leader)
    tau_l = tau_l - scheme.force_gain * np.asarray(tau_ext, dtype=np.float64)
    tau_f = impedance_torque(scheme.follower_gains, q_leader, q_follower, qdot_follower)
    tau_f = tau_f + np.asarray(tau_operator, dtype=np.float64)
    return tau_l, tau_f


@dataclass(frozen=True)
class OperatorModel:
    """Operator hand: an impedance pulling the leader along a target trajectory."""

    hand_kp: FloatArray
    hand_kd: FloatArray
    target_trajectory: Callable[[float], FloatArray]
    tau_max: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "hand_kp", np.atleast_1d(np.asarray(self.hand_kp, dtype=np.float64)))
        object.__setattr__(self, "hand_kd", np.atleast_1d(np.asarray(self.hand_kd, dtype=np.float64)))
        if self.tau_max <= 0.0:
            raise ValueError("tau_max must be positive")


def operator_torque(model: OperatorModel, t: float, q_leader: FloatArray, qdot_leader: FloatArray) -> FloatArray:
    """Hand torque on the leader, saturated at tau_max per joint."""
    target = np.asarray(model.target_trajectory(t), dtype=np.float64)
    tau = model.hand_kp * (target - np.asarray(q_leader)) - model.hand_kd * np.asarray(qdot_leader)
    return np.clip(tau, -model.tau_max, model.tau_max)


def _gains_to_dict(gains: ImpedanceGains) -> dict:
    return {"kp": gains.kp.tolist(), "kd": gains.kd.tolist()}


def _gains_from_dict(data: dict) -> ImpedanceGains:
    return ImpedanceGains(kp=np.asarray(data["kp"], dtype=np.float64), kd=np.asarray(data["kd"], dtype=np.float64))


def scheme_to_dict(scheme: ControlScheme) -> dict:
    if isinstance(scheme, PP):
        return {
            "scheme": "PP",
            "leader_gains": _gains_to_dict(scheme.leader_gains),
            "follower_gains": _gains_to_dict(scheme.follower_gains),
        }
    if isinstance(scheme, FP):
        return {
            "scheme": "FP",
            "k_f": scheme.k_f,
            "follower_gains": _gains_to_dict(scheme.follower_gains),
        }
    if isinstance(scheme, FourC):
        return {
            "scheme": "4C",
            "force_gain": scheme.force_gain,
            "follower_gains": _gains_to_dict(scheme.follower_gains),
        }
    raise TypeError(f"unsupported scheme {type(scheme).__name__}")


def scheme_from_dict(data: dict) -> ControlScheme:
    try:
        tag = data["scheme"]
        if tag == "PP":
            return PP(
                leader_gains=_gains_from_dict(data["leader_gains"]),
                follower_gains=_gains_from_dict(data["follower_gains"]),
            )
        if tag == "FP":
            return FP(k_f=float(data["k_f"]), follower_gains=_gains_from_dict(data["follower_gains"]))
        if tag == "4C":
            return FourC(
                follower_gains=_gains_from_dict(data["follower_gains"]),
                force_gain=float(data.get("force_gain", 1.0)),
            )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed scheme description: {exc}") from exc
    raise ValueError(f"unknown scheme tag {data.get('scheme')!r}")
