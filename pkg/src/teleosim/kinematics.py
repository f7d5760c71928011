"""Serial-chain kinematics from standard Denavit-Hartenberg tables.

Frames follow the classic (distal) DH convention: the transform from frame
i-1 to frame i is Rz(theta) Tz(d) Tx(a) Rx(alpha). A revolute joint adds its
coordinate to theta, a prismatic joint adds its coordinate to d. Orientation
is carried as a unit quaternion in (w, x, y, z) order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import numpy.typing as npt

REVOLUTE = "revolute"
PRISMATIC = "prismatic"

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class DHRow:
    """One line of a DH table. Lengths in meters, angles in radians."""

    a: float
    alpha: float
    d: float
    theta_offset: float
    joint_kind: str = REVOLUTE

    def __post_init__(self):
        if self.joint_kind not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint kind {self.joint_kind!r}")


@dataclass(frozen=True)
class KinematicChain:
    """An open serial chain: DH rows plus joint limits and a base pose.

    joint_limits has shape (n, 2) with limits[i] = (lower, upper).
    base_pose is a homogeneous 4x4 transform from world to the first DH frame.
    """

    name: str
    rows: tuple[DHRow, ...]
    joint_limits: FloatArray
    base_pose: FloatArray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        limits = np.asarray(self.joint_limits, dtype=np.float64)
        object.__setattr__(self, "joint_limits", limits)
        object.__setattr__(self, "base_pose", np.asarray(self.base_pose, dtype=np.float64))
        if limits.shape != (len(self.rows), 2):
            raise ValueError(
                f"joint_limits shape {limits.shape} does not match {len(self.rows)} rows"
            )
        if np.any(limits[:, 0] > limits[:, 1]):
            raise ValueError("joint limit lower bound exceeds upper bound")

    @property
    def dof(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class Pose:
    """Position plus unit quaternion (w, x, y, z)."""

    position: FloatArray
    orientation: FloatArray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        quat = np.asarray(self.orientation, dtype=np.float64)
        object.__setattr__(self, "orientation", quat)
        norm = float(np.linalg.norm(quat))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {norm} is not 1 within 1e-9")


@dataclass(frozen=True)
class JacobianMatrix:
    """Geometric Jacobian split into linear (3 x n) and angular (3 x n) blocks."""

    linear: FloatArray
    angular: FloatArray

    def stacked(self) -> FloatArray:
        return np.vstack([self.linear, self.angular])


@dataclass(frozen=True)
class Wrench:
    """A spatial force: 3-vector force and 3-vector moment, world frame."""

    force: FloatArray
    moment: FloatArray

    def __post_init__(self):
        object.__setattr__(self, "force", np.asarray(self.force, dtype=np.float64))
        object.__setattr__(self, "moment", np.asarray(self.moment, dtype=np.float64))

    def stacked(self) -> FloatArray:
        return np.concatenate([self.force, self.moment])


ZERO_WRENCH = Wrench(np.zeros(3), np.zeros(3))


def dh_transform(row: DHRow, q: float) -> FloatArray:
    """Homogeneous transform of one DH row at joint coordinate q."""
    theta = row.theta_offset + (q if row.joint_kind == REVOLUTE else 0.0)
    d = row.d + (q if row.joint_kind == PRISMATIC else 0.0)
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(row.alpha), np.sin(row.alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, row.a * ct],
            [st, ct * ca, -ct * sa, row.a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def _check_q(chain: KinematicChain, q: FloatArray) -> FloatArray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (chain.dof,):
        raise ValueError(f"expected {chain.dof} joint values, got shape {q.shape}")
    return q


def frame_transforms(chain: KinematicChain, q: FloatArray) -> list[FloatArray]:
    """World transforms of every chain frame: [base, frame1, ..., frameN]."""
    q = _check_q(chain, q)
    frames = [chain.base_pose.copy()]
    for row, qi in zip(chain.rows, q):
        frames.append(frames[-1] @ dh_transform(row, float(qi)))
    return frames


def quat_from_matrix(rot: FloatArray) -> FloatArray:
    """Unit quaternion (w, x, y, z) from a 3x3 rotation matrix."""
    # Shepperd's method: pick the largest diagonal combination for stability.
    m = rot
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    quat = np.array([w, x, y, z])
    return quat / np.linalg.norm(quat)


def forward_kinematics(chain: KinematicChain, q: FloatArray) -> Pose:
    """End-effector pose in the world frame."""
    tf = frame_transforms(chain, q)[-1]
    return Pose(position=tf[:3, 3].copy(), orientation=quat_from_matrix(tf[:3, :3]))


def geometric_jacobian(chain: KinematicChain, q: FloatArray) -> JacobianMatrix:
    """World-frame geometric Jacobian at configuration q.

    Column i maps joint velocity i to end-effector twist: for a revolute
    joint the linear part is z_{i-1} x (p_e - p_{i-1}) and the angular part
    is z_{i-1}; for a prismatic joint the linear part is z_{i-1} and the
    angular part is zero.
    """
    frames = frame_transforms(chain, q)
    p_e = frames[-1][:3, 3]
    n = chain.dof
    linear = np.zeros((3, n))
    angular = np.zeros((3, n))
    for i, row in enumerate(chain.rows):
        z = frames[i][:3, 2]
        if row.joint_kind == REVOLUTE:
            linear[:, i] = np.cross(z, p_e - frames[i][:3, 3])
            angular[:, i] = z
        else:
            linear[:, i] = z
    return JacobianMatrix(linear=linear, angular=angular)


def scale_chain(chain: KinematicChain, scale: float) -> KinematicChain:
    """Uniformly scale all link lengths (a and d offsets) by a positive factor.

    Joint limits and angular geometry are untouched, so a scaled chain moves
    through the same joint space while its workspace shrinks or grows. For
    revolute chains this scales the linear Jacobian block by the same factor
    and leaves the angular block unchanged.
    """
    if not np.isfinite(scale) or scale <= 0.0:
        raise ValueError(f"scale must be a positive finite number, got {scale}")
    rows = tuple(
        DHRow(
            a=row.a * scale,
            alpha=row.alpha,
            d=row.d * scale,
            theta_offset=row.theta_offset,
            joint_kind=row.joint_kind,
        )
        for row in chain.rows
    )
    base = chain.base_pose.copy()
    base[:3, 3] *= scale
    return KinematicChain(
        name=f"{chain.name}_x{scale:g}",
        rows=rows,
        joint_limits=chain.joint_limits.copy(),
        base_pose=base,
    )


def external_joint_torque(jacobian: JacobianMatrix, wrench: Wrench) -> FloatArray:
    """Joint torques equivalent to a wrench applied at the end effector.

    tau = J_v^T f + J_w^T m: the virtual-work image of the wrench the end
    effector exerts on its surroundings.
    """
    return jacobian.linear.T @ wrench.force + jacobian.angular.T @ wrench.moment


def chain_to_dict(chain: KinematicChain) -> dict:
    return {
        "name": chain.name,
        "rows": [
            {
                "a": row.a,
                "alpha": row.alpha,
                "d": row.d,
                "theta_offset": row.theta_offset,
                "kind": row.joint_kind,
            }
            for row in chain.rows
        ],
        "limits": [[float(lo), float(hi)] for lo, hi in chain.joint_limits],
    }


def chain_from_dict(data: dict) -> KinematicChain:
    try:
        rows = tuple(
            DHRow(
                a=float(r["a"]),
                alpha=float(r["alpha"]),
                d=float(r["d"]),
                theta_offset=float(r["theta_offset"]),
                joint_kind=r.get("kind", REVOLUTE),
            )
            for r in data["rows"]
        )
        limits = np.asarray(data["limits"], dtype=np.float64)
        name = data.get("name", "chain")
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed chain description: {exc}") from exc
    return KinematicChain(name=name, rows=rows, joint_limits=limits)


def save_chain(chain: KinematicChain, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(chain_to_dict(chain), fh, indent=2)
        fh.write("\n")


def load_chain(path: str | os.PathLike) -> KinematicChain:
    with open(path) as fh:
        return chain_from_dict(json.load(fh))


def load_builtin_chain(name: str) -> KinematicChain:
    """Load one of the chain configs shipped with the package (e.g. 'arm7', 'planar3')."""
    ref = resources.files("teleosim.configs").joinpath(f"{name}.json")
    with ref.open() as fh:
        return chain_from_dict(json.load(fh))
