"""Serial-chain kinematics: DH forward kinematics, geometric Jacobian and a
damped-least-squares position solver."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, UnreachableTargetError

# KUKA LBR iiwa joint ranges [rad].
IIWA_Q_MIN = (-2.967, -2.094, -2.967, -2.094, -2.967, -2.094, -3.054)
IIWA_Q_MAX = (2.967, 2.094, 2.967, 2.094, 2.967, 2.094, 3.054)


@dataclass(frozen=True)
class KinematicChain:
    """Standard DH rows ``(a, alpha, d, theta_offset)``, one per revolute joint."""

    a: tuple
    alpha: tuple
    d: tuple
    theta_offset: tuple = ()

    def __post_init__(self):
        offsets = self.theta_offset or (0.0,) * len(self.a)
        cols = [tuple(float(v) for v in c) for c in (self.a, self.alpha, self.d, offsets)]
        for name, c in zip(("a", "alpha", "d", "theta_offset"), cols):
            object.__setattr__(self, name, c)
        n = len(self.a)
        if n < 1 or any(len(c) != n for c in cols):
            raise ConfigError("DH table columns must be non-empty and of equal length")
        if not np.all(np.isfinite(cols)):
            raise ConfigError("DH entries must be finite")

    @property
    def n_joints(self):
        return len(self.a)

    @property
    def reach(self):
        return float(np.sum(np.abs(self.a)) + np.sum(np.abs(self.d)))

    def to_dict(self):
        return {"a": list(self.a), "alpha": list(self.alpha), "d": list(self.d), "theta_offset": list(self.theta_offset)}


@dataclass(frozen=True)
class JointLimits:
    q_min: tuple
    q_max: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.q_min)
        hi = tuple(float(v) for v in self.q_max)
        if len(lo) != len(hi) or not all(l < h for l, h in zip(lo, hi)):
            raise ConfigError("joint limits need q_min < q_max elementwise")
        object.__setattr__(self, "q_min", lo)
        object.__setattr__(self, "q_max", hi)

    @property
    def lo(self):
        return np.array(self.q_min)

    @property
    def hi(self):
        return np.array(self.q_max)

    @property
    def midpoint(self):
        return (self.lo + self.hi) / 2

    @property
    def half_range(self):
        return (self.hi - self.lo) / 2

    def contains(self, theta):
        theta = np.asarray(theta)
        return bool(np.all(theta >= self.lo) and np.all(theta <= self.hi))

    def clip(self, theta):
        return np.clip(theta, self.lo, self.hi)


IIWA_LIMITS = JointLimits(IIWA_Q_MIN, IIWA_Q_MAX)


def iiwa_chain():
    h = np.pi / 2
    return KinematicChain(
        a=(0.0,) * 7,
        alpha=(-h, h, h, -h, -h, h, 0.0),
        d=(0.34, 0.0, 0.4, 0.0, 0.4, 0.0, 0.126),
        theta_offset=(0.0,) * 7,
    )


@dataclass(frozen=True)
class WorldConstants:
    table_z: float = 0.0
    grasp_radius: float = 0.05
    half_extent: float = 0.025


def load_config(path=None):
    """Read a chain/world JSON document.  ``None`` loads the packaged iiwa file.

    Returns ``(chain, limits, world_constants, sha256_of_file)``.
    """
    if path is None:
        text = resources.files("armcausal").joinpath("data/iiwa.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
        rows = doc["dh"]
        chain = KinematicChain(
            a=[r["a"] for r in rows],
            alpha=[r["alpha"] for r in rows],
            d=[r["d"] for r in rows],
            theta_offset=[r.get("theta_offset", 0.0) for r in rows],
        )
        limits = JointLimits(doc["limits"]["q_min"], doc["limits"]["q_max"])
        world = WorldConstants(**doc.get("world", {}))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad chain config: {exc}") from exc
    if len(limits.q_min) != chain.n_joints:
        raise ConfigError("limit vector length differs from the joint count")
    return chain, limits, world, hashlib.sha256(text.encode()).hexdigest()


def _dh(a, alpha, d, theta):
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def frames(chain, theta):
    """Cumulative transforms ``T_0 .. T_n`` (``T_0`` is the base, ``T_n`` the flange)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (chain.n_joints,):
        raise DataError(f"expected {chain.n_joints} joint values, got shape {theta.shape}")
    T = np.eye(4)
    out = [T]
    for i in range(chain.n_joints):
        T = T @ _dh(chain.a[i], chain.alpha[i], chain.d[i], theta[i] + chain.theta_offset[i])
        out.append(T)
    return out


def fk_transform(chain, theta):
    return frames(chain, theta)[-1]


def euler_xyz(R):
    """Intrinsic X-Y-Z Euler angles of a rotation matrix, ``R = Rx(rx) Ry(ry) Rz(rz)``.

    At the gimbal singularity (``ry = +-pi/2``) ``rx`` is set to zero.
    """
    s = np.clip(R[0, 2], -1.0, 1.0)
    if abs(s) > 1.0 - 1e-12:
        ry = np.copysign(np.pi / 2, s)
        return np.array([0.0, ry, np.arctan2(R[1, 0], R[1, 1])])
    return np.array([np.arctan2(-R[1, 2], R[2, 2]), np.arcsin(s), np.arctan2(-R[0, 1], R[0, 0])])


def rot_xyz(rx, ry, rz):
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rx @ Ry @ Rz


def pose_of(T):
    return np.concatenate([T[:3, 3], euler_xyz(T[:3, :3])])


def transform_of(pose):
    T = np.eye(4)
    T[:3, :3] = rot_xyz(*pose[3:6])
    T[:3, 3] = pose[:3]
    return T


def fk_pose(chain, theta):
    """Effector pose ``(x, y, z, rx, ry, rz)``."""
    return pose_of(fk_transform(chain, theta))


def jacobian(chain, theta):
    """Geometric 6 x n Jacobian (linear rows first)."""
    Ts = frames(chain, theta)
    p_e = Ts[-1][:3, 3]
    J = np.empty((6, chain.n_joints))
    for i in range(chain.n_joints):
        z = Ts[i][:3, 2]
        J[:3, i] = np.cross(z, p_e - Ts[i][:3, 3])
        J[3:, i] = z
    return J


def ik_reach(
    chain,
    limits,
    target_pos,
    theta_init,
    joint_mask=None,
    damping=0.05,
    max_step=0.2,
    tol=5e-3,
    max_iter=500,
):
    """Damped least squares position IK.

    Iterates ``dq = J^T (J J^T + mu^2 I)^-1 e`` on the 3 x n position Jacobian,
    scales each step so no joint moves more than ``max_step`` and clips to the
    limits.  Joints with a false ``joint_mask`` entry are held fixed.
    """
    target = np.asarray(target_pos, dtype=float)
    theta = np.asarray(theta_init, dtype=float).copy()
    if np.linalg.norm(target) > chain.reach:
        raise UnreachableTargetError(f"target {target} is outside the workspace (reach {chain.reach:.3f} m)")
    cols = np.ones(chain.n_joints, bool) if joint_mask is None else np.asarray(joint_mask, bool)
    mu2 = damping**2
    for _ in range(max_iter + 1):
        e = target - fk_transform(chain, theta)[:3, 3]
        if np.linalg.norm(e) < tol:
            return theta
        J = jacobian(chain, theta)[:3] * cols
        dq = J.T @ np.linalg.solve(J @ J.T + mu2 * np.eye(3), e)
        peak = np.max(np.abs(dq))
        if peak > max_step:
            dq *= max_step / peak
        theta = limits.clip(theta + dq)
    raise UnreachableTargetError(f"no convergence to {target} within {max_iter} iterations")
