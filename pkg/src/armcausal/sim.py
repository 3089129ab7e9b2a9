"""Quasi-static arm/cube world and the motor-babbling session generators.

No dynamics: joints move by linear interpolation, the cube either rests on the
table, rides rigidly on the magnetic endpoint, or falls straight down when the
magnet is released.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import kinematics as kin
from .dataset import KIN_ACTION, KIN_STATE, PHYS_ACTION, PHYS_STATE, TransitionSet, concat
from .errors import ConfigError, DataError, UnreachableTargetError

log = logging.getLogger(__name__)

MAGNET_HOLD, MAGNET_ON, MAGNET_OFF = "hold", "on", "off"


@dataclass(frozen=True)
class BabbleConfig:
    """Motor babbling session parameters.

    ``max_joint_speed`` caps each joint's displacement per substep [rad], so a
    single step only covers part of the way to a distant target.  ``None``
    removes the cap and every step lands on its target.
    """

    mode: str = "kinematics"
    steps: int = 20_000
    episodes: int = 40
    iterations: int = 500
    substeps: int = 10
    sigma_scale: float = 0.5
    joint_mask: tuple | None = None
    seed: int = 0
    max_joint_speed: float | None = 0.005
    carry_range: tuple = (20, 120)
    empty_range: tuple = (20, 120)
    ik_retries: int = 5

    def __post_init__(self):
        if self.mode not in ("kinematics", "physics"):
            raise ConfigError(f"invalid mode {self.mode!r}")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1")
        if not 0 < self.sigma_scale <= 1:
            raise ConfigError("sigma_scale must lie in (0, 1]")
        if min(self.steps, self.episodes, self.iterations) < 0:
            raise ConfigError("counts must be non-negative")
        if self.max_joint_speed is not None and self.max_joint_speed <= 0:
            raise ConfigError("max_joint_speed must be positive")
        if self.joint_mask is not None:
            object.__setattr__(self, "joint_mask", tuple(bool(b) for b in self.joint_mask))

    def mask(self, n_joints):
        if self.joint_mask is not None:
            if len(self.joint_mask) != n_joints:
                raise ConfigError(f"joint_mask needs {n_joints} entries")
            return np.array(self.joint_mask)
        m = np.ones(n_joints, bool)
        if self.mode == "physics":
            m[-1] = False
        return m

    def echo(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["joint_mask"] = None if self.joint_mask is None else list(self.joint_mask)
        d["carry_range"], d["empty_range"] = list(self.carry_range), list(self.empty_range)
        return d


@dataclass
class ArmState:
    theta: np.ndarray
    transform: np.ndarray

    @classmethod
    def at(cls, chain, theta):
        theta = np.asarray(theta, dtype=float)
        return cls(theta, kin.fk_transform(chain, theta))

    @property
    def pose(self):
        return kin.pose_of(self.transform)

    @property
    def position(self):
        return self.transform[:3, 3].copy()


@dataclass
class WorldState:
    cube_pose: np.ndarray
    cube_color: np.ndarray
    consts: kin.WorldConstants = field(default_factory=kin.WorldConstants)
    magnet_on: bool = False
    attached: bool = False
    attach_offset: np.ndarray | None = None

    def copy(self):
        return replace(
            self,
            cube_pose=self.cube_pose.copy(),
            cube_color=self.cube_color.copy(),
            attach_offset=None if self.attach_offset is None else self.attach_offset.copy(),
        )

    @property
    def rest_z(self):
        return self.consts.table_z + self.consts.half_extent

    def observation(self):
        return np.concatenate([self.cube_pose, self.cube_color])


def sample_babble_target(limits, current, cfg, rng, mask=None):
    """Truncated-normal joint target centred on the range midpoint.

    Masked-out joints keep their current value.
    """
    current = np.asarray(current, dtype=float)
    mask = cfg.mask(len(current)) if mask is None else np.asarray(mask, bool)
    lo, hi = limits.lo, limits.hi
    mid, std = limits.midpoint, cfg.sigma_scale * limits.half_range
    target = current.copy()
    pending = np.flatnonzero(mask)
    while pending.size:
        draw = rng.normal(mid[pending], std[pending])
        target[pending] = draw
        pending = pending[(draw < lo[pending]) | (draw > hi[pending])]
    return target


def _realize(theta0, theta1, limits):
    """Achieved action ``a`` and next configuration, inside the limits, with
    ``out - theta0 == a`` and ``theta0 + a == out`` both holding bitwise."""
    lo, hi = limits.lo, limits.hi
    out = np.clip(theta1, lo, hi)
    for _ in range(8):
        a = out - theta0
        back = theta0 + a
        if np.array_equal(back, out):
            break
        out = np.where(back > hi, np.nextafter(out, -np.inf), np.where(back < lo, np.nextafter(out, np.inf), back))
    return out - theta0, out


def _try_attach(world, T_e):
    if world.magnet_on and not world.attached:
        if np.linalg.norm(T_e[:3, 3] - world.cube_pose[:3]) < world.consts.grasp_radius:
            world.attached = True
            world.attach_offset = np.linalg.inv(T_e) @ kin.transform_of(world.cube_pose)


def _drop(world):
    world.attached = False
    world.attach_offset = None
    p = world.cube_pose
    world.cube_pose = np.array([p[0], p[1], world.rest_z, 0.0, 0.0, p[5]])


def step_environment(chain, limits, arm, world, theta_target, magnet_cmd=MAGNET_HOLD, cfg=None):
    """Execute one motor command in ``cfg.substeps`` interpolation substeps.

    Returns ``(arm', world', action)`` where ``action`` is the achieved joint
    displacement, followed by the magnet change in ``{-1, 0, 1}`` when a world
    is simulated.  The magnet command takes effect at the
    first substep, before any motion.  While the cube is carried, motion stops
    at the last substep that keeps the cube above the table.  ``world`` may be
    ``None`` for the arm-only session.
    """
    cfg = cfg or BabbleConfig()
    target = np.asarray(theta_target, dtype=float)
    if not limits.contains(target):
        raise DataError(f"rejected action: target {target} outside joint limits")
    if magnet_cmd not in (MAGNET_HOLD, MAGNET_ON, MAGNET_OFF):
        raise ConfigError(f"unknown magnet command {magnet_cmd!r}")
    theta0 = arm.theta
    theta = theta0.copy()
    T_e = arm.transform
    w = None if world is None else world.copy()
    mgt0 = None if w is None else w.magnet_on
    speed = cfg.max_joint_speed
    for k in range(cfg.substeps):
        if k == 0 and w is not None and magnet_cmd != MAGNET_HOLD:
            if magnet_cmd == MAGNET_ON:
                w.magnet_on = True
                _try_attach(w, T_e)
            else:
                w.magnet_on = False
                if w.attached:
                    _drop(w)
        delta = (target - theta) / (cfg.substeps - k)
        if speed is not None:
            delta = np.clip(delta, -speed, speed)
        nxt = theta + delta
        if w is not None and w.magnet_on:
            T_next = kin.fk_transform(chain, nxt)
            if w.attached:
                cube_z = (T_next @ w.attach_offset)[2, 3]
                if cube_z < w.rest_z - 1e-9:
                    break
            theta, T_e = nxt, T_next
            _try_attach(w, T_e)
        else:
            theta = nxt
    a, theta = _realize(theta0, theta, limits)
    new_arm = ArmState.at(chain, theta)
    if w is None:
        return new_arm, None, a
    if w.attached:
        w.cube_pose = kin.pose_of(new_arm.transform @ w.attach_offset)
    return new_arm, w, np.append(a, float(w.magnet_on) - float(mgt0))


def _kin_state(arm):
    return np.concatenate([arm.theta, arm.position])


def _phys_state(arm, world):
    return np.concatenate([world.observation(), arm.theta, arm.pose, [float(world.magnet_on)]])


def _manifest(cfg, generator, chain_hash, consts):
    return {
        "generator": {"name": generator, "config": cfg.echo()},
        "seed": cfg.seed,
        "world_constants": {
            "table_z": consts.table_z,
            "grasp_radius": consts.grasp_radius,
            "half_extent": consts.half_extent,
            "chain_sha256": chain_hash,
        },
    }


def run_kinematics_session(cfg, chain=None, limits=None, chain_hash=None, consts=None):
    """Arm-only babbling: ``cfg.steps`` transitions over the ``kin-v1`` schema."""
    if cfg.mode != "kinematics":
        raise ConfigError("run_kinematics_session needs mode='kinematics'")
    chain, limits, consts, chain_hash = _world_defaults(chain, limits, consts, chain_hash)
    manifest = _manifest(cfg, "kinematics-babbling", chain_hash, consts)
    if cfg.steps == 0:
        return TransitionSet.empty(KIN_STATE, KIN_ACTION, manifest)
    rng = np.random.default_rng([cfg.seed, 0])
    mask = cfg.mask(chain.n_joints)
    arm = ArmState.at(chain, sample_babble_target(limits, limits.midpoint, cfg, rng, mask))
    S = np.empty((cfg.steps, KIN_STATE.dim))
    A = np.empty((cfg.steps, KIN_ACTION.dim))
    S_next = np.empty_like(S)
    for t in range(cfg.steps):
        target = sample_babble_target(limits, arm.theta, cfg, rng, mask)
        nxt, _, a = step_environment(chain, limits, arm, None, target, cfg=cfg)
        S[t] = _kin_state(arm)
        A[t] = a
        S_next[t] = _kin_state(nxt)
        arm = nxt
    return TransitionSet(KIN_STATE, KIN_ACTION, S, A, S_next, np.zeros(cfg.steps), np.arange(cfg.steps), manifest)


def _world_defaults(chain, limits, consts, chain_hash):
    if chain is None or limits is None:
        c, l, w, h = kin.load_config()
        chain = chain or c
        limits = limits or l
        consts = consts or w
        chain_hash = chain_hash or h
    return chain, limits, consts or kin.WorldConstants(), chain_hash


class _Episode:
    """Scripted reach / carry / release / empty-babble cycle for one episode."""

    def __init__(self, cfg, chain, limits, consts, episode):
        self.cfg, self.chain, self.limits = cfg, chain, limits
        self.rng = np.random.default_rng([cfg.seed, episode])
        self.mask = cfg.mask(chain.n_joints)
        self.episode = episode
        rng = self.rng
        r = rng.uniform(0.35, 0.75)
        phi = rng.uniform(-np.pi, np.pi)
        cube = np.array([r * np.cos(phi), r * np.sin(phi), consts.table_z + consts.half_extent, 0.0, 0.0, 0.0])
        self.world = WorldState(cube, rng.uniform(0.0, 1.0, 3), consts)
        start = sample_babble_target(limits, limits.midpoint, cfg, rng, self.mask)
        self.arm = ArmState.at(chain, start)
        self.rows = []

    @property
    def done(self):
        return len(self.rows) >= self.cfg.iterations

    def act(self, target, magnet_cmd=MAGNET_HOLD):
        s = _phys_state(self.arm, self.world)
        arm, world, a = step_environment(self.chain, self.limits, self.arm, self.world, target, magnet_cmd, self.cfg)
        self.arm, self.world = arm, world
        self.rows.append((s, a, _phys_state(arm, world)))

    def babble(self, n, magnet_cmd=MAGNET_HOLD):
        for i in range(n):
            if self.done:
                return
            target = sample_babble_target(self.limits, self.arm.theta, self.cfg, self.rng, self.mask)
            self.act(target, magnet_cmd if i == 0 else MAGNET_HOLD)

    def reach_goal(self):
        c = self.world.consts
        goal = self.world.cube_pose[:3] + np.array([0.0, 0.0, c.half_extent + 0.005])
        inits = [self.arm.theta]
        for _ in range(self.cfg.ik_retries):
            inits.append(sample_babble_target(self.limits, self.arm.theta, self.cfg, self.rng, self.mask))
        for theta_init in inits:
            try:
                return kin.ik_reach(self.chain, self.limits, goal, theta_init, joint_mask=self.mask)
            except UnreachableTargetError:
                continue
        return None

    def run(self):
        lo1, hi1 = self.cfg.carry_range
        lo2, hi2 = self.cfg.empty_range
        while not self.done:
            goal = self.reach_goal()
            if goal is None:
                log.info("episode %d: cube at %s unreachable, babbling empty-handed", self.episode, self.world.cube_pose[:3])
                self.babble(int(self.rng.integers(lo2, hi2 + 1)))
                continue
            for _ in range(64):
                if self.done or np.max(np.abs(self.arm.theta - goal)) < 1e-9:
                    break
                self.act(goal)
            if self.done:
                break
            self.babble(int(self.rng.integers(lo1, hi1 + 1)), MAGNET_ON)
            self.babble(int(self.rng.integers(lo2, hi2 + 1)), MAGNET_OFF)
        S, A, S_next = (np.array([r[i] for r in self.rows]) for i in range(3))
        n = len(self.rows)
        return TransitionSet(PHYS_STATE, PHYS_ACTION, S, A, S_next, np.full(n, self.episode), np.arange(n))


def run_physics_session(cfg, chain=None, limits=None, chain_hash=None, consts=None):
    """Magnet/cube sessions: ``cfg.episodes`` x ``cfg.iterations`` transitions (``phys-v1``)."""
    if cfg.mode != "physics":
        raise ConfigError("run_physics_session needs mode='physics'")
    chain, limits, consts, chain_hash = _world_defaults(chain, limits, consts, chain_hash)
    manifest = _manifest(cfg, "physics-babbling", chain_hash, consts)
    if cfg.episodes == 0 or cfg.iterations == 0:
        return TransitionSet.empty(PHYS_STATE, PHYS_ACTION, manifest)
    parts = [_Episode(cfg, chain, limits, consts, e).run() for e in range(cfg.episodes)]
    out = concat(parts)
    out.manifest = manifest
    return out


def run_session(cfg, **kw):
    if cfg.mode == "kinematics":
        return run_kinematics_session(cfg, **kw)
    return run_physics_session(cfg, **kw)
