"""Serial-chain kinematics for the simulated fleet.

Each arm is a chain of revolute joints described by a fixed translation
followed by a rotation about a fixed axis. Forward kinematics composes
rotation/translation pairs; inverse kinematics is damped least squares
on end-effector position with joint-limit clamping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .protocol import ARCHETYPES, Archetype, CameraRole, CameraSpec, RobotSpec


@dataclass(frozen=True)
class Joint:
    offset: tuple[float, float, float]
    axis: tuple[float, float, float]
    limits: tuple[float, float] = (-3.1, 3.1)


@dataclass(frozen=True)
class Chain:
    base: tuple[float, float, float]
    joints: tuple[Joint, ...]
    tool: tuple[float, float, float]

    @property
    def dof(self) -> int:
        return len(self.joints)

    def limits(self) -> tuple[tuple[float, float], ...]:
        return tuple(j.limits for j in self.joints)


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def _fk_unchecked(chain: Chain, q: np.ndarray) -> np.ndarray:
    p = np.array(chain.base, dtype=float)
    rot = np.eye(3)
    for joint, angle in zip(chain.joints, q):
        p = p + rot @ np.asarray(joint.offset, dtype=float)
        rot = rot @ _axis_rotation(np.asarray(joint.axis, dtype=float), angle)
    return p + rot @ np.asarray(chain.tool, dtype=float)


def fk(chain: Chain, q) -> np.ndarray:
    """End-effector position for joint angles q.

    Rejects angles outside the joint limits.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.dof,):
        raise ValueError(f"expected {chain.dof} joint angles, got shape {q.shape}")
    for i, joint in enumerate(chain.joints):
        if not joint.limits[0] <= q[i] <= joint.limits[1]:
            raise ValueError(
                f"joint {i} angle {q[i]:.4f} outside limits {joint.limits}")
    return _fk_unchecked(chain, q)


def fk_points(chain: Chain, q) -> np.ndarray:
    """Positions of the base, every joint origin, and the tool tip.

    Used by the renderer to draw the arm as a segment chain.
    """
    q = np.asarray(q, dtype=float)
    pts = [np.array(chain.base, dtype=float)]
    p = pts[0].copy()
    rot = np.eye(3)
    for joint, angle in zip(chain.joints, q):
        p = p + rot @ np.asarray(joint.offset, dtype=float)
        pts.append(p.copy())
        rot = rot @ _axis_rotation(np.asarray(joint.axis, dtype=float), angle)
    pts.append(p + rot @ np.asarray(chain.tool, dtype=float))
    return np.stack(pts)


def jacobian(chain: Chain, q, eps: float = 1e-6) -> np.ndarray:
    """Central-difference position jacobian, 3 x dof."""
    q = np.asarray(q, dtype=float)
    jac = np.zeros((3, chain.dof))
    for i in range(chain.dof):
        dq = np.zeros(chain.dof)
        dq[i] = eps
        # unchecked core: the probe may step just past a clamped limit
        jac[:, i] = (_fk_unchecked(chain, q + dq) - _fk_unchecked(chain, q - dq)) / (2.0 * eps)
    return jac


def clamp_to_limits(chain: Chain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).copy()
    for i, joint in enumerate(chain.joints):
        q[i] = min(max(q[i], joint.limits[0]), joint.limits[1])
    return q


def _dls(chain: Chain, target: np.ndarray, q0: np.ndarray, iters: int, tol: float,
         damping: float) -> tuple[np.ndarray, float]:
    q = clamp_to_limits(chain, q0)
    best_q, best_err = q.copy(), float(np.linalg.norm(fk(chain, q) - target))
    for _ in range(iters):
        err = fk(chain, q) - target
        norm = float(np.linalg.norm(err))
        if norm < best_err:
            best_q, best_err = q.copy(), norm
        if norm < tol:
            return q, norm
        jac = jacobian(chain, q)
        step = jac.T @ np.linalg.solve(jac @ jac.T + (damping ** 2) * np.eye(3), err)
        q = clamp_to_limits(chain, q - step)
    return best_q, best_err


def solve_ik(chain: Chain, target, q0, *, iters: int = 120, tol: float = 5e-5,
             damping: float = 0.05) -> np.ndarray:
    """Joint angles whose tool tip reaches a cartesian target.

    Damped least squares with joint-limit clamping after every step.
    Stuck solves retry from seeds whose base yaw faces the target.
    Raises ValueError if no attempt gets the residual under tol.
    """
    target = np.asarray(target, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    q, err = _dls(chain, target, q0, iters, tol, damping)
    if err < tol:
        return q
    # Fallback seeds: yaw joint 0 at the target, elbow bends varied.
    yaw = float(np.arctan2(target[1] - chain.base[1], target[0] - chain.base[0]))
    best_q, best_err = q, err
    for bend in (0.8, 1.4, 0.4):
        seed = q0.copy()
        seed[0] = yaw
        seed[1] = bend
        q, err = _dls(chain, target, seed, iters, tol, damping)
        if err < tol:
            return q
        if err < best_err:
            best_q, best_err = q, err
    raise ValueError(f"ik did not converge: residual {best_err:.2e} m to target {target.tolist()}")


_Z = (0.0, 0.0, 1.0)
_Y = (0.0, 1.0, 0.0)


def _single_arm_chain(base, scale: float = 1.0, seven_dof: bool = False) -> Chain:
    s = scale
    joints = [
        Joint(offset=(0.0, 0.0, 0.10 * s), axis=_Z),
        Joint(offset=(0.0, 0.0, 0.08 * s), axis=_Y),
    ]
    if seven_dof:
        joints.append(Joint(offset=(0.0, 0.0, 0.16 * s), axis=_Z))
        joints.append(Joint(offset=(0.0, 0.0, 0.16 * s), axis=_Y))
    else:
        joints.append(Joint(offset=(0.0, 0.0, 0.30 * s), axis=_Y))
    joints += [
        Joint(offset=(0.0, 0.0, 0.25 * s), axis=_Y),
        Joint(offset=(0.0, 0.0, 0.06 * s), axis=_Z),
        Joint(offset=(0.0, 0.0, 0.05 * s), axis=_Y),
    ]
    return Chain(base=tuple(base), joints=tuple(joints), tool=(0.0, 0.0, 0.10 * s))


# Table frame: surface at z = 0, x to the right, y away from the robots.
CHAINS: dict[Archetype, tuple[Chain, ...]] = {
    Archetype.UR5: (_single_arm_chain((0.32, -0.14, 0.0)),),
    Archetype.FRANKA: (_single_arm_chain((0.32, -0.14, 0.0), seven_dof=True),),
    Archetype.ARX5: (_single_arm_chain((0.32, -0.12, 0.0), scale=0.8),),
    Archetype.ALOHA: (
        _single_arm_chain((0.14, -0.12, 0.0), scale=0.8),
        _single_arm_chain((0.50, -0.12, 0.0), scale=0.8),
    ),
}

# Joint-space home pose per arm: yawed to face the table, elbow folded,
# tool held high and clear of the objects.
_HOME_SINGLE = {6: (1.5708, 0.55, 1.5, 0.7, 0.0, 0.3), 7: (1.5708, 0.55, 0.0, 1.5, 0.7, 0.0, 0.3)}


def home_pose(archetype: Archetype) -> tuple[float, ...]:
    pose: list[float] = []
    for chain in CHAINS[archetype]:
        pose.extend(_HOME_SINGLE[chain.dof])
    return tuple(pose)


def standard_cameras(archetype: Archetype) -> tuple[CameraSpec, ...]:
    info = ARCHETYPES[archetype]
    cams = [CameraSpec("main", CameraRole.MAIN)]
    if info.arms == 1:
        cams.append(CameraSpec("wrist", CameraRole.WRIST))
        cams.append(CameraSpec("side", CameraRole.SIDE))
    else:
        cams.append(CameraSpec("wrist_left", CameraRole.WRIST))
        cams.append(CameraSpec("wrist_right", CameraRole.WRIST))
    return tuple(cams)


def standard_spec(robot_id: str, archetype: Archetype,
                  control_rate_hz: float | None = None) -> RobotSpec:
    """RobotSpec wired to the built-in chain definitions."""
    limits: list[tuple[float, float]] = []
    for chain in CHAINS[archetype]:
        limits.extend(chain.limits())
    rate = control_rate_hz if control_rate_hz is not None else ARCHETYPES[archetype].rate_cap_hz
    return RobotSpec(
        robot_id=robot_id,
        archetype=archetype,
        joint_limits=tuple(limits),
        control_rate_hz=rate,
        cameras=standard_cameras(archetype),
    )
