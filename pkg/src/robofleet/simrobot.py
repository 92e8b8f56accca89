"""Tabletop scene state and the simulated robot backend.

Position-mode tracking is exact per tick: commanded joints are adopted
directly, with optional Gaussian end-effector jitter standing in for
hardware repeatability. Grasping is rule-based: a gripper closing within
the attach distance of an object's grasp point picks it up; opening
drops it onto whatever is underneath. Slide-mounted objects (drawers)
are gripped rather than carried and follow the hand along their axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kinematics import CHAINS, Chain, fk, home_pose
from .protocol import ARCHETYPES, RobotSpec

SHAPES = ("box", "cylinder", "sphere")

GRIPPER_EDGE = 0.5


class SimFault(RuntimeError):
    """Raised by a faulted backend; the gateway turns it into maintenance."""


@dataclass(frozen=True)
class SlideSpec:
    axis: tuple[float, float, float]
    travel_m: float
    handle_offset: tuple[float, float, float]


@dataclass
class SceneObject:
    object_id: str
    shape: str
    size: tuple[float, float, float]
    color: tuple[int, int, int]
    position: np.ndarray
    yaw: float = 0.0
    graspable: bool = True
    fixed: bool = False
    slide: Optional[SlideSpec] = None
    open_m: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        self.position = np.asarray(self.position, dtype=float)

    def effective_position(self) -> np.ndarray:
        """World position including slide travel."""
        if self.slide is None:
            return self.position
        return self.position + np.asarray(self.slide.axis) * self.open_m

    @property
    def top_z(self) -> float:
        return float(self.effective_position()[2] + self.size[2])

    def grasp_point(self) -> np.ndarray:
        pos = self.effective_position()
        if self.slide is not None:
            off = np.asarray(self.slide.handle_offset, dtype=float)
            c, s = np.cos(self.yaw), np.sin(self.yaw)
            rotated = np.array([c * off[0] - s * off[1], s * off[0] + c * off[1], off[2]])
            return pos + rotated
        return pos + np.array([0.0, 0.0, self.size[2]])

    def footprint_half(self) -> tuple[float, float]:
        """Axis-aligned half extents of the footprint, yaw included."""
        c, s = abs(np.cos(self.yaw)), abs(np.sin(self.yaw))
        hx, hy = self.size[0] / 2.0, self.size[1] / 2.0
        if self.shape in ("cylinder", "sphere"):
            return hx, hx
        return c * hx + s * hy, s * hx + c * hy


@dataclass
class SceneState:
    task_id: str
    table_bounds: tuple[float, float, float, float]
    objects: list[SceneObject] = field(default_factory=list)
    rng_seed: Optional[int] = None

    def get(self, object_id: str) -> SceneObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(f"no object {object_id!r} in scene")

    def poses(self) -> dict:
        return {
            o.object_id: {
                "position": [float(v) for v in o.position],
                "yaw": float(o.yaw),
                "open_m": float(o.open_m),
            }
            for o in self.objects
        }

    def restore_poses(self, poses: dict):
        for object_id, pose in poses.items():
            obj = self.get(object_id)
            obj.position = np.asarray(pose["position"], dtype=float)
            obj.yaw = float(pose["yaw"])
            obj.open_m = float(pose.get("open_m", 0.0))

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "table_bounds": list(self.table_bounds),
            "rng_seed": self.rng_seed,
            "objects": [
                {
                    "object_id": o.object_id,
                    "shape": o.shape,
                    "size": list(o.size),
                    "color": list(o.color),
                    "position": [float(v) for v in o.effective_position()],
                    "yaw": float(o.yaw),
                    "graspable": o.graspable,
                    "fixed": o.fixed,
                    "open_m": float(o.open_m),
                    "grasp_point": [float(v) for v in o.grasp_point()],
                    "top_z": o.top_z,
                }
                for o in self.objects
            ],
        }


@dataclass(frozen=True)
class SimConfig:
    repeat_noise_sigma_m: float = 0.0
    attach_distance_m: float = 0.010

    def __post_init__(self):
        if self.repeat_noise_sigma_m < 0:
            raise ValueError("noise sigma must be non-negative")


class SimRobot:
    """One simulated robot bound to a scene."""

    def __init__(self, spec: RobotSpec, config: SimConfig = SimConfig(),
                 seed: Optional[int] = None):
        self.spec = spec
        self.config = config
        self.chains: tuple[Chain, ...] = CHAINS[spec.archetype]
        self.home_joints = np.array(home_pose(spec.archetype), dtype=float)
        self.joints = self.home_joints.copy()
        self.gripper = [1.0] * spec.arms
        self.scene = SceneState(task_id="", table_bounds=(0.0, 0.0, 0.64, 0.48))
        self.rng = np.random.default_rng(seed)
        self._jitter = [np.zeros(3) for _ in range(spec.arms)]
        # arm index -> (object_id, carry offset) for carried objects
        self._attached: dict[int, tuple[str, np.ndarray]] = {}
        # arm index -> (object_id, ee at grip, open_m at grip) for slides
        self._gripping: dict[int, tuple[str, np.ndarray, float]] = {}
        self.fault = False

    def arm_slice(self, arm: int) -> slice:
        dof = ARCHETYPES[self.spec.archetype].dof_per_arm
        return slice(arm * dof, (arm + 1) * dof)

    def ee_position(self, arm: int = 0) -> np.ndarray:
        return fk(self.chains[arm], self.joints[self.arm_slice(arm)]) + self._jitter[arm]

    def attached_object(self, arm: int = 0) -> Optional[str]:
        if arm in self._attached:
            return self._attached[arm][0]
        return None

    def gripping_slide(self, arm: int = 0) -> Optional[str]:
        if arm in self._gripping:
            return self._gripping[arm][0]
        return None

    def set_scene(self, scene: SceneState):
        self.scene = scene
        self._attached.clear()
        self._gripping.clear()

    def home(self):
        self.joints = self.home_joints.copy()
        self.gripper = [1.0] * self.spec.arms
        self._jitter = [np.zeros(3) for _ in range(self.spec.arms)]
        self._attached.clear()
        self._gripping.clear()

    def inject_fault(self):
        self.fault = True

    def clear_fault(self):
        self.fault = False

    def apply_command(self, targets, grippers=None):
        """Adopt joint targets; optionally apply absolute gripper commands."""
        if self.fault:
            raise SimFault(f"robot {self.spec.robot_id} backend fault")
        targets = np.asarray(targets, dtype=float)
        if targets.shape != self.joints.shape:
            raise ValueError(f"expected {self.joints.shape[0]} joint targets")
        self.joints = targets.copy()
        if self.config.repeat_noise_sigma_m > 0:
            for arm in range(self.spec.arms):
                self._jitter[arm] = self.rng.normal(
                    0.0, self.config.repeat_noise_sigma_m, 3)
        for arm in range(self.spec.arms):
            self._follow_hand(arm)
        if grippers is not None:
            if len(grippers) != self.spec.arms:
                raise ValueError(f"expected {self.spec.arms} gripper command(s)")
            for arm, command in enumerate(grippers):
                previous = self.gripper[arm]
                command = float(command)
                if previous >= GRIPPER_EDGE > command:
                    self._try_grasp(arm)
                elif previous < GRIPPER_EDGE <= command:
                    self._release(arm)
                self.gripper[arm] = command

    def _follow_hand(self, arm: int):
        ee = self.ee_position(arm)
        if arm in self._attached:
            object_id, offset = self._attached[arm]
            self.scene.get(object_id).position = ee + offset
        if arm in self._gripping:
            object_id, ref_ee, ref_open = self._gripping[arm]
            obj = self.scene.get(object_id)
            axis = np.asarray(obj.slide.axis, dtype=float)
            delta = float(np.dot(ee - ref_ee, axis))
            obj.open_m = float(np.clip(ref_open + delta, 0.0, obj.slide.travel_m))

    def _try_grasp(self, arm: int):
        ee = self.ee_position(arm)
        taken = {oid for oid, _ in self._attached.values()}
        best = None
        best_dist = self.config.attach_distance_m
        for obj in self.scene.objects:
            if obj.slide is not None:
                if obj.object_id in {g[0] for g in self._gripping.values()}:
                    continue
                dist = float(np.linalg.norm(ee - obj.grasp_point()))
                if dist <= best_dist:
                    best, best_dist = ("slide", obj), dist
                continue
            if not obj.graspable or obj.fixed or obj.object_id in taken:
                continue
            dist = float(np.linalg.norm(ee - obj.grasp_point()))
            if dist <= best_dist:
                best, best_dist = ("carry", obj), dist
        if best is None:
            return
        kind, obj = best
        if kind == "carry":
            self._attached[arm] = (obj.object_id, obj.position - ee)
        else:
            self._gripping[arm] = (obj.object_id, ee.copy(), obj.open_m)

    def _release(self, arm: int):
        if arm in self._gripping:
            del self._gripping[arm]
        if arm not in self._attached:
            return
        object_id, _ = self._attached.pop(arm)
        obj = self.scene.get(object_id)
        obj.position = obj.position.copy()
        obj.position[2] = self._support_height(obj)

    def _support_height(self, dropped: SceneObject) -> float:
        """Top of the highest object under the dropped one, else the table."""
        carried = {oid for oid, _ in self._attached.values()}
        hx, hy = dropped.footprint_half()
        cx, cy = dropped.position[0], dropped.position[1]
        support = 0.0
        for obj in self.scene.objects:
            if obj.object_id == dropped.object_id or obj.object_id in carried:
                continue
            ox, oy, _ = obj.effective_position()
            ohx, ohy = obj.footprint_half()
            if abs(cx - ox) < hx + ohx and abs(cy - oy) < hy + ohy:
                # 2 mm slack absorbs solver error when placing flush on a surface
                if obj.top_z <= dropped.position[2] + 2e-3:
                    support = max(support, obj.top_z)
        return support

    def state_record(self) -> dict:
        """Plain snapshot of joints, grippers, hands, and object poses."""
        return {
            "joints": [float(v) for v in self.joints],
            "gripper": [float(v) for v in self.gripper],
            "ee": [[float(v) for v in self.ee_position(a)] for a in range(self.spec.arms)],
            "objects": self.scene.poses(),
        }


def stacked(sim: SimRobot, top_id: str, bottom_id: str,
            xy_tol: float = 0.015, z_tol: float = 0.003) -> bool:
    """True when top rests on bottom: centers aligned, bottom face on top face."""
    carried = {oid for oid, _ in sim._attached.values()}
    if top_id in carried:
        return False
    top = sim.scene.get(top_id)
    bottom = sim.scene.get(bottom_id)
    tp, bp = top.effective_position(), bottom.effective_position()
    if float(np.hypot(tp[0] - bp[0], tp[1] - bp[1])) >= xy_tol:
        return False
    return abs(tp[2] - bottom.top_z) < z_tol


def hand_near(sim: SimRobot, point, tol: float, arm: int = 0) -> bool:
    return float(np.linalg.norm(sim.ee_position(arm) - np.asarray(point, dtype=float))) < tol


def at_home(sim: SimRobot, tol_rad: float = 0.05) -> bool:
    return bool(np.max(np.abs(sim.joints - sim.home_joints)) < tol_rad)
