"""Built-in task registry: descriptors, scene resets, stage detectors,
and the scripted waypoint players used to validate the platform.

Task descriptors are declarative JSON files under tasks/; detectors and
waypoint scripts are code, keyed by task id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .grading import TaskRubric
from .protocol import Archetype
from .simrobot import (SceneObject, SceneState, SimRobot, SlideSpec, at_home,
                       hand_near, stacked)

BUILTIN_TASKS_DIR = Path(__file__).parent / "tasks"


class UnknownTask(KeyError):
    pass


class DetectorsUnavailable(LookupError):
    """The task has no registered stage detectors; a human must grade it."""


@dataclass(frozen=True)
class TaskDef:
    task_id: str
    prompt: str
    archetype: Archetype
    table_bounds: tuple[float, float, float, float]
    time_budget_ms: float
    objects: tuple[dict, ...]
    rubric: TaskRubric

    def to_public_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "prompt": self.prompt,
            "archetype": self.archetype.value,
            "time_budget_ms": self.time_budget_ms,
            "rubric": self.rubric.to_dict(),
        }


def list_tasks(tasks_dir: Optional[Path] = None) -> list[str]:
    directory = Path(tasks_dir) if tasks_dir else BUILTIN_TASKS_DIR
    return sorted(p.stem for p in directory.glob("*.json"))


def load_task(task_id: str, tasks_dir: Optional[Path] = None) -> TaskDef:
    directory = Path(tasks_dir) if tasks_dir else BUILTIN_TASKS_DIR
    path = directory / f"{task_id}.json"
    if not path.exists():
        raise UnknownTask(task_id)
    raw = json.loads(path.read_text())
    return TaskDef(
        task_id=raw["task_id"],
        prompt=raw["prompt"],
        archetype=Archetype(raw["archetype"]),
        table_bounds=tuple(raw["table_bounds"]),
        time_budget_ms=float(raw.get("time_budget_ms", 900000)),
        objects=tuple(raw["objects"]),
        rubric=TaskRubric.from_dict(raw["rubric"]),
    )


def build_scene(task: TaskDef, mode: str = "randomized", seed: Optional[int] = None,
                reference_poses: Optional[dict] = None) -> SceneState:
    """Scene for a fresh rollout.

    randomized mode samples each ranged object's x, y, yaw uniformly and
    in file order from the seed; from_reference restores recorded poses.
    """
    if mode not in ("randomized", "from_reference"):
        raise ValueError(f"unknown reset mode {mode!r}")
    rng = np.random.default_rng(seed)
    scene = SceneState(task_id=task.task_id, table_bounds=task.table_bounds,
                       rng_seed=seed)
    anchored = []
    for spec in task.objects:
        slide = None
        if "slide" in spec:
            s = spec["slide"]
            slide = SlideSpec(axis=tuple(s["axis"]), travel_m=float(s["travel_m"]),
                              handle_offset=tuple(s["handle_offset"]))
        obj = SceneObject(
            object_id=spec["object_id"],
            shape=spec["shape"],
            size=tuple(spec["size"]),
            color=tuple(spec["color"]),
            position=np.zeros(3),
            graspable=spec.get("graspable", True),
            fixed=spec.get("fixed", False),
            slide=slide,
        )
        init = spec["init"]
        if "anchor" in init:
            anchored.append((obj, init))
        else:
            x = rng.uniform(*init["x"])
            y = rng.uniform(*init["y"])
            obj.yaw = float(rng.uniform(*init.get("yaw", [0.0, 0.0])))
            obj.position = np.array([x, y, 0.0])
        scene.objects.append(obj)
    for obj, init in anchored:
        base = scene.get(init["anchor"])
        obj.position = base.position + np.asarray(init["offset"], dtype=float)
        obj.yaw = base.yaw
    if mode == "from_reference":
        if reference_poses is None:
            raise ValueError("from_reference reset needs recorded poses")
        scene.restore_poses(reference_poses)
    x0, y0, x1, y1 = task.table_bounds
    for obj in scene.objects:
        px, py = obj.position[0], obj.position[1]
        if not (x0 <= px <= x1 and y0 <= py <= y1):
            raise ValueError(f"object {obj.object_id!r} spawned off the table at ({px}, {py})")
    return scene


def _stack_detectors() -> tuple[Callable[[SimRobot], bool], ...]:
    return (
        lambda sim: hand_near(sim, sim.scene.get("yellow_block").grasp_point(), 0.05),
        lambda sim: sim.attached_object(0) == "yellow_block",
        lambda sim: stacked(sim, "yellow_block", "orange_block"),
        lambda sim: at_home(sim),
    )


def _drawer_detectors() -> tuple[Callable[[SimRobot], bool], ...]:
    return (
        lambda sim: hand_near(sim, sim.scene.get("drawer").grasp_point(), 0.06),
        lambda sim: sim.gripping_slide(0) == "drawer",
        lambda sim: sim.scene.get("drawer").open_m >= 0.08,
        lambda sim: at_home(sim),
    )


def _cup_detectors() -> tuple[Callable[[SimRobot], bool], ...]:
    return (
        lambda sim: hand_near(sim, sim.scene.get("cup").grasp_point(), 0.05),
        lambda sim: sim.attached_object(0) == "cup",
        lambda sim: stacked(sim, "cup", "coaster", xy_tol=0.02),
        lambda sim: at_home(sim),
    )


DETECTORS: dict[str, Callable[[], tuple]] = {
    "stack_color_blocks": _stack_detectors,
    "open_the_drawer": _drawer_detectors,
    "put_cup_on_coaster": _cup_detectors,
}


def has_detectors(task_id: str) -> bool:
    return task_id in DETECTORS


def detect_stage(task_id: str, stage_index: int, sim: SimRobot) -> bool:
    """Pure geometric predicate for one rubric stage."""
    if task_id not in DETECTORS:
        raise DetectorsUnavailable(f"task {task_id!r} has no stage detectors")
    detectors = DETECTORS[task_id]()
    if not 0 <= stage_index < len(detectors):
        raise ValueError(f"stage index {stage_index} out of range")
    return bool(detectors[stage_index](sim))


def _find(scene: dict, object_id: str) -> dict:
    for obj in scene["objects"]:
        if obj["object_id"] == object_id:
            return obj
    raise KeyError(f"scene has no object {object_id!r}")


def _pick_and_place_script(scene: dict, pick_id: str, place_id: str) -> list[dict]:
    pick = _find(scene, pick_id)
    place = _find(scene, place_id)
    grasp = pick["grasp_point"]
    height = pick["size"][2]
    set_z = place["top_z"] + height
    px, py = place["position"][0], place["position"][1]
    return [
        {"kind": "move", "position": [grasp[0], grasp[1], grasp[2] + 0.10], "gripper": 1.0, "duration_ms": 500},
        {"kind": "move", "position": grasp, "gripper": 1.0, "duration_ms": 400},
        {"kind": "move", "position": grasp, "gripper": 0.0, "duration_ms": 250},
        {"kind": "move", "position": [grasp[0], grasp[1], grasp[2] + 0.12], "gripper": 0.0, "duration_ms": 400},
        {"kind": "move", "position": [px, py, set_z + 0.10], "gripper": 0.0, "duration_ms": 500},
        {"kind": "move", "position": [px, py, set_z], "gripper": 0.0, "duration_ms": 400},
        {"kind": "move", "position": [px, py, set_z], "gripper": 1.0, "duration_ms": 250},
        {"kind": "move", "position": [px, py, set_z + 0.10], "gripper": 1.0, "duration_ms": 400},
        {"kind": "home", "gripper": 1.0, "duration_ms": 600},
    ]


def _stack_script(scene: dict) -> list[dict]:
    return _pick_and_place_script(scene, "yellow_block", "orange_block")


def _cup_script(scene: dict) -> list[dict]:
    return _pick_and_place_script(scene, "cup", "coaster")


def _drawer_script(scene: dict) -> list[dict]:
    drawer = _find(scene, "drawer")
    handle = drawer["grasp_point"]
    pull = [handle[0], handle[1] - 0.095, handle[2]]
    return [
        {"kind": "move", "position": [handle[0], handle[1] - 0.05, handle[2] + 0.02], "gripper": 1.0, "duration_ms": 500},
        {"kind": "move", "position": handle, "gripper": 1.0, "duration_ms": 300},
        {"kind": "move", "position": handle, "gripper": 0.0, "duration_ms": 250},
        {"kind": "move", "position": pull, "gripper": 0.0, "duration_ms": 600},
        {"kind": "move", "position": pull, "gripper": 1.0, "duration_ms": 250},
        {"kind": "home", "gripper": 1.0, "duration_ms": 600},
    ]


ORACLE_SCRIPTS: dict[str, Callable[[dict], list[dict]]] = {
    "stack_color_blocks": _stack_script,
    "open_the_drawer": _drawer_script,
    "put_cup_on_coaster": _cup_script,
}


def oracle_script(task_id: str, scene: dict) -> list[dict]:
    """Ground-truth waypoint script for a built-in task."""
    if task_id not in ORACLE_SCRIPTS:
        raise UnknownTask(task_id)
    return ORACLE_SCRIPTS[task_id](scene)
