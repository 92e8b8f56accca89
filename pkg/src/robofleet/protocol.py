"""Domain types shared by every component, plus the JSON wire codec.

All traffic is UTF-8 JSON inside an envelope ``{"type": ..., "body": ...}``.
Images travel as base64 PNG. Timestamps are server-side monotone
nanoseconds. Joint vectors are flat lists (left arm first on dual-arm
robots), gripper openness lives in [0, 1] per arm.
"""

from __future__ import annotations

import base64
import enum
import io
import json
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from PIL import Image


class Archetype(str, enum.Enum):
    UR5 = "ur5"
    FRANKA = "franka"
    ALOHA = "aloha"
    ARX5 = "arx5"


@dataclass(frozen=True)
class ArchetypeInfo:
    arms: int
    dof_per_arm: int
    rate_cap_hz: float


# Control-rate caps reflect what each controller family accepts.
ARCHETYPES: dict[Archetype, ArchetypeInfo] = {
    Archetype.UR5: ArchetypeInfo(arms=1, dof_per_arm=6, rate_cap_hz=125.0),
    Archetype.FRANKA: ArchetypeInfo(arms=1, dof_per_arm=7, rate_cap_hz=100.0),
    Archetype.ALOHA: ArchetypeInfo(arms=2, dof_per_arm=6, rate_cap_hz=100.0),
    Archetype.ARX5: ArchetypeInfo(arms=1, dof_per_arm=6, rate_cap_hz=100.0),
}


class CameraRole(str, enum.Enum):
    MAIN = "main"
    WRIST = "wrist"
    SIDE = "side"


@dataclass(frozen=True)
class CameraSpec:
    camera_id: str
    role: CameraRole
    width: int = 256
    height: int = 192


@dataclass(frozen=True)
class RobotSpec:
    """Static description of one robot as exposed to clients.

    Invariants are enforced at construction: arm/dof counts match the
    archetype, the control rate stays at or under the archetype cap, and
    the camera roster is exactly one main, one wrist per arm, and one
    side camera only on single-arm robots.
    """

    robot_id: str
    archetype: Archetype
    joint_limits: tuple[tuple[float, float], ...]
    control_rate_hz: float
    cameras: tuple[CameraSpec, ...]

    def __post_init__(self):
        info = ARCHETYPES[self.archetype]
        problems = []
        if len(self.joint_limits) != info.arms * info.dof_per_arm:
            problems.append(
                f"expected {info.arms * info.dof_per_arm} joint limits, got {len(self.joint_limits)}"
            )
        for lo, hi in self.joint_limits:
            if not lo < hi:
                problems.append(f"empty joint limit range ({lo}, {hi})")
        if not 0 < self.control_rate_hz <= info.rate_cap_hz:
            problems.append(
                f"control rate {self.control_rate_hz} outside (0, {info.rate_cap_hz}]"
            )
        roles = [c.role for c in self.cameras]
        if roles.count(CameraRole.MAIN) != 1:
            problems.append("camera roster needs exactly one main camera")
        if roles.count(CameraRole.WRIST) != info.arms:
            problems.append(f"camera roster needs {info.arms} wrist camera(s)")
        side = roles.count(CameraRole.SIDE)
        if info.arms == 1 and side != 1:
            problems.append("single-arm robots carry exactly one side camera")
        if info.arms > 1 and side != 0:
            problems.append("dual-arm robots carry no side camera")
        if len({c.camera_id for c in self.cameras}) != len(self.cameras):
            problems.append("camera ids must be unique")
        if problems:
            raise ValueError(f"invalid RobotSpec {self.robot_id!r}: " + "; ".join(problems))

    @property
    def arms(self) -> int:
        return ARCHETYPES[self.archetype].arms

    @property
    def dof(self) -> int:
        info = ARCHETYPES[self.archetype]
        return info.arms * info.dof_per_arm

    def camera_ids(self) -> tuple[str, ...]:
        return tuple(c.camera_id for c in self.cameras)


@dataclass(frozen=True)
class Action:
    """One queued command: joint targets, per-arm gripper, duration.

    The gripper command is applied when the action completes rather than
    being interpolated.
    """

    target_joints: tuple[float, ...]
    gripper: tuple[float, ...]
    duration_ms: float

    @staticmethod
    def of(target_joints: Sequence[float], gripper: Sequence[float], duration_ms: float) -> "Action":
        return Action(tuple(float(v) for v in target_joints),
                      tuple(float(v) for v in gripper),
                      float(duration_ms))


@dataclass(frozen=True)
class ActionChunk:
    client_seq: int
    actions: tuple[Action, ...]


@dataclass(frozen=True)
class ChunkVerdict:
    violations: tuple[str, ...]

    @property
    def valid(self) -> bool:
        return not self.violations


def validate_chunk(spec: RobotSpec, chunk: ActionChunk) -> ChunkVerdict:
    """Check a chunk against a robot spec and report every violation."""
    problems = []
    if not chunk.actions:
        problems.append("chunk has no actions")
    for i, act in enumerate(chunk.actions):
        if len(act.target_joints) != spec.dof:
            problems.append(f"action {i}: expected {spec.dof} joints, got {len(act.target_joints)}")
        else:
            for j, (v, (lo, hi)) in enumerate(zip(act.target_joints, spec.joint_limits)):
                if not lo <= v <= hi:
                    problems.append(f"action {i}: joint {j} value {v} outside [{lo}, {hi}]")
        if len(act.gripper) != spec.arms:
            problems.append(f"action {i}: expected {spec.arms} gripper value(s), got {len(act.gripper)}")
        else:
            for a, g in enumerate(act.gripper):
                if not 0.0 <= g <= 1.0:
                    problems.append(f"action {i}: gripper {a} value {g} outside [0, 1]")
        if not act.duration_ms > 0:
            problems.append(f"action {i}: duration {act.duration_ms} must be positive")
    return ChunkVerdict(tuple(problems))


@dataclass(frozen=True)
class QueueState:
    length: int
    executing: Optional[int]
    executed_count: int
    estimated_drain_ms: float


@dataclass(frozen=True)
class EnqueueAck:
    action_ids: tuple[int, ...]
    queue: QueueState


@dataclass(frozen=True)
class CaptureRequest:
    cameras: Optional[tuple[str, ...]] = None


@dataclass
class FrameData:
    """One camera frame. Depth is declared absent on the simulated fleet."""

    camera_id: str
    timestamp_ns: int
    rgb: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.rgb, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError("rgb frame must be HxWx3 uint8")
        arr.flags.writeable = False
        self.rgb = arr

    def __eq__(self, other):
        if not isinstance(other, FrameData):
            return NotImplemented
        return (self.camera_id == other.camera_id
                and self.timestamp_ns == other.timestamp_ns
                and np.array_equal(self.rgb, other.rgb))


@dataclass(frozen=True)
class Proprio:
    joint_positions: tuple[float, ...]
    gripper_openness: tuple[float, ...]
    timestamp_ns: int


@dataclass(frozen=True)
class ObservationBundle:
    capture_id: int
    robot_id: str
    frames: tuple[FrameData, ...]
    proprio: Proprio
    queue: QueueState


@dataclass(frozen=True)
class JobSubmission:
    task_set: tuple[str, ...]
    display_name: str


@dataclass(frozen=True)
class JobStatus:
    job_id: str
    status: str
    approved: bool
    display_name: str
    task_set: tuple[str, ...]
    setting: str
    robot_id: Optional[str]
    current_task: Optional[str]
    current_rollout: Optional[int]
    rollout_state: str
    expected_start_ns: Optional[int]
    progress: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class GradeEvent:
    type: str
    stage: Optional[int] = None
    reason: Optional[str] = None


@dataclass(frozen=True)
class RolloutResult:
    rollout_id: str
    task_id: str
    rollout_index: int
    success: bool
    score: float
    termination_reason: Optional[str]
    duration_ms: float


class DecodeError(ValueError):
    """Raised on malformed wire data, carrying where and what was expected."""

    def __init__(self, message: str, *, path: str = "$", position: Optional[int] = None):
        self.path = path
        self.position = position
        where = f"byte {position}" if position is not None else path
        super().__init__(f"{where}: {message}")


def encode_png(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _expect(body: Any, key: str, kinds, path: str, *, required: bool = True, default=None):
    if not isinstance(body, dict):
        raise DecodeError("expected JSON object", path=path)
    if key not in body or body[key] is None:
        if required:
            names = "/".join(k.__name__ for k in kinds)
            raise DecodeError(f"missing field, expected {names}", path=f"{path}.{key}")
        return default
    v = body[key]
    if isinstance(v, bool) and bool not in kinds:
        raise DecodeError("expected number, got bool", path=f"{path}.{key}")
    if float in kinds and isinstance(v, int):
        return float(v)
    if not isinstance(v, tuple(kinds)):
        names = "/".join(k.__name__ for k in kinds)
        raise DecodeError(f"expected {names}, got {type(v).__name__}", path=f"{path}.{key}")
    return v


def _num_tuple(body: dict, key: str, path: str) -> tuple[float, ...]:
    seq = _expect(body, key, [list], path)
    out = []
    for i, v in enumerate(seq):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise DecodeError("expected number", path=f"{path}.{key}[{i}]")
        out.append(float(v))
    return tuple(out)


def _str_tuple(body: dict, key: str, path: str) -> tuple[str, ...]:
    seq = _expect(body, key, [list], path)
    out = []
    for i, v in enumerate(seq):
        if not isinstance(v, str):
            raise DecodeError("expected string", path=f"{path}.{key}[{i}]")
        out.append(v)
    return tuple(out)


def _queue_to_body(q: QueueState) -> dict:
    return {
        "length": q.length,
        "executing": q.executing,
        "executed_count": q.executed_count,
        "estimated_drain_ms": q.estimated_drain_ms,
    }


def _queue_from_body(body: dict, path: str) -> QueueState:
    return QueueState(
        length=_expect(body, "length", [int], path),
        executing=_expect(body, "executing", [int], path, required=False),
        executed_count=_expect(body, "executed_count", [int], path),
        estimated_drain_ms=_expect(body, "estimated_drain_ms", [float], path),
    )


def _action_to_body(a: Action) -> dict:
    return {
        "target_joints": list(a.target_joints),
        "gripper": list(a.gripper),
        "duration_ms": a.duration_ms,
    }


def _action_from_body(body: dict, path: str) -> Action:
    return Action(
        target_joints=_num_tuple(body, "target_joints", path),
        gripper=_num_tuple(body, "gripper", path),
        duration_ms=_expect(body, "duration_ms", [float], path),
    )


def _chunk_to_body(c: ActionChunk) -> dict:
    return {"client_seq": c.client_seq, "actions": [_action_to_body(a) for a in c.actions]}


def _chunk_from_body(body: dict, path: str) -> ActionChunk:
    raw = _expect(body, "actions", [list], path)
    actions = tuple(_action_from_body(a, f"{path}.actions[{i}]") for i, a in enumerate(raw))
    return ActionChunk(client_seq=_expect(body, "client_seq", [int], path), actions=actions)


def _frame_to_body(f: FrameData) -> dict:
    return {
        "camera_id": f.camera_id,
        "timestamp_ns": f.timestamp_ns,
        "png_b64": base64.b64encode(encode_png(f.rgb)).decode("ascii"),
        "depth_b64": None,
    }


def _frame_from_body(body: dict, path: str) -> FrameData:
    png_b64 = _expect(body, "png_b64", [str], path)
    try:
        rgb = decode_png(base64.b64decode(png_b64, validate=True))
    except Exception as exc:
        raise DecodeError(f"bad PNG payload: {exc}", path=f"{path}.png_b64")
    return FrameData(
        camera_id=_expect(body, "camera_id", [str], path),
        timestamp_ns=_expect(body, "timestamp_ns", [int], path),
        rgb=rgb,
    )


def _proprio_to_body(p: Proprio) -> dict:
    return {
        "joint_positions": list(p.joint_positions),
        "gripper_openness": list(p.gripper_openness),
        "timestamp_ns": p.timestamp_ns,
    }


def _proprio_from_body(body: dict, path: str) -> Proprio:
    return Proprio(
        joint_positions=_num_tuple(body, "joint_positions", path),
        gripper_openness=_num_tuple(body, "gripper_openness", path),
        timestamp_ns=_expect(body, "timestamp_ns", [int], path),
    )


def _bundle_to_body(b: ObservationBundle) -> dict:
    return {
        "capture_id": b.capture_id,
        "robot_id": b.robot_id,
        "frames": [_frame_to_body(f) for f in b.frames],
        "proprio": _proprio_to_body(b.proprio),
        "queue": _queue_to_body(b.queue),
    }


def _bundle_from_body(body: dict, path: str) -> ObservationBundle:
    raw = _expect(body, "frames", [list], path)
    return ObservationBundle(
        capture_id=_expect(body, "capture_id", [int], path),
        robot_id=_expect(body, "robot_id", [str], path),
        frames=tuple(_frame_from_body(f, f"{path}.frames[{i}]") for i, f in enumerate(raw)),
        proprio=_proprio_from_body(_expect(body, "proprio", [dict], path), f"{path}.proprio"),
        queue=_queue_from_body(_expect(body, "queue", [dict], path), f"{path}.queue"),
    )


def _capture_req_to_body(r: CaptureRequest) -> dict:
    return {"cameras": list(r.cameras) if r.cameras is not None else None}


def _capture_req_from_body(body: dict, path: str) -> CaptureRequest:
    if body.get("cameras") is None:
        return CaptureRequest(None)
    return CaptureRequest(_str_tuple(body, "cameras", path))


def _ack_to_body(a: EnqueueAck) -> dict:
    return {"action_ids": list(a.action_ids), "queue": _queue_to_body(a.queue)}


def _ack_from_body(body: dict, path: str) -> EnqueueAck:
    raw = _expect(body, "action_ids", [list], path)
    ids = []
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, int):
            raise DecodeError("expected int", path=f"{path}.action_ids[{i}]")
        ids.append(v)
    return EnqueueAck(tuple(ids), _queue_from_body(_expect(body, "queue", [dict], path), f"{path}.queue"))


def _submission_to_body(s: JobSubmission) -> dict:
    return {"task_set": list(s.task_set), "display_name": s.display_name}


def _submission_from_body(body: dict, path: str) -> JobSubmission:
    return JobSubmission(
        task_set=_str_tuple(body, "task_set", path),
        display_name=_expect(body, "display_name", [str], path),
    )


def _job_status_to_body(j: JobStatus) -> dict:
    return {
        "job_id": j.job_id,
        "status": j.status,
        "approved": j.approved,
        "display_name": j.display_name,
        "task_set": list(j.task_set),
        "setting": j.setting,
        "robot_id": j.robot_id,
        "current_task": j.current_task,
        "current_rollout": j.current_rollout,
        "rollout_state": j.rollout_state,
        "expected_start_ns": j.expected_start_ns,
        "progress": dict(j.progress),
    }


def _job_status_from_body(body: dict, path: str) -> JobStatus:
    progress = _expect(body, "progress", [dict], path, required=False, default={})
    for k, v in progress.items():
        if not isinstance(k, str) or isinstance(v, bool) or not isinstance(v, int):
            raise DecodeError("expected str -> int map", path=f"{path}.progress")
    return JobStatus(
        job_id=_expect(body, "job_id", [str], path),
        status=_expect(body, "status", [str], path),
        approved=_expect(body, "approved", [bool], path),
        display_name=_expect(body, "display_name", [str], path),
        task_set=_str_tuple(body, "task_set", path),
        setting=_expect(body, "setting", [str], path),
        robot_id=_expect(body, "robot_id", [str], path, required=False),
        current_task=_expect(body, "current_task", [str], path, required=False),
        current_rollout=_expect(body, "current_rollout", [int], path, required=False),
        rollout_state=_expect(body, "rollout_state", [str], path),
        expected_start_ns=_expect(body, "expected_start_ns", [int], path, required=False),
        progress=dict(progress),
    )


GRADE_EVENT_TYPES = ("stage_complete", "retry", "finalize")


def _grade_event_to_body(e: GradeEvent) -> dict:
    return {"type": e.type, "stage": e.stage, "reason": e.reason}


def _grade_event_from_body(body: dict, path: str) -> GradeEvent:
    etype = _expect(body, "type", [str], path)
    if etype not in GRADE_EVENT_TYPES:
        raise DecodeError(f"expected one of {GRADE_EVENT_TYPES}", path=f"{path}.type")
    return GradeEvent(
        type=etype,
        stage=_expect(body, "stage", [int], path, required=False),
        reason=_expect(body, "reason", [str], path, required=False),
    )


def _rollout_result_to_body(r: RolloutResult) -> dict:
    return {
        "rollout_id": r.rollout_id,
        "task_id": r.task_id,
        "rollout_index": r.rollout_index,
        "success": r.success,
        "score": r.score,
        "termination_reason": r.termination_reason,
        "duration_ms": r.duration_ms,
    }


def _rollout_result_from_body(body: dict, path: str) -> RolloutResult:
    return RolloutResult(
        rollout_id=_expect(body, "rollout_id", [str], path),
        task_id=_expect(body, "task_id", [str], path),
        rollout_index=_expect(body, "rollout_index", [int], path),
        success=_expect(body, "success", [bool], path),
        score=_expect(body, "score", [float], path),
        termination_reason=_expect(body, "termination_reason", [str], path, required=False),
        duration_ms=_expect(body, "duration_ms", [float], path),
    )


# type name -> (dataclass, to_body, from_body)
WIRE_TYPES = {
    "CaptureRequest": (CaptureRequest, _capture_req_to_body, _capture_req_from_body),
    "ObservationBundle": (ObservationBundle, _bundle_to_body, _bundle_from_body),
    "ActionChunk": (ActionChunk, _chunk_to_body, _chunk_from_body),
    "EnqueueAck": (EnqueueAck, _ack_to_body, _ack_from_body),
    "QueueState": (QueueState, _queue_to_body, _queue_from_body),
    "JobSubmission": (JobSubmission, _submission_to_body, _submission_from_body),
    "JobStatus": (JobStatus, _job_status_to_body, _job_status_from_body),
    "GradeEvent": (GradeEvent, _grade_event_to_body, _grade_event_from_body),
    "RolloutResult": (RolloutResult, _rollout_result_to_body, _rollout_result_from_body),
}

_BY_CLASS = {cls: (name, enc) for name, (cls, enc, _) in WIRE_TYPES.items()}


def message_body(value: Any) -> dict:
    """Body dict for a protocol value, without the envelope."""
    try:
        _, enc = _BY_CLASS[type(value)]
    except KeyError:
        raise TypeError(f"{type(value).__name__} is not a wire type")
    return enc(value)


def encode_message(value: Any) -> bytes:
    name, enc = _BY_CLASS[type(value)]
    return json.dumps({"type": name, "body": enc(value)}).encode("utf-8")


def decode_body(type_name: str, body: Any, path: str = "$.body") -> Any:
    if type_name not in WIRE_TYPES:
        raise DecodeError(f"unknown message type {type_name!r}", path="$.type")
    _, _, dec = WIRE_TYPES[type_name]
    return dec(body, path)


def decode_message(data: bytes) -> Any:
    """Parse an envelope and return the typed value.

    Unknown body fields are ignored; missing or mistyped ones raise
    DecodeError naming the JSON path and the expected shape.
    """
    try:
        obj = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise DecodeError("payload is not UTF-8", position=exc.start)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"malformed JSON: {exc.msg}", position=exc.pos)
    if not isinstance(obj, dict):
        raise DecodeError("expected envelope object")
    type_name = _expect(obj, "type", [str], "$")
    body = _expect(obj, "body", [dict], "$")
    return decode_body(type_name, body)
