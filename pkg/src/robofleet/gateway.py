"""Service front of one robot: capture, the irrevocable action queue,
and the fixed-rate executor.

The queue is a linearizable shared object guarded by one lock; nothing
in the public surface removes or mutates a queued action. Actions drain
strictly in enqueue order, each linearly interpolated from its latched
start joints over its stated duration, with the gripper command applied
at completion.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .protocol import (Action, ActionChunk, CameraSpec, EnqueueAck, FrameData,
                       ObservationBundle, Proprio, QueueState, RobotSpec,
                       validate_chunk)
from .render import blend_images, match_score, render_camera
from .simrobot import SimFault, SimRobot

DEFAULT_MAX_QUEUE_DEPTH = 1024
DEFAULT_MATCH_THRESHOLD = 8.0
DEFAULT_RESET_SETTLE_MS = 200.0


class GatewayError(RuntimeError):
    pass


class UnknownCamera(GatewayError):
    pass


class RejectedChunk(GatewayError):
    def __init__(self, violations):
        self.violations = tuple(violations)
        super().__init__("chunk rejected: " + "; ".join(self.violations))


class QueueFull(GatewayError):
    pass


class MaintenanceMode(GatewayError):
    pass


@dataclass
class QueuedAction:
    action_id: int
    action: Action
    enqueued_at_ns: int
    state: str = "pending"
    started_at_ns: Optional[int] = None
    start_joints: Optional[np.ndarray] = None


class RobotGateway:
    """One robot's capture/queue/executor service."""

    def __init__(self, spec: RobotSpec, backend: SimRobot, clock,
                 max_queue_depth: int = DEFAULT_MAX_QUEUE_DEPTH,
                 match_threshold: float = DEFAULT_MATCH_THRESHOLD):
        self.spec = spec
        self.backend = backend
        self.clock = clock
        self.max_queue_depth = max_queue_depth
        self.match_threshold = match_threshold
        self.dt_ns = round(1e9 / spec.control_rate_hz)
        self._lock = threading.RLock()
        self._pending: deque[QueuedAction] = deque()
        self._executing: Optional[QueuedAction] = None
        self._executed_count = 0
        # forensic trail of completed action ids; survives resets
        self.executed_ids: list[int] = []
        self._next_action_id = 1
        self._next_capture_id = 1
        self._last_timestamp_ns = -1
        self._resetting_until_ns: Optional[int] = None
        self.maintenance = False
        self.maintenance_reason: Optional[str] = None
        self._fault_listeners: list[Callable[[str], None]] = []
        self._cameras = {c.camera_id: c for c in spec.cameras}

    # -- clock helpers -------------------------------------------------

    def _stamp(self) -> int:
        """Monotone capture timestamp, strictly increasing per gateway."""
        t = self.clock.now_ns()
        if t <= self._last_timestamp_ns:
            t = self._last_timestamp_ns + 1
        self._last_timestamp_ns = t
        return t

    # -- client surface ------------------------------------------------

    def capture(self, camera_ids=None) -> ObservationBundle:
        """Observation at a single sampled instant; never waits for the queue."""
        with self._lock:
            if camera_ids is None:
                cams = list(self.spec.cameras)
            else:
                missing = [c for c in camera_ids if c not in self._cameras]
                if missing:
                    raise UnknownCamera(f"unknown camera id(s): {missing}")
                cams = [self._cameras[c] for c in camera_ids]
            t = self._stamp()
            frames = tuple(
                FrameData(cam.camera_id, t, render_camera(self.backend, cam))
                for cam in cams)
            proprio = Proprio(
                joint_positions=tuple(float(v) for v in self.backend.joints),
                gripper_openness=tuple(float(v) for v in self.backend.gripper),
                timestamp_ns=t)
            bundle = ObservationBundle(
                capture_id=self._next_capture_id,
                robot_id=self.spec.robot_id,
                frames=frames,
                proprio=proprio,
                queue=self._queue_state_locked())
            self._next_capture_id += 1
            return bundle

    def enqueue(self, chunk: ActionChunk) -> EnqueueAck:
        """Append a whole chunk at the tail; there is no way to remove it."""
        with self._lock:
            if self.maintenance:
                raise MaintenanceMode(
                    f"robot {self.spec.robot_id} in maintenance: {self.maintenance_reason}")
            if self._resetting_until_ns is not None:
                raise MaintenanceMode(f"robot {self.spec.robot_id} is resetting")
            verdict = validate_chunk(self.spec, chunk)
            if not verdict.valid:
                raise RejectedChunk(verdict.violations)
            if len(self._pending) + len(chunk.actions) > self.max_queue_depth:
                raise QueueFull(
                    f"queue depth {self.max_queue_depth} would be exceeded")
            now = self.clock.now_ns()
            ids = []
            for action in chunk.actions:
                qa = QueuedAction(self._next_action_id, action, now)
                self._next_action_id += 1
                self._pending.append(qa)
                ids.append(qa.action_id)
            return EnqueueAck(tuple(ids), self._queue_state_locked())

    def queue_status(self) -> QueueState:
        with self._lock:
            return self._queue_state_locked()

    def _queue_state_locked(self) -> QueueState:
        drain = sum(qa.action.duration_ms for qa in self._pending)
        executing_id = None
        if self._executing is not None:
            executing_id = self._executing.action_id
            elapsed_ms = (self.clock.now_ns() - self._executing.started_at_ns) / 1e6
            drain += max(0.0, self._executing.action.duration_ms - elapsed_ms)
        return QueueState(
            length=len(self._pending),
            executing=executing_id,
            executed_count=self._executed_count,
            estimated_drain_ms=drain)

    # -- executor ------------------------------------------------------

    def tick(self):
        """One control period ending at the clock's current instant."""
        with self._lock:
            now = self.clock.now_ns()
            if self._resetting_until_ns is not None:
                if now >= self._resetting_until_ns:
                    self._resetting_until_ns = None
                else:
                    return
            if self.maintenance:
                return
            if self.backend.fault:
                self._enter_maintenance("backend fault")
                return
            if self._executing is None and self._pending:
                head = self._pending.popleft()
                head.state = "executing"
                head.started_at_ns = now - self.dt_ns
                head.start_joints = self.backend.joints.copy()
                self._executing = head
            qa = self._executing
            if qa is None:
                return
            elapsed_ms = (now - qa.started_at_ns) / 1e6
            fraction = min(1.0, elapsed_ms / qa.action.duration_ms)
            target = np.asarray(qa.action.target_joints, dtype=float)
            command = qa.start_joints + fraction * (target - qa.start_joints)
            grippers = qa.action.gripper if fraction >= 1.0 else None
            try:
                self.backend.apply_command(command, grippers)
            except SimFault:
                self._enter_maintenance("backend fault")
                return
            if fraction >= 1.0:
                qa.state = "done"
                self._executed_count += 1
                self.executed_ids.append(qa.action_id)
                self._executing = None
                if self._pending:
                    nxt = self._pending.popleft()
                    nxt.state = "executing"
                    nxt.started_at_ns = now
                    nxt.start_joints = self.backend.joints.copy()
                    self._executing = nxt

    def advance_ms(self, ms: float):
        """Drive the gateway alone in sim time (single-robot harnesses)."""
        ticks = round(ms * 1e6 / self.dt_ns)
        for _ in range(int(ticks)):
            self.clock.advance_ns(self.dt_ns)
            self.tick()

    # -- tester surface ------------------------------------------------

    def reset(self, settle_ms: float = DEFAULT_RESET_SETTLE_MS):
        """Clear pending work and home the robot; capture counter survives.

        While the settle window runs the robot refuses new chunks, like a
        homing move would.
        """
        with self._lock:
            self._pending.clear()
            self._executing = None
            self._executed_count = 0
            self.backend.home()
            if settle_ms > 0:
                self._resetting_until_ns = self.clock.now_ns() + round(settle_ms * 1e6)

    @property
    def resetting(self) -> bool:
        with self._lock:
            if self._resetting_until_ns is None:
                return False
            return self.clock.now_ns() < self._resetting_until_ns

    def overlay(self, reference_rgb: np.ndarray, alpha: float):
        """Blend the live main-camera view with a reference frame.

        Returns (blended image, match score); score is advisory, range
        [0, 255], threshold for the green indicator in match_threshold.
        """
        with self._lock:
            main = next(c for c in self.spec.cameras if c.role.value == "main")
            live = render_camera(self.backend, main)
        if reference_rgb.shape != live.shape:
            raise GatewayError(
                f"reference dimensions {reference_rgb.shape} do not match "
                f"main camera {live.shape}")
        return blend_images(reference_rgb, live, alpha), match_score(reference_rgb, live)

    def on_fault(self, listener: Callable[[str], None]):
        self._fault_listeners.append(listener)

    def _enter_maintenance(self, reason: str):
        self.maintenance = True
        self.maintenance_reason = reason
        for listener in list(self._fault_listeners):
            listener(reason)

    def set_maintenance(self, reason: str):
        with self._lock:
            self._enter_maintenance(reason)

    def clear_maintenance(self):
        with self._lock:
            self.backend.clear_fault()
            self.maintenance = False
            self.maintenance_reason = None
