"""The platform core: robots, jobs, rollouts, grading, and records in
one place, driven by an explicit simulated clock.

HTTP lives elsewhere; everything here is callable directly, which is
how most of the test suite drives it. One call to step() advances the
clock, ticks every robot, applies stage detectors to active rollouts,
closes rollouts that finished or ran out of budget, and keeps the job
queue moving.
"""

from __future__ import annotations

import itertools
import threading
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import grading, scheduler as sched, tasks as taskmod
from .analytics import ResultRow, ranklist as rank_rows, round_display
from .gateway import RobotGateway
from .kinematics import standard_spec
from .protocol import (
    ActionChunk,
    GRADE_EVENT_TYPES,
    GradeEvent,
    JobStatus,
    JobSubmission,
    RobotSpec,
    RolloutResult,
)
from .render import render_camera
from .scheduler import ComparativeSession, Scheduler, SessionError
from .simrobot import SimConfig, SimRobot
from .store import EpisodeStore
from .tasks import TaskDef, build_scene

DEFAULT_SETTLE_MS = 200.0
PRACTICE_BUDGET_MS = 120_000.0


class PlatformError(Exception):
    pass


class RobotUnavailable(PlatformError):
    pass


class UnknownRollout(PlatformError):
    pass


class SimClock:
    def __init__(self, start_ns: int = 1_000_000_000):
        self._now = start_ns

    def now(self) -> int:
        return self._now

    # gateways address the clock through this name
    now_ns = now

    def advance_ms(self, ms: float) -> None:
        self._now += int(ms * 1e6)


@dataclass
class Station:
    robot_id: str
    spec: RobotSpec
    sim: SimRobot
    gateway: RobotGateway
    current_rollout: Optional[str] = None


@dataclass
class Rollout:
    rollout_id: str
    kind: str  # "job" or "practice"
    owner: str
    robot_id: str
    task: TaskDef
    index: int
    attempt: int
    grade: grading.RolloutGrade
    job_id: Optional[str] = None
    display_name: str = ""
    state: str = "preparing"  # preparing | active | finalized | discarded
    ready_at_ns: int = 0
    started_at_ns: Optional[int] = None
    result: Optional[RolloutResult] = None
    grade_stamps: list[int] = field(default_factory=list)


def _stable_seed(*parts) -> int:
    return zlib.crc32("/".join(str(p) for p in parts).encode())


class Platform:
    def __init__(self, data_dir, task_ids: Optional[list[str]] = None,
                 auto_approve: bool = False,
                 settle_ms: float = DEFAULT_SETTLE_MS,
                 noise_sigma_m: float = 0.0,
                 rollouts_per_task: int = grading.ROLLOUTS_PER_EVAL):
        self.clock = SimClock()
        self.settle_ms = settle_ms
        self._lock = threading.RLock()
        self.tasks: dict[str, TaskDef] = {
            t: taskmod.load_task(t) for t in (task_ids or taskmod.list_tasks())}

        self.stations: dict[str, Station] = {}
        self._robot_of_arch: dict = {}
        for task in self.tasks.values():
            if task.archetype in self._robot_of_arch:
                continue
            robot_id = f"{task.archetype.name.lower()}-1"
            spec = standard_spec(robot_id, task.archetype)
            sim = SimRobot(spec, SimConfig(repeat_noise_sigma_m=noise_sigma_m),
                           seed=_stable_seed("robot", robot_id))
            gateway = RobotGateway(spec, sim, clock=self.clock)
            self.stations[robot_id] = Station(robot_id, spec, sim, gateway)
            self._robot_of_arch[task.archetype] = robot_id
            gateway.on_fault(
                lambda reason, rid=robot_id: self._on_fault(rid, reason))

        budget = max(t.time_budget_ms for t in self.tasks.values())
        self.scheduler = Scheduler(
            set(self.tasks), self.robot_for_task, clock=self.clock.now,
            rollouts_per_task=rollouts_per_task,
            per_rollout_ms=budget + 10_000.0, auto_approve=auto_approve)

        self.store = EpisodeStore(Path(data_dir) / "episodes")
        self.rollouts: dict[str, Rollout] = {}
        self.sessions: dict[str, ComparativeSession] = {}
        self.results: dict[tuple[str, str], list[grading.GradeResult]] = {}
        self._rollout_ids = itertools.count(1)
        self._session_ids = itertools.count(1)

        # reference initial state per task, for overlay alignment
        self._reference_poses: dict[str, dict] = {}
        for task_id, task in self.tasks.items():
            scene = build_scene(task, "randomized", seed=_stable_seed("ref", task_id))
            self._reference_poses[task_id] = scene.poses()
        self._scratch: dict = {}
        self._reference_frames: dict[tuple[str, str], np.ndarray] = {}

    def robot_for_task(self, task_id: str) -> str:
        return self._robot_of_arch[self.tasks[task_id].archetype]

    # -- clock ---------------------------------------------------------

    def step(self, sim_ms: float = 10.0) -> None:
        with self._lock:
            self.clock.advance_ms(sim_ms)
            for station in self.stations.values():
                station.gateway.tick()
            self._drive()

    def run_for(self, sim_ms: float, step_ms: float = 10.0) -> None:
        remaining = sim_ms
        while remaining > 0:
            self.step(min(step_ms, remaining))
            remaining -= step_ms

    # -- job surface ---------------------------------------------------

    def submit_job(self, owner: str, submission: JobSubmission) -> JobStatus:
        return self.scheduler.submit(owner, submission)

    def approve_job(self, job_id: str) -> JobStatus:
        return self.scheduler.approve(job_id)

    def poll_job(self, job_id: str, actor: str, tester: bool = False) -> JobStatus:
        with self._lock:
            return self.scheduler.poll(job_id, actor, tester)

    def start_job(self, job_id: str, actor: str, tester: bool = False) -> JobStatus:
        with self._lock:
            self.scheduler.start(job_id, actor, tester)
            self._prepare_job_rollout(job_id)
            return self.scheduler.poll(job_id, actor, tester=True)

    def revoke_job(self, job_id: str, actor: str, tester: bool = False) -> JobStatus:
        with self._lock:
            status = self.scheduler.revoke(job_id, actor, tester)
            for rollout in self.rollouts.values():
                if rollout.job_id == job_id and rollout.state in ("preparing", "active"):
                    self._drop_rollout(rollout)
            return status

    def current_rollout_of_job(self, job_id: str, actor: str,
                               tester: bool = False) -> Optional[dict]:
        with self._lock:
            self.scheduler.poll(job_id, actor, tester)  # ownership gate
            for rollout in self.rollouts.values():
                if rollout.job_id == job_id and rollout.state in ("preparing", "active"):
                    return self._rollout_view(rollout)
            return None

    # -- rollout internals ---------------------------------------------

    def _new_rollout(self, kind: str, owner: str, robot_id: str, task: TaskDef,
                     index: int, attempt: int, job_id=None, display_name="") -> Rollout:
        station = self.stations[robot_id]
        station.gateway.reset(settle_ms=self.settle_ms)
        scene = build_scene(task, "randomized",
                            seed=_stable_seed(job_id or owner, task.task_id,
                                              index, attempt))
        station.sim.set_scene(scene)
        rollout = Rollout(
            rollout_id=f"ro-{next(self._rollout_ids):06d}", kind=kind,
            owner=owner, robot_id=robot_id, task=task, index=index,
            attempt=attempt, grade=grading.start_rollout(task.rubric),
            job_id=job_id, display_name=display_name,
            ready_at_ns=self.clock.now() + int(self.settle_ms * 1e6))
        self.rollouts[rollout.rollout_id] = rollout
        station.current_rollout = rollout.rollout_id
        return rollout

    def _prepare_job_rollout(self, job_id: str) -> Rollout:
        status = self.scheduler.poll(job_id, "", tester=True)
        task = self.tasks[status.current_task]
        attempts = sum(
            1 for r in self.rollouts.values()
            if r.job_id == job_id and r.task.task_id == task.task_id
            and r.index == status.current_rollout)
        return self._new_rollout(
            "job", owner="", robot_id=status.robot_id, task=task,
            index=status.current_rollout, attempt=attempts, job_id=job_id,
            display_name=status.display_name)

    def _drop_rollout(self, rollout: Rollout) -> None:
        rollout.state = "discarded"
        station = self.stations[rollout.robot_id]
        if station.current_rollout == rollout.rollout_id:
            station.current_rollout = None

    def _drive(self) -> None:
        for rollout in list(self.rollouts.values()):
            if rollout.state == "preparing" and self.clock.now() >= rollout.ready_at_ns:
                rollout.state = "active"
                rollout.started_at_ns = self.clock.now()
                if rollout.kind == "job":
                    self.scheduler.begin_rollout(rollout.job_id)
            if rollout.state != "active":
                continue
            self._auto_grade(rollout)
            self._check_end(rollout)
        self._notify_heads()

    def _auto_grade(self, rollout: Rollout) -> None:
        if not taskmod.has_detectors(rollout.task.task_id):
            return
        sim = self.stations[rollout.robot_id].sim
        for i in range(len(rollout.task.rubric.stages)):
            if rollout.grade.terminated:
                break
            if rollout.grade.stages[i].completed:
                continue
            if taskmod.detect_stage(rollout.task.task_id, i, sim):
                try:
                    grading.mark_stage_complete(rollout.grade, i)
                    rollout.grade_stamps.append(self.clock.now())
                except grading.GradeError:
                    pass  # prerequisites still open; detector will fire again

    def _check_end(self, rollout: Rollout) -> None:
        budget = (rollout.task.time_budget_ms if rollout.kind == "job"
                  else PRACTICE_BUDGET_MS)
        if rollout.grade.terminated:
            self._finalize_rollout(rollout)
        elif all(p.completed for p in rollout.grade.stages):
            self._finalize_rollout(rollout, "completed")
        elif self.clock.now() - rollout.started_at_ns >= budget * 1e6:
            self._finalize_rollout(rollout, "time_budget")

    def _finalize_rollout(self, rollout: Rollout, reason: str = "manual") -> RolloutResult:
        outcome = grading.finalize_rollout(rollout.grade, reason)
        duration_ms = (self.clock.now() - (rollout.started_at_ns or self.clock.now())) / 1e6
        result = RolloutResult(
            rollout_id=rollout.rollout_id, task_id=rollout.task.task_id,
            rollout_index=rollout.index, success=outcome.success,
            score=outcome.progress_score,
            termination_reason=outcome.termination_reason,
            duration_ms=duration_ms)
        rollout.result = result
        rollout.state = "finalized"
        station = self.stations[rollout.robot_id]
        if station.current_rollout == rollout.rollout_id:
            station.current_rollout = None
        if rollout.kind == "job":
            self._record_episode(rollout)
            key = (rollout.display_name, rollout.task.task_id)
            self.results.setdefault(key, []).append(outcome)
            status = self.scheduler.complete_rollout(rollout.job_id, result)
            if status.status == sched.RUNNING:
                self._prepare_job_rollout(rollout.job_id)
        return result

    def _record_episode(self, rollout: Rollout) -> None:
        writer = self.store.begin_episode(
            rollout.task.task_id, "evaluation", rollout.robot_id)
        t = rollout.started_at_ns or self.clock.now()
        for event in rollout.grade.events:
            t += 1
            writer.record_event(t, "grade", **event)
        writer.record_event(t + 1, "result",
                            success=rollout.result.success,
                            score=rollout.result.score,
                            termination_reason=rollout.result.termination_reason)
        writer.close()

    def _notify_heads(self) -> None:
        for robot_id in self.stations:
            if self.scheduler.occupant_for(robot_id) is not None:
                continue
            if self.stations[robot_id].current_rollout is not None:
                continue
            head = self.scheduler.head_for(robot_id)
            if head is not None and head.status == sched.QUEUED:
                self.scheduler.notify_upcoming(head.job_id)

    # -- robot I/O -----------------------------------------------------

    def _station_for_actor(self, robot_id: str, actor: str, tester: bool) -> Station:
        try:
            station = self.stations[robot_id]
        except KeyError:
            raise RobotUnavailable(f"no robot {robot_id!r}") from None
        if tester:
            return station
        rollout = (self.rollouts.get(station.current_rollout)
                   if station.current_rollout else None)
        if rollout is None:
            raise RobotUnavailable(f"{robot_id} is not serving a rollout")
        allowed = rollout.owner if rollout.kind == "practice" else self._job_owner(rollout.job_id)
        if actor != allowed:
            raise sched.PermissionDenied(
                f"{robot_id} is serving someone else's rollout")
        return station

    def _job_owner(self, job_id: str) -> str:
        return self.scheduler.owner_of(job_id)

    def capture(self, robot_id: str, actor: str, tester: bool = False,
                camera_ids=None):
        with self._lock:
            station = self._station_for_actor(robot_id, actor, tester)
            return station.gateway.capture(camera_ids)

    def enqueue(self, robot_id: str, actor: str, chunk: ActionChunk,
                tester: bool = False):
        with self._lock:
            station = self._station_for_actor(robot_id, actor, tester)
            return station.gateway.enqueue(chunk)

    def queue_status(self, robot_id: str, actor: str, tester: bool = False):
        with self._lock:
            station = self._station_for_actor(robot_id, actor, tester)
            return station.gateway.queue_status()

    def scene_state(self, robot_id: str) -> dict:
        """Ground truth for the simulated fleet; open to any valid key."""
        with self._lock:
            return self.stations[robot_id].sim.scene.to_dict()

    # -- practice ------------------------------------------------------

    def start_practice(self, owner: str, task_id: str) -> dict:
        with self._lock:
            task = self.tasks[task_id]
            robot_id = self.robot_for_task(task_id)
            if self.scheduler.occupant_for(robot_id) is not None:
                raise RobotUnavailable(f"{robot_id} is serving a job")
            if self.stations[robot_id].current_rollout is not None:
                raise RobotUnavailable(f"{robot_id} already has a rollout")
            rollout = self._new_rollout("practice", owner, robot_id, task,
                                        index=0, attempt=0)
            return self._rollout_view(rollout)

    # -- grading surface -----------------------------------------------

    def rollout_view(self, rollout_id: str) -> dict:
        with self._lock:
            return self._rollout_view(self._rollout(rollout_id))

    def _rollout(self, rollout_id: str) -> Rollout:
        try:
            return self.rollouts[rollout_id]
        except KeyError:
            raise UnknownRollout(rollout_id) from None

    def _rollout_view(self, rollout: Rollout) -> dict:
        view = {
            "rollout_id": rollout.rollout_id,
            "kind": rollout.kind,
            "job_id": rollout.job_id,
            "robot_id": rollout.robot_id,
            "task_id": rollout.task.task_id,
            "prompt": rollout.task.prompt,
            "rollout_index": rollout.index,
            "attempt": rollout.attempt,
            "state": rollout.state,
            "grade": grading.grade_view(rollout.grade),
        }
        if rollout.result is not None:
            view["result"] = {
                "success": rollout.result.success,
                "score": rollout.result.score,
                "termination_reason": rollout.result.termination_reason,
                "duration_ms": rollout.result.duration_ms,
            }
        return view

    def apply_grade_event(self, rollout_id: str, event: GradeEvent,
                          actor: str, tester: bool = False) -> dict:
        with self._lock:
            rollout = self._rollout(rollout_id)
            if not tester and not (rollout.kind == "practice" and rollout.owner == actor):
                raise sched.PermissionDenied("grading is a tester operation")
            if rollout.state not in ("active", "preparing"):
                raise grading.GradeError(f"rollout is {rollout.state}")
            if event.type not in GRADE_EVENT_TYPES:
                raise grading.GradeError(f"unknown grade event {event.type!r}")
            if event.type == "stage_complete":
                if event.stage is None:
                    raise grading.GradeError("stage_complete needs a stage index")
                grading.mark_stage_complete(rollout.grade, event.stage)
                rollout.grade_stamps.append(self.clock.now())
            elif event.type == "retry":
                grading.record_retry(rollout.grade)
            else:
                self._finalize_rollout(rollout, event.reason or "manual")
            if rollout.state == "active":
                self._check_end(rollout)
            return self._rollout_view(rollout)

    # -- maintenance ---------------------------------------------------

    def _on_fault(self, robot_id: str, reason: str) -> None:
        self.scheduler.pause_robot(robot_id, reason)
        station = self.stations[robot_id]
        if station.current_rollout is not None:
            self._drop_rollout(self.rollouts[station.current_rollout])

    def set_maintenance(self, robot_id: str, reason: str = "maintenance") -> None:
        # the gateway fires our fault listener, which parks the job
        with self._lock:
            self.stations[robot_id].gateway.set_maintenance(reason)

    def resume_robot(self, robot_id: str) -> Optional[JobStatus]:
        with self._lock:
            self.stations[robot_id].gateway.clear_maintenance()
            status = self.scheduler.resume_robot(robot_id)
            if status is not None:
                self._prepare_job_rollout(status.job_id)
            return status

    # -- overlay alignment ---------------------------------------------

    def _scratch_sim(self, archetype) -> SimRobot:
        if archetype not in self._scratch:
            robot_id = self._robot_of_arch[archetype]
            self._scratch[archetype] = SimRobot(
                self.stations[robot_id].spec, SimConfig(), seed=0)
        return self._scratch[archetype]

    def reference_frame(self, task_id: str, camera_id: str) -> np.ndarray:
        key = (task_id, camera_id)
        if key not in self._reference_frames:
            task = self.tasks[task_id]
            robot_id = self.robot_for_task(task_id)
            spec = self.stations[robot_id].spec
            cam = next(c for c in spec.cameras if c.camera_id == camera_id)
            scratch = self._scratch_sim(task.archetype)
            scratch.set_scene(build_scene(
                task, "from_reference",
                reference_poses=self._reference_poses[task_id]))
            scratch.home()
            self._reference_frames[key] = render_camera(scratch, cam)
        return self._reference_frames[key]

    def align_scene(self, robot_id: str, task_id: str,
                    poses: Optional[dict] = None) -> dict:
        """Tester rearranges the table; default target is the reference."""
        with self._lock:
            task = self.tasks[task_id]
            if self.robot_for_task(task_id) != robot_id:
                raise PlatformError(f"{task_id} does not run on {robot_id}")
            scene = build_scene(
                task, "from_reference",
                reference_poses=poses or self._reference_poses[task_id])
            self.stations[robot_id].sim.set_scene(scene)
            return scene.to_dict()

    def overlay(self, robot_id: str, task_id: str, camera_id: str,
                alpha: float) -> tuple[np.ndarray, float]:
        with self._lock:
            reference = self.reference_frame(task_id, camera_id)
            return self.stations[robot_id].gateway.overlay(reference, alpha)

    # -- comparative sessions ------------------------------------------

    def create_session(self, task_id: str, model_names: list[str],
                       total_rollouts: int, seed: int) -> dict:
        with self._lock:
            if task_id not in self.tasks:
                raise SessionError(f"unknown task {task_id!r}")
            session = ComparativeSession(
                f"cs-{next(self._session_ids):06d}", task_id, model_names,
                total_rollouts, seed)
            self.sessions[session.session_id] = session
            return session.public_status()

    def session_status(self, session_id: str) -> dict:
        return self._session(session_id).public_status()

    def grade_session_rollout(self, session_id: str, index: int,
                              success: bool, score: float) -> dict:
        with self._lock:
            session = self._session(session_id)
            session.grade(index, success, score)
            return session.public_status()

    def finalize_session(self, session_id: str) -> dict:
        with self._lock:
            report = self._session(session_id).finalize()
            return {
                "session_id": report.session_id,
                "task_id": report.task_id,
                "identities": report.identities,
                "per_token": {t: {"successes": s, "score": sc}
                              for t, (s, sc) in report.per_token.items()},
                "ranking": [{"rank": r, "tokens": list(ts)}
                            for r, ts in report.ranking],
            }

    def _session(self, session_id: str) -> ComparativeSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownRollout(session_id) from None

    # -- live results --------------------------------------------------

    def result_rows(self) -> list[ResultRow]:
        with self._lock:
            rows = []
            for (display, task_id), outcomes in self.results.items():
                n = len(outcomes)
                sr = Fraction(100 * sum(1 for o in outcomes if o.success), n)
                score = Fraction(sum(int(o.progress_score * 2) for o in outcomes),
                                 2 * n) * 10
                rows.append(ResultRow(display, task_id, sr, score))
            return rows

    def live_ranklist(self) -> list[dict]:
        entries = rank_rows(self.result_rows(), strict=False)
        return [
            {"rank": rank, "models": models, "mean_sr": round_display(sr),
             "mean_score": round_display(score)}
            for rank, models, sr, score in entries
        ]
