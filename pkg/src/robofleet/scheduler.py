"""Job queueing and lifecycle for the robot fleet.

Every mutation is an appended event; job state is a fold over its events,
so the log is the audit trail and the state machine is checkable as a
table. One robot runs at most one job at a time; queued submissions get a
start estimate that is only ever reported earlier, never later.
"""

from __future__ import annotations

import itertools
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .protocol import JobStatus, JobSubmission, RolloutResult

QUEUED = "queued"
NOTIFIED = "notified"
RUNNING = "running"
PAUSED = "paused_maintenance"
COMPLETED = "completed"
REVOKED = "revoked"

STATUSES = (QUEUED, NOTIFIED, RUNNING, PAUSED, COMPLETED, REVOKED)
TERMINAL = frozenset({COMPLETED, REVOKED})

EVENTS = ("notify", "start", "pause", "resume", "complete", "revoke")

# the whole lifecycle; anything absent here is an invalid transition
TRANSITIONS: dict[tuple[str, str], str] = {
    (QUEUED, "notify"): NOTIFIED,
    (QUEUED, "revoke"): REVOKED,
    (NOTIFIED, "start"): RUNNING,
    (NOTIFIED, "revoke"): REVOKED,
    (RUNNING, "pause"): PAUSED,
    (RUNNING, "complete"): COMPLETED,
    (RUNNING, "revoke"): REVOKED,
    (PAUSED, "resume"): RUNNING,
    (PAUSED, "revoke"): REVOKED,
}


class SchedulerError(Exception):
    pass


class UnknownJob(SchedulerError):
    pass


class PermissionDenied(SchedulerError):
    pass


class NotNextInLine(SchedulerError):
    pass


class RobotBusy(SchedulerError):
    pass


class InvalidTransition(SchedulerError):
    def __init__(self, status: str, event: str):
        super().__init__(f"event {event!r} not allowed in status {status!r}")
        self.status = status
        self.event = event


@dataclass(frozen=True)
class Event:
    seq: int
    timestamp_ns: int
    job_id: str
    kind: str
    detail: dict = field(default_factory=dict)


@dataclass
class _Job:
    job_id: str
    owner: str
    display_name: str
    task_set: tuple[str, ...]
    setting: str
    robot_id: str
    submitted_seq: int
    status: str = QUEUED
    approved: bool = False
    completed_rollouts: dict[str, int] = field(default_factory=dict)
    task_index: int = 0
    rollout_state: str = "waiting"
    eta_floor_ns: Optional[int] = None
    started_at_ns: Optional[int] = None

    def remaining(self, per_task: int) -> int:
        return sum(per_task - self.completed_rollouts.get(t, 0) for t in self.task_set)

    @property
    def current_task(self) -> Optional[str]:
        if self.status in TERMINAL or self.task_index >= len(self.task_set):
            return None
        return self.task_set[self.task_index]

    @property
    def current_rollout(self) -> Optional[int]:
        task = self.current_task
        if task is None:
            return None
        return self.completed_rollouts.get(task, 0)


class Scheduler:
    """Owns job records and the per-robot run queue.

    Auth is the caller's job: methods take the acting identity plus a
    tester flag and enforce ownership, nothing else.
    """

    def __init__(self, task_ids: set[str],
                 robot_for_task: Callable[[str], str],
                 clock: Callable[[], int] = time.monotonic_ns,
                 rollouts_per_task: int = 10,
                 per_rollout_ms: float = 120_000.0,
                 auto_approve: bool = False):
        self._task_ids = set(task_ids)
        self._robot_for_task = robot_for_task
        self._clock = clock
        self.rollouts_per_task = rollouts_per_task
        self.per_rollout_ms = per_rollout_ms
        self._auto_approve = auto_approve
        self._lock = threading.RLock()
        self._jobs: dict[str, _Job] = {}
        self._log: list[Event] = []
        self._ids = itertools.count(1)

    # -- event plumbing ------------------------------------------------

    def _append(self, job: _Job, kind: str, **detail) -> None:
        self._log.append(Event(len(self._log), self._clock(), job.job_id,
                               kind, dict(detail)))

    def _apply(self, job: _Job, event: str, **detail) -> None:
        key = (job.status, event)
        if key not in TRANSITIONS:
            raise InvalidTransition(job.status, event)
        job.status = TRANSITIONS[key]
        self._append(job, event, **detail)

    def events(self, job_id: Optional[str] = None) -> list[Event]:
        with self._lock:
            if job_id is None:
                return list(self._log)
            return [e for e in self._log if e.job_id == job_id]

    # -- submission and queue reads ------------------------------------

    def submit(self, owner: str, submission: JobSubmission) -> JobStatus:
        tasks = tuple(submission.task_set)
        if not tasks:
            raise SchedulerError("task set is empty")
        if len(set(tasks)) != len(tasks):
            raise SchedulerError("task set has duplicates")
        unknown = [t for t in tasks if t not in self._task_ids]
        if unknown:
            raise SchedulerError(f"unknown task(s): {unknown}")
        if not submission.display_name.strip():
            raise SchedulerError("display name is empty")
        robots = {self._robot_for_task(t) for t in tasks}
        if len(robots) != 1:
            raise SchedulerError(
                f"tasks span robots {sorted(robots)}; submit one job per robot")
        setting = "generalist" if len(tasks) > 1 else "specialist"
        with self._lock:
            job = _Job(job_id=f"job-{next(self._ids):06d}", owner=owner,
                       display_name=submission.display_name, task_set=tasks,
                       setting=setting, robot_id=robots.pop(),
                       submitted_seq=len(self._log))
            self._jobs[job.job_id] = job
            self._append(job, "submitted", owner=owner, tasks=list(tasks))
            if self._auto_approve:
                job.approved = True
                self._append(job, "approved", by="auto")
            return self._status(job)

    def _get(self, job_id: str) -> _Job:
        try:
            return self._jobs[job_id]
        except KeyError:
            raise UnknownJob(job_id) from None

    def _authorize(self, job: _Job, actor: str, tester: bool) -> None:
        if not tester and job.owner != actor:
            raise PermissionDenied(f"{job.job_id} belongs to someone else")

    def approve(self, job_id: str) -> JobStatus:
        with self._lock:
            job = self._get(job_id)
            if job.status in TERMINAL:
                raise SchedulerError(f"{job_id} already {job.status}")
            if not job.approved:
                job.approved = True
                self._append(job, "approved", by="tester")
            return self._status(job)

    def poll(self, job_id: str, actor: str, tester: bool = False) -> JobStatus:
        with self._lock:
            job = self._get(job_id)
            self._authorize(job, actor, tester)
            return self._status(job)

    def jobs_for_robot(self, robot_id: str) -> list[JobStatus]:
        with self._lock:
            return [self._status(j) for j in self._ordered(robot_id)]

    def all_jobs(self) -> list[JobStatus]:
        with self._lock:
            return [self._status(j) for j in self._jobs.values()]

    def _ordered(self, robot_id: str) -> list[_Job]:
        jobs = [j for j in self._jobs.values() if j.robot_id == robot_id]
        return sorted(jobs, key=lambda j: j.submitted_seq)

    def _head(self, robot_id: str) -> Optional[_Job]:
        """Next job the robot should serve: earliest approved, not yet running."""
        for job in self._ordered(robot_id):
            if job.status in (QUEUED, NOTIFIED) and job.approved:
                return job
        return None

    def head_for(self, robot_id: str) -> Optional[JobStatus]:
        with self._lock:
            head = self._head(robot_id)
            return None if head is None else self._status(head)

    def occupant_for(self, robot_id: str) -> Optional[JobStatus]:
        with self._lock:
            occupant = self._occupant(robot_id)
            return None if occupant is None else self._status(occupant)

    def owner_of(self, job_id: str) -> str:
        with self._lock:
            return self._get(job_id).owner

    def _occupant(self, robot_id: str) -> Optional[_Job]:
        for job in self._ordered(robot_id):
            if job.status in (RUNNING, PAUSED):
                return job
        return None

    # -- estimates -----------------------------------------------------

    def _backlog_ms(self, job: _Job) -> float:
        ahead = 0
        occupant = self._occupant(job.robot_id)
        if occupant is not None:
            ahead += occupant.remaining(self.rollouts_per_task)
        for other in self._ordered(job.robot_id):
            if other.job_id == job.job_id:
                continue
            if other.status in (QUEUED, NOTIFIED) and other.submitted_seq < job.submitted_seq:
                ahead += other.remaining(self.rollouts_per_task)
        return ahead * self.per_rollout_ms

    def _expected_start_ns(self, job: _Job) -> Optional[int]:
        if job.status not in (QUEUED, NOTIFIED):
            return job.started_at_ns
        raw = self._clock() + int(self._backlog_ms(job) * 1e6)
        # never report a later start than we already promised
        if job.eta_floor_ns is not None:
            raw = min(raw, job.eta_floor_ns)
        job.eta_floor_ns = raw
        return raw

    def _status(self, job: _Job) -> JobStatus:
        return JobStatus(
            job_id=job.job_id, status=job.status, approved=job.approved,
            display_name=job.display_name, task_set=job.task_set,
            setting=job.setting, robot_id=job.robot_id,
            current_task=job.current_task,
            current_rollout=job.current_rollout,
            rollout_state=job.rollout_state,
            expected_start_ns=self._expected_start_ns(job),
            progress=dict(job.completed_rollouts),
        )

    # -- lifecycle -----------------------------------------------------

    def notify_upcoming(self, job_id: str) -> JobStatus:
        with self._lock:
            job = self._get(job_id)
            if job.status == QUEUED:
                head = self._head(job.robot_id)
                if head is None or head.job_id != job.job_id:
                    raise NotNextInLine(
                        f"{job_id} is not the next approved job for {job.robot_id}")
            self._apply(job, "notify")
            job.rollout_state = "awaiting_client"
            return self._status(job)

    def start(self, job_id: str, actor: str, tester: bool = False) -> JobStatus:
        with self._lock:
            job = self._get(job_id)
            self._authorize(job, actor, tester)
            if (job.status, "start") not in TRANSITIONS:
                raise InvalidTransition(job.status, "start")
            occupant = self._occupant(job.robot_id)
            if occupant is not None:
                raise RobotBusy(f"{job.robot_id} is serving {occupant.job_id}")
            self._apply(job, "start")
            job.started_at_ns = self._clock()
            job.rollout_state = "preparing"
            return self._status(job)

    def begin_rollout(self, job_id: str) -> tuple[str, int]:
        """Mark the current rollout active; returns (task_id, rollout index)."""
        with self._lock:
            job = self._get(job_id)
            if job.status != RUNNING:
                raise SchedulerError(f"{job_id} is {job.status}, not running")
            task = job.current_task
            if task is None:
                raise SchedulerError(f"{job_id} has no work left")
            job.rollout_state = "active"
            index = job.completed_rollouts.get(task, 0)
            self._append(job, "rollout_started", task=task, index=index)
            return task, index

    def complete_rollout(self, job_id: str, result: RolloutResult) -> JobStatus:
        with self._lock:
            job = self._get(job_id)
            if job.status != RUNNING:
                raise SchedulerError(f"{job_id} is {job.status}, not running")
            task = job.current_task
            if task is None or result.task_id != task:
                raise SchedulerError(
                    f"result for {result.task_id}, expected {task}")
            expected_index = job.completed_rollouts.get(task, 0)
            if result.rollout_index != expected_index:
                raise SchedulerError(
                    f"rollout index {result.rollout_index}, expected {expected_index}")
            done = expected_index + 1
            job.completed_rollouts[task] = done
            self._append(job, "rollout_completed", task=task,
                         index=result.rollout_index, success=result.success,
                         score=result.score)
            if done >= self.rollouts_per_task:
                job.task_index += 1
            if job.task_index >= len(job.task_set):
                self._apply(job, "complete")
                job.rollout_state = "done"
            else:
                job.rollout_state = "preparing"
            return self._status(job)

    def pause_robot(self, robot_id: str, reason: str = "maintenance") -> Optional[JobStatus]:
        """Robot fault: discard the in-flight rollout, park the job."""
        with self._lock:
            occupant = self._occupant(robot_id)
            if occupant is None or occupant.status == PAUSED:
                return None
            if occupant.rollout_state == "active":
                self._append(occupant, "rollout_discarded",
                             task=occupant.current_task,
                             index=occupant.current_rollout, reason=reason)
            self._apply(occupant, "pause", reason=reason)
            occupant.rollout_state = "paused"
            return self._status(occupant)

    def resume_robot(self, robot_id: str) -> Optional[JobStatus]:
        """Maintenance over: the discarded rollout is re-run from a fresh reset."""
        with self._lock:
            occupant = self._occupant(robot_id)
            if occupant is None or occupant.status != PAUSED:
                return None
            self._apply(occupant, "resume")
            occupant.rollout_state = "preparing"
            return self._status(occupant)

    def revoke(self, job_id: str, actor: str, tester: bool = False) -> JobStatus:
        with self._lock:
            job = self._get(job_id)
            self._authorize(job, actor, tester)
            self._apply(job, "revoke", by=actor)
            job.rollout_state = "revoked"
            return self._status(job)


# -- blinded head-to-head sessions ------------------------------------


class SessionError(Exception):
    pass


@dataclass
class SessionRollout:
    index: int
    scene_seed: int
    token: str
    graded: bool = False
    success: Optional[bool] = None
    score: Optional[float] = None


@dataclass(frozen=True)
class SessionReport:
    session_id: str
    task_id: str
    identities: dict[str, str]
    per_token: dict[str, tuple[int, float]]
    ranking: tuple[tuple[int, tuple[str, ...]], ...]


class ComparativeSession:
    """Head-to-head run where graders see tokens, never model names.

    The per-rollout initial-state seeds are drawn before any
    model-related randomness, so the same session seed reproduces the
    same scenes no matter which models are being compared.
    """

    def __init__(self, session_id: str, task_id: str,
                 model_names: list[str], total_rollouts: int, seed: int):
        names = list(model_names)
        if len(names) < 2:
            raise SessionError("need at least two models to compare")
        if len(set(names)) != len(names):
            raise SessionError("duplicate model names")
        if total_rollouts < len(names):
            raise SessionError("fewer rollouts than models")
        self.session_id = session_id
        self.task_id = task_id
        rng = random.Random(seed)
        # scene seeds first: identical for any choice of contenders
        scene_seeds = [rng.randrange(2 ** 32) for _ in range(total_rollouts)]
        tokens = [f"entry-{chr(ord('A') + i)}" for i in range(len(names))]
        shuffled = list(names)
        rng.shuffle(shuffled)
        self._identities = dict(zip(tokens, shuffled))
        self.rollouts = [
            SessionRollout(index=i, scene_seed=scene_seeds[i],
                           token=rng.choice(tokens))
            for i in range(total_rollouts)
        ]
        self._report: Optional[SessionReport] = None

    @property
    def finalized(self) -> bool:
        return self._report is not None

    def tokens(self) -> list[str]:
        return sorted(self._identities)

    def model_for(self, token: str) -> str:
        """Internal routing only; never exposed through status surfaces."""
        return self._identities[token]

    def grade(self, index: int, success: bool, score: float) -> None:
        if self._report is not None:
            raise SessionError("session is finalized")
        if not 0 <= index < len(self.rollouts):
            raise SessionError(f"no rollout {index} in this session")
        rollout = self.rollouts[index]
        rollout.graded = True
        rollout.success = success
        rollout.score = score

    def public_status(self) -> dict:
        """Everything a grader may see. Model names stay out of this."""
        return {
            "session_id": self.session_id,
            "task_id": self.task_id,
            "finalized": self.finalized,
            "tokens": self.tokens(),
            "rollouts": [
                {"index": r.index, "scene_seed": r.scene_seed,
                 "token": r.token, "graded": r.graded,
                 "success": r.success, "score": r.score}
                for r in self.rollouts
            ],
        }

    def finalize(self) -> SessionReport:
        if self._report is not None:
            return self._report
        pending = [r.index for r in self.rollouts if not r.graded]
        if pending:
            raise SessionError(f"rollouts not graded yet: {pending}")
        per_token: dict[str, tuple[int, float]] = {}
        for token in self.tokens():
            mine = [r for r in self.rollouts if r.token == token]
            per_token[token] = (sum(1 for r in mine if r.success),
                                sum(r.score for r in mine))
        order = sorted(per_token.items(), key=lambda kv: (-kv[1][0], -kv[1][1]))
        ranking = []
        position = 1
        i = 0
        while i < len(order):
            tied = [order[i][0]]
            while i + len(tied) < len(order) and order[i + len(tied)][1] == order[i][1]:
                tied.append(order[i + len(tied)][0])
            ranking.append((position, tuple(tied)))
            position += len(tied)
            i += len(tied)
        self._report = SessionReport(
            session_id=self.session_id, task_id=self.task_id,
            identities=dict(self._identities), per_token=per_token,
            ranking=tuple(ranking))
        return self._report
