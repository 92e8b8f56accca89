"""Staged rubric grading for rollouts.

A rubric splits a task into ordered stages worth 10 points total, each
stage marked critical or not. Completing a stage awards its points minus
half a point per retry spent on it; a stage whose own net score would go
negative terminates the rollout, as does a fifth successive failed
retry. Success means every critical stage completed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

TERMINATION_REASONS = (
    "stage_score_negative", "retry_limit", "manual", "completed", "time_budget")

RETRY_DEDUCTION = 0.5
MAX_SUCCESSIVE_FAILED_RETRIES = 4
TOTAL_POINTS = 10.0
ROLLOUTS_PER_EVAL = 10


class GradeError(ValueError):
    """Rejected grading event (out of order, terminated rollout, bad rubric)."""


@dataclass(frozen=True)
class StageSpec:
    name: str
    points: float
    critical: bool


@dataclass(frozen=True)
class TaskRubric:
    task_id: str
    stages: tuple[StageSpec, ...]
    rollouts_per_eval: int = ROLLOUTS_PER_EVAL

    def __post_init__(self):
        if not self.stages:
            raise GradeError(f"rubric {self.task_id!r} has no stages")
        halves = []
        for s in self.stages:
            doubled = s.points * 2.0
            if s.points < 0 or doubled != int(doubled):
                raise GradeError(
                    f"rubric {self.task_id!r}: stage {s.name!r} points {s.points} "
                    "must be a non-negative multiple of 0.5")
            halves.append(int(doubled))
        if sum(halves) != int(TOTAL_POINTS * 2):
            raise GradeError(
                f"rubric {self.task_id!r}: stage points sum to {sum(halves) / 2.0}, "
                f"expected {TOTAL_POINTS}")
        if not any(s.critical for s in self.stages):
            raise GradeError(f"rubric {self.task_id!r} needs at least one critical stage")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "stages": [
                {"name": s.name, "points": s.points, "critical": s.critical}
                for s in self.stages
            ],
            "rollouts_per_eval": self.rollouts_per_eval,
        }

    @staticmethod
    def from_dict(d: dict) -> "TaskRubric":
        return TaskRubric(
            task_id=d["task_id"],
            stages=tuple(
                StageSpec(s["name"], float(s["points"]), bool(s["critical"]))
                for s in d["stages"]
            ),
            rollouts_per_eval=int(d.get("rollouts_per_eval", ROLLOUTS_PER_EVAL)),
        )


@dataclass
class StageProgress:
    completed: bool = False
    retries: int = 0


@dataclass(frozen=True)
class GradeResult:
    success: bool
    progress_score: float
    termination_reason: Optional[str]


@dataclass
class RolloutGrade:
    """Mutable grading state for one rollout, driven by grading events.

    The event log keeps only the input events (stage_complete, retry,
    manual finalize); terminations are re-derived on replay.
    """

    rubric: TaskRubric
    stages: list[StageProgress] = field(default_factory=list)
    current_stage: int = 0
    successive_failed_retries: int = 0
    terminated: bool = False
    termination_reason: Optional[str] = None
    events: list[dict] = field(default_factory=list)

    def stage_net(self, index: int) -> float:
        return self.rubric.stages[index].points - RETRY_DEDUCTION * self.stages[index].retries


def start_rollout(rubric: TaskRubric) -> RolloutGrade:
    return RolloutGrade(rubric=rubric, stages=[StageProgress() for _ in rubric.stages])


def _require_live(grade: RolloutGrade):
    if grade.terminated:
        raise GradeError(f"rollout already terminated ({grade.termination_reason})")


def _terminate(grade: RolloutGrade, reason: str):
    grade.terminated = True
    grade.termination_reason = reason


def mark_stage_complete(grade: RolloutGrade, stage_index: int) -> RolloutGrade:
    """Complete a stage.

    Legal for the current stage or for any still-open stage all of whose
    predecessors are completed or skippable (non-critical). Completion
    resets the successive-failed-retry counter.
    """
    _require_live(grade)
    if not 0 <= stage_index < len(grade.stages):
        raise GradeError(f"stage index {stage_index} out of range")
    if grade.stages[stage_index].completed:
        raise GradeError(f"stage {stage_index} already completed")
    for i in range(stage_index):
        if not grade.stages[i].completed and grade.rubric.stages[i].critical:
            raise GradeError(
                f"stage {stage_index} cannot complete before critical stage {i}")
    grade.stages[stage_index].completed = True
    grade.successive_failed_retries = 0
    grade.current_stage = max(grade.current_stage, stage_index + 1)
    grade.events.append({"type": "stage_complete", "stage": stage_index})
    if all(s.completed for s in grade.stages):
        _terminate(grade, "completed")
    return grade


def record_retry(grade: RolloutGrade) -> RolloutGrade:
    """Count a failed re-attempt of the current stage.

    Terminates when the current stage's own net score would go negative,
    or on the fifth successive failed retry; the net-score rule is
    checked first.
    """
    _require_live(grade)
    if grade.current_stage >= len(grade.stages):
        raise GradeError("no active stage to retry")
    progress = grade.stages[grade.current_stage]
    progress.retries += 1
    grade.successive_failed_retries += 1
    grade.events.append({"type": "retry"})
    if grade.stage_net(grade.current_stage) < 0:
        _terminate(grade, "stage_score_negative")
    elif grade.successive_failed_retries > MAX_SUCCESSIVE_FAILED_RETRIES:
        _terminate(grade, "retry_limit")
    return grade


def finalize_rollout(grade: RolloutGrade, reason: str = "manual") -> GradeResult:
    """Close the rollout and compute its result.

    A live grade is terminated with the given reason (tester ending the
    run); an already-terminated grade keeps its original reason and the
    call is a pure read.
    """
    if not grade.terminated:
        if reason not in TERMINATION_REASONS:
            raise GradeError(f"unknown termination reason {reason!r}")
        grade.events.append({"type": "finalize", "reason": reason})
        _terminate(grade, reason)
    return finalize_preview(grade)


def replay_events(rubric: TaskRubric, events: list[dict]) -> RolloutGrade:
    """Rebuild a grade from its recorded input events."""
    grade = start_rollout(rubric)
    for ev in events:
        if ev["type"] == "stage_complete":
            mark_stage_complete(grade, ev["stage"])
        elif ev["type"] == "retry":
            record_retry(grade)
        elif ev["type"] == "finalize":
            finalize_rollout(grade, ev.get("reason", "manual"))
        else:
            raise GradeError(f"unknown event type {ev['type']!r}")
    return grade


def grade_view(grade: RolloutGrade) -> dict:
    """Serializable live view: per-stage state plus the as-of-now result."""
    now = finalize_preview(grade)
    return {
        "task_id": grade.rubric.task_id,
        "stages": [
            {
                "name": s.name,
                "points": s.points,
                "critical": s.critical,
                "completed": p.completed,
                "retries": p.retries,
            }
            for s, p in zip(grade.rubric.stages, grade.stages)
        ],
        "current_stage": grade.current_stage,
        "successive_failed_retries": grade.successive_failed_retries,
        "terminated": grade.terminated,
        "termination_reason": grade.termination_reason,
        "success": now.success,
        "progress_score": now.progress_score,
        "events": list(grade.events),
    }


def finalize_preview(grade: RolloutGrade) -> GradeResult:
    """Result as if the rollout ended now, without mutating the grade."""
    success = all(
        p.completed for p, s in zip(grade.stages, grade.rubric.stages) if s.critical)
    score = 0.0
    for i, p in enumerate(grade.stages):
        if p.completed:
            score += max(0.0, grade.stage_net(i))
    return GradeResult(success=success, progress_score=score,
                       termination_reason=grade.termination_reason)


def task_totals(results: list[GradeResult]) -> dict:
    """Success rate and task score over one task's full set of rollouts."""
    if len(results) != ROLLOUTS_PER_EVAL:
        raise GradeError(f"expected {ROLLOUTS_PER_EVAL} rollout results, got {len(results)}")
    return {
        "success_rate": 10.0 * sum(1 for r in results if r.success),
        "task_score": sum(r.progress_score for r in results),
    }
