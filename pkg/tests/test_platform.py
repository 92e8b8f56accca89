"""End-to-end behavior of the platform core, driven without HTTP."""

import numpy as np
import pytest

from robofleet import grading
from robofleet.client import OraclePolicy, RolloutContext
from robofleet.platform import PRACTICE_BUDGET_MS, Platform, RobotUnavailable, UnknownRollout
from robofleet.protocol import ActionChunk, GradeEvent, JobSubmission
from robofleet.scheduler import PermissionDenied

USER = "alice"
OTHER = "bob"


@pytest.fixture
def platform(tmp_path):
    return Platform(tmp_path / "data", auto_approve=True)


def pump_until(platform, predicate, max_steps=5000, step_ms=10.0):
    for _ in range(max_steps):
        if predicate():
            return
        platform.step(step_ms)
    raise AssertionError("condition never became true")


def submit_and_start(platform, owner, task_ids, display="policy-a"):
    status = platform.submit_job(owner, JobSubmission(tuple(task_ids), display))
    pump_until(platform, lambda: platform.poll_job(
        status.job_id, owner).status == "notified")
    return platform.start_job(status.job_id, owner)


def drive_job(platform, owner, job_id, policy, max_iters=40000):
    """The client loop, minus HTTP: poll, capture, infer, enqueue."""
    status = platform.poll_job(job_id, owner)
    done = []
    context = None
    for _ in range(max_iters):
        if status.status != "running":
            return status, done
        info = platform.current_rollout_of_job(job_id, owner)
        if info is None or info["state"] != "active":
            platform.step(10.0)
            status = platform.poll_job(job_id, owner)
            continue
        if context is None or context.rollout_id != info["rollout_id"]:
            context = RolloutContext(
                job_id=job_id, rollout_id=info["rollout_id"],
                task_id=info["task_id"], rollout_index=info["rollout_index"],
                robot_id=info["robot_id"], prompt=info["prompt"],
                scene=platform.scene_state(info["robot_id"]))
            policy.begin_rollout(context)
            seq = 0
        if platform.queue_status(context.robot_id, owner).length > 0:
            platform.step(10.0)
        else:
            bundle = platform.capture(context.robot_id, owner)
            actions = policy.infer(bundle, context)
            if actions:
                platform.enqueue(context.robot_id, owner,
                                 ActionChunk(seq, tuple(actions)))
                seq += 1
            else:
                platform.step(10.0)
        view = platform.rollout_view(context.rollout_id)
        if view["state"] in ("finalized", "discarded"):
            if view["state"] == "finalized":
                done.append(view["result"])
            context = None
        status = platform.poll_job(job_id, owner)
    raise AssertionError("job never finished")


class TestFleet:
    def test_one_robot_per_archetype(self, platform):
        assert sorted(platform.stations) == ["arx5-1", "ur5-1"]

    def test_tasks_share_their_archetype_robot(self, platform):
        assert platform.robot_for_task("put_cup_on_coaster") == "arx5-1"
        assert platform.robot_for_task("open_the_drawer") == "arx5-1"
        assert platform.robot_for_task("stack_color_blocks") == "ur5-1"

    def test_restricted_catalog(self, tmp_path):
        p = Platform(tmp_path / "d", task_ids=["stack_color_blocks"])
        assert sorted(p.stations) == ["ur5-1"]
        assert sorted(p.tasks) == ["stack_color_blocks"]


class TestApproval:
    def test_unapproved_job_is_never_called_up(self, tmp_path):
        platform = Platform(tmp_path / "d", auto_approve=False)
        status = platform.submit_job(USER, JobSubmission(("stack_color_blocks",), "m"))
        platform.run_for(2000.0)
        assert platform.poll_job(status.job_id, USER).status == "queued"

    def test_approval_lets_the_head_through(self, tmp_path):
        platform = Platform(tmp_path / "d", auto_approve=False)
        status = platform.submit_job(USER, JobSubmission(("stack_color_blocks",), "m"))
        platform.approve_job(status.job_id)
        pump_until(platform, lambda: platform.poll_job(
            status.job_id, USER).status == "notified", max_steps=50)


class TestJobLifecycle:
    def test_start_prepares_then_activates_a_rollout(self, platform):
        status = submit_and_start(platform, USER, ["stack_color_blocks"])
        assert status.status == "running"
        info = platform.current_rollout_of_job(status.job_id, USER)
        assert info["state"] == "preparing"
        assert info["rollout_index"] == 0
        assert info["prompt"]
        pump_until(platform, lambda: platform.current_rollout_of_job(
            status.job_id, USER)["state"] == "active", max_steps=100)
        assert platform.poll_job(status.job_id, USER).rollout_state == "active"

    def test_full_job_scores_ten_out_of_ten(self, platform):
        status = submit_and_start(platform, USER, ["stack_color_blocks"],
                                  display="stacker")
        policy = OraclePolicy(["stack_color_blocks"])
        policy.warm_up(("stack_color_blocks",))
        status, results = drive_job(platform, USER, status.job_id, policy)
        assert status.status == "completed"
        assert status.progress == {"stack_color_blocks": 10}
        assert len(results) == 10
        assert all(r["success"] for r in results)
        assert all(r["score"] == 10.0 for r in results)
        assert all(r["termination_reason"] == "completed" for r in results)

        rows = platform.result_rows()
        assert len(rows) == 1
        assert rows[0].model == "stacker"
        assert rows[0].sr == 100
        assert rows[0].score == 100

        episodes = platform.store.episode_ids("stack_color_blocks")
        assert len(episodes) == 10
        events = platform.store.load_events("stack_color_blocks", episodes[0])
        kinds = [e["label"] for e in events]
        assert kinds.count("grade") >= 1
        assert kinds[-1] == "result"
        assert events[-1]["data"]["success"] is True

    def test_revoke_discards_the_rollout_and_frees_the_robot(self, platform):
        first = submit_and_start(platform, USER, ["stack_color_blocks"])
        second = platform.submit_job(
            OTHER, JobSubmission(("stack_color_blocks",), "waiting"))
        info = platform.current_rollout_of_job(first.job_id, USER)
        platform.revoke_job(first.job_id, USER)
        assert platform.rollout_view(info["rollout_id"])["state"] == "discarded"
        pump_until(platform, lambda: platform.poll_job(
            second.job_id, OTHER).status == "notified", max_steps=50)

    def test_rollout_seeds_are_reproducible_across_platforms(self, tmp_path):
        scenes = []
        for d in ("a", "b"):
            p = Platform(tmp_path / d, auto_approve=True)
            status = submit_and_start(p, USER, ["stack_color_blocks"])
            scenes.append(p.scene_state("ur5-1"))
        assert scenes[0] == scenes[1]

    def test_budget_exhaustion_finalizes_the_rollout(self, platform):
        status = submit_and_start(platform, USER, ["stack_color_blocks"])
        pump_until(platform, lambda: platform.current_rollout_of_job(
            status.job_id, USER)["state"] == "active", max_steps=100)
        rid = platform.current_rollout_of_job(status.job_id, USER)["rollout_id"]
        budget = platform.tasks["stack_color_blocks"].time_budget_ms
        platform.run_for(budget + 2000.0, step_ms=1000.0)
        view = platform.rollout_view(rid)
        assert view["state"] == "finalized"
        assert view["result"]["termination_reason"] == "time_budget"
        assert view["result"]["success"] is False
        # the job moved on to the next rollout
        nxt = platform.current_rollout_of_job(status.job_id, USER)
        assert nxt["rollout_index"] == 1


class TestPractice:
    def test_owner_talks_to_the_robot_others_do_not(self, platform):
        info = platform.start_practice(USER, "stack_color_blocks")
        assert info["kind"] == "practice"
        robot = info["robot_id"]
        pump_until(platform, lambda: platform.rollout_view(
            info["rollout_id"])["state"] == "active", max_steps=100)
        bundle = platform.capture(robot, USER)
        assert bundle.capture_id >= 1
        with pytest.raises(PermissionDenied):
            platform.capture(robot, OTHER)
        # tester bypasses ownership
        platform.capture(robot, "anyone", tester=True)

    def test_owner_can_grade_their_practice(self, platform):
        info = platform.start_practice(USER, "stack_color_blocks")
        rid = info["rollout_id"]
        view = platform.apply_grade_event(rid, GradeEvent("retry"), USER)
        assert view["grade"]["successive_failed_retries"] == 1
        view = platform.apply_grade_event(rid, GradeEvent("finalize"), USER)
        assert view["state"] == "finalized"
        with pytest.raises(PermissionDenied):
            platform.apply_grade_event(rid, GradeEvent("retry"), OTHER)

    def test_practice_runs_out_of_its_shorter_budget(self, platform):
        info = platform.start_practice(USER, "stack_color_blocks")
        platform.run_for(PRACTICE_BUDGET_MS + 2000.0, step_ms=1000.0)
        view = platform.rollout_view(info["rollout_id"])
        assert view["state"] == "finalized"
        assert view["result"]["termination_reason"] == "time_budget"

    def test_practice_blocks_and_defers_jobs(self, platform):
        platform.start_practice(USER, "stack_color_blocks")
        with pytest.raises(RobotUnavailable):
            platform.start_practice(OTHER, "stack_color_blocks")
        status = platform.submit_job(
            OTHER, JobSubmission(("stack_color_blocks",), "m"))
        platform.run_for(500.0)
        assert platform.poll_job(status.job_id, OTHER).status == "queued"

    def test_practice_leaves_no_result_rows(self, platform):
        info = platform.start_practice(USER, "stack_color_blocks")
        platform.apply_grade_event(info["rollout_id"], GradeEvent("finalize"), USER)
        assert platform.result_rows() == []


class TestGradeEvents:
    def make_active_rollout(self, platform):
        status = submit_and_start(platform, USER, ["stack_color_blocks"])
        pump_until(platform, lambda: platform.current_rollout_of_job(
            status.job_id, USER)["state"] == "active", max_steps=100)
        return platform.current_rollout_of_job(status.job_id, USER)["rollout_id"]

    def test_users_cannot_grade_job_rollouts(self, platform):
        rid = self.make_active_rollout(platform)
        with pytest.raises(PermissionDenied):
            platform.apply_grade_event(rid, GradeEvent("stage_complete", stage=0), USER)

    def test_critical_prerequisites_gate_completion(self, platform):
        rid = self.make_active_rollout(platform)
        stages = platform.rollout_view(rid)["grade"]["stages"]
        # the stacking rubric opens with several critical stages
        assert stages[2]["critical"] and stages[0]["critical"]
        with pytest.raises(grading.GradeError):
            platform.apply_grade_event(
                rid, GradeEvent("stage_complete", stage=2), "tester", tester=True)
        # completing every stage in order finalizes the rollout on its own
        for i in range(len(stages)):
            platform.apply_grade_event(
                rid, GradeEvent("stage_complete", stage=i), "tester", tester=True)
        view = platform.rollout_view(rid)
        assert view["state"] == "finalized"
        assert view["result"]["termination_reason"] == "completed"
        assert view["result"]["success"] is True

    def test_manual_finalize_keeps_reason(self, platform):
        rid = self.make_active_rollout(platform)
        view = platform.apply_grade_event(
            rid, GradeEvent("finalize", reason="manual"), "tester", tester=True)
        assert view["result"]["termination_reason"] == "manual"
        with pytest.raises(grading.GradeError):
            platform.apply_grade_event(rid, GradeEvent("retry"), "tester", tester=True)

    def test_unknown_rollout(self, platform):
        with pytest.raises(UnknownRollout):
            platform.rollout_view("ro-999999")
        with pytest.raises(UnknownRollout):
            platform.apply_grade_event("ro-999999", GradeEvent("retry"),
                                       "tester", tester=True)

    def test_unknown_event_type(self, platform):
        rid = self.make_active_rollout(platform)
        with pytest.raises(grading.GradeError):
            platform.apply_grade_event(rid, GradeEvent("bless"), "tester", tester=True)


class TestMaintenance:
    def test_fault_parks_job_and_resume_reruns_the_rollout(self, platform):
        status = submit_and_start(platform, USER, ["stack_color_blocks"])
        pump_until(platform, lambda: platform.current_rollout_of_job(
            status.job_id, USER)["state"] == "active", max_steps=100)
        first = platform.current_rollout_of_job(status.job_id, USER)

        platform.set_maintenance("ur5-1", "cable snag")
        assert platform.poll_job(status.job_id, USER).status == "paused_maintenance"
        assert platform.rollout_view(first["rollout_id"])["state"] == "discarded"
        assert platform.stations["ur5-1"].gateway.maintenance

        resumed = platform.resume_robot("ur5-1")
        assert resumed.job_id == status.job_id
        again = platform.current_rollout_of_job(status.job_id, USER)
        assert again["rollout_index"] == first["rollout_index"]
        assert again["attempt"] == first["attempt"] + 1

        policy = OraclePolicy(["stack_color_blocks"])
        policy.warm_up(("stack_color_blocks",))
        final, results = drive_job(platform, USER, status.job_id, policy)
        assert final.status == "completed"
        assert len(results) == 10

    def test_maintenance_on_idle_robot_is_harmless(self, platform):
        platform.set_maintenance("ur5-1", "checkup")
        assert platform.stations["ur5-1"].gateway.maintenance
        assert platform.resume_robot("ur5-1") is None


class TestSessions:
    def test_round_trip(self, platform):
        created = platform.create_session("stack_color_blocks",
                                          ["alpha", "beta"], 6, seed=3)
        sid = created["session_id"]
        assert created["tokens"] == ["entry-A", "entry-B"]
        for r in created["rollouts"]:
            assert r["token"] in ("entry-A", "entry-B")
        for i in range(6):
            platform.grade_session_rollout(sid, i, True, 10.0)
        report = platform.finalize_session(sid)
        assert sorted(report["identities"].values()) == ["alpha", "beta"]
        assert report["ranking"][0]["rank"] == 1

    def test_unknown_task_and_session(self, platform):
        from robofleet.scheduler import SessionError
        with pytest.raises(SessionError):
            platform.create_session("no_such_task", ["a", "b"], 4, 0)
        with pytest.raises(UnknownRollout):
            platform.session_status("cs-404404")


class TestLiveResults:
    def test_failed_jobs_rank_below_successful_ones(self, platform):
        status = submit_and_start(platform, USER, ["put_cup_on_coaster"],
                                  display="good-model")
        policy = OraclePolicy(["put_cup_on_coaster"])
        policy.warm_up(("put_cup_on_coaster",))
        platform.run_for(300.0)
        status, results = drive_job(platform, USER, status.job_id, policy)
        assert status.status == "completed"

        bad = submit_and_start(platform, OTHER, ["put_cup_on_coaster"],
                               display="bad-model")
        for _ in range(10):
            pump_until(platform, lambda: (platform.current_rollout_of_job(
                bad.job_id, OTHER) or {}).get("state") == "active", max_steps=200)
            rid = platform.current_rollout_of_job(bad.job_id, OTHER)["rollout_id"]
            platform.apply_grade_event(rid, GradeEvent("finalize"),
                                       "tester", tester=True)
        assert platform.poll_job(bad.job_id, OTHER).status == "completed"

        board = platform.live_ranklist()
        assert [e["models"] for e in board] == [["good-model"], ["bad-model"]]
        assert board[0]["mean_sr"] == "100.0"
        assert board[1]["mean_sr"] == "0.0"
