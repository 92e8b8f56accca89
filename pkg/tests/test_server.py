"""HTTP surface: auth, wire envelopes, error mapping, and the SDK loop."""

import base64
import json
import re
from urllib.parse import urlsplit

import numpy as np
import pytest
from fastapi.testclient import TestClient

from robofleet.client import (
    ClientError,
    LoopConfig,
    OraclePolicy,
    PlatformClient,
    mock_test,
    run_job,
)
from robofleet.platform import Platform
from robofleet.protocol import (
    Action,
    ActionChunk,
    GradeEvent,
    JobStatus,
    JobSubmission,
    ObservationBundle,
    decode_message,
    decode_png,
    encode_message,
)
from robofleet.server import Pump, create_app


@pytest.fixture
def platform(tmp_path):
    return Platform(tmp_path / "data", auto_approve=True)


@pytest.fixture
def app(platform):
    return create_app(platform)


@pytest.fixture
def user(app):
    return PlatformClient("http://testserver", "user-key", http=TestClient(app))


@pytest.fixture
def tester(app):
    return PlatformClient("http://testserver", "tester-key", http=TestClient(app))


def activate_practice(platform, client, task_id="stack_color_blocks"):
    info = client.start_practice(task_id)
    while client.rollout_view(info["rollout_id"])["state"] != "active":
        platform.step(10.0)
    return info


class TestAuth:
    def test_missing_key(self, app):
        response = TestClient(app).get("/api/v1/health")
        assert response.status_code == 401

    def test_unknown_key(self, app):
        client = PlatformClient("http://testserver", "nope", http=TestClient(app))
        with pytest.raises(ClientError) as err:
            client.health()
        assert err.value.status_code == 401

    def test_user_cannot_use_tester_endpoints(self, user):
        for call in [
            lambda: user._request("POST", "/api/v1/jobs/job-000001/approve"),
            lambda: user._request("POST", "/api/v1/robots/ur5-1/maintenance"),
            lambda: user._request("POST", "/api/v1/sessions",
                                  {"task_id": "stack_color_blocks",
                                   "models": ["a", "b"], "rollouts": 4}),
            lambda: user._request("GET", "/api/v1/robots/ur5-1/overlay"
                                  "?task_id=stack_color_blocks&camera_id=main"
                                  "&alpha=0.5"),
        ]:
            with pytest.raises(ClientError) as err:
                call()
            assert err.value.status_code == 403

    def test_custom_key_table(self, platform):
        from robofleet.server import Caller
        app = create_app(platform, {"s3cret": Caller("s3cret", "tester")})
        ok = PlatformClient("http://testserver", "s3cret", http=TestClient(app))
        assert ok.health()["status"] == "ok"
        with pytest.raises(ClientError):
            PlatformClient("http://testserver", "user-key",
                           http=TestClient(app)).health()


class TestMeta:
    def test_health_reports_sim_time(self, platform, user):
        before = user.health()
        platform.step(10.0)
        after = user.health()
        assert after["sim_time_ns"] - before["sim_time_ns"] == 10_000_000

    def test_task_catalog(self, user):
        tasks = user.tasks()
        ids = sorted(t["task_id"] for t in tasks)
        assert ids == ["open_the_drawer", "put_cup_on_coaster",
                       "stack_color_blocks"]
        for t in tasks:
            assert t["prompt"]
            assert sum(s["points"] for s in t["rubric"]["stages"]) == 10.0

    def test_robot_roster(self, user):
        robots = {r["robot_id"]: r for r in user._request("GET", "/api/v1/robots")}
        assert robots["ur5-1"]["archetype"] == "ur5"
        assert robots["arx5-1"]["archetype"] == "arx5"
        assert "main" in robots["ur5-1"]["cameras"]
        assert robots["ur5-1"]["maintenance"] is False


class TestJobEndpoints:
    def test_submission_rides_the_wire_envelope(self, app):
        raw = TestClient(app)
        response = raw.post(
            "/api/v1/jobs", headers={"X-API-Key": "user-key"},
            content=encode_message(JobSubmission(("stack_color_blocks",), "m")))
        assert response.status_code == 200
        payload = response.json()
        assert payload["type"] == "JobStatus"
        status = decode_message(response.content)
        assert isinstance(status, JobStatus)
        assert status.status == "queued" and status.approved

    def test_poll_and_listing_visibility(self, user, tester):
        job = user.submit_job(("stack_color_blocks",), "mine")
        assert user.poll_job(job.job_id).job_id == job.job_id
        # the other role sees it too; a different user key would not
        assert any(j["body"]["job_id"] == job.job_id
                   for j in tester._request("GET", "/api/v1/jobs"))
        assert any(j["body"]["job_id"] == job.job_id
                   for j in user._request("GET", "/api/v1/jobs"))

    def test_unknown_job_is_404(self, user):
        with pytest.raises(ClientError) as err:
            user.poll_job("job-424242")
        assert err.value.status_code == 404

    def test_wrong_owner_is_403(self, platform, app, user):
        job = user.submit_job(("stack_color_blocks",), "m")
        other = PlatformClient("http://testserver", "tester-key",
                               http=TestClient(app))
        # tester may poll, but a start by a non-owner non-tester would 403;
        # simulate by registering a second user key
        from robofleet.server import Caller
        app2 = create_app(platform, {"u2": Caller("u2", "user")})
        second = PlatformClient("http://testserver", "u2", http=TestClient(app2))
        with pytest.raises(ClientError) as err:
            second.poll_job(job.job_id)
        assert err.value.status_code == 403
        assert other.poll_job(job.job_id).job_id == job.job_id

    def test_rollout_endpoint_turns_null_into_none(self, platform, user):
        job = user.submit_job(("stack_color_blocks",), "m")
        assert user.job_rollout(job.job_id) is None
        while user.poll_job(job.job_id).status != "notified":
            platform.step(10.0)
        user.start_job(job.job_id)
        info = user.job_rollout(job.job_id)
        assert info["rollout_index"] == 0
        assert info["task_id"] == "stack_color_blocks"

    def test_revoke_over_http(self, platform, user):
        job = user.submit_job(("stack_color_blocks",), "m")
        status = user.revoke_job(job.job_id)
        assert status.status == "revoked"


class TestRobotEndpoints:
    def test_capture_bundle_decodes(self, platform, user):
        info = activate_practice(platform, user)
        bundle = user.capture(info["robot_id"])
        assert isinstance(bundle, ObservationBundle)
        cams = {f.camera_id for f in bundle.frames}
        assert "main" in cams and "wrist" in cams
        assert bundle.frames[0].rgb.dtype == np.uint8
        assert len(bundle.proprio.joint_positions) == 6

    def test_capture_subset_of_cameras(self, platform, user):
        info = activate_practice(platform, user)
        bundle = user.capture(info["robot_id"], camera_ids=["main"])
        assert [f.camera_id for f in bundle.frames] == ["main"]

    def test_wrong_dof_chunk_is_422_with_violations(self, platform, app, user):
        info = activate_practice(platform, user)
        bad = ActionChunk(0, (Action.of([0.0] * 3, [1.0], 100.0),))
        raw = TestClient(app)
        response = raw.post(
            f"/api/v1/robots/{info['robot_id']}/enqueue",
            headers={"X-API-Key": "user-key"}, content=encode_message(bad))
        assert response.status_code == 422
        body = response.json()
        assert body["violations"]
        assert "joints" in body["violations"][0]

    def test_garbage_body_is_400(self, app, user, platform):
        info = activate_practice(platform, user)
        raw = TestClient(app)
        response = raw.post(
            f"/api/v1/robots/{info['robot_id']}/enqueue",
            headers={"X-API-Key": "user-key"}, content=b"not json at all")
        assert response.status_code == 400
        response = raw.post(
            f"/api/v1/robots/{info['robot_id']}/enqueue",
            headers={"X-API-Key": "user-key"},
            content=json.dumps({"type": "QueueState", "body": {}}).encode())
        assert response.status_code == 400

    def test_queue_reports_backlog(self, platform, user):
        info = activate_practice(platform, user)
        bundle = user.capture(info["robot_id"])
        act = Action.of(bundle.proprio.joint_positions,
                        bundle.proprio.gripper_openness, 500.0)
        ack = user.enqueue(info["robot_id"], ActionChunk(0, (act, act, act)))
        assert len(ack.action_ids) == 3
        assert user.queue_status(info["robot_id"]).length >= 2

    def test_scene_is_open_but_alignment_is_not(self, platform, user, tester):
        with pytest.raises(ClientError) as err:
            user._request("POST", "/api/v1/robots/ur5-1/scene",
                          {"task_id": "stack_color_blocks"})
        assert err.value.status_code == 403
        aligned = tester._request("POST", "/api/v1/robots/ur5-1/scene",
                                  {"task_id": "stack_color_blocks"})
        assert any(o["object_id"] == "yellow_block" for o in aligned["objects"])
        # any valid key may read the simulator's ground truth afterwards
        scene = user.scene("ur5-1")
        assert any(o["object_id"] == "yellow_block" for o in scene["objects"])

    def test_overlay_drops_to_zero_after_alignment(self, tester):
        path = ("/api/v1/robots/ur5-1/overlay?task_id=stack_color_blocks"
                "&camera_id=main&alpha=0.4")
        before = tester._request("GET", path)
        image = decode_png(base64.b64decode(before["image_png_b64"]))
        assert image.ndim == 3 and image.shape[2] == 3
        tester._request("POST", "/api/v1/robots/ur5-1/scene",
                        {"task_id": "stack_color_blocks"})
        after = tester._request("GET", path)
        assert after["match_score"] == 0.0

    def test_maintenance_round_trip(self, platform, user, tester):
        job = user.submit_job(("stack_color_blocks",), "m")
        while user.poll_job(job.job_id).status != "notified":
            platform.step(10.0)
        user.start_job(job.job_id)
        tester._request("POST", "/api/v1/robots/ur5-1/maintenance",
                        {"reason": "estop"})
        assert user.poll_job(job.job_id).status == "paused_maintenance"
        out = tester._request("POST", "/api/v1/robots/ur5-1/resume")
        assert out["resumed_job"] == job.job_id
        assert user.poll_job(job.job_id).status == "running"


class TestGradeEndpoints:
    def test_owner_grades_practice_over_http(self, platform, user):
        info = activate_practice(platform, user)
        view = user.grade_event(info["rollout_id"], GradeEvent("retry"))
        assert view["grade"]["successive_failed_retries"] == 1
        view = user.grade_event(info["rollout_id"], GradeEvent("finalize"))
        assert view["state"] == "finalized"

    def test_tester_grades_any_rollout(self, platform, user, tester):
        info = activate_practice(platform, user)
        view = tester.grade_event(info["rollout_id"],
                                  GradeEvent("stage_complete", stage=0))
        assert view["grade"]["stages"][0]["completed"]

    def test_unknown_rollout_404(self, tester):
        with pytest.raises(ClientError) as err:
            tester.rollout_view("ro-999000")
        assert err.value.status_code == 404

    def test_rollout_listing_is_tester_only(self, platform, user, tester):
        info = activate_practice(platform, user)
        views = tester._request("GET", "/api/v1/rollouts?state=active")
        assert any(v["rollout_id"] == info["rollout_id"] for v in views)
        with pytest.raises(ClientError) as err:
            user._request("GET", "/api/v1/rollouts")
        assert err.value.status_code == 403


class TestSessionEndpoints:
    def test_blind_round_trip(self, tester):
        created = tester._request(
            "POST", "/api/v1/sessions",
            {"task_id": "stack_color_blocks", "models": ["north", "south"],
             "rollouts": 4, "seed": 5})
        sid = created["session_id"]
        blob = json.dumps(created)
        assert "north" not in blob and "south" not in blob
        listing = tester._request("GET", "/api/v1/sessions")
        assert any(s["session_id"] == sid for s in listing)
        for i in range(4):
            tester._request(
                f"POST", f"/api/v1/sessions/{sid}/rollouts/{i}/grade",
                {"success": True, "score": 10.0})
        final = tester._request("POST", f"/api/v1/sessions/{sid}/finalize")
        assert sorted(final["identities"].values()) == ["north", "south"]

    def test_grade_validation_maps_to_400(self, tester):
        created = tester._request(
            "POST", "/api/v1/sessions",
            {"task_id": "stack_color_blocks", "models": ["a", "b"],
             "rollouts": 4, "seed": 1})
        with pytest.raises(ClientError) as err:
            tester._request(
                "POST",
                f"/api/v1/sessions/{created['session_id']}/rollouts/99/grade",
                {"success": True, "score": 10.0})
        assert err.value.status_code == 400


class RecordingHttp:
    """Logs every (method, path) the SDK sends before delegating."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = []

    def request(self, method, url, **kwargs):
        self.calls.append((method, urlsplit(str(url)).path))
        return self.inner.request(method, url, **kwargs)

    def close(self):
        self.inner.close()


class AuditedOracle(OraclePolicy):
    """Oracle that keeps every observation it was shown."""

    def __init__(self, task_ids):
        super().__init__(task_ids)
        self.bundles = []

    def infer(self, bundle, context):
        self.bundles.append(bundle)
        return super().infer(bundle, context)


# everything the job loop is allowed to touch
LOOP_SURFACE = [
    ("POST", r"/api/v1/jobs"),
    ("GET", r"/api/v1/jobs/job-\d+"),
    ("POST", r"/api/v1/jobs/job-\d+/start"),
    ("GET", r"/api/v1/jobs/job-\d+/rollout"),
    ("GET", r"/api/v1/rollouts/ro-\d+"),
    ("GET", r"/api/v1/robots/[a-z0-9]+-\d+/queue"),
    ("GET", r"/api/v1/robots/[a-z0-9]+-\d+/scene"),
    ("POST", r"/api/v1/robots/[a-z0-9]+-\d+/capture"),
    ("POST", r"/api/v1/robots/[a-z0-9]+-\d+/enqueue"),
]


class TestSdkContract:
    def test_audit_steady_state_and_traffic_invariants(self, tmp_path):
        platform = Platform(tmp_path / "data", auto_approve=True)
        app = create_app(platform)
        pump = Pump(platform, time_scale=100.0)
        pump.start()
        try:
            http = RecordingHttp(TestClient(app))
            user = PlatformClient("http://testserver", "user-key", http=http)
            policy = AuditedOracle(["put_cup_on_coaster"])
            status, transcripts = run_job(
                user, policy, ("put_cup_on_coaster",),
                LoopConfig(max_rollout_duration_s=120.0))
            assert status.status == "completed"
        finally:
            pump.stop()

        # audit completeness: every action the robot executed traces back
        # to an id the client holds a receipt for
        executed = platform.stations["arx5-1"].gateway.executed_ids
        acked = {aid for t in transcripts for aid in t.action_ids}
        assert executed and set(executed) <= acked

        # steady state: draining before capture means the queue looks empty
        # in every observation the policy acted on
        assert policy.bundles
        assert all(b.queue.length == 0 for b in policy.bundles)

        # the loop never strays off its documented surface
        assert http.calls
        for method, path in http.calls:
            assert any(m == method and re.fullmatch(p, path)
                       for m, p in LOOP_SURFACE), f"off-surface {method} {path}"


class TestFullLoopOverHttp:
    def test_oracle_job_completes_and_ranks(self, tmp_path):
        platform = Platform(tmp_path / "data", auto_approve=True)
        app = create_app(platform)
        pump = Pump(platform, time_scale=100.0)
        pump.start()
        try:
            user = PlatformClient("http://testserver", "user-key",
                                  http=TestClient(app))
            policy = OraclePolicy(["put_cup_on_coaster"])
            status, transcripts = run_job(
                user, policy, ("put_cup_on_coaster",),
                LoopConfig(max_rollout_duration_s=120.0))
            assert status.status == "completed"
            assert len(transcripts) == 10
            assert all(t.result["success"] for t in transcripts)
            assert all(t.capture_ids and t.action_ids for t in transcripts)

            board = user.ranklist()
            assert board[0]["models"] == [policy.display_name]
            assert board[0]["mean_sr"] == "100.0"
            rows = user._request("GET", "/api/v1/results")
            assert rows[0]["task_id"] == "put_cup_on_coaster"

            report = mock_test(user, "stack_color_blocks")
            assert all(r["ok"] for r in report), report
        finally:
            pump.stop()
