"""Client SDK: run a policy against the platform over HTTP.

The platform never pulls inference; this side polls for its job,
captures observations, runs the policy, and pushes action chunks. A
transcript of capture and action ids comes back with every rollout so
runs can be joined against the server's own logs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

import httpx
import numpy as np

from .kinematics import CHAINS, home_pose, solve_ik
from .protocol import (
    ARCHETYPES,
    Action,
    ActionChunk,
    EnqueueAck,
    GradeEvent,
    JobStatus,
    JobSubmission,
    ObservationBundle,
    QueueState,
    decode_message,
    encode_message,
)
from .tasks import load_task, oracle_script


class ClientError(Exception):
    def __init__(self, status_code: int, detail: str):
        super().__init__(f"HTTP {status_code}: {detail}")
        self.status_code = status_code
        self.detail = detail


@dataclass
class LoopConfig:
    drain_before_capture: bool = True
    poll_interval_s: float = 0.02
    max_rollout_duration_s: float = 300.0
    chunk_size: int = 4


@dataclass
class RolloutContext:
    job_id: Optional[str]
    rollout_id: str
    task_id: str
    rollout_index: int
    robot_id: str
    prompt: str
    scene: dict


@dataclass
class RolloutTranscript:
    rollout_id: str
    task_id: str
    rollout_index: int
    capture_ids: list[int] = field(default_factory=list)
    action_ids: list[int] = field(default_factory=list)
    result: Optional[dict] = None


class PolicyAdapter(Protocol):
    display_name: str

    def warm_up(self, task_ids: tuple[str, ...]) -> None: ...

    def begin_rollout(self, context: RolloutContext) -> None: ...

    def infer(self, bundle: ObservationBundle,
              context: RolloutContext) -> list[Action]: ...


class PlatformClient:
    """Typed HTTP wrapper; payloads ride the wire envelope."""

    def __init__(self, base_url: str, api_key: str,
                 http: Optional[httpx.Client] = None):
        self.base_url = base_url.rstrip("/")
        self._http = http or httpx.Client(timeout=30.0)
        self._headers = {"X-API-Key": api_key,
                         "Content-Type": "application/json"}

    def close(self) -> None:
        self._http.close()

    def _raw(self, method: str, path: str, body: Optional[bytes] = None) -> httpx.Response:
        response = self._http.request(
            method, self.base_url + path, content=body, headers=self._headers)
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise ClientError(response.status_code, str(detail))
        return response

    def _request(self, method: str, path: str, payload=None):
        """Plain-JSON endpoint; payload may be a wire dataclass or a dict."""
        if payload is None:
            body = None
        elif isinstance(payload, (dict, list)):
            body = json.dumps(payload).encode()
        else:
            body = encode_message(payload)
        response = self._raw(method, path, body)
        return response.json() if response.content else None

    def _wire(self, method: str, path: str, payload=None):
        """Endpoint whose response is a wire envelope."""
        if payload is None:
            body = None
        elif isinstance(payload, (dict, list)):
            body = json.dumps(payload).encode()
        else:
            body = encode_message(payload)
        response = self._raw(method, path, body)
        return decode_message(response.content)

    # jobs

    def submit_job(self, task_set, display_name: str) -> JobStatus:
        return self._wire("POST", "/api/v1/jobs",
                          JobSubmission(tuple(task_set), display_name))

    def poll_job(self, job_id: str) -> JobStatus:
        return self._wire("GET", f"/api/v1/jobs/{job_id}")

    def approve_job(self, job_id: str) -> JobStatus:
        return self._wire("POST", f"/api/v1/jobs/{job_id}/approve")

    def start_job(self, job_id: str) -> JobStatus:
        return self._wire("POST", f"/api/v1/jobs/{job_id}/start")

    def revoke_job(self, job_id: str) -> JobStatus:
        return self._wire("POST", f"/api/v1/jobs/{job_id}/revoke")

    def job_rollout(self, job_id: str) -> Optional[dict]:
        return self._request("GET", f"/api/v1/jobs/{job_id}/rollout")

    # robot I/O

    def capture(self, robot_id: str, camera_ids=None) -> ObservationBundle:
        return self._wire("POST", f"/api/v1/robots/{robot_id}/capture",
                          {"camera_ids": camera_ids})

    def enqueue(self, robot_id: str, chunk: ActionChunk) -> EnqueueAck:
        return self._wire("POST", f"/api/v1/robots/{robot_id}/enqueue", chunk)

    def queue_status(self, robot_id: str) -> QueueState:
        return self._wire("GET", f"/api/v1/robots/{robot_id}/queue")

    def scene(self, robot_id: str) -> dict:
        return self._request("GET", f"/api/v1/robots/{robot_id}/scene")

    # rollouts and grading

    def rollout_view(self, rollout_id: str) -> dict:
        return self._request("GET", f"/api/v1/rollouts/{rollout_id}")

    def grade_event(self, rollout_id: str, event: GradeEvent) -> dict:
        return self._request("POST", f"/api/v1/rollouts/{rollout_id}/events", event)

    def start_practice(self, task_id: str) -> dict:
        return self._request("POST", "/api/v1/practice", {"task_id": task_id})

    def tasks(self) -> list[dict]:
        return self._request("GET", "/api/v1/tasks")

    def health(self) -> dict:
        return self._request("GET", "/api/v1/health")

    def ranklist(self) -> list[dict]:
        return self._request("GET", "/api/v1/analytics/ranklist")


# -- the capture/infer/enqueue loop ------------------------------------


def await_job(client: PlatformClient, policy: PolicyAdapter, job_id: str,
              config: LoopConfig, deadline_s: float = 600.0) -> JobStatus:
    """Poll until the platform calls the job up, warming up exactly once."""
    warmed = False
    waited = 0.0
    while True:
        status = client.poll_job(job_id)
        if status.status in ("completed", "revoked"):
            return status
        if status.status == "notified":
            if not warmed:
                policy.warm_up(status.task_set)
                warmed = True
            return client.start_job(job_id)
        if status.status == "running":
            if not warmed:
                policy.warm_up(status.task_set)
                warmed = True
            return status
        time.sleep(config.poll_interval_s)
        waited += config.poll_interval_s
        if waited > deadline_s:
            raise TimeoutError(f"job {job_id} still {status.status} after {deadline_s}s")


def _wait_for_drain(client: PlatformClient, robot_id: str, config: LoopConfig,
                    deadline_s: float) -> None:
    waited = 0.0
    while client.queue_status(robot_id).length > 0:
        time.sleep(config.poll_interval_s)
        waited += config.poll_interval_s
        if waited > deadline_s:
            raise TimeoutError(f"queue on {robot_id} never drained")


def run_rollout(client: PlatformClient, policy: PolicyAdapter,
                context: RolloutContext, config: LoopConfig) -> RolloutTranscript:
    transcript = RolloutTranscript(context.rollout_id, context.task_id,
                                   context.rollout_index)
    policy.begin_rollout(context)
    seq = 0
    started = time.monotonic()
    while True:
        if time.monotonic() - started > config.max_rollout_duration_s:
            raise TimeoutError(f"rollout {context.rollout_id} exceeded "
                               f"{config.max_rollout_duration_s}s")
        view = client.rollout_view(context.rollout_id)
        if view["state"] in ("finalized", "discarded"):
            transcript.result = view.get("result")
            return transcript
        if view["state"] != "active":
            time.sleep(config.poll_interval_s)
            continue
        try:
            if config.drain_before_capture:
                _wait_for_drain(client, context.robot_id, config,
                                config.max_rollout_duration_s)
            bundle = client.capture(context.robot_id)
            transcript.capture_ids.append(bundle.capture_id)
            actions = policy.infer(bundle, context)
            if not actions:
                time.sleep(config.poll_interval_s)
                continue
            ack = client.enqueue(context.robot_id,
                                 ActionChunk(seq, tuple(actions)))
            transcript.action_ids.extend(ack.action_ids)
            seq += 1
        except ClientError as exc:
            # the rollout can close server-side between our state check and
            # the robot call; re-check instead of failing
            if exc.status_code in (403, 409):
                time.sleep(config.poll_interval_s)
                continue
            raise


def run_job(client: PlatformClient, policy: PolicyAdapter,
            task_set, config: Optional[LoopConfig] = None,
            submit_deadline_s: float = 600.0) -> tuple[JobStatus, list[RolloutTranscript]]:
    config = config or LoopConfig()
    job = client.submit_job(task_set, policy.display_name)
    status = await_job(client, policy, job.job_id, config, submit_deadline_s)
    transcripts: list[RolloutTranscript] = []
    seen: set[str] = set()
    idle = 0.0
    while status.status == "running":
        info = client.job_rollout(job.job_id)
        if info is None or info["rollout_id"] in seen:
            time.sleep(config.poll_interval_s)
            idle += config.poll_interval_s
            if idle > config.max_rollout_duration_s:
                raise TimeoutError("job stopped producing rollouts")
            status = client.poll_job(job.job_id)
            continue
        idle = 0.0
        seen.add(info["rollout_id"])
        context = RolloutContext(
            job_id=job.job_id, rollout_id=info["rollout_id"],
            task_id=info["task_id"], rollout_index=info["rollout_index"],
            robot_id=info["robot_id"],
            prompt=info.get("prompt", ""),
            scene=client.scene(info["robot_id"]))
        transcripts.append(run_rollout(client, policy, context, config))
        status = client.poll_job(job.job_id)
    return status, transcripts


def totals_from_transcripts(transcripts: list[RolloutTranscript]) -> dict[str, dict]:
    per_task: dict[str, dict] = {}
    for t in transcripts:
        if t.result is None:
            continue
        entry = per_task.setdefault(t.task_id, {"rollouts": 0, "successes": 0,
                                                "score": 0.0})
        entry["rollouts"] += 1
        entry["successes"] += bool(t.result["success"])
        entry["score"] += t.result["score"]
    for entry in per_task.values():
        entry["success_rate"] = 10.0 * entry["successes"]
    return per_task


# -- built-in policies -------------------------------------------------


class OraclePolicy:
    """Scripted expert for the bundled tasks: reads the simulator's own
    scene ground truth, plans waypoints, and solves joint targets."""

    def __init__(self, task_ids, chunk_size: int = 4):
        self.task_ids = tuple(task_ids)
        self.display_name = "oracle:" + ",".join(self.task_ids)
        self.chunk_size = chunk_size
        self._pending: list[Action] = []
        self._tasks = {}

    def warm_up(self, task_ids) -> None:
        for task_id in task_ids:
            self._tasks[task_id] = load_task(task_id)

    def begin_rollout(self, context: RolloutContext) -> None:
        task = self._tasks.get(context.task_id) or load_task(context.task_id)
        self._tasks[context.task_id] = task
        arch = task.archetype
        info = ARCHETYPES[arch]
        chain = CHAINS[arch][0]
        dof = info.dof_per_arm
        q0 = np.array(home_pose(arch), dtype=float)
        q = q0.copy()
        actions = []
        for wp in oracle_script(context.task_id, context.scene):
            full = q.copy()
            if wp["kind"] == "home":
                full = q0.copy()
            else:
                full[:dof] = solve_ik(chain, wp["position"], q[:dof])
            grip = [float(wp["gripper"])] + [1.0] * (info.arms - 1)
            actions.append(Action.of(full, grip, wp["duration_ms"]))
            q = full
        self._pending = actions

    def infer(self, bundle: ObservationBundle,
              context: RolloutContext) -> list[Action]:
        chunk, self._pending = (self._pending[:self.chunk_size],
                                self._pending[self.chunk_size:])
        return chunk


class HoldPolicy:
    """Does nothing: re-targets the current pose once, then waits."""

    def __init__(self):
        self.display_name = "hold"
        self._sent = False

    def warm_up(self, task_ids) -> None:
        pass

    def begin_rollout(self, context: RolloutContext) -> None:
        self._sent = False

    def infer(self, bundle, context) -> list[Action]:
        if self._sent:
            return []
        self._sent = True
        return [Action.of(bundle.proprio.joint_positions,
                          bundle.proprio.gripper_openness, 200.0)]


def make_policy(spec: str) -> PolicyAdapter:
    kind, _, rest = spec.partition(":")
    if kind == "oracle":
        tasks = [t for t in rest.split(",") if t]
        if not tasks:
            raise ValueError("oracle policy needs tasks, e.g. oracle:stack_color_blocks")
        return OraclePolicy(tasks)
    if kind == "hold":
        return HoldPolicy()
    raise ValueError(f"unknown policy {spec!r}")


# -- endpoint self-test ------------------------------------------------


def mock_test(client: PlatformClient, task_id: str) -> list[dict]:
    """Exercise the integration surface end to end on a practice rollout."""
    report = []

    def check(endpoint, fn):
        t0 = time.perf_counter()
        try:
            detail = fn()
            report.append({"endpoint": endpoint, "ok": True,
                           "latency_ms": (time.perf_counter() - t0) * 1e3,
                           "detail": detail})
        except Exception as exc:
            report.append({"endpoint": endpoint, "ok": False,
                           "latency_ms": (time.perf_counter() - t0) * 1e3,
                           "detail": str(exc)})

    practice = {}
    check("practice", lambda: practice.update(client.start_practice(task_id))
          or f"rollout {practice['rollout_id']}")
    if not practice:
        return report
    robot_id = practice["robot_id"]
    rollout_id = practice["rollout_id"]

    bundle_box = {}

    def do_capture():
        bundle = client.capture(robot_id)
        bundle_box["bundle"] = bundle
        cams = sorted(f.camera_id for f in bundle.frames)
        return f"capture {bundle.capture_id}, cameras {cams}"

    check("capture", do_capture)

    def do_enqueue():
        bundle = bundle_box["bundle"]
        action = Action.of(bundle.proprio.joint_positions,
                           bundle.proprio.gripper_openness, 50.0)
        ack = client.enqueue(robot_id, ActionChunk(0, (action,)))
        return f"action ids {list(ack.action_ids)}"

    check("enqueue", do_enqueue)
    check("queue_status",
          lambda: f"length {client.queue_status(robot_id).length}")

    def do_grading():
        before = client.rollout_view(rollout_id)
        client.grade_event(rollout_id, GradeEvent("retry"))
        after = client.rollout_view(rollout_id)
        gained = (after["grade"]["successive_failed_retries"]
                  - before["grade"]["successive_failed_retries"])
        if gained != 1:
            raise RuntimeError("retry did not register")
        closed = client.grade_event(rollout_id, GradeEvent("finalize"))
        if not closed["grade"]["terminated"]:
            raise RuntimeError("finalize did not close the rollout")
        return "retry + finalize round-trip"

    check("grading", do_grading)
    return report


# -- CLI ---------------------------------------------------------------


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="client", description="Drive a policy against the platform.")
    parser.add_argument("command", choices=["run", "mock-test"])
    parser.add_argument("--endpoint", "--server", dest="endpoint",
                        default="http://127.0.0.1:8123")
    parser.add_argument("--key", default="user-key")
    parser.add_argument("--policy", default=None,
                        help="e.g. oracle:stack_color_blocks")
    parser.add_argument("--task", default="stack_color_blocks",
                        help="task for mock-test")
    parser.add_argument("--chunk-size", type=int, default=4)
    args = parser.parse_args(argv)

    client = PlatformClient(args.endpoint, args.key)
    try:
        if args.command == "mock-test":
            report = mock_test(client, args.task)
            failed = [r for r in report if not r["ok"]]
            for r in report:
                mark = "PASS" if r["ok"] else "FAIL"
                print(f"{mark} {r['endpoint']:<14} {r['latency_ms']:8.1f} ms  "
                      f"{r['detail']}")
            return 1 if failed else 0

        if not args.policy:
            parser.error("run needs --policy")
        policy = make_policy(args.policy)
        if isinstance(policy, OraclePolicy):
            policy.chunk_size = args.chunk_size
            task_set = policy.task_ids
        else:
            task_set = (args.task,)
        status, transcripts = run_job(client, policy, task_set)
        print(f"job {status.job_id}: {status.status}")
        totals = totals_from_transcripts(transcripts)
        exit_ok = status.status == "completed"
        for task_id, entry in sorted(totals.items()):
            print(f"task {task_id}: rollouts {entry['rollouts']} "
                  f"SR {entry['success_rate']:.1f} score {entry['score']:.1f}")
        return 0 if exit_ok else 1
    finally:
        client.close()


if __name__ == "__main__":
    sys.exit(main())
