"""HTTP surface over the platform core.

Auth is a static key table: the X-API-Key header names the caller, and
the key's role (user or tester) gates operator endpoints. Progress,
observations, and actions ride the wire envelope; bookkeeping endpoints
speak plain JSON.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import grading
from .gateway import GatewayError, MaintenanceMode, QueueFull, RejectedChunk
from .platform import Platform, PlatformError, RobotUnavailable, UnknownRollout
from .protocol import (
    ActionChunk,
    DecodeError,
    GradeEvent,
    JobSubmission,
    decode_message,
    encode_message,
    encode_png,
)
from .scheduler import (
    InvalidTransition,
    NotNextInLine,
    PermissionDenied,
    RobotBusy,
    SchedulerError,
    SessionError,
    UnknownJob,
)
from .store import StoreError
from .tasks import UnknownTask, build_scene


@dataclass(frozen=True)
class Caller:
    identity: str
    role: str

    @property
    def tester(self) -> bool:
        return self.role == "tester"


DEFAULT_KEYS = {
    "user-key": Caller("user-key", "user"),
    "tester-key": Caller("tester-key", "tester"),
}


class HttpError(Exception):
    def __init__(self, status_code: int, detail: str):
        self.status_code = status_code
        self.detail = detail


# Most specific class wins: handler lookup walks the exception's MRO.
_STATUS_OF = [
    (DecodeError, 400),
    (PermissionDenied, 403),
    (UnknownJob, 404), (UnknownRollout, 404), (UnknownTask, 404), (KeyError, 404),
    (RejectedChunk, 422),
    (QueueFull, 409), (MaintenanceMode, 409), (RobotBusy, 409),
    (NotNextInLine, 409), (InvalidTransition, 409), (RobotUnavailable, 409),
    (SchedulerError, 400), (SessionError, 400), (grading.GradeError, 400),
    (StoreError, 400), (PlatformError, 400), (GatewayError, 400),
    (ValueError, 400),
]


def _register_error_handlers(app: FastAPI) -> None:
    async def http_error(request, exc: HttpError):
        return JSONResponse({"detail": exc.detail}, status_code=exc.status_code)

    app.add_exception_handler(HttpError, http_error)

    def handler_for(code: int):
        async def handle(request, exc: Exception):
            body = {"detail": str(exc)}
            if isinstance(exc, RejectedChunk):
                body["violations"] = list(exc.violations)
            return JSONResponse(body, status_code=code)
        return handle

    for exc_type, code in _STATUS_OF:
        app.add_exception_handler(exc_type, handler_for(code))


def _wire_response(value) -> Response:
    return Response(content=encode_message(value), media_type="application/json")


def create_app(platform: Platform,
               keys: Optional[dict[str, Caller]] = None) -> FastAPI:
    keys = keys or DEFAULT_KEYS
    app = FastAPI(title="robot fleet evaluation platform")

    def auth(request: Request) -> Caller:
        key = request.headers.get("X-API-Key")
        if not key:
            raise HttpError(401, "missing X-API-Key header")
        caller = keys.get(key)
        if caller is None:
            raise HttpError(401, "unknown api key")
        return caller

    def require_tester(caller: Caller) -> None:
        if not caller.tester:
            raise HttpError(403, "tester role required")

    _register_error_handlers(app)

    async def wire_body(request: Request, expected_type):
        value = decode_message(await request.body())
        if not isinstance(value, expected_type):
            raise HttpError(400, f"expected a {expected_type.__name__} envelope")
        return value

    # -- meta ----------------------------------------------------------

    @app.get("/api/v1/health")
    async def health(request: Request):
        auth(request)
        return {"status": "ok", "sim_time_ns": platform.clock.now()}

    @app.get("/api/v1/tasks")
    async def tasks(request: Request):
        auth(request)
        return [t.to_public_dict() for t in platform.tasks.values()]

    # -- jobs ----------------------------------------------------------

    @app.post("/api/v1/jobs")
    async def submit_job(request: Request):
        caller = auth(request)
        submission = await wire_body(request, JobSubmission)
        return _wire_response(platform.submit_job(caller.identity, submission))

    @app.get("/api/v1/jobs")
    async def list_jobs(request: Request):
        caller = auth(request)
        jobs = platform.scheduler.all_jobs()
        if not caller.tester:
            jobs = [j for j in jobs
                    if platform.scheduler.owner_of(j.job_id) == caller.identity]
        return [json.loads(encode_message(j)) for j in jobs]

    @app.get("/api/v1/jobs/{job_id}")
    async def poll_job(job_id: str, request: Request):
        caller = auth(request)
        return _wire_response(
            platform.poll_job(job_id, caller.identity, caller.tester))

    @app.post("/api/v1/jobs/{job_id}/approve")
    async def approve_job(job_id: str, request: Request):
        require_tester(auth(request))
        return _wire_response(platform.approve_job(job_id))

    @app.post("/api/v1/jobs/{job_id}/start")
    async def start_job(job_id: str, request: Request):
        caller = auth(request)
        return _wire_response(
            platform.start_job(job_id, caller.identity, caller.tester))

    @app.post("/api/v1/jobs/{job_id}/revoke")
    async def revoke_job(job_id: str, request: Request):
        caller = auth(request)
        return _wire_response(
            platform.revoke_job(job_id, caller.identity, caller.tester))

    @app.get("/api/v1/jobs/{job_id}/rollout")
    async def job_rollout(job_id: str, request: Request):
        caller = auth(request)
        return platform.current_rollout_of_job(
            job_id, caller.identity, caller.tester)

    # -- robot I/O -----------------------------------------------------

    @app.post("/api/v1/robots/{robot_id}/capture")
    async def capture(robot_id: str, request: Request):
        caller = auth(request)
        body = await request.json() if (await request.body()) else {}
        bundle = platform.capture(robot_id, caller.identity, caller.tester,
                                  camera_ids=body.get("camera_ids"))
        return _wire_response(bundle)

    @app.post("/api/v1/robots/{robot_id}/enqueue")
    async def enqueue(robot_id: str, request: Request):
        caller = auth(request)
        chunk = await wire_body(request, ActionChunk)
        return _wire_response(
            platform.enqueue(robot_id, caller.identity, chunk, caller.tester))

    @app.get("/api/v1/robots/{robot_id}/queue")
    async def queue_status(robot_id: str, request: Request):
        caller = auth(request)
        return _wire_response(
            platform.queue_status(robot_id, caller.identity, caller.tester))

    @app.get("/api/v1/robots/{robot_id}/scene")
    async def scene(robot_id: str, request: Request):
        auth(request)  # simulation ground truth is open to any valid key
        return platform.scene_state(robot_id)

    @app.post("/api/v1/robots/{robot_id}/scene")
    async def align_scene(robot_id: str, request: Request):
        require_tester(auth(request))
        body = await request.json()
        return platform.align_scene(robot_id, body["task_id"],
                                    poses=body.get("poses"))

    @app.get("/api/v1/robots/{robot_id}/overlay")
    async def overlay(request: Request, robot_id: str, task_id: str,
                      camera_id: str, alpha: float = 0.5):
        require_tester(auth(request))
        blend, score = platform.overlay(robot_id, task_id, camera_id, alpha)
        return {
            "robot_id": robot_id, "task_id": task_id, "camera_id": camera_id,
            "alpha": alpha, "match_score": score,
            "image_png_b64": base64.b64encode(encode_png(blend)).decode(),
        }

    @app.post("/api/v1/robots/{robot_id}/maintenance")
    async def set_maintenance(robot_id: str, request: Request):
        require_tester(auth(request))
        body = await request.json() if (await request.body()) else {}
        platform.set_maintenance(robot_id, body.get("reason", "maintenance"))
        return {"robot_id": robot_id, "maintenance": True}

    @app.post("/api/v1/robots/{robot_id}/resume")
    async def resume(robot_id: str, request: Request):
        require_tester(auth(request))
        status = platform.resume_robot(robot_id)
        return {"robot_id": robot_id, "maintenance": False,
                "resumed_job": None if status is None else status.job_id}

    @app.get("/api/v1/robots")
    async def robots(request: Request):
        auth(request)
        out = []
        for station in platform.stations.values():
            out.append({
                "robot_id": station.robot_id,
                "archetype": station.spec.archetype.value,
                "control_rate_hz": station.spec.control_rate_hz,
                "cameras": [c.camera_id for c in station.spec.cameras],
                "maintenance": station.gateway.maintenance,
                "current_rollout": station.current_rollout,
            })
        return out

    # -- practice ------------------------------------------------------

    @app.post("/api/v1/practice")
    async def practice(request: Request):
        caller = auth(request)
        body = await request.json()
        return platform.start_practice(caller.identity, body["task_id"])

    # -- rollouts and grading ------------------------------------------

    @app.get("/api/v1/rollouts/{rollout_id}")
    async def rollout_view(rollout_id: str, request: Request):
        auth(request)
        return platform.rollout_view(rollout_id)

    @app.post("/api/v1/rollouts/{rollout_id}/events")
    async def grade_rollout(rollout_id: str, request: Request):
        caller = auth(request)
        event = await wire_body(request, GradeEvent)
        return platform.apply_grade_event(
            rollout_id, event, caller.identity, caller.tester)

    @app.get("/api/v1/rollouts")
    async def rollouts(request: Request, state: Optional[str] = None):
        require_tester(auth(request))
        views = [platform.rollout_view(rid) for rid in platform.rollouts]
        if state is not None:
            views = [v for v in views if v["state"] == state]
        return views

    # -- comparative sessions ------------------------------------------

    @app.post("/api/v1/sessions")
    async def create_session(request: Request):
        require_tester(auth(request))
        body = await request.json()
        return platform.create_session(
            body["task_id"], list(body["models"]),
            int(body.get("rollouts", 10)), int(body.get("seed", 0)))

    @app.get("/api/v1/sessions")
    async def list_sessions(request: Request):
        require_tester(auth(request))
        return [platform.session_status(sid) for sid in platform.sessions]

    @app.get("/api/v1/sessions/{session_id}")
    async def session_status(session_id: str, request: Request):
        require_tester(auth(request))
        return platform.session_status(session_id)

    @app.post("/api/v1/sessions/{session_id}/rollouts/{index}/grade")
    async def grade_session(session_id: str, index: int, request: Request):
        require_tester(auth(request))
        body = await request.json()
        return platform.grade_session_rollout(
            session_id, index, bool(body["success"]), float(body["score"]))

    @app.post("/api/v1/sessions/{session_id}/finalize")
    async def finalize_session(session_id: str, request: Request):
        require_tester(auth(request))
        return platform.finalize_session(session_id)

    # -- results -------------------------------------------------------

    @app.get("/api/v1/results")
    async def results(request: Request):
        auth(request)
        return [{"model": r.model, "task_id": r.task_id,
                 "sr": str(r.sr), "score": str(r.score)}
                for r in platform.result_rows()]

    @app.get("/api/v1/analytics/ranklist")
    async def ranklist(request: Request):
        auth(request)
        return platform.live_ranklist()

    return app


class Pump:
    """Background thread advancing simulated time faster than real time."""

    def __init__(self, platform: Platform, step_ms: float = 10.0,
                 time_scale: float = 8.0):
        self.platform = platform
        self.step_ms = step_ms
        self.time_scale = time_scale
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5.0)

    def _run(self) -> None:
        sleep_s = self.step_ms / 1000.0 / self.time_scale
        while not self._stop.is_set():
            self.platform.step(self.step_ms)
            time.sleep(sleep_s)


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="robofleet-server",
        description="Serve the simulated robot fleet over HTTP.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8123)
    parser.add_argument("--data", default="robofleet-data",
                        help="episode store directory")
    parser.add_argument("--tasks", nargs="*", default=None,
                        help="restrict the served task catalog")
    parser.add_argument("--auto-approve", action="store_true",
                        help="skip the tester approval step")
    parser.add_argument("--time-scale", type=float, default=8.0,
                        help="simulated seconds per wall second")
    parser.add_argument("--noise-sigma-m", type=float, default=0.0)
    parser.add_argument("--user-key", default="user-key")
    parser.add_argument("--tester-key", default="tester-key")
    args = parser.parse_args(argv)

    platform = Platform(args.data, task_ids=args.tasks,
                        auto_approve=args.auto_approve,
                        noise_sigma_m=args.noise_sigma_m)
    keys = {
        args.user_key: Caller(args.user_key, "user"),
        args.tester_key: Caller(args.tester_key, "tester"),
    }
    return _serve(platform, keys, args.host, args.port, args.time_scale)


def _serve(platform: Platform, keys, host: str, port: int,
           time_scale: float) -> int:
    pump = Pump(platform, time_scale=time_scale)

    @asynccontextmanager
    async def lifespan(app):
        pump.start()
        yield
        pump.stop()

    app = create_app(platform, keys)
    app.router.lifespan_context = lifespan

    import uvicorn
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def sim_robot_main(argv: Optional[list[str]] = None) -> int:
    """Standalone simulated robot: one archetype bound to its gateway and
    serving the usual capture/queue surface, without the full fleet."""
    parser = argparse.ArgumentParser(
        prog="sim-robot", description="Serve one simulated robot.")
    parser.add_argument("--archetype", default=None,
                        help="sanity check: ur5, franka, aloha or arx5")
    parser.add_argument("--task", default="stack_color_blocks")
    parser.add_argument("--seed", type=int, default=0,
                        help="initial scene layout draw")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8124)
    parser.add_argument("--data", default="sim-robot-data")
    parser.add_argument("--time-scale", type=float, default=8.0)
    parser.add_argument("--user-key", default="user-key")
    parser.add_argument("--tester-key", default="tester-key")
    args = parser.parse_args(argv)

    try:
        platform = Platform(args.data, task_ids=(args.task,),
                            auto_approve=True)
    except UnknownTask as exc:
        parser.error(str(exc))
    task = platform.tasks[args.task]
    served = task.archetype.name.lower()
    if args.archetype is not None and args.archetype.lower() != served:
        parser.error(f"{args.task} runs on a {served}, not a {args.archetype}")
    station = platform.stations[platform.robot_for_task(args.task)]
    station.sim.set_scene(build_scene(task, seed=args.seed))

    keys = {
        args.user_key: Caller(args.user_key, "user"),
        args.tester_key: Caller(args.tester_key, "tester"),
    }
    return _serve(platform, keys, args.host, args.port, args.time_scale)


if __name__ == "__main__":
    sys.exit(main())
