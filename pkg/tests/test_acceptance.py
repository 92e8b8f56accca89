"""Acceptance gates. One test per release criterion; each `pytest -v`
line below is the pass/fail verdict for that criterion."""

import json
import random
import socket
import threading
import time
from collections import Counter, deque

import numpy as np
import pytest

from grading_oracle import random_event_sequence, random_rubric, run_oracle
from queue_model import ModelQueue
from robofleet import grading
from robofleet.analytics import (
    ALL_TASKS_TAG,
    bundled_results_path,
    bundled_tags_path,
    dominates,
    load_results,
    load_tags,
    model_averages,
    round_display,
    tag_aggregate,
)
from robofleet.client import main as client_main
from robofleet.clock import VirtualClock
from robofleet.gateway import MaintenanceMode, QueueFull, RobotGateway
from robofleet.kinematics import home_pose, solve_ik, standard_spec
from robofleet.platform import Platform
from robofleet.protocol import (
    ARCHETYPES,
    Action,
    ActionChunk,
    Archetype,
    encode_png,
)
from robofleet.scheduler import ComparativeSession
from robofleet.server import Pump, create_app
from robofleet.simrobot import SimConfig, SimRobot
from robofleet.store import EpisodeStore
from robofleet.tasks import build_scene, load_task, oracle_script

from test_gateway import RecordingBackend


def make_rubric(points, critical):
    return grading.TaskRubric("acceptance", tuple(
        grading.StageSpec(f"stage-{i}", p, c)
        for i, (p, c) in enumerate(zip(points, critical))))


def run_engine(rubric, events):
    grade = grading.start_rollout(rubric)
    accepted = []
    for ev in events:
        try:
            if ev[0] == "stage_complete":
                grading.mark_stage_complete(grade, ev[1])
            elif ev[0] == "retry":
                grading.record_retry(grade)
            else:
                grading.finalize_rollout(grade, ev[1])
            accepted.append(True)
        except grading.GradeError:
            accepted.append(False)
    result = grading.finalize_rollout(grade)
    return accepted, (result.success, result.progress_score,
                      result.termination_reason)


def test_criterion_1_grading_engine_matches_oracle_on_100k_sequences():
    rng = random.Random(0xACCE97)
    started = time.monotonic()
    for case in range(100_000):
        points, critical = random_rubric(rng)
        rubric = make_rubric(points, critical)
        events = random_event_sequence(rng, len(points))
        engine = run_engine(rubric, events)
        oracle = run_oracle(points, critical, events)
        assert engine == oracle, (
            f"case {case}: rubric {points}/{critical} events {events}: "
            f"engine {engine} oracle {oracle}")
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"oracle sweep took {elapsed:.1f}s"


def test_criterion_2_rubric_scoring_matches_the_worked_examples():
    rubric = load_task("open_the_drawer").rubric

    # clean run: every stage, no retries
    grade = grading.start_rollout(rubric)
    for i in range(len(rubric.stages)):
        grading.mark_stage_complete(grade, i)
    result = grading.finalize_rollout(grade)
    assert (result.success, result.progress_score) == (True, 10.0)
    assert result.termination_reason == "completed"

    # critical stages only: success at nine points
    grade = grading.start_rollout(rubric)
    for i, stage in enumerate(rubric.stages):
        if stage.critical:
            grading.mark_stage_complete(grade, i)
    result = grading.finalize_rollout(grade)
    assert (result.success, result.progress_score) == (True, 9.0)

    # first two stages, then the attempt dies: five points, no success
    grade = grading.start_rollout(rubric)
    grading.mark_stage_complete(grade, 0)
    grading.mark_stage_complete(grade, 1)
    result = grading.finalize_rollout(grade)
    assert (result.success, result.progress_score) == (False, 5.0)

    # five successive failed retries on the opening 2-point stage terminate
    assert rubric.stages[0].points == 2.0
    grade = grading.start_rollout(rubric)
    for n in range(4):
        grading.record_retry(grade)
        assert not grade.terminated, f"terminated after only {n + 1} retries"
    grading.record_retry(grade)
    assert grade.terminated
    result = grading.finalize_rollout(grade)
    assert result.success is False
    assert result.termination_reason == "stage_score_negative"


def test_criterion_3_reference_results_reproduce_the_bundled_numbers():
    rows = load_results(bundled_results_path())
    averages = model_averages(rows)
    display = {model: (round_display(sr), round_display(score))
               for model, (sr, score) in averages.items()}
    assert display == {
        "Pi05": ("43.7", "62.2"),
        "Pi0": ("28.3", "47.6"),
        "CogACT": ("11.7", "21.8"),
        "Pi05/multi": ("17.7", "31.3"),
        "Pi0/multi": ("9.3", "20.6"),
    }

    # the best model's score curve sits on or above every rival's, percentile
    # by percentile
    assert dominates(rows, "Pi05", "score")
    assert dominates(rows, "Pi05", "sr")
    assert not dominates(rows, "Pi0", "score")

    aggregate = tag_aggregate(rows, load_tags(bundled_tags_path()))
    count, mean_sr, mean_score = aggregate[ALL_TASKS_TAG]
    assert count == 30
    assert round_display(mean_sr, 0) == "22"
    assert round_display(mean_score, 0) == "37"


QUEUE_DURATIONS = (30.0, 34.7, 50.0, 100.0, 170.0)


def _queue_ops(rng):
    ops = []
    for _ in range(rng.integers(12, 32)):
        roll = rng.random()
        if roll < 0.44:
            ops.append(("advance", int(rng.integers(1, 9))))
        elif roll < 0.70:
            n = int(rng.integers(1, 5))
            ops.append(("enqueue", [(float(rng.uniform(-1, 1)),
                                     float(rng.choice(QUEUE_DURATIONS)),
                                     float(rng.choice([0.0, 1.0])))
                                    for _ in range(n)]))
        elif roll < 0.82:
            ops.append(("status",))
        elif roll < 0.90:
            ops.append(("capture",))
        elif roll < 0.96:
            ops.append(("reset", float(rng.choice([0.0, 40.0]))))
        else:
            ops.append(("toggle_maintenance",))
    return ops


class _QueueWatch:
    """Black-box observer holding the queue to FIFO order and to each
    action running its stated duration, within one control period."""

    def __init__(self, dt_ns):
        self.dt_ns = dt_ns
        self.expected = deque()  # acked ids; execution must follow this order
        self.duration_ns = {}
        self.latch = {}          # action id -> sim time its period began
        self.tainted = set()     # sat through a maintenance freeze mid-flight
        self.executing = None
        self.count = 0
        self.checked = 0

    def acked(self, ids, actions):
        for aid, action in zip(ids, actions):
            self.expected.append(aid)
            self.duration_ns[aid] = action.duration_ms * 1e6

    def wiped(self):
        self.expected.clear()
        self.executing = None
        self.count = 0

    def frozen_tick(self):
        if self.executing is not None:
            self.tainted.add(self.executing)

    def after_tick(self, now, executing, count):
        started = []
        if count == self.count:
            if self.executing is None and executing is not None:
                # idle queue picked up work; its period began last tick
                started.append((executing, now - self.dt_ns))
            else:
                assert executing == self.executing, "executing action swapped"
        else:
            assert count == self.count + 1, "two completions in one tick"
            assert self.executing is not None
            if executing is not None:
                started.append((executing, now))
            self._completed(self.executing, now)
        for aid, latch in started:
            assert aid == self.expected.popleft(), "execution out of order"
            self.latch[aid] = latch
        self.executing = executing
        self.count = count

    def _completed(self, aid, now):
        if aid in self.tainted:
            return
        over_ns = now - self.latch[aid] - self.duration_ns[aid]
        assert -1.0 <= over_ns < self.dt_ns + 1.0, (
            f"action {aid} ran {over_ns / 1e6:+.3f}ms off its duration")
        self.checked += 1


def _run_queue_case(ops, depth=24):
    spec = standard_spec("q-1", Archetype.UR5, control_rate_hz=100.0)
    clock = VirtualClock()
    gw = RobotGateway(spec, RecordingBackend(spec.dof, spec.arms), clock,
                      max_queue_depth=depth)
    model = ModelQueue(spec.dof, spec.arms, gw.dt_ns, depth)
    watch = _QueueWatch(gw.dt_ns)
    last_id = 0

    def snapshot():
        state = gw.queue_status()
        got = (state.length, state.executing, state.executed_count,
               state.estimated_drain_ms)
        assert got == model.queue_state(clock.now_ns()), "model disagrees"
        return got

    for op in ops:
        backlog = gw.queue_status().length
        if op[0] == "advance":
            for _ in range(op[1]):
                clock.advance_ns(gw.dt_ns)
                gw.tick()
                model.tick(clock.now_ns())
                if model.maintenance:
                    watch.frozen_tick()
                length, executing, count, _ = snapshot()
                watch.after_tick(clock.now_ns(), executing, count)
        elif op[0] == "enqueue":
            actions = [Action.of([v] * spec.dof, [g], d) for v, d, g in op[1]]
            try:
                got = list(gw.enqueue(ActionChunk(0, tuple(actions))).action_ids)
            except MaintenanceMode:
                got = "maintenance"
            except QueueFull:
                got = "full"
            assert got == model.enqueue(actions, clock.now_ns())
            if isinstance(got, list):
                # whole chunk admitted as one contiguous id run, never reused
                assert got == list(range(got[0], got[0] + len(got)))
                assert got[0] > last_id
                last_id = got[-1]
                watch.acked(got, actions)
        elif op[0] == "status":
            snapshot()
        elif op[0] == "capture":
            bundle = gw.capture(camera_ids=[])
            got = (bundle.queue.length, bundle.queue.executing,
                   bundle.queue.executed_count,
                   bundle.queue.estimated_drain_ms)
            assert got == model.queue_state(clock.now_ns())
        elif op[0] == "reset":
            gw.reset(settle_ms=op[1])
            model.reset(clock.now_ns(), op[1])
            watch.wiped()
        else:
            if gw.maintenance:
                gw.clear_maintenance()
                model.maintenance = False
            else:
                gw.set_maintenance("checkup")
                model.maintenance = True
        if op[0] not in ("advance", "reset"):
            # nothing but execution or an operator reset may shrink the queue
            assert gw.queue_status().length >= backlog, f"{op[0]} dropped work"
    assert gw.backend.trace == model.trace
    return watch.checked


def test_criterion_4_queue_invariants_hold_over_1000_random_schedules():
    started = time.monotonic()

    # irrevocability begins at the surface: pin the public entry points so
    # a cancel/remove verb can't slip in unnoticed
    surface = {name for name, member in vars(RobotGateway).items()
               if not name.startswith("_") and callable(member)}
    assert surface == {"advance_ms", "capture", "clear_maintenance",
                       "enqueue", "on_fault", "overlay", "queue_status",
                       "reset", "set_maintenance", "tick"}

    rng = np.random.default_rng(0xF1F0)
    timed = 0
    for case in range(1000):
        ops = _queue_ops(rng)
        try:
            timed += _run_queue_case(ops)
        except AssertionError as exc:
            raise AssertionError(f"schedule {case}: {exc}") from exc
    # deterministic ladder: every duration, chained back to back
    plan = [(0.2 * i, d, 1.0) for i, d in enumerate(QUEUE_DURATIONS * 2)]
    timed += _run_queue_case([("enqueue", plan), ("advance", 120)])
    assert timed > 1000, f"only {timed} duration checks ran"

    # chunk atomicity under concurrency: eight clients hammer one robot
    spec = standard_spec("q-2", Archetype.UR5, control_rate_hz=100.0)
    gw = RobotGateway(spec, RecordingBackend(spec.dof, spec.arms),
                      VirtualClock(), max_queue_depth=10 ** 6)
    acks_by_client = {}

    def hammer(tag):
        acks = []
        for n in range(25):
            burst = ActionChunk(n, tuple(
                Action.of([0.1] * spec.dof, [1.0], 30.0) for _ in range(3)))
            acks.append(list(gw.enqueue(burst).action_ids))
        acks_by_client[tag] = acks

    threads = [threading.Thread(target=hammer, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    flat = []
    for acks in acks_by_client.values():
        for ids in acks:
            assert ids == list(range(ids[0], ids[0] + 3)), "chunk interleaved"
            flat.extend(ids)
    assert sorted(flat) == list(range(1, 8 * 25 * 3 + 1))

    elapsed = time.monotonic() - started
    assert elapsed < 120.0, f"queue sweep took {elapsed:.1f}s"


def _gateway_trace(sim_seed, noise_sigma_m):
    """Drive the scripted expert through a real gateway; return the
    captured joint trajectory, hand positions, and a final camera frame."""
    arch = Archetype.UR5
    spec = standard_spec("rep-1", arch)
    sim = SimRobot(spec, SimConfig(repeat_noise_sigma_m=noise_sigma_m),
                   seed=sim_seed)
    task = load_task("stack_color_blocks")
    scene = build_scene(task, seed=5)
    sim.set_scene(scene)
    gateway = RobotGateway(spec, sim, VirtualClock())
    info = ARCHETYPES[arch]
    q0 = np.array(home_pose(arch), dtype=float)
    q = q0.copy()
    joints, hands = [], []
    for seq, wp in enumerate(oracle_script(task.task_id, scene.to_dict())):
        full = q0.copy() if wp["kind"] == "home" else q.copy()
        if wp["kind"] != "home":
            full[:info.dof_per_arm] = solve_ik(
                sim.chains[0], wp["position"], q[:info.dof_per_arm])
        grip = [float(wp["gripper"])] + [1.0] * (info.arms - 1)
        gateway.enqueue(ActionChunk(seq, (Action.of(full, grip,
                                                    wp["duration_ms"]),)))
        gateway.advance_ms(wp["duration_ms"] + 3 * gateway.dt_ns / 1e6)
        q = full
        bundle = gateway.capture(["main"])
        joints.append(bundle.proprio.joint_positions)
        hands.append(sim.ee_position(0).copy())
    frame = gateway.capture(["main"]).frames[0].rgb
    return np.array(joints), np.stack(hands), encode_png(frame)


def test_criterion_5_zero_noise_replays_bit_exact_and_half_mm_noise_stays_under_2mm():
    first = _gateway_trace(sim_seed=33, noise_sigma_m=0.0)
    second = _gateway_trace(sim_seed=33, noise_sigma_m=0.0)
    assert np.array_equal(first[0], second[0])
    assert np.array_equal(first[1], second[1])
    assert first[2] == second[2]

    finals = []
    for repeat in range(20):
        trace = _gateway_trace(sim_seed=7000 + repeat, noise_sigma_m=0.0005)
        finals.append(trace[1][-1])
    arr = np.stack(finals)
    deviations = arr - arr.mean(axis=0)
    rms = float(np.sqrt((np.linalg.norm(deviations, axis=1) ** 2).mean()))
    assert 0.0 < rms < 0.002, f"hand repeatability rms {rms * 1e3:.3f}mm"


def _free_port():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_criterion_6_oracle_policy_scores_90_plus_through_the_cli(
        tmp_path, capsys):
    import httpx
    import uvicorn

    platform = Platform(tmp_path / "data", auto_approve=True)
    app = create_app(platform)
    pump = Pump(platform, time_scale=150.0)
    port = _free_port()
    config = uvicorn.Config(app, host="127.0.0.1", port=port,
                            log_level="error", lifespan="off")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)

    started = time.monotonic()
    pump.start()
    thread.start()
    try:
        deadline = time.monotonic() + 30.0
        while time.monotonic() < deadline:
            try:
                response = httpx.get(
                    f"http://127.0.0.1:{port}/api/v1/health",
                    headers={"X-API-Key": "user-key"}, timeout=2.0)
                if response.status_code == 200:
                    break
            except httpx.TransportError:
                time.sleep(0.1)
        else:
            raise AssertionError("server never came up")

        code = client_main([
            "run", "--endpoint", f"http://127.0.0.1:{port}",
            "--key", "user-key", "--policy", "oracle:stack_color_blocks"])
        elapsed = time.monotonic() - started
        output = capsys.readouterr().out
    finally:
        server.should_exit = True
        thread.join(timeout=10.0)
        pump.stop()

    assert code == 0, output
    line = next(l for l in output.splitlines()
                if l.startswith("task stack_color_blocks"))
    words = line.split()
    rollouts = int(words[words.index("rollouts") + 1])
    sr = float(words[words.index("SR") + 1])
    score = float(words[words.index("score") + 1])
    assert rollouts == 10, line
    assert sr >= 90.0, line
    assert score >= 90.0, line
    assert elapsed < 300.0, f"took {elapsed:.0f}s"


def test_criterion_7_comparative_sessions_stay_blind_and_balanced():
    names = ["zz-hidden-alpha", "zz-hidden-beta"]
    for seed in (1, 2, 3):
        session = ComparativeSession(f"acc-{seed}", "stack_color_blocks",
                                     names, 1000, seed)
        blob = json.dumps(session.public_status())
        for name in names:
            assert name not in blob
        counts = Counter(r["token"]
                         for r in session.public_status()["rollouts"])
        assert sorted(counts) == ["entry-A", "entry-B"]
        for token, count in counts.items():
            assert 450 <= count <= 550, f"seed {seed}: {token} drew {count}"

    # grading and revealing still works after the blind phase
    session = ComparativeSession("acc-final", "stack_color_blocks", names,
                                 10, seed=9)
    for i in range(10):
        session.grade(i, True, 10.0)
    report = session.finalize()
    assert sorted(report.identities.values()) == sorted(names)


def test_criterion_8_reference_holdout_never_leaks_into_exports(tmp_path):
    task = "stack_color_blocks"
    chosen_references = None
    for trial in range(100):
        rng = random.Random(9000 + trial)
        store = EpisodeStore(tmp_path / f"trial-{trial:03d}")
        payload_order = list(range(100))
        rng.shuffle(payload_order)
        for payload in payload_order:
            writer = store.begin_episode(task, "demonstration",
                                         robot_id="ur5-1")
            writer.record_event(1_000 + payload, "note", payload=payload)
            writer.close()
            if rng.random() < 0.05:  # interleave benign reads
                store.demo_count(task)
                store.episode_ids(task)
        references = store.select_references(task, 10, seed=4242)
        if chosen_references is None:
            chosen_references = references
        # the draw depends only on the id set and seed, not insertion order
        assert references == chosen_references

        manifest = store.export_dataset(task, tmp_path / f"out-{trial:03d}")
        assert manifest["episode_count"] == 90
        exported = {e["episode_id"] for e in manifest["episodes"]}
        assert not set(references) & exported
        assert len(exported | set(references)) == 100
