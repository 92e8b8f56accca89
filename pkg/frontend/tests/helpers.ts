import type { GradeView, JobStatus, RolloutView, SessionStatus } from "../src/api.js";

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export function jobFixture(overrides: Partial<JobStatus> = {}): JobStatus {
  return {
    job_id: "job-000001",
    status: "queued",
    approved: false,
    display_name: "oracle:put_cup_on_coaster",
    task_set: ["put_cup_on_coaster"],
    setting: "specialist",
    robot_id: null,
    current_task: null,
    current_rollout: null,
    rollout_state: "waiting",
    expected_start_ns: 1_500_000_000,
    progress: {},
    ...overrides,
  };
}

export function gradeFixture(overrides: Partial<GradeView> = {}): GradeView {
  return {
    task_id: "stack_color_blocks",
    stages: [
      { name: "grasp first block", points: 2, critical: true, completed: false, retries: 0 },
      { name: "place on target", points: 3, critical: true, completed: false, retries: 0 },
      { name: "stack second block", points: 4, critical: true, completed: false, retries: 0 },
      { name: "tidy release", points: 1, critical: false, completed: false, retries: 0 },
    ],
    current_stage: 0,
    successive_failed_retries: 0,
    terminated: false,
    termination_reason: null,
    success: false,
    progress_score: 0,
    ...overrides,
  };
}

export function rolloutFixture(overrides: Partial<RolloutView> = {}): RolloutView {
  return {
    rollout_id: "ro-000001",
    kind: "practice",
    job_id: null,
    robot_id: "ur5-1",
    task_id: "stack_color_blocks",
    prompt: "stack the blocks",
    rollout_index: 0,
    attempt: 0,
    state: "active",
    grade: gradeFixture(),
    ...overrides,
  };
}

export function sessionFixture(overrides: Partial<SessionStatus> = {}): SessionStatus {
  return {
    session_id: "cs-000001",
    task_id: "stack_color_blocks",
    finalized: false,
    tokens: ["entry-A", "entry-B"],
    rollouts: [
      { index: 0, scene_seed: 11, token: "entry-A", graded: false, success: null, score: null },
      { index: 1, scene_seed: 22, token: "entry-B", graded: false, success: null, score: null },
      { index: 2, scene_seed: 33, token: "entry-B", graded: false, success: null, score: null },
    ],
    ...overrides,
  };
}
