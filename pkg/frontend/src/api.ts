/** Typed client for the platform's HTTP surface.
 *
 * Every method is one documented endpoint; the console never derives
 * state the server does not hand back. Responses that use the message
 * envelope ({"type": ..., "body": ...}) are unwrapped here so views
 * only ever see bodies.
 */

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
    readonly violations: string[] = [],
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export interface JobStatus {
  job_id: string;
  status: string;
  approved: boolean;
  display_name: string;
  task_set: string[];
  setting: string;
  robot_id: string | null;
  current_task: string | null;
  current_rollout: number | null;
  rollout_state: string;
  expected_start_ns: number | null;
  progress: Record<string, number>;
}

export interface RubricStage {
  name: string;
  points: number;
  critical: boolean;
}

export interface TaskInfo {
  task_id: string;
  prompt: string;
  archetype: string;
  time_budget_ms: number;
  rubric: {
    task_id: string;
    stages: RubricStage[];
    rollouts_per_eval: number;
  };
}

export interface RobotInfo {
  robot_id: string;
  archetype: string;
  control_rate_hz: number;
  cameras: string[];
  maintenance: boolean;
  current_rollout: string | null;
}

export interface GradeStageView extends RubricStage {
  completed: boolean;
  retries: number;
}

export interface GradeView {
  task_id: string;
  stages: GradeStageView[];
  current_stage: number;
  successive_failed_retries: number;
  terminated: boolean;
  termination_reason: string | null;
  success: boolean;
  progress_score: number;
}

export interface RolloutResultView {
  success: boolean;
  score: number;
  termination_reason: string | null;
  duration_ms: number;
}

export interface RolloutView {
  rollout_id: string;
  kind: string;
  job_id: string | null;
  robot_id: string;
  task_id: string;
  prompt: string;
  rollout_index: number;
  attempt: number;
  state: string;
  grade: GradeView;
  result?: RolloutResultView;
}

export type GradeEventType = "stage_complete" | "retry" | "finalize";

export interface OverlayFrame {
  robot_id: string;
  task_id: string;
  camera_id: string;
  alpha: number;
  match_score: number;
  image_png_b64: string;
}

export interface SessionRolloutRow {
  index: number;
  scene_seed: number;
  token: string;
  graded: boolean;
  success: boolean | null;
  score: number | null;
}

export interface SessionStatus {
  session_id: string;
  task_id: string;
  finalized: boolean;
  tokens: string[];
  rollouts: SessionRolloutRow[];
}

export interface SessionReport {
  session_id: string;
  task_id: string;
  identities: Record<string, string>;
  per_token: Record<string, { successes: number; score: number }>;
  ranking: { rank: number; tokens: string[] }[];
}

export interface RanklistRow {
  rank: number;
  models: string[];
  mean_sr: string;
  mean_score: string;
}

export interface ResultRow {
  model: string;
  task_id: string;
  sr: string;
  score: string;
}

interface Envelope {
  type: string;
  body: unknown;
}

async function errorFrom(resp: Response): Promise<ApiError> {
  let detail = resp.statusText || `status ${resp.status}`;
  let violations: string[] = [];
  try {
    const body = (await resp.json()) as { detail?: string; violations?: string[] };
    if (typeof body.detail === "string") detail = body.detail;
    if (Array.isArray(body.violations)) violations = body.violations;
  } catch {
    // non-JSON error body, keep the status text
  }
  return new ApiError(resp.status, detail, violations);
}

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string,
    readonly apiKey: string,
    fetchFn?: FetchLike,
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn ?? ((url, init) => globalThis.fetch(url, init));
  }

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const init: RequestInit = {
      method,
      headers: { "X-API-Key": this.apiKey },
    };
    if (body !== undefined) {
      init.headers = { ...init.headers, "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) throw await errorFrom(resp);
    return resp.json();
  }

  private async envelope<T>(
    method: string,
    path: string,
    expectType: string,
    body?: unknown,
  ): Promise<T> {
    const raw = (await this.request(method, path, body)) as Envelope;
    if (raw.type !== expectType) {
      throw new ApiError(0, `expected a ${expectType} envelope, got ${raw.type}`);
    }
    return raw.body as T;
  }

  // -- meta ----------------------------------------------------------

  health(): Promise<{ status: string; sim_time_ns: number }> {
    return this.request("GET", "/api/v1/health") as Promise<{
      status: string;
      sim_time_ns: number;
    }>;
  }

  tasks(): Promise<TaskInfo[]> {
    return this.request("GET", "/api/v1/tasks") as Promise<TaskInfo[]>;
  }

  robots(): Promise<RobotInfo[]> {
    return this.request("GET", "/api/v1/robots") as Promise<RobotInfo[]>;
  }

  // -- jobs ----------------------------------------------------------

  submitJob(taskSet: string[], displayName: string): Promise<JobStatus> {
    return this.envelope("POST", "/api/v1/jobs", "JobStatus", {
      type: "JobSubmission",
      body: { task_set: taskSet, display_name: displayName },
    });
  }

  async listJobs(): Promise<JobStatus[]> {
    const raw = (await this.request("GET", "/api/v1/jobs")) as Envelope[];
    return raw.map((e) => e.body as JobStatus);
  }

  pollJob(jobId: string): Promise<JobStatus> {
    return this.envelope("GET", `/api/v1/jobs/${jobId}`, "JobStatus");
  }

  approveJob(jobId: string): Promise<JobStatus> {
    return this.envelope("POST", `/api/v1/jobs/${jobId}/approve`, "JobStatus");
  }

  revokeJob(jobId: string): Promise<JobStatus> {
    return this.envelope("POST", `/api/v1/jobs/${jobId}/revoke`, "JobStatus");
  }

  jobRollout(jobId: string): Promise<RolloutView | null> {
    return this.request("GET", `/api/v1/jobs/${jobId}/rollout`) as Promise<RolloutView | null>;
  }

  // -- scene and overlay ---------------------------------------------

  alignScene(robotId: string, taskId: string): Promise<unknown> {
    return this.request("POST", `/api/v1/robots/${robotId}/scene`, { task_id: taskId });
  }

  overlayFrame(
    robotId: string,
    taskId: string,
    cameraId: string,
    alpha: number,
  ): Promise<OverlayFrame> {
    const query = new URLSearchParams({
      task_id: taskId,
      camera_id: cameraId,
      alpha: String(alpha),
    });
    return this.request(
      "GET",
      `/api/v1/robots/${robotId}/overlay?${query}`,
    ) as Promise<OverlayFrame>;
  }

  // -- rollouts and grading ------------------------------------------

  startPractice(taskId: string): Promise<RolloutView> {
    return this.request("POST", "/api/v1/practice", {
      task_id: taskId,
    }) as Promise<RolloutView>;
  }

  listRollouts(state?: string): Promise<RolloutView[]> {
    const suffix = state ? `?state=${encodeURIComponent(state)}` : "";
    return this.request("GET", `/api/v1/rollouts${suffix}`) as Promise<RolloutView[]>;
  }

  rolloutView(rolloutId: string): Promise<RolloutView> {
    return this.request("GET", `/api/v1/rollouts/${rolloutId}`) as Promise<RolloutView>;
  }

  /** Post one grading event; the returned view is the authoritative grade. */
  postGradeEvent(
    rolloutId: string,
    type: GradeEventType,
    opts: { stage?: number; reason?: string } = {},
  ): Promise<RolloutView> {
    return this.request("POST", `/api/v1/rollouts/${rolloutId}/events`, {
      type: "GradeEvent",
      body: { type, stage: opts.stage ?? null, reason: opts.reason ?? null },
    }) as Promise<RolloutView>;
  }

  // -- comparative sessions ------------------------------------------

  createSession(
    taskId: string,
    models: string[],
    rollouts?: number,
    seed?: number,
  ): Promise<SessionStatus> {
    const body: Record<string, unknown> = { task_id: taskId, models };
    if (rollouts !== undefined) body.rollouts = rollouts;
    if (seed !== undefined) body.seed = seed;
    return this.request("POST", "/api/v1/sessions", body) as Promise<SessionStatus>;
  }

  listSessions(): Promise<SessionStatus[]> {
    return this.request("GET", "/api/v1/sessions") as Promise<SessionStatus[]>;
  }

  sessionStatus(sessionId: string): Promise<SessionStatus> {
    return this.request("GET", `/api/v1/sessions/${sessionId}`) as Promise<SessionStatus>;
  }

  gradeSessionRollout(
    sessionId: string,
    index: number,
    success: boolean,
    score: number,
  ): Promise<SessionStatus> {
    return this.request("POST", `/api/v1/sessions/${sessionId}/rollouts/${index}/grade`, {
      success,
      score,
    }) as Promise<SessionStatus>;
  }

  finalizeSession(sessionId: string): Promise<SessionReport> {
    return this.request("POST", `/api/v1/sessions/${sessionId}/finalize`) as Promise<SessionReport>;
  }

  // -- results -------------------------------------------------------

  results(): Promise<ResultRow[]> {
    return this.request("GET", "/api/v1/results") as Promise<ResultRow[]>;
  }

  ranklist(): Promise<RanklistRow[]> {
    return this.request("GET", "/api/v1/analytics/ranklist") as Promise<RanklistRow[]>;
  }
}
