/** Job approval and scheduling board.
 *
 * Lists every submitted job with its expected start, lets the tester
 * approve queued jobs, and links completed jobs to their per-rollout
 * results. Approval is idempotent on the server, so a double click is
 * harmless; the row is always redrawn from the server's response.
 */

import type { JobStatus, RolloutView } from "./api.js";
import { clear, el, fmtSimNs } from "./dom.js";

export interface JobBoardApi {
  listJobs(): Promise<JobStatus[]>;
  approveJob(jobId: string): Promise<JobStatus>;
  listRollouts(state?: string): Promise<RolloutView[]>;
}

export interface JobBoard {
  readonly root: HTMLElement;
  refresh(): Promise<void>;
}

const TERMINAL = new Set(["completed", "revoked"]);

function progressText(job: JobStatus): string {
  const parts = Object.entries(job.progress).map(([task, n]) => `${task}: ${n}`);
  return parts.length ? parts.join(", ") : "-";
}

export function mountJobBoard(container: HTMLElement, api: JobBoardApi): JobBoard {
  const doc = container.ownerDocument;
  let jobs: JobStatus[] = [];
  const expanded = new Set<string>();
  const resultRows = new Map<string, RolloutView[]>();
  let errorText = "";

  const root = el(doc, "section", { className: "view job-board" });
  container.append(root);

  async function approve(jobId: string): Promise<void> {
    try {
      const updated = await api.approveJob(jobId);
      jobs = jobs.map((j) => (j.job_id === jobId ? updated : j));
      errorText = "";
    } catch (err) {
      errorText = String(err instanceof Error ? err.message : err);
    }
    render();
  }

  async function toggleResults(jobId: string): Promise<void> {
    if (expanded.has(jobId)) {
      expanded.delete(jobId);
    } else {
      expanded.add(jobId);
      try {
        const all = await api.listRollouts();
        resultRows.set(
          jobId,
          all.filter((r) => r.job_id === jobId),
        );
        errorText = "";
      } catch (err) {
        errorText = String(err instanceof Error ? err.message : err);
      }
    }
    render();
  }

  function jobRow(job: JobStatus): HTMLTableRowElement {
    const canApprove = !job.approved && !TERMINAL.has(job.status);
    const actions: (HTMLElement | null)[] = [
      el(doc, "button", {
        className: "approve",
        text: job.approved ? "approved" : "approve",
        disabled: !canApprove,
        onClick: () => void approve(job.job_id),
      }),
      job.status === "completed"
        ? el(doc, "button", {
            className: "job-results",
            text: expanded.has(job.job_id) ? "hide results" : "results",
            onClick: () => void toggleResults(job.job_id),
          })
        : null,
    ];
    return el(doc, "tr", { className: `job status-${job.status}` }, [
      el(doc, "td", { className: "job-id", text: job.job_id }),
      el(doc, "td", { className: "job-model", text: job.display_name }),
      el(doc, "td", { text: job.task_set.join(", ") }),
      el(doc, "td", { text: job.setting }),
      el(doc, "td", { className: "job-status", text: job.status }),
      el(doc, "td", { text: job.robot_id ?? "-" }),
      el(doc, "td", { className: "job-start", text: fmtSimNs(job.expected_start_ns) }),
      el(doc, "td", { className: "job-progress", text: progressText(job) }),
      el(doc, "td", { className: "job-actions" }, actions),
    ]);
  }

  function detailRow(job: JobStatus): HTMLTableRowElement {
    const rollouts = resultRows.get(job.job_id) ?? [];
    const lines = rollouts.map((r) => {
      const res = r.result;
      const text = res
        ? `${r.rollout_id} #${r.rollout_index} ${r.task_id}: ` +
          `${res.success ? "success" : "failure"}, score ${res.score.toFixed(1)}` +
          (res.termination_reason ? ` (${res.termination_reason})` : "")
        : `${r.rollout_id} #${r.rollout_index} ${r.task_id}: ${r.state}`;
      return el(doc, "li", { className: "rollout-line", text });
    });
    const cell = el(doc, "td", {}, [
      el(doc, "ul", { className: "job-rollouts" }, lines.length ? lines : [
        el(doc, "li", { text: "no recorded rollouts" }),
      ]),
    ]);
    cell.colSpan = 9;
    return el(doc, "tr", { className: "job-detail" }, [cell]);
  }

  function render(): void {
    clear(root);
    root.append(el(doc, "h2", { text: "Jobs" }));
    if (errorText) root.append(el(doc, "p", { className: "error", text: errorText }));
    if (!jobs.length) {
      root.append(el(doc, "p", { className: "empty", text: "no jobs submitted" }));
      return;
    }
    const head = el(doc, "tr", {}, [
      ...["job", "model", "tasks", "setting", "status", "robot",
          "expected start", "progress", ""].map((h) => el(doc, "th", { text: h })),
    ]);
    const body: HTMLTableRowElement[] = [];
    for (const job of jobs) {
      body.push(jobRow(job));
      if (expanded.has(job.job_id)) body.push(detailRow(job));
    }
    root.append(el(doc, "table", { className: "jobs" }, [head, ...body]));
  }

  async function refresh(): Promise<void> {
    try {
      jobs = await api.listJobs();
      errorText = "";
    } catch (err) {
      errorText = String(err instanceof Error ? err.message : err);
    }
    render();
  }

  render();
  return { root, refresh };
}
