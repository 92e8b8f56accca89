/** Live grading panel.
 *
 * Stage buttons, retry, terminate and finalize each post one grading
 * event and redraw from the server's response; the panel holds no
 * grade of its own. A stage button is clickable only when every
 * earlier critical stage is already done, mirroring the order rule
 * the server enforces, and a rejection that still slips through is
 * shown inline rather than swallowed.
 */

import type { GradeView, RolloutView, TaskInfo } from "./api.js";
import { clear, el, option } from "./dom.js";

export interface GradingApi {
  tasks(): Promise<TaskInfo[]>;
  listRollouts(state?: string): Promise<RolloutView[]>;
  rolloutView(rolloutId: string): Promise<RolloutView>;
  startPractice(taskId: string): Promise<RolloutView>;
  postGradeEvent(
    rolloutId: string,
    type: "stage_complete" | "retry" | "finalize",
    opts?: { stage?: number; reason?: string },
  ): Promise<RolloutView>;
}

export interface GradingPanel {
  readonly root: HTMLElement;
  refresh(): Promise<void>;
  select(rolloutId: string): Promise<void>;
  readonly selectedId: string | null;
}

/** A rollout accepts grading events only while it is open. */
export function rolloutOpen(view: RolloutView): boolean {
  return view.state === "preparing" || view.state === "active";
}

/** Order rule for stage buttons: earlier critical stages gate later ones. */
export function stageClickable(grade: GradeView, index: number, open: boolean): boolean {
  if (!open || grade.terminated) return false;
  const stage = grade.stages[index];
  if (!stage || stage.completed) return false;
  return grade.stages.slice(0, index).every((s) => !s.critical || s.completed);
}

export function mountGradingPanel(container: HTMLElement, api: GradingApi): GradingPanel {
  const doc = container.ownerDocument;
  let tasks: TaskInfo[] = [];
  let rollouts: RolloutView[] = [];
  let selected: RolloutView | null = null;
  let errorText = "";
  let busy = false;

  const root = el(doc, "section", { className: "view grading" });
  container.append(root);

  const taskSelect = el(doc, "select", { className: "practice-task" });
  const panel = el(doc, "div", { className: "grade-panel" });
  const picker = el(doc, "select", { className: "rollout-picker" });
  picker.addEventListener("change", () => void select(picker.value));

  root.append(
    el(doc, "h2", { text: "Grading" }),
    el(doc, "div", { className: "grading-controls" }, [
      el(doc, "label", { text: "rollout " }, [picker]),
      el(doc, "label", { text: "practice task " }, [taskSelect]),
      el(doc, "button", {
        className: "start-practice",
        text: "start practice",
        onClick: () => void startPractice(),
      }),
    ]),
    panel,
  );

  function updateCache(view: RolloutView): void {
    selected = view;
    const at = rollouts.findIndex((r) => r.rollout_id === view.rollout_id);
    if (at >= 0) rollouts[at] = view;
    else rollouts.unshift(view);
  }

  async function post(
    type: "stage_complete" | "retry" | "finalize",
    opts: { stage?: number; reason?: string } = {},
  ): Promise<void> {
    if (!selected || busy) return;
    busy = true;
    renderPanel();
    try {
      updateCache(await api.postGradeEvent(selected.rollout_id, type, opts));
      errorText = "";
    } catch (err) {
      errorText = String(err instanceof Error ? err.message : err);
      // the server may have moved on (auto-detected stage, expired
      // budget); converge on its view instead of keeping a stale one
      try {
        updateCache(await api.rolloutView(selected.rollout_id));
      } catch {
        // keep the original rejection text
      }
    }
    busy = false;
    renderPicker();
    renderPanel();
  }

  async function startPractice(): Promise<void> {
    if (!taskSelect.value) return;
    try {
      updateCache(await api.startPractice(taskSelect.value));
      errorText = "";
    } catch (err) {
      errorText = String(err instanceof Error ? err.message : err);
    }
    renderPicker();
    renderPanel();
  }

  async function select(rolloutId: string): Promise<void> {
    if (!rolloutId) return;
    try {
      updateCache(await api.rolloutView(rolloutId));
      errorText = "";
    } catch (err) {
      errorText = String(err instanceof Error ? err.message : err);
    }
    renderPicker();
    renderPanel();
  }

  function stageButton(index: number): HTMLButtonElement {
    const view = selected!;
    const stage = view.grade.stages[index];
    const label =
      `${index}: ${stage.name} (+${stage.points}` +
      `${stage.critical ? ", critical" : ""})` +
      (stage.completed ? " done" : "") +
      (stage.retries ? ` [${stage.retries} retries]` : "");
    return el(doc, "button", {
      className: `stage${stage.completed ? " done" : ""}`,
      text: label,
      disabled: busy || !stageClickable(view.grade, index, rolloutOpen(view)),
      onClick: () => void post("stage_complete", { stage: index }),
    });
  }

  function renderPanel(): void {
    clear(panel);
    if (errorText) panel.append(el(doc, "p", { className: "error", text: errorText }));
    if (!selected) {
      panel.append(el(doc, "p", { className: "empty", text: "no rollout open" }));
      return;
    }
    const view = selected;
    const open = rolloutOpen(view);
    const grade = view.grade;

    panel.append(
      el(doc, "p", { className: "rollout-head" }, [
        el(doc, "strong", { text: view.rollout_id }),
        ` ${view.kind} ${view.task_id} [${view.state}]`,
      ]),
      el(doc, "p", { className: "prompt", text: view.prompt }),
      el(doc, "div", { className: "stage-buttons" },
        grade.stages.map((_, i) => stageButton(i))),
      el(doc, "div", { className: "grade-actions" }, [
        el(doc, "button", {
          className: "retry",
          text: "retry (-0.5)",
          disabled: busy || !open || grade.terminated,
          onClick: () => void post("retry"),
        }),
        el(doc, "button", {
          className: "terminate",
          text: "terminate",
          disabled: busy || !open,
          onClick: () => void post("finalize", { reason: "terminated_by_tester" }),
        }),
        el(doc, "button", {
          className: "finalize",
          text: "finalize",
          disabled: busy || !open,
          onClick: () => void post("finalize"),
        }),
      ]),
      el(doc, "p", { className: "grade-readout" }, [
        "score ",
        el(doc, "strong", { className: "score", text: grade.progress_score.toFixed(1) }),
        ` | success ${grade.success}` +
          ` | failed retries in a row ${grade.successive_failed_retries}` +
          (grade.terminated
            ? ` | terminated (${grade.termination_reason ?? "?"})`
            : ""),
      ]),
    );
    if (view.result) {
      panel.append(
        el(doc, "p", { className: "result" }, [
          "final: ",
          el(doc, "strong", {
            className: "final-score",
            text: view.result.score.toFixed(1),
          }),
          ` | ${view.result.success ? "success" : "failure"}` +
            ` | ${view.result.termination_reason ?? "-"}` +
            ` | ${view.result.duration_ms.toFixed(0)}ms`,
        ]),
      );
    }
  }

  function renderPicker(): void {
    const keep = selected?.rollout_id ?? "";
    clear(picker);
    picker.append(option(doc, "", "(pick a rollout)"));
    for (const r of rollouts) {
      picker.append(option(doc, r.rollout_id, `${r.rollout_id} ${r.task_id} [${r.state}]`));
    }
    picker.value = keep;
  }

  async function refresh(): Promise<void> {
    try {
      if (!tasks.length) {
        tasks = await api.tasks();
        clear(taskSelect);
        for (const t of tasks) taskSelect.append(option(doc, t.task_id));
      }
      const listed = await api.listRollouts();
      listed.sort((a, b) => b.rollout_id.localeCompare(a.rollout_id));
      rollouts = listed;
      if (selected) {
        const fresh = rollouts.find((r) => r.rollout_id === selected!.rollout_id);
        if (fresh) selected = fresh;
      }
      errorText = "";
    } catch (err) {
      errorText = String(err instanceof Error ? err.message : err);
    }
    renderPicker();
    renderPanel();
  }

  renderPicker();
  renderPanel();
  return {
    root,
    refresh,
    select,
    get selectedId() {
      return selected?.rollout_id ?? null;
    },
  };
}
