/** Comparative session board.
 *
 * Before finalization the server hands out blinded tokens only, and
 * this view renders nothing but those fields; model names exist in
 * the DOM solely inside the create form while the tester is typing
 * them, and the form is wiped as soon as the session is created.
 * Identities appear only in the reveal table drawn from the finalize
 * response.
 */

import type { SessionReport, SessionStatus, TaskInfo } from "./api.js";
import { clear, el, option } from "./dom.js";

export interface SessionsApi {
  tasks(): Promise<TaskInfo[]>;
  createSession(
    taskId: string,
    models: string[],
    rollouts?: number,
    seed?: number,
  ): Promise<SessionStatus>;
  listSessions(): Promise<SessionStatus[]>;
  sessionStatus(sessionId: string): Promise<SessionStatus>;
  gradeSessionRollout(
    sessionId: string,
    index: number,
    success: boolean,
    score: number,
  ): Promise<SessionStatus>;
  finalizeSession(sessionId: string): Promise<SessionReport>;
}

export interface SessionsView {
  readonly root: HTMLElement;
  refresh(): Promise<void>;
  select(sessionId: string): Promise<void>;
  readonly selectedId: string | null;
}

export function mountSessions(container: HTMLElement, api: SessionsApi): SessionsView {
  const doc = container.ownerDocument;
  let tasks: TaskInfo[] = [];
  let sessions: SessionStatus[] = [];
  let selected: SessionStatus | null = null;
  let report: SessionReport | null = null;
  let errorText = "";

  const root = el(doc, "section", { className: "view sessions" });
  container.append(root);

  const taskSelect = el(doc, "select", { className: "session-task" });
  const modelsInput = el(doc, "input", {
    className: "session-models",
    type: "text",
    placeholder: "model names, comma separated",
  });
  const rolloutsInput = el(doc, "input", {
    className: "session-rollouts",
    type: "number",
    value: "10",
    min: "1",
  });
  const seedInput = el(doc, "input", {
    className: "session-seed",
    type: "number",
    value: "0",
  });
  const picker = el(doc, "select", { className: "session-picker" });
  picker.addEventListener("change", () => void select(picker.value));
  const board = el(doc, "div", { className: "session-board" });

  root.append(
    el(doc, "h2", { text: "Comparative sessions" }),
    el(doc, "div", { className: "session-create" }, [
      el(doc, "label", { text: "task " }, [taskSelect]),
      modelsInput,
      el(doc, "label", { text: "rollouts " }, [rolloutsInput]),
      el(doc, "label", { text: "seed " }, [seedInput]),
      el(doc, "button", {
        className: "create-session",
        text: "create session",
        onClick: () => void create(),
      }),
    ]),
    el(doc, "div", { className: "session-pick" }, [
      el(doc, "label", { text: "session " }, [picker]),
    ]),
    board,
  );

  async function create(): Promise<void> {
    const models = modelsInput.value
      .split(",")
      .map((m) => m.trim())
      .filter(Boolean);
    if (!taskSelect.value || !models.length) return;
    try {
      const status = await api.createSession(
        taskSelect.value,
        models,
        Number(rolloutsInput.value) || undefined,
        Number(seedInput.value),
      );
      modelsInput.value = ""; // names leave the page once the server holds them
      selected = status;
      report = null;
      sessions = [status, ...sessions.filter((s) => s.session_id !== status.session_id)];
      errorText = "";
    } catch (err) {
      errorText = String(err instanceof Error ? err.message : err);
    }
    renderPicker();
    renderBoard();
  }

  async function select(sessionId: string): Promise<void> {
    if (!sessionId) return;
    try {
      selected = await api.sessionStatus(sessionId);
      report = null;
      errorText = "";
    } catch (err) {
      errorText = String(err instanceof Error ? err.message : err);
    }
    renderPicker();
    renderBoard();
  }

  async function grade(index: number, success: boolean, score: number): Promise<void> {
    if (!selected) return;
    try {
      selected = await api.gradeSessionRollout(selected.session_id, index, success, score);
      errorText = "";
    } catch (err) {
      errorText = String(err instanceof Error ? err.message : err);
    }
    renderBoard();
  }

  async function finalize(): Promise<void> {
    if (!selected) return;
    try {
      report = await api.finalizeSession(selected.session_id);
      selected = await api.sessionStatus(selected.session_id);
      errorText = "";
    } catch (err) {
      errorText = String(err instanceof Error ? err.message : err);
    }
    renderPicker();
    renderBoard();
  }

  function rolloutRow(row: SessionStatus["rollouts"][number]): HTMLTableRowElement {
    const doneCell = el(doc, "td", {
      className: "session-grade",
      text: row.graded
        ? `${row.success ? "success" : "failure"}, ${row.score?.toFixed(1)}`
        : "ungraded",
    });
    const controls = el(doc, "td", { className: "session-controls" });
    if (!row.graded && !selected?.finalized) {
      const successBox = el(doc, "input", { className: "grade-success", type: "checkbox" });
      const scoreInput = el(doc, "input", {
        className: "grade-score",
        type: "number",
        min: "0",
        max: "10",
        step: "0.5",
        value: "0",
      });
      controls.append(
        el(doc, "label", { text: "success " }, [successBox]),
        el(doc, "label", { text: "score " }, [scoreInput]),
        el(doc, "button", {
          className: "grade-rollout",
          text: "grade",
          onClick: () => void grade(row.index, successBox.checked, Number(scoreInput.value)),
        }),
      );
    }
    return el(doc, "tr", { className: "session-rollout" }, [
      el(doc, "td", { text: String(row.index) }),
      el(doc, "td", { className: "token", text: row.token }),
      el(doc, "td", { className: "seed", text: String(row.scene_seed) }),
      doneCell,
      controls,
    ]);
  }

  function reportBlock(rep: SessionReport): HTMLElement {
    const rankRows = rep.ranking.map((r) =>
      el(doc, "tr", {}, [
        el(doc, "td", { text: String(r.rank) }),
        el(doc, "td", { text: r.tokens.join(", ") }),
      ]),
    );
    const revealRows = Object.entries(rep.identities).map(([token, model]) =>
      el(doc, "tr", {}, [
        el(doc, "td", { text: token }),
        el(doc, "td", { className: "revealed-model", text: model }),
        el(doc, "td", {
          text:
            `${rep.per_token[token]?.successes ?? 0} successes, ` +
            `score ${rep.per_token[token]?.score ?? 0}`,
        }),
      ]),
    );
    return el(doc, "div", { className: "session-report" }, [
      el(doc, "h3", { text: "final report" }),
      el(doc, "table", { className: "ranking" }, [
        el(doc, "tr", {}, [el(doc, "th", { text: "rank" }), el(doc, "th", { text: "entries" })]),
        ...rankRows,
      ]),
      el(doc, "table", { className: "reveal" }, [
        el(doc, "tr", {}, [
          el(doc, "th", { text: "entry" }),
          el(doc, "th", { text: "model" }),
          el(doc, "th", { text: "totals" }),
        ]),
        ...revealRows,
      ]),
    ]);
  }

  function renderBoard(): void {
    clear(board);
    if (errorText) board.append(el(doc, "p", { className: "error", text: errorText }));
    if (!selected) {
      board.append(el(doc, "p", { className: "empty", text: "no session selected" }));
      return;
    }
    const head = el(doc, "tr", {}, [
      ...["#", "entry", "scene seed", "grade", ""].map((h) => el(doc, "th", { text: h })),
    ]);
    board.append(
      el(doc, "p", { className: "session-head" }, [
        el(doc, "strong", { text: selected.session_id }),
        ` ${selected.task_id}, entries ${selected.tokens.join(", ")}` +
          `${selected.finalized ? ", finalized" : ""}`,
      ]),
      el(doc, "table", { className: "session-rollouts" }, [
        head,
        ...selected.rollouts.map(rolloutRow),
      ]),
      el(doc, "button", {
        className: "finalize-session",
        text: "finalize session",
        disabled: selected.finalized && report !== null,
        onClick: () => void finalize(),
      }),
    );
    if (report) board.append(reportBlock(report));
  }

  function renderPicker(): void {
    const keep = selected?.session_id ?? "";
    clear(picker);
    picker.append(option(doc, "", "(pick a session)"));
    for (const s of sessions) {
      picker.append(
        option(
          doc,
          s.session_id,
          `${s.session_id} ${s.task_id} ${s.finalized ? "finalized" : "open"}`,
        ),
      );
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
      sessions = await api.listSessions();
      if (selected) {
        const fresh = sessions.find((s) => s.session_id === selected!.session_id);
        if (fresh) selected = fresh;
      }
      errorText = "";
    } catch (err) {
      errorText = String(err instanceof Error ? err.message : err);
    }
    renderPicker();
    renderBoard();
  }

  renderPicker();
  renderBoard();
  return {
    root,
    refresh,
    select,
    get selectedId() {
      return selected?.session_id ?? null;
    },
  };
}
