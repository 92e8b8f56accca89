/** Results and ranklist browser. Rows are shown exactly as served;
 * the console does no averaging or rounding of its own.
 */

import type { RanklistRow, ResultRow } from "./api.js";
import { clear, el } from "./dom.js";

export interface RanklistApi {
  ranklist(): Promise<RanklistRow[]>;
  results(): Promise<ResultRow[]>;
}

export interface RanklistView {
  readonly root: HTMLElement;
  refresh(): Promise<void>;
}

export function mountRanklist(container: HTMLElement, api: RanklistApi): RanklistView {
  const doc = container.ownerDocument;
  let board: RanklistRow[] = [];
  let rows: ResultRow[] = [];
  let errorText = "";

  const root = el(doc, "section", { className: "view ranklist" });
  container.append(root);

  function render(): void {
    clear(root);
    root.append(el(doc, "h2", { text: "Ranklist" }));
    if (errorText) root.append(el(doc, "p", { className: "error", text: errorText }));

    if (!board.length) {
      root.append(el(doc, "p", { className: "empty", text: "no graded evaluations yet" }));
    } else {
      const head = el(doc, "tr", {}, [
        ...["rank", "model", "mean sr", "mean score"].map((h) => el(doc, "th", { text: h })),
      ]);
      const body = board.map((r) =>
        el(doc, "tr", { className: "rank-row" }, [
          el(doc, "td", { text: String(r.rank) }),
          el(doc, "td", { className: "rank-models", text: r.models.join(", ") }),
          el(doc, "td", { className: "rank-sr", text: r.mean_sr }),
          el(doc, "td", { className: "rank-score", text: r.mean_score }),
        ]),
      );
      root.append(el(doc, "table", { className: "rank-table" }, [head, ...body]));
    }

    root.append(el(doc, "h3", { text: "Per-task results" }));
    if (!rows.length) {
      root.append(el(doc, "p", { className: "empty", text: "no per-task results" }));
      return;
    }
    const head = el(doc, "tr", {}, [
      ...["model", "task", "sr", "score"].map((h) => el(doc, "th", { text: h })),
    ]);
    const body = rows.map((r) =>
      el(doc, "tr", { className: "result-row" }, [
        el(doc, "td", { text: r.model }),
        el(doc, "td", { text: r.task_id }),
        el(doc, "td", { text: r.sr }),
        el(doc, "td", { text: r.score }),
      ]),
    );
    root.append(el(doc, "table", { className: "result-table" }, [head, ...body]));
  }

  async function refresh(): Promise<void> {
    try {
      [board, rows] = await Promise.all([api.ranklist(), api.results()]);
      errorText = "";
    } catch (err) {
      errorText = String(err instanceof Error ? err.message : err);
    }
    render();
  }

  render();
  return { root, refresh };
}
