/** Console shell: tab navigation plus one poller that drives whichever
 * view is visible. Nothing here talks to the server directly.
 */

import { ApiClient, type FetchLike } from "./api.js";
import { clear, el } from "./dom.js";
import { mountGradingPanel, type GradingPanel } from "./grading.js";
import { mountJobBoard, type JobBoard } from "./jobBoard.js";
import { mountOverlay, type OverlayView } from "./overlay.js";
import { Poller, DEFAULT_POLL_HZ } from "./poller.js";
import { mountRanklist, type RanklistView } from "./ranklist.js";
import { mountSessions, type SessionsView } from "./sessions.js";

export interface AppConfig {
  baseUrl: string;
  apiKey: string;
  pollHz?: number;
  fetchFn?: FetchLike;
}

export type TabName = "jobs" | "overlay" | "grading" | "sessions" | "ranklist";

export interface App {
  readonly api: ApiClient;
  readonly poller: Poller;
  readonly jobs: JobBoard;
  readonly overlay: OverlayView;
  readonly grading: GradingPanel;
  readonly sessions: SessionsView;
  readonly ranklist: RanklistView;
  readonly active: TabName;
  show(tab: TabName): Promise<void>;
  dispose(): void;
}

const TABS: TabName[] = ["jobs", "overlay", "grading", "sessions", "ranklist"];

export function mountApp(root: HTMLElement, config: AppConfig): App {
  const doc = root.ownerDocument;
  const api = new ApiClient(config.baseUrl, config.apiKey, config.fetchFn);
  clear(root);

  const nav = el(doc, "nav", { className: "tabs" });
  const status = el(doc, "span", { className: "conn", text: config.baseUrl });
  root.append(
    el(doc, "header", {}, [el(doc, "h1", { text: "Fleet console" }), status]),
    nav,
  );

  const panes = {} as Record<TabName, HTMLElement>;
  const buttons = {} as Record<TabName, HTMLButtonElement>;
  for (const tab of TABS) {
    const pane = el(doc, "div", { className: "pane hidden" });
    pane.dataset.view = tab;
    root.append(pane);
    panes[tab] = pane;
    const button = el(doc, "button", {
      className: "tab",
      text: tab,
      onClick: () => void show(tab),
    });
    button.dataset.tab = tab;
    nav.append(button);
    buttons[tab] = button;
  }

  const views = {
    jobs: mountJobBoard(panes.jobs, api),
    overlay: mountOverlay(panes.overlay, api),
    grading: mountGradingPanel(panes.grading, api),
    sessions: mountSessions(panes.sessions, api),
    ranklist: mountRanklist(panes.ranklist, api),
  };

  let active: TabName = "jobs";
  const poller = new Poller(() => views[active].refresh(), config.pollHz ?? DEFAULT_POLL_HZ);

  async function show(tab: TabName): Promise<void> {
    active = tab;
    for (const t of TABS) {
      panes[t].classList.toggle("hidden", t !== tab);
      buttons[t].classList.toggle("current", t === tab);
    }
    await views[tab].refresh();
  }

  panes.jobs.classList.remove("hidden");
  buttons.jobs.classList.add("current");
  poller.start();

  return {
    api,
    poller,
    jobs: views.jobs,
    overlay: views.overlay,
    grading: views.grading,
    sessions: views.sessions,
    ranklist: views.ranklist,
    get active() {
      return active;
    },
    show,
    dispose() {
      poller.stop();
    },
  };
}
