import { afterEach, describe, expect, it } from "vitest";

import { mountApp, type App } from "../src/app.js";
import { DEFAULT_POLL_HZ } from "../src/poller.js";
import { flush, jsonResponse } from "./helpers.js";

const EMPTY_BY_PATH: Record<string, unknown> = {
  "/api/v1/jobs": [],
  "/api/v1/tasks": [],
  "/api/v1/robots": [],
  "/api/v1/rollouts": [],
  "/api/v1/sessions": [],
  "/api/v1/results": [],
  "/api/v1/analytics/ranklist": [],
};

describe("app shell", () => {
  let app: App | null = null;
  afterEach(() => app?.dispose());

  function mount() {
    const seen: string[] = [];
    const root = document.createElement("div");
    document.body.append(root);
    app = mountApp(root, {
      baseUrl: "http://test:1",
      apiKey: "tester-key",
      fetchFn: async (url) => {
        const path = new URL(url).pathname;
        seen.push(path);
        return jsonResponse(EMPTY_BY_PATH[path] ?? {});
      },
    });
    return { app, root, seen };
  }

  it("starts on the job board and polls at the default rate", async () => {
    const { app, root } = mount();
    expect(app.active).toBe("jobs");
    expect(app.poller.hz).toBe(DEFAULT_POLL_HZ);
    expect(app.poller.running).toBe(true);
    await flush();
    expect(root.querySelector('[data-view="jobs"]')?.classList.contains("hidden")).toBe(false);
    expect(root.querySelector('[data-view="ranklist"]')?.classList.contains("hidden")).toBe(true);
  });

  it("switches panes through the tab bar", async () => {
    const { app, root, seen } = mount();
    await flush();
    root.querySelector<HTMLButtonElement>('button[data-tab="ranklist"]')?.click();
    await flush();
    expect(app.active).toBe("ranklist");
    expect(root.querySelector('[data-view="ranklist"]')?.classList.contains("hidden")).toBe(false);
    expect(seen).toContain("/api/v1/analytics/ranklist");
  });
});
