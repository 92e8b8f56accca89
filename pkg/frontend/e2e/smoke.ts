/** End-to-end smoke drive of the console against a live platform.
 *
 * Boots the real server, lets the oracle client submit and run a job,
 * and walks the console the way a tester would: approve the job from
 * the board, align a scene and watch the overlay score reach zero,
 * grade a practice rollout to 10.0, run a blinded comparative session
 * (with a DOM content scan for model names), and read the ranklist
 * once the job lands on it.
 *
 *   npm run e2e
 *
 * Needs the platform package installed (robofleet-server and client on
 * PATH). Takes a few minutes: the job runs 10 real rollouts in
 * accelerated sim time.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { JSDOM } from "jsdom";

import { ApiClient } from "../src/api.js";
import { mountApp, type App } from "../src/app.js";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;
const TESTER_KEY = "tester-key";
const USER_KEY = "user-key";
const TIME_SCALE = 120;
const JOB_TASK = "put_cup_on_coaster";
const PRACTICE_TASK = "stack_color_blocks";
const SESSION_MODELS = ["rival-alpha", "rival-bravo"];
const ORACLE_POLICY = `oracle:${JOB_TASK}`;

const passed: string[] = [];

function step(name: string): void {
  passed.push(name);
  console.log(`ok: ${name}`);
}

function assert(cond: unknown, message: string): asserts cond {
  if (!cond) throw new Error(`assertion failed: ${message}`);
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function waitFor(
  what: string,
  predicate: () => boolean | Promise<boolean>,
  timeoutMs = 15000,
  intervalMs = 50,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    if (await predicate()) return;
    if (Date.now() > deadline) throw new Error(`timed out waiting for ${what}`);
    await sleep(intervalMs);
  }
}

interface Proc {
  child: ChildProcess;
  output: string[];
  exited: Promise<number | null>;
}

function run(cmd: string, args: string[]): Proc {
  const child = spawn(cmd, args, { stdio: ["ignore", "pipe", "pipe"] });
  const output: string[] = [];
  const keep = (chunk: Buffer) => {
    output.push(chunk.toString());
    if (output.length > 400) output.shift();
  };
  child.stdout?.on("data", keep);
  child.stderr?.on("data", keep);
  const exited = new Promise<number | null>((resolve) => child.on("exit", resolve));
  return { child, output, exited };
}

function queryOne<T extends Element>(root: ParentNode, selector: string): T {
  const node = root.querySelector<T & Element>(selector);
  assert(node, `element ${selector} not found`);
  return node as T;
}

async function main(): Promise<void> {
  const dataDir = mkdtempSync(join(tmpdir(), "console-e2e-"));
  const server = run("robofleet-server", [
    "--data",
    join(dataDir, "platform"),
    "--port",
    String(PORT),
    "--time-scale",
    String(TIME_SCALE),
  ]);
  let clientProc: Proc | null = null;
  let app: App | null = null;

  try {
    const probe = new ApiClient(BASE, TESTER_KEY);
    await waitFor(
      "server health",
      async () => {
        try {
          return (await probe.health()).status === "ok";
        } catch {
          return false;
        }
      },
      30000,
      250,
    );
    step("server is up");

    // The model owner's side: the oracle client submits its own job and
    // then waits for a tester to approve it.
    clientProc = run("client", [
      "run",
      "--endpoint",
      BASE,
      "--key",
      USER_KEY,
      "--policy",
      ORACLE_POLICY,
    ]);

    const dom = new JSDOM(`<!doctype html><html><body><div id="app"></div></body></html>`, {
      url: "http://console.test/",
    });
    const document = dom.window.document;
    const Ev = dom.window.Event;
    const root = document.getElementById("app")!;
    app = mountApp(root, { baseUrl: BASE, apiKey: TESTER_KEY });

    // ---- approve the job from the board ----------------------------

    const jobsPane = queryOne<HTMLElement>(root, '[data-view="jobs"]');
    await waitFor(
      "submitted job on the board",
      async () => {
        await app!.jobs.refresh();
        return jobsPane.querySelector("tr.job") !== null;
      },
      30000,
    );
    const approveButton = queryOne<HTMLButtonElement>(jobsPane, "button.approve");
    assert(!approveButton.disabled, "job should await approval");
    approveButton.click();
    await waitFor("approval to land", async () => {
      await app!.jobs.refresh();
      return queryOne<HTMLButtonElement>(jobsPane, "button.approve").disabled;
    });
    // a second tester racing the same approval is a no-op, not an error
    const again = await probe.approveJob(
      queryOne<HTMLElement>(jobsPane, ".job-id").textContent!,
    );
    assert(again.approved, "second approval stays approved");
    step("job approved from the board (idempotent on the repeat)");

    // ---- align the scene, overlay score to zero --------------------

    await app.show("overlay");
    const overlayPane = queryOne<HTMLElement>(root, '[data-view="overlay"]');
    await waitFor(
      "overlay selectors",
      () => queryOne<HTMLSelectElement>(overlayPane, "select.overlay-task").options.length > 0,
    );
    const taskSelect = queryOne<HTMLSelectElement>(overlayPane, "select.overlay-task");
    taskSelect.value = PRACTICE_TASK;
    taskSelect.dispatchEvent(new Ev("change"));
    await waitFor(
      "robot choice for the task",
      () => queryOne<HTMLSelectElement>(overlayPane, "select.overlay-robot").value !== "",
    );
    const alpha = queryOne<HTMLInputElement>(overlayPane, "input.overlay-alpha");
    alpha.value = "0.6";
    alpha.dispatchEvent(new Ev("input"));

    queryOne<HTMLButtonElement>(overlayPane, "button.align").click();
    await waitFor(
      "match score to reach zero",
      async () => {
        await app!.overlay.refresh();
        return queryOne<HTMLElement>(overlayPane, ".match-score").textContent === "0.00";
      },
      20000,
    );
    assert(
      queryOne<HTMLElement>(overlayPane, ".indicator").className.includes("ok"),
      "indicator green at zero",
    );
    const image = queryOne<HTMLImageElement>(overlayPane, "img.overlay-frame");
    assert(image.src.startsWith("data:image/png;base64,"), "blend frame rendered");
    step("scene aligned to reference, overlay score 0.00, indicator green");

    // ---- grade a practice rollout to 10.0 --------------------------

    await app.show("grading");
    const gradingPane = queryOne<HTMLElement>(root, '[data-view="grading"]');
    await waitFor(
      "practice task choices",
      () => queryOne<HTMLSelectElement>(gradingPane, "select.practice-task").options.length > 0,
    );

    // accelerated sim leaves about a wall second before the practice
    // budget runs out, so the click chain is tight; retry if it loses
    let graded = false;
    for (let attempt = 0; attempt < 3 && !graded; attempt += 1) {
      queryOne<HTMLSelectElement>(gradingPane, "select.practice-task").value = PRACTICE_TASK;
      queryOne<HTMLButtonElement>(gradingPane, "button.start-practice").click();
      await waitFor(
        "practice rollout to open",
        () => gradingPane.querySelector(".rollout-head") !== null,
      );

      for (let clicks = 0; clicks < 12; clicks += 1) {
        if (gradingPane.querySelector(".result")) break;
        const next = [...gradingPane.querySelectorAll<HTMLButtonElement>("button.stage")].find(
          (b) => !b.disabled,
        );
        if (!next) break;
        const label = next.textContent ?? "";
        next.click();
        await waitFor(
          `stage click to settle (${label})`,
          () =>
            gradingPane.querySelector(".result") !== null ||
            gradingPane.querySelector(".error") !== null ||
            [...gradingPane.querySelectorAll("button.stage")].some(
              (b) => b.textContent?.startsWith(label.split(":")[0]) && b.textContent.includes("done"),
            ),
          5000,
          5,
        );
      }
      if (!gradingPane.querySelector(".result")) {
        const finalize = queryOne<HTMLButtonElement>(gradingPane, "button.finalize");
        if (!finalize.disabled) {
          finalize.click();
          await waitFor(
            "finalize to settle",
            () =>
              gradingPane.querySelector(".result") !== null ||
              gradingPane.querySelector(".error") !== null,
          );
        }
      }
      try {
        // the last stage can land server-side (auto-detected) while our
        // click is in flight; give the panel a beat to converge
        await waitFor(
          "final grade to land",
          async () => {
            await app!.grading.refresh();
            return gradingPane.querySelector(".final-score") !== null;
          },
          3000,
        );
      } catch {
        // attempt check below decides whether to retry
      }
      const final = gradingPane.querySelector(".final-score")?.textContent;
      const resultLine = gradingPane.querySelector(".result")?.textContent ?? "";
      if (final === "10.0" && resultLine.includes("success")) {
        graded = true;
      } else {
        console.log(`practice attempt ${attempt + 1} ended with: ${resultLine || "(none)"}`);
      }
    }
    assert(graded, "practice rollout graded to 10.0");
    const stuck = [...gradingPane.querySelectorAll<HTMLButtonElement>("button.stage")];
    assert(stuck.every((b) => b.disabled), "stage buttons greyed after finalize");
    step("practice rollout graded to 10.0 through the panel");

    // ---- blinded comparative session -------------------------------

    await app.show("sessions");
    const sessionsPane = queryOne<HTMLElement>(root, '[data-view="sessions"]');
    await waitFor(
      "session task choices",
      () => queryOne<HTMLSelectElement>(sessionsPane, "select.session-task").options.length > 0,
    );
    queryOne<HTMLSelectElement>(sessionsPane, "select.session-task").value = PRACTICE_TASK;
    queryOne<HTMLInputElement>(sessionsPane, "input.session-models").value =
      SESSION_MODELS.join(", ");
    queryOne<HTMLInputElement>(sessionsPane, "input.session-rollouts").value = "4";
    queryOne<HTMLInputElement>(sessionsPane, "input.session-seed").value = "7";
    queryOne<HTMLButtonElement>(sessionsPane, "button.create-session").click();
    await waitFor(
      "session board",
      () => sessionsPane.querySelectorAll("tr.session-rollout").length === 4,
    );

    const tokens = [...sessionsPane.querySelectorAll(".token")].map((t) => t.textContent);
    assert(
      tokens.every((t) => t?.startsWith("entry-")),
      "rollouts labeled by blinded token",
    );

    for (let i = 0; i < 4; i += 1) {
      const row = sessionsPane.querySelector("tr.session-rollout .grade-rollout");
      assert(row, "an ungraded row with controls");
      const tr = (row as HTMLElement).closest("tr")!;
      queryOne<HTMLInputElement>(tr, "input.grade-success").checked = true;
      queryOne<HTMLInputElement>(tr, "input.grade-score").value = "7.5";
      (row as HTMLButtonElement).click();
      await waitFor(
        `session rollout grade ${i + 1}/4`,
        () =>
          sessionsPane.querySelectorAll("button.grade-rollout").length === 3 - i ||
          sessionsPane.querySelector(".error") !== null,
      );
      assert(!sessionsPane.querySelector(".error"), "session grade accepted");
    }

    // the blinding scan: nothing rendered before finalization may leak
    // a model name, and the create form must already be wiped
    const domText = document.body.innerHTML;
    const visibleText = document.body.textContent ?? "";
    for (const name of SESSION_MODELS) {
      assert(!domText.includes(name), `DOM leaks model name ${name}`);
      assert(!visibleText.includes(name), `text leaks model name ${name}`);
    }
    assert(
      queryOne<HTMLInputElement>(sessionsPane, "input.session-models").value === "",
      "create form wiped after submit",
    );
    step("DOM blinding scan clean on the pre-finalization session");

    queryOne<HTMLButtonElement>(sessionsPane, "button.finalize-session").click();
    await waitFor("session report", () => sessionsPane.querySelector(".session-report") !== null);
    const revealed = [...sessionsPane.querySelectorAll(".revealed-model")].map(
      (n) => n.textContent,
    );
    assert(
      [...SESSION_MODELS].sort().join() === [...revealed].sort().join(),
      "identities revealed only by the finalize report",
    );
    step("session finalized, identities revealed in the report");

    // ---- let the job finish, then read the ranklist ----------------

    const clientExit = await Promise.race([
      clientProc.exited,
      sleep(480000).then(() => "timeout" as const),
    ]);
    assert(clientExit === 0, `oracle client exit ${clientExit}`);
    step("oracle job ran to completion");

    await app.show("jobs");
    await waitFor("job marked completed", async () => {
      await app!.jobs.refresh();
      return jobsPane.querySelector("tr.status-completed") !== null;
    });
    const progress = queryOne<HTMLElement>(jobsPane, ".job-progress").textContent;
    assert(progress === `${JOB_TASK}: 10`, `progress shows all rollouts, got ${progress}`);
    queryOne<HTMLButtonElement>(jobsPane, "button.job-results").click();
    await waitFor(
      "per-rollout results under the job row",
      () => jobsPane.querySelectorAll(".rollout-line").length === 10,
    );
    step("completed job row links to its per-rollout results");

    await app.show("ranklist");
    const ranklistPane = queryOne<HTMLElement>(root, '[data-view="ranklist"]');
    await waitFor("ranklist rows", async () => {
      await app!.ranklist.refresh();
      return ranklistPane.querySelector("tr.rank-row") !== null;
    });
    const models = queryOne<HTMLElement>(ranklistPane, ".rank-models").textContent;
    const sr = queryOne<HTMLElement>(ranklistPane, ".rank-sr").textContent;
    assert(models === ORACLE_POLICY, `ranklist names the job's model, got ${models}`);
    assert(sr === "100.0", `oracle success rate on the board, got ${sr}`);
    assert(ranklistPane.querySelector(".result-row") !== null, "per-task results listed");
    step("ranklist shows the finished evaluation");

    console.log(`\nPASS: ${passed.length} checks\n${passed.map((p) => `  - ${p}`).join("\n")}`);
  } catch (err) {
    console.error("\nFAIL:", err);
    console.error("--- server output tail ---");
    console.error(server.output.slice(-30).join(""));
    if (clientProc) {
      console.error("--- client output tail ---");
      console.error(clientProc.output.slice(-30).join(""));
    }
    process.exitCode = 1;
  } finally {
    app?.dispose();
    clientProc?.child.kill("SIGTERM");
    server.child.kill("SIGTERM");
    await Promise.race([server.exited, sleep(5000)]);
    rmSync(dataDir, { recursive: true, force: true });
  }
}

void main();
