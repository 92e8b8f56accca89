/** Scene-reproduction overlay: reference frame blended over the live
 * camera at an adjustable alpha, with the server's match score beside
 * it. The indicator turns green once the score drops to the display
 * threshold; the blend itself and the score always come from the
 * overlay endpoint, never from client-side pixel math.
 */

import type { OverlayFrame, RobotInfo, TaskInfo } from "./api.js";
import { clear, el, option } from "./dom.js";

// Display affordance only; the score readout is authoritative.
export const MATCH_OK_THRESHOLD = 8.0;

export interface OverlayApi {
  tasks(): Promise<TaskInfo[]>;
  robots(): Promise<RobotInfo[]>;
  alignScene(robotId: string, taskId: string): Promise<unknown>;
  overlayFrame(
    robotId: string,
    taskId: string,
    cameraId: string,
    alpha: number,
  ): Promise<OverlayFrame>;
}

export interface OverlayView {
  readonly root: HTMLElement;
  refresh(): Promise<void>;
  readonly alpha: number;
}

export function indicatorClass(score: number, threshold = MATCH_OK_THRESHOLD): string {
  return score <= threshold ? "indicator ok" : "indicator off";
}

export function mountOverlay(container: HTMLElement, api: OverlayApi): OverlayView {
  const doc = container.ownerDocument;
  let tasks: TaskInfo[] = [];
  let robots: RobotInfo[] = [];
  let alpha = 0.5;
  let loaded = false;

  const root = el(doc, "section", { className: "view overlay" });
  container.append(root);

  const taskSelect = el(doc, "select", { className: "overlay-task" });
  const robotSelect = el(doc, "select", { className: "overlay-robot" });
  const cameraSelect = el(doc, "select", { className: "overlay-camera" });
  const alphaInput = el(doc, "input", {
    className: "overlay-alpha",
    type: "range",
    min: "0",
    max: "1",
    step: "0.05",
    value: String(alpha),
  });
  const alphaLabel = el(doc, "span", { className: "alpha-value", text: alpha.toFixed(2) });
  const alignButton = el(doc, "button", { className: "align", text: "align to reference" });
  const indicator = el(doc, "span", { className: "indicator off" });
  const scoreText = el(doc, "span", { className: "match-score", text: "-" });
  const banner = el(doc, "p", { className: "banner hidden", text: "" });
  const image = el(doc, "img", { className: "overlay-frame" });
  image.alt = "overlay of reference frame and live camera";

  root.append(
    el(doc, "h2", { text: "Overlay" }),
    el(doc, "div", { className: "overlay-controls" }, [
      el(doc, "label", { text: "task " }, [taskSelect]),
      el(doc, "label", { text: "robot " }, [robotSelect]),
      el(doc, "label", { text: "camera " }, [cameraSelect]),
      el(doc, "label", { text: "alpha " }, [alphaInput, alphaLabel]),
      alignButton,
    ]),
    el(doc, "div", { className: "overlay-readout" }, [
      indicator,
      el(doc, "span", { text: " match score " }),
      scoreText,
    ]),
    banner,
    image,
  );

  function selectedTask(): TaskInfo | undefined {
    return tasks.find((t) => t.task_id === taskSelect.value);
  }

  function robotChoices(): RobotInfo[] {
    const task = selectedTask();
    if (!task) return robots;
    return robots.filter((r) => r.archetype === task.archetype);
  }

  function fillRobots(): void {
    clear(robotSelect);
    for (const robot of robotChoices()) robotSelect.append(option(doc, robot.robot_id));
    fillCameras();
  }

  function fillCameras(): void {
    clear(cameraSelect);
    const robot = robots.find((r) => r.robot_id === robotSelect.value);
    for (const cam of robot?.cameras ?? []) cameraSelect.append(option(doc, cam));
    // the reference is rendered for the main camera's viewpoint
    if (robot?.cameras.includes("main")) cameraSelect.value = "main";
  }

  async function loadChoices(): Promise<void> {
    [tasks, robots] = await Promise.all([api.tasks(), api.robots()]);
    clear(taskSelect);
    for (const task of tasks) taskSelect.append(option(doc, task.task_id));
    fillRobots();
    loaded = true;
  }

  function showFrame(frame: OverlayFrame): void {
    image.src = `data:image/png;base64,${frame.image_png_b64}`;
    scoreText.textContent = frame.match_score.toFixed(2);
    indicator.className = indicatorClass(frame.match_score);
    banner.classList.add("hidden");
    banner.textContent = "";
  }

  function showStale(err: unknown): void {
    banner.textContent = `live view stale: ${err instanceof Error ? err.message : err}`;
    banner.classList.remove("hidden");
  }

  async function refresh(): Promise<void> {
    try {
      if (!loaded) await loadChoices();
      if (!taskSelect.value || !robotSelect.value || !cameraSelect.value) return;
      showFrame(
        await api.overlayFrame(
          robotSelect.value,
          taskSelect.value,
          cameraSelect.value,
          alpha,
        ),
      );
    } catch (err) {
      showStale(err);
    }
  }

  taskSelect.addEventListener("change", () => {
    fillRobots();
    void refresh();
  });
  robotSelect.addEventListener("change", () => {
    fillCameras();
    void refresh();
  });
  cameraSelect.addEventListener("change", () => void refresh());
  alphaInput.addEventListener("input", () => {
    alpha = Number(alphaInput.value);
    alphaLabel.textContent = alpha.toFixed(2);
    void refresh();
  });
  alignButton.addEventListener("click", () => {
    void (async () => {
      try {
        await api.alignScene(robotSelect.value, taskSelect.value);
        await refresh();
      } catch (err) {
        showStale(err);
      }
    })();
  });

  return {
    root,
    refresh,
    get alpha() {
      return alpha;
    },
  };
}
