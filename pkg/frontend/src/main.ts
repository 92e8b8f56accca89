/** Browser entry point. Connection settings come from the query
 * string so the console stays a static file:
 *
 *   index.html?endpoint=http://127.0.0.1:8123&key=tester-key&hz=5
 */

import { mountApp } from "./app.js";
import { DEFAULT_POLL_HZ } from "./poller.js";

const params = new URLSearchParams(window.location.search);
const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

mountApp(root, {
  baseUrl: params.get("endpoint") ?? "http://127.0.0.1:8123",
  apiKey: params.get("key") ?? "tester-key",
  pollHz: Number(params.get("hz")) || DEFAULT_POLL_HZ,
});
