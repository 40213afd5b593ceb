import { ApiClient } from "./api";
import { ReviewController } from "./session";
import { ReviewApp } from "./view";
import "./styles.css";

const RETRY_INTERVAL_MS = 3000;
const REPORT_POLL_MS = 15000;

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const controller = new ReviewController((endpoint) => new ApiClient(endpoint));
new ReviewApp(root, controller);

// Queued submissions retry on a timer; the calibration table refreshes
// in the background so a second reviewer's work shows up too.
setInterval(() => {
  if (controller.phase === "waiting-retry") void controller.retry();
}, RETRY_INTERVAL_MS);

setInterval(() => {
  if (controller.phase !== "configuring") void controller.refreshReport();
}, REPORT_POLL_MS);
