// DOM wiring. Keyboard-first: c = correct, x = incorrect, f = flush offline
// queue, enter = confirm cross-exam answer, 1-4 = edit cross-exam answer.
// Configuration comes from query parameters:
//   ?service=http://host:port&batch=default&reviewer=alice&mode=review|crossexam

import { ReviewApi } from "./api.js";
import { CrossExamFlow } from "./crossexam.js";
import { OfflineQueue, LocalStorage } from "./queue.js";
import { ReviewFlow } from "./reviewFlow.js";
import { renderCrossExamHtml, renderDoneHtml, renderTaskHtml } from "./view.js";

function param(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

function statusLine(text: string): void {
  const el = document.getElementById("status");
  if (el) el.textContent = text;
}

async function runReview(root: HTMLElement, api: ReviewApi): Promise<void> {
  const batch = param("batch", "default");
  const reviewer = param("reviewer", "anonymous");
  const flow = new ReviewFlow(api, batch, reviewer, new OfflineQueue(new LocalStorage()));
  await flow.start();

  const render = () => {
    const task = flow.current();
    root.innerHTML = task
      ? renderTaskHtml(task, flow.progress())
      : renderDoneHtml(flow.progress(), flow.queue.size);
  };

  const submit = async (correct: boolean) => {
    if (flow.finished()) return;
    const outcome = await flow.submit(correct);
    statusLine(
      outcome === "queued"
        ? `offline: verdict queued (${flow.queue.size} pending)`
        : `verdict ${outcome}`,
    );
    render();
  };

  const flush = async () => {
    const result = await flow.flushQueue();
    statusLine(`flushed ${result.delivered}, ${result.remaining} still queued`);
    render();
  };

  document.addEventListener("keydown", (event) => {
    if (event.key === "c") void submit(true);
    else if (event.key === "x") void submit(false);
    else if (event.key === "f") void flush();
  });
  root.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.id === "verdict-correct") void submit(true);
    if (target.id === "verdict-incorrect") void submit(false);
  });
  window.addEventListener("online", () => void flush());
  render();
}

async function runCrossExam(root: HTMLElement, api: ReviewApi): Promise<void> {
  const flow = new CrossExamFlow(api);
  await flow.load();

  const render = () => {
    const next = flow.pending()[0];
    root.innerHTML = next
      ? renderCrossExamHtml(next, flow.pendingCount())
      : `<div class="done"><h2>No pending cross-examinations</h2></div>`;
  };

  const resolve = async (action: "confirm" | "edit", newIndex?: number) => {
    const next = flow.pending()[0];
    if (!next) return;
    const outcome = await flow.resolve(next.task_id, action, newIndex);
    statusLine(`resolution: ${outcome}`);
    render();
  };

  document.addEventListener("keydown", (event) => {
    if (event.key === "Enter") void resolve("confirm");
    else if (/^[1-4]$/.test(event.key)) void resolve("edit", Number(event.key) - 1);
  });
  root.addEventListener("click", (event) => {
    if ((event.target as HTMLElement).id === "ce-confirm") void resolve("confirm");
  });
  render();
}

async function main(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const api = new ReviewApi(param("service", "http://127.0.0.1:8321"));
  try {
    if (param("mode", "review") === "crossexam") {
      await runCrossExam(root, api);
    } else {
      await runReview(root, api);
    }
  } catch (error) {
    root.innerHTML = `<div class="error">Service unreachable: ${String(error)}.
      <button id="retry">Retry</button></div>`;
    document.getElementById("retry")?.addEventListener("click", () => void main());
  }
}

void main();
