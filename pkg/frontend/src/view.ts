// Pure HTML rendering for task and cross-exam views (kept DOM-free so the
// output is testable in node). Only fields from the documented client view
// are rendered; there is nothing here that could display an arm label.

import type { CrossExamTask, Progress, TaskView } from "./types.js";

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

const ORDINALS = ["first", "second", "third", "fourth"];

export function renderTaskHtml(task: TaskView, progress: Progress): string {
  const images = task.images
    .map((ref, k) => {
      const label = `The ${ORDINALS[k] ?? String(k + 1)} image`;
      const img = ref.uri
        ? `<img src="${escapeHtml(ref.uri)}" alt="${escapeHtml(label)}">`
        : `<div class="placeholder">${escapeHtml(ref.id)}</div>`;
      const desc = task.descriptions[k];
      return `<figure>${img}<figcaption><strong>${escapeHtml(label)}</strong>${
        desc ? `: ${escapeHtml(desc)}` : ""
      }</figcaption></figure>`;
    })
    .join("");
  return `
<div class="task" data-task-id="${escapeHtml(task.task_id)}">
  <div class="progress">${progress.done} / ${progress.total} reviewed</div>
  <div class="images">${images}</div>
  <p class="question">${escapeHtml(task.question)}</p>
  <blockquote class="comparison">${escapeHtml(task.comparison)}</blockquote>
  <div class="controls">
    <button id="verdict-correct" accesskey="c">Correct (c)</button>
    <button id="verdict-incorrect" accesskey="x">Incorrect (x)</button>
  </div>
</div>`;
}

export function renderDoneHtml(progress: Progress, queued: number): string {
  const note = queued > 0 ? `<p>${queued} verdict(s) queued offline; press f to flush.</p>` : "";
  return `<div class="done"><h2>Batch complete</h2><p>${progress.done} of ${progress.total} reviewed.</p>${note}</div>`;
}

export function renderCrossExamHtml(task: CrossExamTask, pendingCount: number): string {
  const options = task.record.options
    .map((opt, k) => {
      const marker = k === task.proposed_answer_index ? " proposed" : "";
      return `<li class="option${marker}" data-index="${k}">${k + 1}. ${escapeHtml(opt)}${
        marker ? " &larr; proposed" : ""
      }</li>`;
    })
    .join("");
  return `
<div class="crossexam" data-task-id="${escapeHtml(task.task_id)}">
  <div class="progress">${pendingCount} pending</div>
  <p class="question">${escapeHtml(task.record.question)}</p>
  <ol class="options">${options}</ol>
  <div class="controls">
    <button id="ce-confirm">Confirm (enter)</button>
    <span>or press an option number to edit</span>
  </div>
</div>`;
}
