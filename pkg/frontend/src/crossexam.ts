// Cross-examination session: an expert confirms or edits proposed MCQ answers.
//
// Resolution is one-shot server-side; the in-flight guard here keeps an eager
// double-click from even issuing the second request (the server would answer
// 409 anyway).

import type { CrossExamTask, ResolveOutcome, ReviewApi } from "./api.js";

export class CrossExamFlow {
  private tasks: CrossExamTask[] = [];
  private inFlight = new Set<string>();

  constructor(private readonly api: ReviewApi) {}

  async load(): Promise<void> {
    this.tasks = await this.api.fetchPendingCrossExam();
  }

  pending(): CrossExamTask[] {
    return [...this.tasks];
  }

  pendingCount(): number {
    return this.tasks.length;
  }

  isBusy(taskId: string): boolean {
    return this.inFlight.has(taskId);
  }

  async resolve(
    taskId: string,
    action: "confirm" | "edit",
    newIndex?: number,
  ): Promise<ResolveOutcome | "busy"> {
    if (this.inFlight.has(taskId)) return "busy";
    this.inFlight.add(taskId);
    try {
      const outcome = await this.api.resolveCrossExam(taskId, action, newIndex);
      if (outcome === "resolved" || outcome === "conflict" || outcome === "not_found") {
        // whatever happened server-side, this task is no longer actionable here
        this.tasks = this.tasks.filter((t) => t.task_id !== taskId);
      }
      return outcome;
    } finally {
      this.inFlight.delete(taskId);
    }
  }
}
