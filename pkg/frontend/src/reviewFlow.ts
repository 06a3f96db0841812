// Review session state: step through a blinded batch, one verdict per task.
//
// All truth lives server-side. On start (or refresh) the flow re-fetches the
// task list with this reviewer's id and resumes at the first task the server
// has no verdict for; locally it only tracks the cursor and the offline queue.

import type { ReviewApi, SubmitOutcome, TaskView } from "./api.js";
import { OfflineQueue } from "./queue.js";
import type { Progress } from "./types.js";

export function firstUnreviewed(tasks: TaskView[]): number {
  const index = tasks.findIndex((t) => !t.reviewed);
  return index === -1 ? tasks.length : index;
}

export class ReviewFlow {
  private tasks: TaskView[] = [];
  private cursor = 0;

  constructor(
    private readonly api: ReviewApi,
    private readonly batch: string,
    private readonly reviewerId: string,
    readonly queue: OfflineQueue = new OfflineQueue(),
  ) {}

  /** Fetch tasks and position the cursor from server state. */
  async start(): Promise<void> {
    this.tasks = await this.api.fetchTasks(this.batch, this.reviewerId);
    this.cursor = firstUnreviewed(this.tasks);
  }

  current(): TaskView | null {
    return this.tasks[this.cursor] ?? null;
  }

  progress(): Progress {
    const done = this.tasks.filter((t) => t.reviewed).length;
    return { done, total: this.tasks.length };
  }

  finished(): boolean {
    return this.cursor >= this.tasks.length;
  }

  /**
   * Record a verdict for the current task and advance. Network failures park
   * the verdict in the offline queue; the task is still marked locally so the
   * reviewer keeps moving, and flushQueue() reconciles with the server later.
   */
  async submit(correct: boolean): Promise<SubmitOutcome | "queued"> {
    const task = this.current();
    if (task === null) throw new Error("no task to review");
    const verdict = {
      task_id: task.task_id,
      reviewer_id: this.reviewerId,
      correct,
    };
    let outcome: SubmitOutcome | "queued";
    try {
      outcome = await this.api.submitVerdict(verdict);
    } catch {
      this.queue.enqueue(verdict);
      outcome = "queued";
    }
    task.reviewed = true;
    this.cursor += 1;
    return outcome;
  }

  /** Push any offline verdicts; safe to call repeatedly. */
  async flushQueue() {
    return this.queue.flush((verdict) => this.api.submitVerdict(verdict));
  }
}
