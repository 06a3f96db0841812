// Typed client for the review service HTTP contract.
//
// The client only ever touches the documented endpoints; in particular it
// never asks for (and has no type for) the server-side arm label, so the
// blinding guarantee holds by construction on this side too.

export interface ImageRefView {
  id: string;
  source: string;
  uri: string | null;
}

export interface TaskView {
  task_id: string;
  batch: string;
  images: ImageRefView[];
  descriptions: (string | null)[];
  question: string;
  comparison: string;
  /** present only when tasks were fetched with a reviewer id */
  reviewed?: boolean;
}

export interface Verdict {
  task_id: string;
  reviewer_id: string;
  correct: boolean;
}

export interface ArmReport {
  correct: number;
  total: number;
  rate: number | null;
}

export interface Report {
  batch: string;
  n_verdicts: number;
  arms: Record<string, ArmReport>;
  overall: ArmReport;
}

export interface CrossExamRecord {
  images: ImageRefView[];
  question: string;
  options: string[];
  qtype: string;
  split: string;
  answer_index: number | null;
}

export interface CrossExamTask {
  task_id: string;
  record: CrossExamRecord;
  proposed_answer_index: number;
  status: "pending" | "confirmed" | "edited";
  final_answer_index: number | null;
}

export type SubmitOutcome = "accepted" | "duplicate" | "conflict" | "not_found";
export type ResolveOutcome = "resolved" | "conflict" | "not_found";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ReviewApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string, params?: Record<string, string>): string {
    const search = params ? "?" + new URLSearchParams(params).toString() : "";
    return `${this.baseUrl.replace(/\/$/, "")}${path}${search}`;
  }

  async fetchTasks(batch: string, reviewer?: string): Promise<TaskView[]> {
    const params: Record<string, string> = { batch };
    if (reviewer !== undefined) params.reviewer = reviewer;
    const resp = await this.fetchFn(this.url("/tasks", params));
    if (!resp.ok) throw new Error(`GET /tasks failed: ${resp.status}`);
    const body = (await resp.json()) as { tasks: TaskView[] };
    return body.tasks;
  }

  async submitVerdict(verdict: Verdict): Promise<SubmitOutcome> {
    const resp = await this.fetchFn(this.url("/verdicts"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(verdict),
    });
    if (resp.status === 404) return "not_found";
    if (resp.status === 409) return "conflict";
    if (!resp.ok) throw new Error(`POST /verdicts failed: ${resp.status}`);
    const body = (await resp.json()) as { status: "accepted" | "duplicate" };
    return body.status;
  }

  /** null means the server has no verdicts for this batch yet */
  async fetchReport(batch: string): Promise<Report | null> {
    const resp = await this.fetchFn(this.url("/report", { batch }));
    if (resp.status === 400) return null;
    if (!resp.ok) throw new Error(`GET /report failed: ${resp.status}`);
    return (await resp.json()) as Report;
  }

  async fetchPendingCrossExam(): Promise<CrossExamTask[]> {
    const resp = await this.fetchFn(this.url("/crossexam/pending"));
    if (!resp.ok) throw new Error(`GET /crossexam/pending failed: ${resp.status}`);
    const body = (await resp.json()) as { tasks: CrossExamTask[] };
    return body.tasks;
  }

  async resolveCrossExam(
    taskId: string,
    action: "confirm" | "edit",
    newIndex?: number,
  ): Promise<ResolveOutcome> {
    const resp = await this.fetchFn(this.url(`/crossexam/${taskId}/resolve`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ action, new_index: newIndex ?? null }),
    });
    if (resp.status === 404) return "not_found";
    if (resp.status === 409) return "conflict";
    if (!resp.ok) throw new Error(`POST resolve failed: ${resp.status}`);
    return "resolved";
  }
}
