// Offline verdict queue.
//
// Verdicts submitted while the service is unreachable are parked here and
// flushed on reconnect. Exactly-once delivery comes from two sides: the
// queue holds at most one verdict per (task, reviewer), and the server
// treats an identical re-submission as a duplicate rather than a second
// verdict, so a flush that races a retry can never double-count.

import type { SubmitOutcome, Verdict } from "./api.js";

export interface QueueStorage {
  load(): Verdict[];
  save(verdicts: Verdict[]): void;
}

export class MemoryStorage implements QueueStorage {
  private items: Verdict[] = [];
  load(): Verdict[] {
    return [...this.items];
  }
  save(verdicts: Verdict[]): void {
    this.items = [...verdicts];
  }
}

/** Browser adapter; falls back to memory when localStorage is unavailable. */
export class LocalStorage implements QueueStorage {
  constructor(private readonly key = "vqcmp-verdict-queue") {}
  load(): Verdict[] {
    try {
      return JSON.parse(globalThis.localStorage?.getItem(this.key) ?? "[]") as Verdict[];
    } catch {
      return [];
    }
  }
  save(verdicts: Verdict[]): void {
    globalThis.localStorage?.setItem(this.key, JSON.stringify(verdicts));
  }
}

export interface FlushResult {
  delivered: number;
  conflicts: Verdict[];
  remaining: number;
}

export class OfflineQueue {
  private queue: Verdict[];

  constructor(private readonly storage: QueueStorage = new MemoryStorage()) {
    this.queue = storage.load();
  }

  get size(): number {
    return this.queue.length;
  }

  pending(): Verdict[] {
    return [...this.queue];
  }

  /** Replaces any queued verdict for the same (task, reviewer). */
  enqueue(verdict: Verdict): void {
    this.queue = this.queue.filter(
      (v) => !(v.task_id === verdict.task_id && v.reviewer_id === verdict.reviewer_id),
    );
    this.queue.push(verdict);
    this.storage.save(this.queue);
  }

  /**
   * Push queued verdicts to the server. Delivered and unsalvageable entries
   * leave the queue; entries that still cannot reach the server stay for the
   * next flush. A "duplicate" outcome counts as delivered: the server already
   * holds this exact verdict.
   */
  async flush(submit: (verdict: Verdict) => Promise<SubmitOutcome>): Promise<FlushResult> {
    const conflicts: Verdict[] = [];
    const stillQueued: Verdict[] = [];
    let delivered = 0;
    for (const verdict of this.queue) {
      let outcome: SubmitOutcome;
      try {
        outcome = await submit(verdict);
      } catch {
        stillQueued.push(verdict); // network is still down; keep it
        continue;
      }
      if (outcome === "accepted" || outcome === "duplicate") {
        delivered += 1;
      } else if (outcome === "conflict") {
        conflicts.push(verdict); // differing verdict already recorded; surface it
      }
      // not_found entries are dropped: the task no longer exists
    }
    this.queue = stillQueued;
    this.storage.save(this.queue);
    return { delivered, conflicts, remaining: this.queue.length };
  }
}
