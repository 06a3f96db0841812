import { describe, expect, it } from "vitest";

import { ReviewApi } from "../src/api.js";
import { firstUnreviewed, ReviewFlow } from "../src/reviewFlow.js";
import { makeMockService, makeTask } from "./mockService.js";

function setup(nTasks = 4) {
  const tasks = Array.from({ length: nTasks }, (_, n) => makeTask(n));
  const mock = makeMockService(tasks);
  const api = new ReviewApi("http://mock", mock.fetchFn);
  return { mock, api };
}

describe("firstUnreviewed", () => {
  it("finds the first task without a verdict", () => {
    const tasks = [makeTask(0), makeTask(1), makeTask(2)];
    tasks[0]!.reviewed = true;
    expect(firstUnreviewed(tasks)).toBe(1);
  });

  it("is the list length when everything is reviewed", () => {
    const tasks = [makeTask(0)];
    tasks[0]!.reviewed = true;
    expect(firstUnreviewed(tasks)).toBe(1);
  });
});

describe("ReviewFlow", () => {
  it("submits a verdict that then shows up in the report", async () => {
    const { api } = setup();
    const flow = new ReviewFlow(api, "default", "alice");
    await flow.start();
    expect(flow.progress()).toEqual({ done: 0, total: 4 });
    const outcome = await flow.submit(true);
    expect(outcome).toBe("accepted");
    const report = await api.fetchReport("default");
    expect(report?.n_verdicts).toBe(1);
    expect(report?.overall.correct).toBe(1);
  });

  it("resumes at the first unreviewed task after a refresh", async () => {
    const { api } = setup();
    const flow = new ReviewFlow(api, "default", "alice");
    await flow.start();
    await flow.submit(true);
    await flow.submit(false);

    // "refresh": a brand-new flow instance with no local state
    const resumed = new ReviewFlow(api, "default", "alice");
    await resumed.start();
    expect(resumed.progress()).toEqual({ done: 2, total: 4 });
    expect(resumed.current()?.task_id).toBe("task2");

    // a different reviewer starts from the top
    const other = new ReviewFlow(api, "default", "bob");
    await other.start();
    expect(other.current()?.task_id).toBe("task0");
  });

  it("queues offline verdicts and flushes them exactly once", async () => {
    const { mock, api } = setup();
    const flow = new ReviewFlow(api, "default", "alice");
    await flow.start();

    mock.state.offline = true;
    const outcome = await flow.submit(true);
    expect(outcome).toBe("queued");
    expect(flow.queue.size).toBe(1);
    expect(flow.current()?.task_id).toBe("task1"); // reviewer keeps moving

    mock.state.offline = false;
    const flushed = await flow.flushQueue();
    expect(flushed).toEqual({ delivered: 1, conflicts: [], remaining: 0 });
    const again = await flow.flushQueue();
    expect(again.delivered).toBe(0);
    expect(mock.state.applyCount.get("task0alice")).toBe(1);

    const report = await api.fetchReport("default");
    expect(report?.n_verdicts).toBe(1);
  });

  it("finishes cleanly at the end of the batch", async () => {
    const { api } = setup(2);
    const flow = new ReviewFlow(api, "default", "alice");
    await flow.start();
    await flow.submit(true);
    await flow.submit(true);
    expect(flow.finished()).toBe(true);
    expect(flow.current()).toBeNull();
    await expect(flow.submit(true)).rejects.toThrow("no task");
  });
});
