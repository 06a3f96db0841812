import { describe, expect, it } from "vitest";

import { ReviewApi } from "../src/api.js";
import type { FetchLike } from "../src/api.js";
import { makeMockService, makeTask } from "./mockService.js";

describe("ReviewApi", () => {
  it("builds task URLs with batch and optional reviewer", async () => {
    const seen: string[] = [];
    const fetchFn: FetchLike = async (input) => {
      seen.push(input);
      return new Response(JSON.stringify({ tasks: [] }), { status: 200 });
    };
    const api = new ReviewApi("http://svc:1234/", fetchFn);
    await api.fetchTasks("b1");
    await api.fetchTasks("b1", "alice");
    expect(seen[0]).toBe("http://svc:1234/tasks?batch=b1");
    expect(seen[1]).toBe("http://svc:1234/tasks?batch=b1&reviewer=alice");
  });

  it("maps verdict status codes to outcomes", async () => {
    const { fetchFn } = makeMockService([makeTask(0)]);
    const api = new ReviewApi("http://mock", fetchFn);
    const verdict = { task_id: "task0", reviewer_id: "r", correct: true };
    expect(await api.submitVerdict(verdict)).toBe("accepted");
    expect(await api.submitVerdict(verdict)).toBe("duplicate");
    expect(await api.submitVerdict({ ...verdict, correct: false })).toBe("conflict");
    expect(await api.submitVerdict({ ...verdict, task_id: "none" })).toBe("not_found");
  });

  it("returns null for a report with no verdicts yet", async () => {
    const { fetchFn } = makeMockService([makeTask(0)]);
    const api = new ReviewApi("http://mock", fetchFn);
    expect(await api.fetchReport("default")).toBeNull();
  });

  it("throws on unexpected statuses", async () => {
    const fetchFn: FetchLike = async () => new Response("boom", { status: 500 });
    const api = new ReviewApi("http://mock", fetchFn);
    await expect(api.fetchTasks("b")).rejects.toThrow("500");
  });
});
