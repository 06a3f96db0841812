"""HTTP service for blinded human validation of generated comparisons.

Reviewers see a mixed batch drawn from kept and removed groups; the arm a
task came from lives only server-side. Every client-visible task carries
the same field set, so nothing in the payload can tip the reviewer off.
Verdicts and cross-exam resolutions go to append-only logs replayed at
startup; at the few-hundred-task scale this is all the durability the
workflow needs.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .corpus import ComparisonItem
from .evalkit import MCQRecord

ARM_KEPT = "kept"
ARM_REMOVED = "removed"


class ReviewError(ValueError):
    pass


@dataclass(frozen=True)
class ReviewTask:
    task_id: str
    batch: str
    payload: dict
    hidden_arm: str  # server-side only; never serialized to clients

    def client_view(self) -> dict:
        return {"task_id": self.task_id, "batch": self.batch, **self.payload}

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "batch": self.batch,
            "payload": self.payload,
            "hidden_arm": self.hidden_arm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewTask":
        return cls(d["task_id"], d["batch"], d["payload"], d["hidden_arm"])


@dataclass(frozen=True)
class ReviewVerdict:
    task_id: str
    reviewer_id: str
    correct: bool
    timestamp: float

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "reviewer_id": self.reviewer_id,
            "correct": self.correct,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewVerdict":
        return cls(d["task_id"], d["reviewer_id"], d["correct"], d["timestamp"])


STATUS_PENDING = "pending"
STATUS_CONFIRMED = "confirmed"
STATUS_EDITED = "edited"


@dataclass(frozen=True)
class CrossExamTask:
    task_id: str
    record: dict  # serialized MCQRecord
    proposed_answer_index: int
    status: str = STATUS_PENDING
    final_answer_index: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "record": self.record,
            "proposed_answer_index": self.proposed_answer_index,
            "status": self.status,
            "final_answer_index": self.final_answer_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CrossExamTask":
        return cls(
            d["task_id"],
            d["record"],
            d["proposed_answer_index"],
            d.get("status", STATUS_PENDING),
            d.get("final_answer_index"),
        )


def _task_digest(*parts: str) -> str:
    return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()[:16]


def create_review_batch(
    kept_items: Sequence[ComparisonItem],
    removed_items: Sequence[ComparisonItem],
    k: int,
    seed: int,
    batch: str = "default",
    descriptions: Optional[Mapping[str, str]] = None,
) -> list[ReviewTask]:
    """Sample k items per arm and shuffle them together with a seeded RNG.

    Payload field sets are identical across arms by construction; the arm
    tag lives only in the server-side record.
    """
    if k < 0:
        raise ReviewError("k must be >= 0")
    feasible = min(len(kept_items), len(removed_items))
    if k > feasible:
        raise ReviewError(
            f"need {k} items per arm but only {len(kept_items)} kept / "
            f"{len(removed_items)} removed are available; feasible k is {feasible}"
        )
    rng = random.Random(seed)
    chosen = [
        (item, ARM_KEPT) for item in rng.sample(list(kept_items), k)
    ] + [
        (item, ARM_REMOVED) for item in rng.sample(list(removed_items), k)
    ]
    rng.shuffle(chosen)
    tasks: list[ReviewTask] = []
    for item, arm in chosen:
        payload = {
            "images": [ref.to_dict() for ref in item.group.members],
            "descriptions": [
                (descriptions or {}).get(member_id) for member_id in item.group.member_ids
            ],
            "question": item.query,
            "comparison": item.response,
        }
        tasks.append(
            ReviewTask(
                task_id=_task_digest(batch, item.group.group_id, item.response),
                batch=batch,
                payload=payload,
                hidden_arm=arm,
            )
        )
    return tasks


class ReviewStore:
    """Tasks, verdicts, and cross-exam state backed by append-only JSONL logs."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.tasks: dict[str, ReviewTask] = {}
        self.verdicts: dict[tuple[str, str], ReviewVerdict] = {}
        self.crossexam: dict[str, CrossExamTask] = {}
        self._replay()

    # file layout
    @property
    def _tasks_path(self) -> Path:
        return self.root / "tasks.jsonl"

    @property
    def _verdicts_path(self) -> Path:
        return self.root / "verdicts.jsonl"

    @property
    def _crossexam_path(self) -> Path:
        return self.root / "crossexam_tasks.jsonl"

    @property
    def _resolutions_path(self) -> Path:
        return self.root / "crossexam_resolutions.jsonl"

    def _replay(self) -> None:
        if self._tasks_path.exists():
            for line in self._tasks_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    task = ReviewTask.from_dict(json.loads(line))
                    self.tasks[task.task_id] = task
        if self._verdicts_path.exists():
            for line in self._verdicts_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    v = ReviewVerdict.from_dict(json.loads(line))
                    self.verdicts[(v.task_id, v.reviewer_id)] = v
        if self._crossexam_path.exists():
            for line in self._crossexam_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    t = CrossExamTask.from_dict(json.loads(line))
                    self.crossexam[t.task_id] = t
        if self._resolutions_path.exists():
            for line in self._resolutions_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    d = json.loads(line)
                    t = self.crossexam.get(d["task_id"])
                    if t is not None:
                        self.crossexam[t.task_id] = CrossExamTask(
                            task_id=t.task_id,
                            record=t.record,
                            proposed_answer_index=t.proposed_answer_index,
                            status=d["status"],
                            final_answer_index=d["final_answer_index"],
                        )

    @staticmethod
    def _append(path: Path, record: dict) -> None:
        with path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
            f.flush()

    def add_tasks(self, tasks: Sequence[ReviewTask]) -> None:
        with self._lock:
            for task in tasks:
                if task.task_id in self.tasks:
                    raise ReviewError(f"duplicate task id {task.task_id}")
                self.tasks[task.task_id] = task
                self._append(self._tasks_path, task.to_dict())

    def add_crossexam(self, tasks: Sequence[CrossExamTask]) -> None:
        with self._lock:
            for task in tasks:
                if task.task_id in self.crossexam:
                    raise ReviewError(f"duplicate cross-exam id {task.task_id}")
                self.crossexam[task.task_id] = task
                self._append(self._crossexam_path, task.to_dict())

    def tasks_for_batch(self, batch: str) -> list[ReviewTask]:
        return [t for t in self.tasks.values() if t.batch == batch]

    def submit_verdict(self, verdict: ReviewVerdict) -> str:
        """Returns "accepted" or "duplicate"; raises on unknown task or conflict."""
        if verdict.task_id not in self.tasks:
            raise KeyError(verdict.task_id)
        with self._lock:
            key = (verdict.task_id, verdict.reviewer_id)
            existing = self.verdicts.get(key)
            if existing is not None:
                if existing.correct == verdict.correct:
                    return "duplicate"
                raise ReviewError(
                    f"conflicting verdict for task {verdict.task_id} "
                    f"by reviewer {verdict.reviewer_id}"
                )
            self.verdicts[key] = verdict
            self._append(self._verdicts_path, verdict.to_dict())
            return "accepted"

    def correctness_report(self, batch: str) -> dict:
        """Per-arm correctness rates; the only place arm labels are revealed."""
        tasks = {t.task_id: t for t in self.tasks_for_batch(batch)}
        verdicts = [v for (tid, _), v in self.verdicts.items() if tid in tasks]
        if not verdicts:
            raise ReviewError(f"no verdicts recorded for batch {batch!r}")
        tallies = {ARM_KEPT: [0, 0], ARM_REMOVED: [0, 0]}
        for v in verdicts:
            arm = tasks[v.task_id].hidden_arm
            tallies[arm][0] += int(v.correct)
            tallies[arm][1] += 1
        report: dict = {"batch": batch, "n_verdicts": len(verdicts), "arms": {}}
        for arm, (correct, total) in tallies.items():
            report["arms"][arm] = {
                "correct": correct,
                "total": total,
                "rate": correct / total if total else None,
            }
        overall_correct = sum(int(v.correct) for v in verdicts)
        report["overall"] = {
            "correct": overall_correct,
            "total": len(verdicts),
            "rate": overall_correct / len(verdicts),
        }
        return report

    def pending_crossexam(self) -> list[CrossExamTask]:
        return [t for t in self.crossexam.values() if t.status == STATUS_PENDING]

    def resolve_crossexam(
        self, task_id: str, action: str, new_index: Optional[int] = None
    ) -> CrossExamTask:
        with self._lock:
            task = self.crossexam.get(task_id)
            if task is None:
                raise KeyError(task_id)
            if task.status != STATUS_PENDING:
                raise ReviewError(f"task {task_id} already resolved ({task.status})")
            if action == "confirm":
                resolved = CrossExamTask(
                    task_id=task.task_id,
                    record=task.record,
                    proposed_answer_index=task.proposed_answer_index,
                    status=STATUS_CONFIRMED,
                    final_answer_index=task.proposed_answer_index,
                )
            elif action == "edit":
                n_options = len(task.record["options"])
                if new_index is None or not 0 <= new_index < n_options:
                    raise ReviewError(f"edit needs a new_index in 0..{n_options - 1}")
                resolved = CrossExamTask(
                    task_id=task.task_id,
                    record=task.record,
                    proposed_answer_index=task.proposed_answer_index,
                    status=STATUS_EDITED,
                    final_answer_index=new_index,
                )
            else:
                raise ReviewError(f"unknown action {action!r}")
            self.crossexam[task_id] = resolved
            self._append(
                self._resolutions_path,
                {
                    "task_id": task_id,
                    "status": resolved.status,
                    "proposed_answer_index": resolved.proposed_answer_index,
                    "final_answer_index": resolved.final_answer_index,
                },
            )
            return resolved


def crossexam_tasks_from_records(
    records: Sequence[MCQRecord], batch: str = "default"
) -> list[CrossExamTask]:
    """Wrap answered MCQ records as pending cross-exam tasks."""
    tasks = []
    for record in records:
        if record.answer_index is None:
            raise ReviewError(f"record {record.digest()} has no proposed answer")
        tasks.append(
            CrossExamTask(
                task_id=_task_digest(batch, record.digest()),
                record=record.to_dict(),
                proposed_answer_index=record.answer_index,
            )
        )
    return tasks


# -- HTTP layer --


class VerdictBody(BaseModel):
    task_id: str
    reviewer_id: str
    correct: bool
    timestamp: Optional[float] = None


class ResolveBody(BaseModel):
    action: str
    new_index: Optional[int] = None


def build_app(store: ReviewStore) -> FastAPI:
    app = FastAPI(title="vqcmp review service")

    @app.get("/tasks")
    def get_tasks(batch: str = "default", reviewer: Optional[str] = None) -> dict:
        tasks = store.tasks_for_batch(batch)
        views = []
        for t in tasks:
            view = t.client_view()
            if reviewer is not None:
                # lets a client resume at its first unreviewed task after refresh
                view["reviewed"] = (t.task_id, reviewer) in store.verdicts
            views.append(view)
        return {"batch": batch, "tasks": views}

    @app.post("/verdicts")
    def post_verdict(body: VerdictBody) -> dict:
        verdict = ReviewVerdict(
            task_id=body.task_id,
            reviewer_id=body.reviewer_id,
            correct=body.correct,
            timestamp=body.timestamp if body.timestamp is not None else time.time(),
        )
        try:
            status = store.submit_verdict(verdict)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown task {body.task_id}")
        except ReviewError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"status": status}

    @app.get("/report")
    def get_report(batch: str = "default") -> dict:
        try:
            return store.correctness_report(batch)
        except ReviewError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/crossexam/pending")
    def get_pending() -> dict:
        return {"tasks": [t.to_dict() for t in store.pending_crossexam()]}

    @app.post("/crossexam/{task_id}/resolve")
    def post_resolve(task_id: str, body: ResolveBody) -> dict:
        try:
            resolved = store.resolve_crossexam(task_id, body.action, body.new_index)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown task {task_id}")
        except ReviewError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return resolved.to_dict()

    return app
