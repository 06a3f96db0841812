"""MCQ benchmark execution/scoring and judge-scored reasoning evaluation.

Scoring is deliberately unforgiving: a response that names no option (or
names several) is unresolved and counts as incorrect, so models that
ignore the answer format pay for it in plain accuracy.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

from .assembler import InterleaveFormat, render_interleaved
from .clients import (
    ChatClient,
    ClientError,
    ResponseCache,
    Turn,
    bounded_map,
    call_with_retry,
)
from .corpus import ImageRef, _iter_lines


class EvalError(ValueError):
    pass


class BenchShapeError(EvalError):
    """Benchmark file does not match its declared published shape."""


class QType(str, Enum):
    YES_OR_NO = "yes_or_no"
    WHICH = "which"
    WHAT = "what"
    HOW = "how"
    OTHERS = "others"


class Split(str, Enum):
    DEV = "dev"
    TEST = "test"


OPTION_LETTERS = "ABCD"


@dataclass(frozen=True)
class MCQRecord:
    images: tuple[ImageRef, ...]
    question: str
    options: tuple[str, ...]
    qtype: QType
    split: Split
    answer_index: Optional[int] = None  # None while the key is hidden

    def __post_init__(self) -> None:
        if not 1 <= len(self.images) <= 4:
            raise EvalError(f"records carry 1-4 images, got {len(self.images)}")
        if not 2 <= len(self.options) <= 4:
            raise EvalError(f"records carry 2-4 options, got {len(self.options)}")
        if self.qtype is QType.YES_OR_NO and len(self.options) != 2:
            raise EvalError("yes_or_no questions must have exactly 2 options")
        if self.answer_index is not None and not 0 <= self.answer_index < len(self.options):
            raise EvalError(f"answer_index {self.answer_index} out of range")

    def digest(self) -> str:
        payload = json.dumps(
            {
                "images": [ref.id for ref in self.images],
                "question": self.question,
                "options": list(self.options),
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "images": [ref.to_dict() for ref in self.images],
            "question": self.question,
            "options": list(self.options),
            "qtype": self.qtype.value,
            "split": self.split.value,
            "answer_index": self.answer_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MCQRecord":
        return cls(
            images=tuple(ImageRef.from_dict(i) for i in d["images"]),
            question=d["question"],
            options=tuple(d["options"]),
            qtype=QType(d["qtype"]),
            split=Split(d["split"]),
            answer_index=d.get("answer_index"),
        )


MICBENCH_NAME = "micbench"
MICBENCH_DEV_SIZE = 1004
MICBENCH_TEST_SIZE = 996
MICBENCH_TEST_QTYPE_COUNTS = {"yes_or_no": 220, "which": 594, "others": 182}
MICBENCH_TEST_SIZE_COUNTS = {3: 503, 4: 493}
#: question-type mix over the full benchmark, with tolerance in points
MICBENCH_FULL_MIX = {"which": 0.60, "yes_or_no": 0.22, "others": 0.18}
MICBENCH_MIX_TOL = 0.02


def fold_qtype(qtype: QType) -> str:
    """Three-way reporting buckets: what/how fold into "others"."""
    if qtype in (QType.WHAT, QType.HOW, QType.OTHERS):
        return QType.OTHERS.value
    return qtype.value


@dataclass(frozen=True)
class BenchDefinition:
    name: str
    records: tuple[MCQRecord, ...]

    def __post_init__(self) -> None:
        if self.name == MICBENCH_NAME:
            validate_micbench_shape(self.records)

    def split_records(self, split: Split) -> list[MCQRecord]:
        return [r for r in self.records if r.split is split]


def validate_micbench_shape(records: Sequence[MCQRecord]) -> None:
    """Assert the published benchmark shape: split sizes, test-split question-type
    and group-size counts, and the overall question-type mix."""
    dev = [r for r in records if r.split is Split.DEV]
    test = [r for r in records if r.split is Split.TEST]
    if len(dev) != MICBENCH_DEV_SIZE or len(test) != MICBENCH_TEST_SIZE:
        raise BenchShapeError(
            f"split sizes must be dev={MICBENCH_DEV_SIZE}/test={MICBENCH_TEST_SIZE}, "
            f"got dev={len(dev)}/test={len(test)}"
        )
    qtype_counts: dict[str, int] = {}
    size_counts: dict[int, int] = {}
    for r in test:
        qtype_counts[fold_qtype(r.qtype)] = qtype_counts.get(fold_qtype(r.qtype), 0) + 1
        size_counts[len(r.images)] = size_counts.get(len(r.images), 0) + 1
    if qtype_counts != MICBENCH_TEST_QTYPE_COUNTS:
        raise BenchShapeError(
            f"test-split question-type counts {qtype_counts} != {MICBENCH_TEST_QTYPE_COUNTS}"
        )
    if size_counts != MICBENCH_TEST_SIZE_COUNTS:
        raise BenchShapeError(
            f"test-split group-size counts {size_counts} != {MICBENCH_TEST_SIZE_COUNTS}"
        )
    total = len(records)
    for bucket, share in MICBENCH_FULL_MIX.items():
        have = sum(1 for r in records if fold_qtype(r.qtype) == bucket) / total
        if abs(have - share) > MICBENCH_MIX_TOL:
            raise BenchShapeError(
                f"{bucket} share {have:.3f} outside {share} +/- {MICBENCH_MIX_TOL}"
            )


def load_bench(
    path: str | Path, name: str, keys_path: Optional[str | Path] = None
) -> BenchDefinition:
    """Load records (one per line); an optional keys file fills hidden answers.

    Keys files carry {"record_digest", "answer_index"} lines, supporting
    the hidden-test workflow where answers ship separately.
    """
    records = [MCQRecord.from_dict(d) for _, d in _iter_lines(Path(path))]
    if keys_path is not None:
        keys: dict[str, int] = {}
        for _, d in _iter_lines(Path(keys_path)):
            keys[d["record_digest"]] = d["answer_index"]
        filled: list[MCQRecord] = []
        for r in records:
            idx = keys.get(r.digest(), r.answer_index)
            filled.append(
                MCQRecord(
                    images=r.images,
                    question=r.question,
                    options=r.options,
                    qtype=r.qtype,
                    split=r.split,
                    answer_index=idx,
                )
            )
        records = filled
    return BenchDefinition(name=name, records=tuple(records))


def save_bench(records: Sequence[MCQRecord], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")
    return len(records)


# -- choice extraction and scoring --

_PAREN_LETTER_RE = re.compile(r"\(([A-D])\)")
# sentence-leading letter must close with punctuation or line/text end; a bare
# trailing space would turn the article in "A bright image..." into an answer
_LEAD_LETTER_RE = re.compile(r"(?:^|[.!?:;\n])\s*[\"'*]*([A-D])[\"'*]*(?:[).:,]|\n|$)")


def extract_choice(response: str, options: Sequence[str]) -> Optional[int]:
    """Grade free-form output against the option list.

    Precedence: first standalone option letter (parenthesized or
    sentence-leading), then unique case-insensitive option-text
    containment, else unresolved (None).
    """
    if not 2 <= len(options) <= 4:
        raise EvalError("need 2-4 options")
    valid = OPTION_LETTERS[: len(options)]

    hits: list[tuple[int, str]] = []
    for match in _PAREN_LETTER_RE.finditer(response):
        if match.group(1) in valid:
            hits.append((match.start(1), match.group(1)))
    for match in _LEAD_LETTER_RE.finditer(response):
        if match.group(1) in valid:
            hits.append((match.start(1), match.group(1)))
    if hits:
        return valid.index(min(hits)[1])

    low = response.lower()
    contained = [i for i, opt in enumerate(options) if opt.lower() in low]
    if len(contained) == 1:
        return contained[0]
    return None


def render_mcq_prompt(record: MCQRecord, fmt: InterleaveFormat) -> Turn:
    lettered = " ".join(
        f"{OPTION_LETTERS[i]}. {opt}" for i, opt in enumerate(record.options)
    )
    query = (
        f"{record.question} Choose one of the following options: {lettered} "
        f"Answer with the letter of your choice."
    )
    text = render_interleaved(len(record.images), query, fmt)
    return Turn(text=text, images=record.images)


def run_mcq(
    client: ChatClient,
    bench: BenchDefinition,
    fmt: InterleaveFormat,
    split: Split,
    cache: Optional[ResponseCache] = None,
    max_in_flight: int = 8,
    sleep: Callable[[float], None] = time.sleep,
) -> list[Optional[str]]:
    """One raw response per record (None where the client failed for good)."""
    records = bench.split_records(split)

    def ask(record: MCQRecord) -> Optional[str]:
        key = f"mcq:{fmt.value}:{record.digest()}"
        if cache is not None:
            hit = cache.get(client.name, key)
            if hit is not None:
                return hit
        turn = render_mcq_prompt(record, fmt)
        try:
            text = call_with_retry(lambda: client.complete(None, [turn]), sleep=sleep)
        except ClientError:
            return None
        if cache is not None:
            cache.put(client.name, key, text)
        return text

    return list(bounded_map(ask, records, max_in_flight=max_in_flight))


@dataclass(frozen=True)
class Breakdown:
    correct: int
    count: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.count if self.count else 0.0

    def to_dict(self) -> dict:
        return {"correct": self.correct, "count": self.count, "accuracy": self.accuracy}


@dataclass(frozen=True)
class AccuracyReport:
    overall: float
    n_records: int
    n_correct: int
    n_unresolved: int
    by_qtype: dict[str, Breakdown] = field(default_factory=dict)
    by_group_size: dict[int, Breakdown] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "n_records": self.n_records,
            "n_correct": self.n_correct,
            "n_unresolved": self.n_unresolved,
            "by_qtype": {k: v.to_dict() for k, v in self.by_qtype.items()},
            "by_group_size": {str(k): v.to_dict() for k, v in self.by_group_size.items()},
        }


def score_mcq(
    responses: Sequence[Optional[str]],
    bench: BenchDefinition,
    split: Split,
    fold_what_how: Optional[bool] = None,
) -> AccuracyReport:
    """Accuracy with question-type and group-size breakdowns.

    Unresolved responses count as incorrect. what/how fold into "others"
    for the three-or-four-image benchmark's three-column layout; pair or
    single-image benchmarks keep all five types separate.
    """
    records = bench.split_records(split)
    if len(responses) != len(records):
        raise EvalError(f"{len(responses)} responses for {len(records)} records")
    if fold_what_how is None:
        fold_what_how = bench.name == MICBENCH_NAME

    n_correct = 0
    n_unresolved = 0
    qtype_tallies: dict[str, list[int]] = {}
    size_tallies: dict[int, list[int]] = {}
    for record, response in zip(records, responses):
        if record.answer_index is None:
            raise EvalError(f"record {record.digest()} has no answer key")
        if response is None:
            picked = None
        else:
            picked = extract_choice(response, record.options)
        if picked is None:
            n_unresolved += 1
        correct = int(picked == record.answer_index)
        n_correct += correct
        qkey = fold_qtype(record.qtype) if fold_what_how else record.qtype.value
        qtype_tallies.setdefault(qkey, [0, 0])
        qtype_tallies[qkey][0] += correct
        qtype_tallies[qkey][1] += 1
        size = len(record.images)
        size_tallies.setdefault(size, [0, 0])
        size_tallies[size][0] += correct
        size_tallies[size][1] += 1

    return AccuracyReport(
        overall=n_correct / len(records) if records else 0.0,
        n_records=len(records),
        n_correct=n_correct,
        n_unresolved=n_unresolved,
        by_qtype={k: Breakdown(c, n) for k, (c, n) in sorted(qtype_tallies.items())},
        by_group_size={k: Breakdown(c, n) for k, (c, n) in sorted(size_tallies.items())},
    )


def random_baseline(bench: BenchDefinition, split: Split) -> float:
    """Expected accuracy of uniform guessing: mean over records of 1/#options."""
    records = bench.split_records(split)
    if not records:
        raise EvalError(f"no records in split {split.value}")
    return sum(1.0 / len(r.options) for r in records) / len(records)


# -- judge-scored detailed reasoning --

JUDGE_DIMENSIONS = ("completeness", "precision", "relevance")

#: pinned judge rubric; golden-tested, do not reword
JUDGE_RUBRIC = (
    "You are grading a model-written quality comparison against an expert-written "
    "reference comparison of the same images.\n"
    "Rate the model response on three dimensions, each as an integer from 0 to 2:\n"
    "Completeness: 2 covers every quality difference the reference covers, "
    "1 covers some, 0 covers none.\n"
    "Precision: 2 states nothing that contradicts the reference, "
    "1 contains minor contradictions, 0 is mostly contradicted.\n"
    "Relevance: 2 talks about visual quality throughout, "
    "1 drifts partly off-topic, 0 is unrelated to quality.\n"
    "Reference comparison:\n{golden}\n"
    "Model response:\n{response}\n"
    "Reply with exactly three integers separated by spaces, in the order "
    "completeness precision relevance."
)


@dataclass(frozen=True)
class JudgeScores:
    completeness: int
    precision: int
    relevance: int
    flagged: bool = False

    def __post_init__(self) -> None:
        for name in JUDGE_DIMENSIONS:
            if getattr(self, name) not in (0, 1, 2):
                raise EvalError(f"{name} score must be 0, 1, or 2")


_INT_RE = re.compile(r"-?\d+")


def parse_judge_scores(text: str) -> Optional[tuple[int, int, int]]:
    values = [int(v) for v in _INT_RE.findall(text)[:3]]
    if len(values) != 3 or any(v not in (0, 1, 2) for v in values):
        return None
    return values[0], values[1], values[2]


def judge_responses(
    judge: ChatClient,
    responses: Sequence[str],
    goldens: Sequence[str],
    cache: Optional[ResponseCache] = None,
    attempts: int = 3,
    sleep: Callable[[float], None] = time.sleep,
) -> list[JudgeScores]:
    """Score each response against its golden; never skips an entry.

    Malformed judge output is retried with fresh calls (the cache only
    stores replies that parsed); persistent failure scores {0,0,0} and
    flags the entry.
    """
    if len(responses) != len(goldens):
        raise EvalError("one golden per response required")
    out: list[JudgeScores] = []
    for response, golden in zip(responses, goldens):
        prompt = JUDGE_RUBRIC.format(golden=golden, response=response)
        key = f"judge:{hashlib.sha256(prompt.encode('utf-8')).hexdigest()}"
        parsed: Optional[tuple[int, int, int]] = None
        if cache is not None:
            hit = cache.get(judge.name, key)
            if hit is not None:
                parsed = parse_judge_scores(hit)
        if parsed is None:
            for _ in range(attempts):
                try:
                    text = call_with_retry(
                        lambda: judge.complete(None, [Turn(text=prompt)]), sleep=sleep
                    )
                except ClientError:
                    continue
                parsed = parse_judge_scores(text)
                if parsed is not None:
                    if cache is not None:
                        cache.put(judge.name, key, text)
                    break
        if parsed is None:
            out.append(JudgeScores(0, 0, 0, flagged=True))
        else:
            out.append(JudgeScores(*parsed))
    return out


@dataclass(frozen=True)
class DimensionAggregate:
    p0: float
    p1: float
    p2: float

    @property
    def score(self) -> float:
        # expectation of the 0/1/2 score: 0*p0 + 1*p1 + 2*p2
        return self.p1 + 2.0 * self.p2

    def to_dict(self) -> dict:
        return {"p0": self.p0, "p1": self.p1, "p2": self.p2, "score": self.score}


@dataclass(frozen=True)
class JudgeAggregate:
    dimensions: dict[str, DimensionAggregate]

    @property
    def total(self) -> float:
        return sum(d.score for d in self.dimensions.values())

    def to_dict(self) -> dict:
        return {
            "dimensions": {k: v.to_dict() for k, v in self.dimensions.items()},
            "sum": self.total,
        }


def expected_score(p0: float, p1: float, p2: float) -> float:
    """Score expectation from published frequency rows (may carry rounding)."""
    return DimensionAggregate(p0, p1, p2).score


def aggregate_judge(scores: Sequence[JudgeScores]) -> JudgeAggregate:
    """Per-dimension score frequencies and expectations over a judged run."""
    if not scores:
        raise EvalError("no judge scores to aggregate")
    n = len(scores)
    dims: dict[str, DimensionAggregate] = {}
    for name in JUDGE_DIMENSIONS:
        values = [getattr(s, name) for s in scores]
        dims[name] = DimensionAggregate(
            p0=values.count(0) / n,
            p1=values.count(1) / n,
            p2=values.count(2) / n,
        )
    return JudgeAggregate(dimensions=dims)
