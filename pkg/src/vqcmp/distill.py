"""Comparison-text generation from weak supervisors.

Two pipelines share the same prompt skeleton:

* merging: a text-only model reads one human quality description per
  image (descriptions stand in for the images) and writes a comparison;
* teaching: a multimodal model sees the images themselves and writes
  general comparisons or question/answer pairs.

Prompt templates are byte-stable and pinned by golden tests; do not
reword them casually, the training corpus depends on their exact text.
"""

from __future__ import annotations

import random
import re
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

from .clients import (
    ChatClient,
    ClientError,
    ResponseCache,
    Turn,
    bounded_map,
    complete_with_policy,
)
from .corpus import ComparisonItem, ImageGroup, ItemKind, Provenance


class DistillError(ValueError):
    """Template misuse or invalid generated record."""


ORDINAL_WORDS = ("first", "second", "third", "fourth")

PAIR_QUESTION = "Which image has better quality, and why?"
GROUP_QUESTION = "Please rank the quality of the images and justify your rankings."

DEFAULT_ASPECTS = ("clarity", "lighting", "color", "noise", "sharpness", "composition")


def ordinal_word(index: int) -> str:
    """0 -> "first" ... 3 -> "fourth"; group sizes stop at four."""
    if not 0 <= index < len(ORDINAL_WORDS):
        raise DistillError(f"no ordinal word for index {index}")
    return ORDINAL_WORDS[index]


def comparison_question(size: int) -> str:
    if size == 2:
        return PAIR_QUESTION
    if size in (3, 4):
        return GROUP_QUESTION
    raise DistillError(f"group size must be 2-4, got {size}")


def render_merge_prompt(group: ImageGroup, descriptions: Mapping[str, str]) -> str:
    """Description-interleaved comparison prompt for a text-only model."""
    segments = []
    for k, member_id in enumerate(group.member_ids):
        if member_id not in descriptions:
            raise DistillError(f"no description for image {member_id!r}")
        segments.append(f"The {ordinal_word(k)} image: {descriptions[member_id]}")
    segments.append(comparison_question(group.size))
    return " ".join(segments)


def render_teach_general_prompt(group: ImageGroup) -> Turn:
    """Same skeleton with image slots in place of description texts."""
    segments = [
        f"The {ordinal_word(k)} image: <img_{k}>" for k in range(group.size)
    ]
    segments.append(comparison_question(group.size))
    return Turn(text=" ".join(segments), images=group.members)


@dataclass(frozen=True)
class DistillStats:
    requested: int = 0
    parsed_ok: int = 0
    dropped_failed: int = 0

    def __post_init__(self) -> None:
        if self.requested != self.parsed_ok + self.dropped_failed:
            raise DistillError(
                f"stats out of balance: {self.requested} != "
                f"{self.parsed_ok} + {self.dropped_failed}"
            )

    def __add__(self, other: "DistillStats") -> "DistillStats":
        return DistillStats(
            self.requested + other.requested,
            self.parsed_ok + other.parsed_ok,
            self.dropped_failed + other.dropped_failed,
        )

    def to_dict(self) -> dict:
        return {
            "requested": self.requested,
            "parsed_ok": self.parsed_ok,
            "dropped_failed": self.dropped_failed,
        }


def merge_compare(
    client: ChatClient,
    group: ImageGroup,
    descriptions: Mapping[str, str],
    cache: Optional[ResponseCache] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ComparisonItem:
    """Merge one group's descriptions into a comparison item.

    Raises ClientError after retries are exhausted or when the model
    returns an empty response; batch callers count those as dropped.
    """
    prompt = render_merge_prompt(group, descriptions)
    text = complete_with_policy(client, None, [Turn(text=prompt)], cache=cache, sleep=sleep)
    if not text.strip():
        raise ClientError(f"empty merge response for group {group.group_id}")
    return ComparisonItem(
        group=group,
        kind=ItemKind.MERGED_GENERAL,
        query=comparison_question(group.size),
        response=text,
        provenance=Provenance.MERGE2COMPARE,
    )


def teach_general(
    client: ChatClient,
    group: ImageGroup,
    cache: Optional[ResponseCache] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ComparisonItem:
    """Collect one teacher comparison on the images themselves."""
    turn = render_teach_general_prompt(group)
    text = complete_with_policy(client, None, [turn], cache=cache, sleep=sleep)
    if not text.strip():
        raise ClientError(f"empty teach response for group {group.group_id}")
    return ComparisonItem(
        group=group,
        kind=ItemKind.TEACH_GENERAL,
        query=comparison_question(group.size),
        response=text,
        provenance=Provenance.TEACH2COMPARE,
    )


def _run_batch(
    worker: Callable[[ImageGroup], ComparisonItem],
    groups: Sequence[ImageGroup],
    max_in_flight: int,
) -> tuple[list[ComparisonItem], DistillStats]:
    def guarded(group: ImageGroup) -> Optional[ComparisonItem]:
        try:
            return worker(group)
        except ClientError:
            return None

    results = bounded_map(guarded, list(groups), max_in_flight=max_in_flight)
    items = [r for r in results if r is not None]
    return items, DistillStats(
        requested=len(groups),
        parsed_ok=len(items),
        dropped_failed=len(groups) - len(items),
    )


def merge_compare_batch(
    client: ChatClient,
    groups: Sequence[ImageGroup],
    descriptions: Mapping[str, str],
    cache: Optional[ResponseCache] = None,
    max_in_flight: int = 8,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[list[ComparisonItem], DistillStats]:
    return _run_batch(
        lambda g: merge_compare(client, g, descriptions, cache=cache, sleep=sleep),
        groups,
        max_in_flight,
    )


def teach_general_batch(
    client: ChatClient,
    groups: Sequence[ImageGroup],
    cache: Optional[ResponseCache] = None,
    max_in_flight: int = 8,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[list[ComparisonItem], DistillStats]:
    return _run_batch(
        lambda g: teach_general(client, g, cache=cache, sleep=sleep),
        groups,
        max_in_flight,
    )


# -- question/answer generation --


@dataclass(frozen=True)
class QAItem:
    group: ImageGroup
    question: str
    correct: str
    distractors: tuple[str, ...]
    aspect: str

    def __post_init__(self) -> None:
        if not self.question.strip() or not self.correct.strip() or not self.aspect.strip():
            raise DistillError("question, correct answer, and aspect must be non-empty")
        if not 1 <= len(self.distractors) <= 3:
            raise DistillError("need 1-3 distractors")
        lowered = {d.strip().lower() for d in self.distractors}
        if self.correct.strip().lower() in lowered:
            raise DistillError("correct answer duplicated among distractors")
        if any(not d.strip() for d in self.distractors):
            raise DistillError("empty distractor")


QA_RECORD_GUIDE = (
    "For every question, reply with exactly these lines and nothing else:\n"
    "Q: <the question>\n"
    "CORRECT: <the correct answer>\n"
    "WRONG: <one to three wrong answers, separated by semicolons>\n"
    "ASPECT: <the aspect being compared>"
)


def render_qa_prompt(group: ImageGroup, aspects: Sequence[str]) -> Turn:
    if not aspects:
        raise DistillError("aspect list must be non-empty")
    slots = " ".join(
        f"The {ordinal_word(k)} image: <img_{k}>" for k in range(group.size)
    )
    instruction = (
        f"{slots} Generate several question-answer pairs that compare these images "
        f"on aspects such as {', '.join(aspects)}. Each question must have one "
        f"correct answer and plausible wrong answers. {QA_RECORD_GUIDE}"
    )
    return Turn(text=instruction, images=group.members)


_FIELD_RE = re.compile(r"^(Q|CORRECT|WRONG|ASPECT):\s*(.*)$")


def parse_qa_records(text: str) -> tuple[list[dict], int]:
    """Split a teacher reply into raw records; returns (records, malformed count).

    A record is well-formed when it has a question, a correct answer, and
    1-3 wrong answers; ASPECT is optional. Everything else (stray prose,
    half records) counts as malformed.
    """
    records: list[dict] = []
    malformed = 0
    current: Optional[dict] = None

    def flush() -> None:
        nonlocal malformed, current
        if current is None:
            return
        wrongs = tuple(w.strip() for w in current.get("wrong", "").split(";") if w.strip())
        question = current.get("q", "").strip()
        correct = current.get("correct", "").strip()
        if question and correct and 1 <= len(wrongs) <= 3:
            records.append(
                {
                    "question": question,
                    "correct": correct,
                    "wrongs": wrongs,
                    "aspect": current.get("aspect", "").strip() or "general",
                }
            )
        else:
            malformed += 1
        current = None

    for line in text.splitlines():
        match = _FIELD_RE.match(line.strip())
        if not match:
            continue
        tag, value = match.group(1), match.group(2)
        if tag == "Q":
            flush()
            current = {"q": value}
        elif current is not None:
            current[tag.lower()] = value
    flush()
    return records, malformed


def generate_qa(
    client: ChatClient,
    group: ImageGroup,
    aspects: Sequence[str] = DEFAULT_ASPECTS,
    cache: Optional[ResponseCache] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[list[QAItem], DistillStats]:
    """Ask the teacher for Q&A records on one group; drop whatever fails to parse."""
    turn = render_qa_prompt(group, aspects)
    try:
        text = complete_with_policy(client, None, [turn], cache=cache, sleep=sleep)
    except ClientError:
        return [], DistillStats(requested=1, parsed_ok=0, dropped_failed=1)

    raw_records, malformed = parse_qa_records(text)
    items: list[QAItem] = []
    for rec in raw_records:
        try:
            items.append(
                QAItem(
                    group=group,
                    question=rec["question"],
                    correct=rec["correct"],
                    distractors=rec["wrongs"],
                    aspect=rec["aspect"],
                )
            )
        except DistillError:
            continue
    # a non-empty reply that parses to nothing counts as one failed request
    requested = max(len(raw_records) + malformed, 1)
    return items, DistillStats(
        requested=requested,
        parsed_ok=len(items),
        dropped_failed=requested - len(items),
    )


def generate_qa_batch(
    client: ChatClient,
    groups: Sequence[ImageGroup],
    aspects: Sequence[str] = DEFAULT_ASPECTS,
    cache: Optional[ResponseCache] = None,
    max_in_flight: int = 8,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[list[QAItem], DistillStats]:
    def worker(group: ImageGroup) -> tuple[list[QAItem], DistillStats]:
        return generate_qa(client, group, aspects=aspects, cache=cache, sleep=sleep)

    results = bounded_map(worker, list(groups), max_in_flight=max_in_flight)
    items: list[QAItem] = []
    stats = DistillStats()
    for group_items, group_stats in results:
        items.extend(group_items)
        stats = stats + group_stats
    return items, stats


def qa_to_mcq(item: QAItem, seed: int) -> tuple[ComparisonItem, ComparisonItem]:
    """Convert one Q&A item to (multi-choice item, direct-answer twin).

    Option order is a seeded shuffle, so the answer key position is
    reproducible for a fixed (item, seed).
    """
    options = [item.correct, *item.distractors]
    random.Random(seed).shuffle(options)
    mcq = ComparisonItem(
        group=item.group,
        kind=ItemKind.TEACH_MCQ,
        query=item.question,
        response=item.correct,
        options=tuple(options),
        answer_index=options.index(item.correct),
        provenance=Provenance.TEACH2COMPARE,
    )
    direct = ComparisonItem(
        group=item.group,
        kind=ItemKind.TEACH_QA_DIRECT,
        query=item.question,
        response=item.correct,
        provenance=Provenance.TEACH2COMPARE,
    )
    return mcq, direct
