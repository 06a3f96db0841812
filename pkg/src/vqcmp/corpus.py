"""Data model and JSONL persistence for descriptions, image manifests, groups, and items.

One record per line, UTF-8. This keeps ingestion streamable at the
half-million-item scale the pipeline targets and makes every artifact
diff-able with standard tools.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence


class CorpusError(ValueError):
    """Invalid record, malformed line, or broken corpus invariant."""


class ImageSource(str, Enum):
    IN_THE_WILD = "in_the_wild"
    ARTIFICIAL_DISTORTION = "artificial_distortion"
    AI_GENERATED = "ai_generated"
    UNKNOWN = "unknown"


class ItemKind(str, Enum):
    MERGED_GENERAL = "merged_general"
    TEACH_GENERAL = "teach_general"
    TEACH_QA_DIRECT = "teach_qa_direct"
    TEACH_MCQ = "teach_mcq"


class Provenance(str, Enum):
    MERGE2COMPARE = "merge2compare"
    TEACH2COMPARE = "teach2compare"


@dataclass(frozen=True)
class ImageRef:
    """Reference to one image; the toolkit never touches pixels."""

    id: str
    source: ImageSource = ImageSource.UNKNOWN
    uri: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("image id must be non-empty")

    def to_dict(self) -> dict:
        return {"id": self.id, "source": self.source.value, "uri": self.uri}

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRef":
        return cls(
            id=d["id"],
            source=ImageSource(d.get("source", "unknown")),
            uri=d.get("uri"),
        )


@dataclass(frozen=True)
class DescriptionRecord:
    """One human quality description of a single image."""

    image: ImageRef
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise CorpusError(f"empty description for image {self.image.id!r}")


def group_digest(member_ids: Sequence[str]) -> str:
    """Deterministic id for an ordered member list; order-sensitive by design."""
    h = hashlib.sha256("\x1f".join(member_ids).encode("utf-8"))
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class ImageGroup:
    """Ordered tuple of 2-4 images, the unit of comparison.

    Member order is meaningful: position k is "the first/second/... image"
    in every downstream prompt.
    """

    members: tuple[ImageRef, ...]
    group_id: str = field(default="")

    def __post_init__(self) -> None:
        if len(self.members) not in (2, 3, 4):
            raise CorpusError(f"group size must be 2-4, got {len(self.members)}")
        ids = [m.id for m in self.members]
        if len(set(ids)) != len(ids):
            raise CorpusError(f"duplicate image id within group: {ids}")
        if not self.group_id:
            object.__setattr__(self, "group_id", group_digest(ids))

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def member_ids(self) -> tuple[str, ...]:
        return tuple(m.id for m in self.members)

    def to_dict(self) -> dict:
        return {
            "group_id": self.group_id,
            "members": [m.to_dict() for m in self.members],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageGroup":
        return cls(
            members=tuple(ImageRef.from_dict(m) for m in d["members"]),
            group_id=d.get("group_id", ""),
        )


@dataclass(frozen=True)
class ComparisonItem:
    """A merged or teacher-generated comparison, or one Q&A/MCQ item."""

    group: ImageGroup
    kind: ItemKind
    query: str
    response: str
    provenance: Provenance
    options: Optional[tuple[str, ...]] = None
    answer_index: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind is ItemKind.TEACH_MCQ:
            if self.options is None or not (2 <= len(self.options) <= 4):
                raise CorpusError("teach_mcq items need 2-4 options")
            if self.answer_index is None or not (0 <= self.answer_index < len(self.options)):
                raise CorpusError("teach_mcq answer_index out of range")
        elif self.options is not None:
            raise CorpusError(f"{self.kind.value} items must not carry options")

    def validate(self) -> None:
        """Re-run construction invariants (guards hand-forged or mutated records)."""
        self.__post_init__()

    def to_dict(self) -> dict:
        return {
            "group": self.group.to_dict(),
            "kind": self.kind.value,
            "query": self.query,
            "response": self.response,
            "options": list(self.options) if self.options is not None else None,
            "answer_index": self.answer_index,
            "provenance": self.provenance.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ComparisonItem":
        options = d.get("options")
        return cls(
            group=ImageGroup.from_dict(d["group"]),
            kind=ItemKind(d["kind"]),
            query=d["query"],
            response=d["response"],
            options=tuple(options) if options is not None else None,
            answer_index=d.get("answer_index"),
            provenance=Provenance(d["provenance"]),
        )


@dataclass(frozen=True)
class Corpus:
    """Descriptions plus the manifest they refer to."""

    descriptions: tuple[DescriptionRecord, ...]
    manifest: tuple[ImageRef, ...]

    def __post_init__(self) -> None:
        manifest_ids = {ref.id for ref in self.manifest}
        for rec in self.descriptions:
            if rec.image.id not in manifest_ids:
                raise CorpusError(f"description for {rec.image.id!r} missing from manifest")

    def description_for(self, image_id: str) -> Optional[str]:
        for rec in self.descriptions:
            if rec.image.id == image_id:
                return rec.text
        return None

    def texts_by_id(self) -> dict[str, str]:
        return {rec.image.id: rec.text for rec in self.descriptions}


# -- line-delimited record I/O --


def _iter_lines(path: Path) -> Iterator[tuple[int, dict]]:
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record: {exc.msg}") from exc


def load_descriptions(path: str | Path) -> Corpus:
    """Load a descriptions file; one {image_id, source, uri, text} object per line.

    Duplicate image ids are a hard error: downstream similarity filtering
    assumes exactly one description per image.
    """
    path = Path(path)
    records: list[DescriptionRecord] = []
    seen: dict[str, int] = {}
    for lineno, d in _iter_lines(path):
        try:
            image_id = d["image_id"]
            text = d["text"]
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
        if image_id in seen:
            raise CorpusError(
                f"{path}: duplicate image id {image_id!r} on lines {seen[image_id]} and {lineno}"
            )
        seen[image_id] = lineno
        ref = ImageRef(
            id=image_id,
            source=ImageSource(d.get("source", "unknown")),
            uri=d.get("uri"),
        )
        try:
            records.append(DescriptionRecord(image=ref, text=text))
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return Corpus(
        descriptions=tuple(records),
        manifest=tuple(rec.image for rec in records),
    )


def load_manifest(path: str | Path) -> tuple[ImageRef, ...]:
    """Load an image manifest; one {id, source, uri} object per line."""
    path = Path(path)
    refs: list[ImageRef] = []
    seen: dict[str, int] = {}
    for lineno, d in _iter_lines(path):
        ref = ImageRef.from_dict(d)
        if ref.id in seen:
            raise CorpusError(
                f"{path}: duplicate image id {ref.id!r} on lines {seen[ref.id]} and {lineno}"
            )
        seen[ref.id] = lineno
        refs.append(ref)
    return tuple(refs)


def save_manifest(refs: Iterable[ImageRef], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as f:
        for ref in refs:
            f.write(json.dumps(ref.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


def save_items(items: Iterable[ComparisonItem], path: str | Path) -> int:
    """Write items one per line; invariants are re-checked before any byte is written."""
    items = list(items)
    for item in items:
        if not isinstance(item, ComparisonItem):
            raise CorpusError(f"not a ComparisonItem: {item!r}")
        item.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for item in items:
            f.write(json.dumps(item.to_dict(), ensure_ascii=False) + "\n")
    return len(items)


def load_items(path: str | Path) -> list[ComparisonItem]:
    path = Path(path)
    out: list[ComparisonItem] = []
    for lineno, d in _iter_lines(path):
        try:
            out.append(ComparisonItem.from_dict(d))
        except (KeyError, ValueError) as exc:
            raise CorpusError(f"{path}:{lineno}: invalid item: {exc}") from exc
    return out
