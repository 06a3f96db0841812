import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pytest

from vqcmp.clients import CapabilityError, TransportError, Turn, check_capability
from vqcmp.corpus import (
    ComparisonItem,
    ImageGroup,
    ImageRef,
    ImageSource,
    ItemKind,
    Provenance,
)
from vqcmp.evalkit import MCQRecord, QType, Split

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def goldens() -> dict:
    return json.loads((GOLDEN_DIR / "templates.json").read_text(encoding="utf-8"))


def make_refs(n: int, prefix: str = "img") -> tuple[ImageRef, ...]:
    return tuple(
        ImageRef(id=f"{prefix}{i:05d}", source=ImageSource.UNKNOWN, uri=f"file:///{prefix}{i}.png")
        for i in range(n)
    )


def make_group(n: int, prefix: str = "img") -> ImageGroup:
    return ImageGroup(members=make_refs(n, prefix=prefix))


def make_item(
    group: ImageGroup,
    response: str = "the first image is better",
    kind: ItemKind = ItemKind.MERGED_GENERAL,
) -> ComparisonItem:
    return ComparisonItem(
        group=group,
        kind=kind,
        query="Which image has better quality, and why?",
        response=response,
        provenance=Provenance.MERGE2COMPARE,
    )


class ScriptedClient:
    """Chat client stub: fixed reply, callable reply, or initial failures."""

    def __init__(
        self,
        reply="A",
        name: str = "scripted",
        max_images: Optional[int] = None,
        fail_first: int = 0,
        fail_always: bool = False,
    ) -> None:
        self.reply = reply
        self.name = name
        self.max_images = max_images
        self.fail_first = fail_first
        self.fail_always = fail_always
        self.calls = 0

    def complete(self, system, turns: Sequence[Turn]) -> str:
        check_capability(self, turns)
        self.calls += 1
        if self.fail_always or self.calls <= self.fail_first:
            raise TransportError(f"{self.name}: injected failure #{self.calls}")
        if callable(self.reply):
            return self.reply(system, turns)
        return self.reply


class VectorProvider:
    """Embedding stub mapping exact texts to fixed vectors."""

    def __init__(self, mapping: dict[str, Sequence[float]], name: str = "fixed") -> None:
        self.mapping = {k: np.asarray(v, dtype=np.float64) for k, v in mapping.items()}
        self.dim = len(next(iter(self.mapping.values())))
        self.name = name
        self.calls = 0

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        self.calls += 1
        try:
            return np.stack([self.mapping[t] for t in texts])
        except KeyError as exc:
            raise AssertionError(f"no stub vector for text {exc.args[0]!r}") from exc


def pair_similarity_provider(similarities: Sequence[float]) -> tuple[VectorProvider, dict]:
    """Provider + descriptions realizing an exact cosine per synthetic pair.

    Pair k gets texts "k:a" -> (1, 0) and "k:b" -> (sim, sqrt(1-sim^2)), so
    the within-pair cosine is exactly similarities[k].
    """
    mapping: dict[str, Sequence[float]] = {}
    descriptions: dict[str, str] = {}
    for k, sim in enumerate(similarities):
        mapping[f"{k}:a"] = (1.0, 0.0)
        mapping[f"{k}:b"] = (float(sim), float(np.sqrt(max(0.0, 1.0 - sim * sim))))
        descriptions[f"p{k}a"] = f"{k}:a"
        descriptions[f"p{k}b"] = f"{k}:b"
    return VectorProvider(mapping), descriptions


def similarity_pair_groups(n: int):
    from vqcmp.grouper import GroupSet, SamplingSpec

    groups = []
    for k in range(n):
        members = (
            ImageRef(id=f"p{k}a", source=ImageSource.UNKNOWN),
            ImageRef(id=f"p{k}b", source=ImageSource.UNKNOWN),
        )
        groups.append(ImageGroup(members=members))
    return GroupSet(
        groups=tuple(groups),
        spec=SamplingSpec(n_pairs=n, n_triples=0, n_quads=0, seed=0),
    )


# -- benchmark fixture with the published shape --

MICBENCH_TEST_LAYOUT = {"yes_or_no": 220, "which": 594, "others": 182}
MICBENCH_DEV_LAYOUT = {"yes_or_no": 220, "which": 606, "others": 178}


def build_micbench_records() -> list[MCQRecord]:
    """2000 synthetic records matching the published benchmark shape.

    test: 996 records (yes/which/others = 220/594/182; sizes 503/493)
    dev: 1004 records (220/606/178; sizes 497/507)
    full: which 60%, yes_or_no 22%, others 18% exactly.
    """
    records: list[MCQRecord] = []

    def build_split(split: Split, layout: dict, n_three: int, serial: int) -> int:
        order: list[QType] = (
            [QType.YES_OR_NO] * layout["yes_or_no"]
            + [QType.WHICH] * layout["which"]
            + [QType.WHAT] * (layout["others"] // 3)
            + [QType.HOW] * (layout["others"] // 3)
            + [QType.OTHERS] * (layout["others"] - 2 * (layout["others"] // 3))
        )
        for i, qtype in enumerate(order):
            size = 3 if i < n_three else 4
            refs = make_refs(size, prefix=f"b{serial + i}_")
            if qtype is QType.YES_OR_NO:
                options = ("yes", "no")
                question = "Is the first image the clearest of the group?"
            elif qtype is QType.WHICH:
                options = tuple(f"the {w} image" for w in ("first", "second", "third", "fourth")[:size])
                question = "Which image has the highest clarity?"
            else:
                options = ("noise", "blur", "overexposure", "compression")
                question = "What is the dominant distortion across the group?"
            records.append(
                MCQRecord(
                    images=refs,
                    question=question,
                    options=options,
                    qtype=qtype,
                    split=split,
                    answer_index=0,
                )
            )
        return serial + len(order)

    serial = build_split(Split.TEST, MICBENCH_TEST_LAYOUT, n_three=503, serial=0)
    build_split(Split.DEV, MICBENCH_DEV_LAYOUT, n_three=497, serial=serial)
    return records


@pytest.fixture(scope="session")
def micbench_records() -> list[MCQRecord]:
    return build_micbench_records()
