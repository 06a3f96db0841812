"""Image-text interleaved prompt formats, context-budget checks, dataset assembly.

Image slots are literal `<img_k>` placeholder tokens in the emitted text;
binding them to pixel payloads is the training framework's job. The
ordinal-label variant is the default: naming each image's position is what
lets a model talk about "the second image" without confusing sources.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .corpus import ComparisonItem
from .distill import ordinal_word


class AssembleError(ValueError):
    pass


class InterleaveFormat(str, Enum):
    #: bare slots piled before the text
    PILE = "pile"
    #: each slot wrapped in learnable start/end marker tokens
    SPECIAL_TOKENS = "special_tokens"
    #: every slot introduced by the same generic label
    GENERIC_LABEL = "generic_label"
    #: every slot introduced by its positional name (default; wins ablations)
    ORDINAL_LABEL = "ordinal_label"


DEFAULT_FORMAT = InterleaveFormat.ORDINAL_LABEL

MAX_PROMPT_IMAGES = 4


def render_interleaved(n_images: int, query: str, fmt: InterleaveFormat) -> str:
    """Render the user-side prompt text for `n_images` slots plus the query."""
    if not 1 <= n_images <= MAX_PROMPT_IMAGES:
        raise AssembleError(f"n_images must be 1-{MAX_PROMPT_IMAGES}, got {n_images}")
    slots = [f"<img_{k}>" for k in range(n_images)]
    if fmt is InterleaveFormat.PILE:
        return "".join(slots) + query
    if fmt is InterleaveFormat.SPECIAL_TOKENS:
        segments = [f"<img_st>{slot}<img_end>" for slot in slots]
    elif fmt is InterleaveFormat.GENERIC_LABEL:
        segments = [f"The input image: {slot}" for slot in slots]
    elif fmt is InterleaveFormat.ORDINAL_LABEL:
        segments = [f"The {ordinal_word(k)} image: {slot}" for k, slot in enumerate(slots)]
    else:  # pragma: no cover - enum is closed
        raise AssembleError(f"unknown format {fmt}")
    return " ".join(segments + [query])


# -- context-window budget --


def whitespace_token_count(text: str) -> int:
    """Default text-token estimate; swap in a model tokenizer via `count_text_tokens`."""
    return len(text.split())


@dataclass(frozen=True)
class TokenBudget:
    tokens_per_image: int
    context_window: int
    text_tokens: int
    n_images: int

    def __post_init__(self) -> None:
        if self.tokens_per_image <= 0 or self.context_window <= 0:
            raise AssembleError("tokens_per_image and context_window must be positive")
        if self.text_tokens < 0:
            raise AssembleError("text_tokens must be >= 0")
        if not 1 <= self.n_images <= 8:
            raise AssembleError(f"n_images must be 1-8, got {self.n_images}")

    @classmethod
    def for_prompt(
        cls,
        prompt: str,
        n_images: int,
        tokens_per_image: int,
        context_window: int,
        count_text_tokens: Callable[[str], int] = whitespace_token_count,
    ) -> "TokenBudget":
        return cls(
            tokens_per_image=tokens_per_image,
            context_window=context_window,
            text_tokens=count_text_tokens(prompt),
            n_images=n_images,
        )


@dataclass(frozen=True)
class ContextFit:
    fits: bool
    overflow: int  # tokens past the window; 0 when it fits


def fits_context(budget: TokenBudget) -> ContextFit:
    """Check n_images * tokens_per_image + text_tokens against the window."""
    required = budget.n_images * budget.tokens_per_image + budget.text_tokens
    overflow = max(0, required - budget.context_window)
    return ContextFit(fits=overflow == 0, overflow=overflow)


# -- final dataset assembly --


@dataclass(frozen=True)
class SubsetStats:
    total: int = 0
    singles: int = 0
    pairs: int = 0
    triples: int = 0
    quads: int = 0

    def __post_init__(self) -> None:
        if self.total != self.singles + self.pairs + self.triples + self.quads:
            raise AssembleError("subset total must equal the sum of per-size counts")

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "singles": self.singles,
            "pairs": self.pairs,
            "triples": self.triples,
            "quads": self.quads,
        }


@dataclass(frozen=True)
class DatasetStats:
    subsets: dict[str, SubsetStats] = field(default_factory=dict)

    @property
    def overall(self) -> SubsetStats:
        return SubsetStats(
            total=sum(s.total for s in self.subsets.values()),
            singles=sum(s.singles for s in self.subsets.values()),
            pairs=sum(s.pairs for s in self.subsets.values()),
            triples=sum(s.triples for s in self.subsets.values()),
            quads=sum(s.quads for s in self.subsets.values()),
        )

    def to_dict(self) -> dict:
        return {
            "subsets": {name: s.to_dict() for name, s in self.subsets.items()},
            "overall": self.overall.to_dict(),
        }


def subset_stats(items: Sequence[ComparisonItem]) -> SubsetStats:
    # this toolkit only emits comparison groups (2-4 members); the singles
    # column exists so externally built single-image subsets tally cleanly
    sizes = {2: 0, 3: 0, 4: 0}
    for item in items:
        sizes[item.group.size] += 1
    return SubsetStats(
        total=len(items),
        singles=0,
        pairs=sizes[2],
        triples=sizes[3],
        quads=sizes[4],
    )


def render_training_line(item: ComparisonItem, fmt: InterleaveFormat) -> str:
    prompt = render_interleaved(item.group.size, item.query, fmt)
    return f"User: {prompt} Assistant: {item.response}"


def assemble(
    subsets: Sequence[tuple[str, Sequence[ComparisonItem]]],
    fmt: InterleaveFormat,
    out_path: str | Path,
) -> DatasetStats:
    """Write one training line per item and return per-subset statistics.

    The output is line-aligned with the input: line counts equal item
    counts, subset by subset, in the order given.
    """
    names = [name for name, _ in subsets]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise AssembleError(f"subset name collision: {dupes}")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    stats: dict[str, SubsetStats] = {}
    with out_path.open("w", encoding="utf-8") as f:
        for name, items in subsets:
            for item in items:
                f.write(
                    json.dumps(
                        {"subset": name, "text": render_training_line(item, fmt)},
                        ensure_ascii=False,
                    )
                    + "\n"
                )
            stats[name] = subset_stats(list(items))
    return DatasetStats(subsets=stats)


def stats_from_files(named_paths: Mapping[str, str | Path]) -> DatasetStats:
    from .corpus import load_items

    return DatasetStats(
        subsets={name: subset_stats(load_items(p)) for name, p in named_paths.items()}
    )
