"""Random formation of image pairs and groups of three/four.

The generator is numpy's PCG64, which is seedable and produces identical
streams across platforms, so a (manifest, spec) pair always yields the
same dataset. Within-group member order is the sampled order; positional
roles ("the first image", ...) stay meaningful downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import ImageGroup, ImageRef, _iter_lines


class SamplingError(ValueError):
    """Infeasible or inconsistent sampling request."""


@dataclass(frozen=True)
class SamplingSpec:
    n_pairs: int
    n_triples: int
    n_quads: int
    seed: int

    def __post_init__(self) -> None:
        for name in ("n_pairs", "n_triples", "n_quads"):
            if getattr(self, name) < 0:
                raise SamplingError(f"{name} must be >= 0")

    def count_for_size(self, size: int) -> int:
        return {2: self.n_pairs, 3: self.n_triples, 4: self.n_quads}[size]

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "n_triples": self.n_triples,
            "n_quads": self.n_quads,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingSpec":
        return cls(d["n_pairs"], d["n_triples"], d["n_quads"], d["seed"])


@dataclass(frozen=True)
class GroupSet:
    groups: tuple[ImageGroup, ...]
    spec: SamplingSpec

    def __post_init__(self) -> None:
        per_size: dict[int, int] = {2: 0, 3: 0, 4: 0}
        seen_per_size: dict[int, set[frozenset[str]]] = {2: set(), 3: set(), 4: set()}
        for g in self.groups:
            per_size[g.size] += 1
            key = frozenset(g.member_ids)
            if key in seen_per_size[g.size]:
                raise SamplingError(f"duplicate unordered group: {sorted(key)}")
            seen_per_size[g.size].add(key)
        for size in (2, 3, 4):
            want = self.spec.count_for_size(size)
            if per_size[size] != want:
                raise SamplingError(
                    f"size-{size} count {per_size[size]} does not match spec {want}"
                )

    def by_size(self, size: int) -> list[ImageGroup]:
        return [g for g in self.groups if g.size == size]


def sample_groups(refs: Sequence[ImageRef], spec: SamplingSpec) -> GroupSet:
    """Sample unordered-unique groups of sizes 2/3/4 at the spec's counts.

    Rejection sampling with a seen-set: draw member indices uniformly,
    resample on any within-group duplicate or on an unordered collision
    with an already-accepted group of the same size. At the densities this
    pipeline runs at (1e5 groups out of 1e8+ combinations) collisions are
    rare and the draw stays effectively uniform over unordered sets.
    """
    ids = [r.id for r in refs]
    if len(set(ids)) != len(ids):
        raise SamplingError("manifest contains duplicate image ids")
    n = len(refs)
    for size in (2, 3, 4):
        want = spec.count_for_size(size)
        if want == 0:
            continue
        if n < size:
            raise SamplingError(f"need at least {size} images to sample size-{size} groups")
        available = comb(n, size)
        if want > available:
            raise SamplingError(
                f"requested {want} size-{size} groups but only {available} distinct "
                f"combinations exist ({n} images); feasible maximum is {available}"
            )

    rng = np.random.Generator(np.random.PCG64(spec.seed))
    groups: list[ImageGroup] = []
    for size in (2, 3, 4):
        want = spec.count_for_size(size)
        seen: set[frozenset[int]] = set()
        while len(seen) < want:
            idx = rng.integers(0, n, size=size)
            if len(set(idx.tolist())) != size:
                continue
            key = frozenset(idx.tolist())
            if key in seen:
                continue
            seen.add(key)
            groups.append(ImageGroup(members=tuple(refs[i] for i in idx)))
    return GroupSet(groups=tuple(groups), spec=spec)


def save_groups(groups: Iterable[ImageGroup], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as f:
        for g in groups:
            f.write(json.dumps(g.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


def load_groups(path: str | Path) -> list[ImageGroup]:
    return [ImageGroup.from_dict(d) for _, d in _iter_lines(Path(path))]


def groupset_from_groups(groups: Sequence[ImageGroup], seed: int = 0) -> GroupSet:
    """Wrap already-materialized groups; the spec records their actual counts."""
    sizes = {2: 0, 3: 0, 4: 0}
    for g in groups:
        sizes[g.size] += 1
    spec = SamplingSpec(n_pairs=sizes[2], n_triples=sizes[3], n_quads=sizes[4], seed=seed)
    return GroupSet(groups=tuple(groups), spec=spec)
