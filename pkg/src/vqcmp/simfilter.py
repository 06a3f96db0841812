"""Top-similarity group removal via text embeddings.

A group is dropped when ANY unordered pair of member descriptions is too
similar: near-identical descriptions leave the merging model nothing to
compare, so the merged text would be uninformative or wrong. Similarity is
the cosine of unit embedding vectors (a plain dot product).
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

import numpy as np
import requests

from .clients import TransportError, bounded_map
from .corpus import ImageGroup
from .grouper import GroupSet, SamplingSpec

UNIT_NORM_TOL = 1e-6


class FilterError(ValueError):
    """Missing description, degenerate calibration input, or bad threshold."""


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def _normalize_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return vectors / norms


class HashEmbeddingProvider:
    """Offline deterministic stand-in: token-hash bag-of-words, unit-normalized.

    Identical texts map to identical vectors (cosine exactly 1), which is
    all the filtering logic needs from an embedding model in tests and
    dry runs. Token buckets come from sha256, not `hash()`, so vectors are
    stable across processes.
    """

    def __init__(self, dim: int = 256) -> None:
        self.name = f"hash-bow-{dim}"
        self.dim = dim
        self.calls = 0

    def _bucket(self, token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        self.calls += 1
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            tokens = [t for t in text.lower().split() if t]
            if not tokens:
                out[row, 0] = 1.0
                continue
            for token in tokens:
                out[row, self._bucket(token)] += 1.0
        return _normalize_rows(out)


class HTTPEmbeddingProvider:
    """Remote embeddings endpoint: POST {"texts": [...]} -> {"embeddings": [[...]]}."""

    def __init__(
        self,
        name: str,
        endpoint: str,
        dim: int,
        api_key_env: str = "VQCMP_EMBED_API_KEY",
        timeout: float = 60.0,
    ) -> None:
        self.name = name
        self.endpoint = endpoint
        self.dim = dim
        self.api_key_env = api_key_env
        self.timeout = timeout

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(
                self.endpoint,
                json={"texts": list(texts)},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"{self.name}: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"{self.name}: HTTP {resp.status_code}: {resp.text[:200]}")
        vectors = np.asarray(resp.json()["embeddings"], dtype=np.float64)
        if vectors.shape != (len(texts), self.dim):
            raise TransportError(
                f"{self.name}: expected shape {(len(texts), self.dim)}, got {vectors.shape}"
            )
        return _normalize_rows(vectors)


class CachedEmbedder:
    """Embedding cache keyed by (provider.name, text digest), optionally persisted.

    Each distinct text costs at most one provider round trip per process
    (and at most one ever, with a persistent cache file). Misses are
    batched and may be issued concurrently; row order always follows input
    order.
    """

    def __init__(
        self,
        provider: EmbeddingProvider,
        cache_path: Optional[str | Path] = None,
        batch_size: int = 64,
        max_in_flight: int = 4,
    ) -> None:
        self.provider = provider
        self.batch_size = batch_size
        self.max_in_flight = max_in_flight
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()
        self._mem: dict[str, np.ndarray] = {}
        self.cache_path = Path(cache_path) if cache_path is not None else None
        if self.cache_path is not None and self.cache_path.exists():
            stored = json.loads(self.cache_path.read_text(encoding="utf-8"))
            self._mem = {k: np.asarray(v, dtype=np.float64) for k, v in stored.items()}

    def _key(self, text: str) -> str:
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return f"{self.provider.name}:{digest}"

    def _persist(self) -> None:
        if self.cache_path is None:
            return
        self.cache_path.parent.mkdir(parents=True, exist_ok=True)
        payload = {k: v.tolist() for k, v in self._mem.items()}
        tmp = self.cache_path.with_suffix(self.cache_path.suffix + ".tmp")
        tmp.write_text(json.dumps(payload), encoding="utf-8")
        tmp.replace(self.cache_path)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        keys = [self._key(t) for t in texts]
        missing_unique: dict[str, str] = {}
        with self._lock:
            for key, text in zip(keys, texts):
                if key in self._mem:
                    self.hits += 1
                elif key not in missing_unique:
                    missing_unique[key] = text
                    self.misses += 1
                else:
                    self.hits += 1
        if missing_unique:
            todo = list(missing_unique.items())
            chunks = [
                todo[i : i + self.batch_size] for i in range(0, len(todo), self.batch_size)
            ]

            def run_chunk(chunk: list[tuple[str, str]]) -> np.ndarray:
                return self.provider.embed([text for _, text in chunk])

            results = bounded_map(run_chunk, chunks, max_in_flight=self.max_in_flight)
            with self._lock:
                for chunk, vectors in zip(chunks, results):
                    for (key, _), vec in zip(chunk, np.asarray(vectors)):
                        self._check_unit(vec)
                        self._mem[key] = np.asarray(vec, dtype=np.float64)
                self._persist()
        with self._lock:
            return np.stack([self._mem[k] for k in keys])

    def _check_unit(self, vec: np.ndarray) -> None:
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise FilterError(
                f"provider {self.provider.name!r} returned a non-unit vector (norm {norm:.6g})"
            )


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    # unit vectors by contract; clamp to kill fp excursions past +/-1
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def max_pair_similarity(
    group: ImageGroup,
    descriptions: Mapping[str, str],
    embedder: CachedEmbedder,
) -> float:
    """Max cosine over all unordered description pairs within the group."""
    texts = []
    for member_id in group.member_ids:
        if member_id not in descriptions:
            raise FilterError(f"no description for image {member_id!r}")
        texts.append(descriptions[member_id])
    vectors = embedder.embed(texts)
    return max(
        cosine(vectors[i], vectors[j]) for i, j in combinations(range(len(texts)), 2)
    )


@dataclass(frozen=True)
class FilterReport:
    kept: GroupSet
    removed: GroupSet
    tau: float
    retention_by_size: dict[int, float]

    @property
    def retention(self) -> float:
        total = len(self.kept.groups) + len(self.removed.groups)
        return len(self.kept.groups) / total if total else 1.0


def _subset_groupset(groups: list[ImageGroup], seed: int) -> GroupSet:
    sizes = {2: 0, 3: 0, 4: 0}
    for g in groups:
        sizes[g.size] += 1
    spec = SamplingSpec(n_pairs=sizes[2], n_triples=sizes[3], n_quads=sizes[4], seed=seed)
    return GroupSet(groups=tuple(groups), spec=spec)


def filter_groups(
    groups: GroupSet,
    descriptions: Mapping[str, str],
    embedder: CachedEmbedder,
    tau: float,
) -> FilterReport:
    """Partition groups: removed iff max pair similarity exceeds tau."""
    if not -1.0 <= tau <= 1.0:
        raise FilterError(f"tau must be in [-1, 1], got {tau}")
    kept: list[ImageGroup] = []
    removed: list[ImageGroup] = []
    for group in groups.groups:
        try:
            sim = max_pair_similarity(group, descriptions, embedder)
        except FilterError:
            raise
        except Exception as exc:
            raise FilterError(f"embedding failed for group {group.group_id}: {exc}") from exc
        (removed if sim > tau else kept).append(group)

    totals = {2: 0, 3: 0, 4: 0}
    kept_counts = {2: 0, 3: 0, 4: 0}
    for g in groups.groups:
        totals[g.size] += 1
    for g in kept:
        kept_counts[g.size] += 1
    retention_by_size = {
        size: kept_counts[size] / totals[size] for size in (2, 3, 4) if totals[size]
    }
    return FilterReport(
        kept=_subset_groupset(kept, groups.spec.seed),
        removed=_subset_groupset(removed, groups.spec.seed),
        tau=tau,
        retention_by_size=retention_by_size,
    )


def calibrate_threshold(
    pair_groups: GroupSet,
    descriptions: Mapping[str, str],
    embedder: CachedEmbedder,
    target_retention: float,
) -> float:
    """Pick tau as the empirical target-retention quantile of max-pair similarities.

    Filtering the calibration set with the returned tau keeps a fraction
    within 1/N of the target when similarities are distinct; heavy ties at
    the quantile can only overshoot retention, never undershoot it.
    """
    if not 0.0 < target_retention <= 1.0:
        raise FilterError(f"target_retention must be in (0, 1], got {target_retention}")
    groups = list(pair_groups.groups)
    if len(groups) < 2:
        raise FilterError("need at least 2 groups to calibrate a threshold")
    sims = np.sort(
        [max_pair_similarity(g, descriptions, embedder) for g in groups]
    )
    if sims[0] == sims[-1]:
        raise FilterError(
            "all similarities are identical; calibration is degenerate, set tau manually"
        )
    rank = max(int(np.ceil(target_retention * len(sims))), 1)
    return float(sims[rank - 1])
