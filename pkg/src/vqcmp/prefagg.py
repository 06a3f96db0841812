"""Forced-choice collection and aggregation of pairwise preferences to scores.

The aggregation model is Bradley-Terry with a Gaussian prior: latent
scores maximize

    L(s) = sum_{i!=j} c[i][j] * log sigmoid(s_i - s_j)
         + sum_{i<j}  t[i][j] * log[sigmoid(s_i - s_j) * sigmoid(s_j - s_i)]
         - sum_i s_i^2 / (2 * prior_variance)

where c counts wins and t counts ties. A tie contributes one "soft win" in
each direction, so the whole objective collapses to win-plus-tie counts
against log-sigmoid terms. The prior pins the translation degree of
freedom and keeps scores finite for items that never lose. The logistic
(rather than probit) likelihood is a deliberate choice: closed-form
gradient and Hessian make the damped-Newton fit cheap; swapping in a
probit likelihood only means replacing the kernel functions.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import _kernels
from .assembler import InterleaveFormat, render_interleaved
from .clients import ChatClient, ClientError, ResponseCache, Turn, bounded_map, complete_with_policy
from .corpus import ImageRef


class PrefError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Fit did not reach the gradient tolerance; carries the last iterate."""

    def __init__(self, message: str, last_scores: np.ndarray) -> None:
        super().__init__(message)
        self.last_scores = last_scores


class Choice(str, Enum):
    FIRST = "first"
    SECOND = "second"
    TIE = "tie"


@dataclass(frozen=True)
class ChoiceRecord:
    """One forced-choice presentation: `pair` is (shown first, shown second)."""

    pair: tuple[str, str]
    choice: Choice
    flagged: bool = False

    def winner(self) -> Optional[str]:
        if self.choice is Choice.FIRST:
            return self.pair[0]
        if self.choice is Choice.SECOND:
            return self.pair[1]
        return None


#: pinned forced-choice question; golden-tested, do not reword
TWO_AFC_QUERY = "Which image has better quality?"

_TIE_WORDS = ("similar", "same", "tie", "comparable", "equal")


def map_choice_text(text: str) -> tuple[Choice, bool]:
    """Map a free-form reply to a choice by earliest keyword mention.

    Unmappable replies become flagged ties so the record count stays
    aligned with the presentation count.
    """
    low = text.lower()
    found: list[tuple[int, Choice]] = []
    for keyword, choice in (
        ("first", Choice.FIRST),
        ("second", Choice.SECOND),
        *((w, Choice.TIE) for w in _TIE_WORDS),
    ):
        pos = low.find(keyword)
        if pos >= 0:
            found.append((pos, choice))
    if not found:
        return Choice.TIE, True
    found.sort(key=lambda pc: pc[0])
    return found[0][1], False


def run_2afc(
    client: ChatClient,
    pairs: Sequence[tuple[ImageRef, ImageRef]],
    fmt: InterleaveFormat = InterleaveFormat.ORDINAL_LABEL,
    cache: Optional[ResponseCache] = None,
    max_in_flight: int = 8,
    sleep: Callable[[float], None] = time.sleep,
) -> list[ChoiceRecord]:
    """Ask the forced-choice question for every pair in BOTH presentation orders.

    Returns two adjacent records per pair: original order, then swapped.
    Client failures become flagged ties rather than holes.
    """
    prompt = render_interleaved(2, TWO_AFC_QUERY, fmt)
    presentations: list[tuple[ImageRef, ImageRef]] = []
    for a, b in pairs:
        presentations.append((a, b))
        presentations.append((b, a))

    def ask(pres: tuple[ImageRef, ImageRef]) -> ChoiceRecord:
        ids = (pres[0].id, pres[1].id)
        try:
            text = complete_with_policy(
                client, None, [Turn(text=prompt, images=pres)], cache=cache, sleep=sleep
            )
        except ClientError:
            return ChoiceRecord(pair=ids, choice=Choice.TIE, flagged=True)
        choice, flagged = map_choice_text(text)
        return ChoiceRecord(pair=ids, choice=choice, flagged=flagged)

    return list(bounded_map(ask, presentations, max_in_flight=max_in_flight))


@dataclass(frozen=True)
class SwapConsistency:
    raw: float
    chance_corrected: float


def swap_consistency(records: Sequence[ChoiceRecord]) -> SwapConsistency:
    """Agreement of the winning IMAGE (not position) across swapped presentations.

    chance agreement p_e comes from the client's marginal positional
    choice rates: two independent presentations agree by luck when one
    picks "first" and the other "second" (same image either way round) or
    both call a tie, so p_e = 2*p(first)*p(second) + p(tie)^2.
    """
    if len(records) % 2 != 0:
        raise PrefError(f"need order-swapped record pairs, got odd count {len(records)}")
    n_pairs = len(records) // 2
    if n_pairs == 0:
        raise PrefError("no records")
    hits = 0
    for k in range(n_pairs):
        first, second = records[2 * k], records[2 * k + 1]
        if first.pair != (second.pair[1], second.pair[0]):
            raise PrefError(
                f"records {2 * k} and {2 * k + 1} are not order-swapped presentations: "
                f"{first.pair} vs {second.pair}"
            )
        hits += first.winner() == second.winner()
    raw = hits / n_pairs

    marginals = Counter(r.choice for r in records)
    total = len(records)
    p_first = marginals[Choice.FIRST] / total
    p_second = marginals[Choice.SECOND] / total
    p_tie = marginals[Choice.TIE] / total
    p_e = 2.0 * p_first * p_second + p_tie**2
    if 1.0 - p_e < 1e-12:
        corrected = 1.0 if raw >= 1.0 else 0.0
    else:
        corrected = (raw - p_e) / (1.0 - p_e)
    return SwapConsistency(raw=raw, chance_corrected=corrected)


@dataclass(frozen=True)
class PreferenceMatrix:
    """Win counts c[i][j] = times item i beat item j, plus symmetric tie counts."""

    items: tuple[str, ...]
    c: np.ndarray
    t: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.items)
        if self.c.shape != (n, n) or self.t.shape != (n, n):
            raise PrefError("count matrices must be n x n for n items")
        if np.any(self.c < 0) or np.any(self.t < 0):
            raise PrefError("counts must be non-negative")
        if np.any(np.diag(self.c) != 0) or np.any(np.diag(self.t) != 0):
            raise PrefError("diagonal counts must be zero")
        if not np.array_equal(self.t, self.t.T):
            raise PrefError("tie counts must be symmetric")

    @property
    def n(self) -> int:
        return len(self.items)

    @classmethod
    def zeros(cls, items: Sequence[str]) -> "PreferenceMatrix":
        n = len(items)
        return cls(tuple(items), np.zeros((n, n), dtype=np.int64), np.zeros((n, n), dtype=np.int64))

    @classmethod
    def from_records(
        cls, records: Sequence[ChoiceRecord], items: Optional[Sequence[str]] = None
    ) -> "PreferenceMatrix":
        if items is None:
            seen: dict[str, None] = {}
            for r in records:
                seen.setdefault(r.pair[0])
                seen.setdefault(r.pair[1])
            items = list(seen)
        index = {item: k for k, item in enumerate(items)}
        n = len(index)
        c = np.zeros((n, n), dtype=np.int64)
        t = np.zeros((n, n), dtype=np.int64)
        for r in records:
            i, j = index[r.pair[0]], index[r.pair[1]]
            if r.choice is Choice.FIRST:
                c[i, j] += 1
            elif r.choice is Choice.SECOND:
                c[j, i] += 1
            else:
                t[i, j] += 1
                t[j, i] += 1
        return cls(tuple(items), c, t)


@dataclass(frozen=True)
class ScoreVector:
    items: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self) -> None:
        if len(self.items) != self.scores.shape[0]:
            raise PrefError("one score per item")
        if not np.all(np.isfinite(self.scores)):
            raise PrefError("scores must be finite")

    def as_dict(self) -> dict[str, float]:
        return {item: float(s) for item, s in zip(self.items, self.scores)}


def log_posterior(
    scores: np.ndarray,
    matrix: PreferenceMatrix,
    prior_variance: Optional[float] = 10.0,
) -> float:
    """Objective value at `scores`; prior_variance=None drops the prior term
    (the prior-free objective is translation invariant)."""
    a = (matrix.c + matrix.t).astype(np.float64)
    inv_var = 0.0 if prior_variance is None else 1.0 / prior_variance
    value, _ = _kernels.logpost_grad(np.asarray(scores, dtype=np.float64), a, inv_var)
    return value


def fit_map_scores(
    matrix: PreferenceMatrix,
    prior_variance: float = 10.0,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> ScoreVector:
    """Maximize the posterior by damped Newton steps (gradient-ascent fallback).

    Converged when the gradient max-norm drops below `tol`. The objective
    is strictly concave (the prior bounds the Hessian away from singular),
    so Newton with backtracking reaches the unique maximizer from any
    start; zero comparisons return the prior mode s = 0 immediately.
    """
    if prior_variance <= 0:
        raise PrefError("prior_variance must be positive")
    n = matrix.n
    if n == 0:
        return ScoreVector(items=(), scores=np.zeros(0))
    a = (matrix.c + matrix.t).astype(np.float64)
    inv_var = 1.0 / prior_variance
    s = np.zeros(n, dtype=np.float64)

    value, grad = _kernels.logpost_grad(s, a, inv_var)
    for _ in range(max_iter):
        if np.max(np.abs(grad)) < tol:
            return ScoreVector(items=matrix.items, scores=s)
        h = _kernels.hessian(s, a, inv_var)
        try:
            step = np.linalg.solve(-h, grad)
        except np.linalg.LinAlgError:
            step = grad / (inv_var + float(a.sum()))
        accepted = False
        alpha = 1.0
        while alpha > 1e-12:
            candidate = s + alpha * step
            cand_value, cand_grad = _kernels.logpost_grad(candidate, a, inv_var)
            if cand_value >= value:
                s, value, grad = candidate, cand_value, cand_grad
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # Newton direction rejected end to end: take a safe gradient step
            alpha = 1.0 / (inv_var + float(a.sum()) + 1.0)
            s = s + alpha * grad
            value, grad = _kernels.logpost_grad(s, a, inv_var)
    if np.max(np.abs(grad)) < tol:
        return ScoreVector(items=matrix.items, scores=s)
    raise ConvergenceError(
        f"no convergence within {max_iter} iterations (|grad|_inf = {np.max(np.abs(grad)):.3g})",
        last_scores=s,
    )


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson's linear correlation; undefined (error) for constant inputs."""
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise PrefError("x and y must be equal-length vectors")
    if xv.shape[0] < 2:
        raise PrefError("need at least 2 observations")
    xc = xv - xv.mean()
    yc = yv - yv.mean()
    denom = float(np.sqrt((xc @ xc) * (yc @ yc)))
    if denom == 0.0:
        raise PrefError("correlation undefined for a constant vector")
    return float((xc @ yc) / denom)


def weighted_average(
    values: Mapping[str, float], weights: Mapping[str, float]
) -> float:
    """Weight per-dataset values by their pair counts: sum(w*v) / sum(w)."""
    if not values:
        raise PrefError("no values to average")
    if set(values) != set(weights):
        raise PrefError("values and weights must cover the same datasets")
    if any(w <= 0 for w in weights.values()):
        raise PrefError("weights must be positive")
    total_weight = sum(weights.values())
    return sum(values[k] * weights[k] for k in values) / total_weight
