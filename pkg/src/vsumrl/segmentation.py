"""Shot segmentation and budgeted shot selection for summary generation.

Shots come from kernel change-point detection: dynamic programming over the
frame Gram matrix finds, for every candidate count, the segmentation with the
least within-segment variance, and a penalized criterion picks the count.
Two selectors then fill the summary budget from per-shot scores: the greedy
rule (highest mean probability first) and an exact 0/1 knapsack.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .data_io import VideoRecord


@dataclass(frozen=True)
class ShotSegmentation:
    """Change points splitting [0,T) into contiguous shots.

    A boundary b means one shot ends at frame b-1 and the next starts at b.
    """

    boundaries: tuple[int, ...]
    frame_count: int

    def __post_init__(self) -> None:
        prev = 0
        for b in self.boundaries:
            if not 0 < b < self.frame_count:
                raise ValueError(f"boundary {b} outside (0,{self.frame_count})")
            if b <= prev:
                raise ValueError("boundaries must be strictly increasing")
            prev = b

    @property
    def num_shots(self) -> int:
        return len(self.boundaries) + 1

    def shots(self) -> list[tuple[int, int]]:
        """Half-open (start, end) frame ranges."""
        edges = [0, *self.boundaries, self.frame_count]
        return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]

    def lengths(self) -> np.ndarray:
        return np.array([end - start for start, end in self.shots()], dtype=np.int64)


@dataclass(frozen=True)
class SummaryResult:
    """A budgeted selection of whole shots."""

    selected_shots: tuple[int, ...]
    summary: np.ndarray                 # 0/1 per frame
    budget_fraction: float
    achieved_fraction: float
    frame_scores: np.ndarray | None = None


def _segment_costs(features: np.ndarray) -> np.ndarray:
    """cost[i, j] = within-segment scatter of frames[i:j] under the linear kernel.

    Uses cumulative sums of the Gram matrix: for a segment of length n,
    scatter = sum of squared norms - (sum of all pairwise inner products)/n.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    gram = x @ x.T
    diag_cum = np.concatenate([[0.0], np.cumsum(np.diag(gram))])
    block = np.zeros((n + 1, n + 1))
    block[1:, 1:] = np.cumsum(np.cumsum(gram, axis=0), axis=1)

    cost = np.zeros((n + 1, n + 1))
    for i in range(n):
        js = np.arange(i + 1, n + 1)
        pair_sum = block[js, js] - block[i, js] - block[js, i] + block[i, i]
        cost[i, i + 1:] = (diag_cum[js] - diag_cum[i]) - pair_sum / (js - i)
    return np.maximum(cost, 0.0)  # scatter is non-negative up to rounding


def kts_segment(frames: np.ndarray, max_shots: int | None = None,
                penalty_weight: float = 1.0) -> ShotSegmentation:
    """Change-point detection by minimizing within-segment kernel variance.

    The DP finds the optimal segmentation for every change-point count
    m = 0..max_shots-1; the final count minimizes
    ``scatter(m) + penalty_weight * m * (log(T/m) + 1)``.
    """
    x = np.asarray(frames, dtype=np.float64)
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one frame")
    if max_shots is None:
        max_shots = max(1, math.ceil(n / 10))
    if max_shots < 1:
        raise ValueError("max_shots must be >= 1")
    if max_shots > n:
        warnings.warn(f"max_shots {max_shots} > {n} frames; clamping", stacklevel=2)
        max_shots = n

    cost = _segment_costs(x)
    max_cp = max_shots - 1

    # best[m, j] = least scatter splitting frames[0:j] into m+1 segments
    best = np.full((max_cp + 1, n + 1), np.inf)
    prev = np.zeros((max_cp + 1, n + 1), dtype=np.int64)
    best[0] = cost[0]
    for m in range(1, max_cp + 1):
        for j in range(m + 1, n + 1):
            starts = np.arange(m, j)
            cand = best[m - 1, starts] + cost[starts, j]
            arg = int(np.argmin(cand))
            best[m, j] = cand[arg]
            prev[m, j] = starts[arg]

    penalized = np.full(max_cp + 1, np.inf)
    for m in range(max_cp + 1):
        if not np.isfinite(best[m, n]):
            continue
        penalty = 0.0 if m == 0 else penalty_weight * m * (math.log(n / m) + 1.0)
        penalized[m] = best[m, n] + penalty
    m_star = int(np.argmin(penalized))

    boundaries = []
    j = n
    for m in range(m_star, 0, -1):
        j = int(prev[m, j])
        boundaries.append(j)
    boundaries.reverse()
    return ShotSegmentation(boundaries=tuple(boundaries), frame_count=n)


def segmentation_for(record: VideoRecord, max_shots: int | None = None,
                     penalty_weight: float = 1.0) -> ShotSegmentation:
    """Dataset-provided boundaries win; otherwise run change-point detection."""
    if record.shot_boundaries is not None:
        return ShotSegmentation(boundaries=record.shot_boundaries,
                                frame_count=record.frame_count)
    return kts_segment(record.frame_features, max_shots, penalty_weight)


def shot_scores(p: np.ndarray, seg: ShotSegmentation) -> np.ndarray:
    """Mean per-frame score within each shot."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[0] != seg.frame_count:
        raise ValueError(f"{p.shape[0]} scores for {seg.frame_count} frames")
    return np.array([p[start:end].mean() for start, end in seg.shots()])


def _budget_frames(budget_fraction: float, frame_count: int) -> int:
    if not 0.0 < budget_fraction <= 1.0:
        raise ValueError(f"budget_fraction must be in (0,1], got {budget_fraction}")
    return int(math.floor(budget_fraction * frame_count))


def _build_result(seg: ShotSegmentation, selected: list[int],
                  budget_fraction: float) -> SummaryResult:
    summary = np.zeros(seg.frame_count, dtype=np.int8)
    shots = seg.shots()
    for i in selected:
        start, end = shots[i]
        summary[start:end] = 1
    return SummaryResult(
        selected_shots=tuple(sorted(selected)),
        summary=summary,
        budget_fraction=budget_fraction,
        achieved_fraction=float(summary.sum()) / seg.frame_count,
    )


def select_shots_greedy(scores: np.ndarray, seg: ShotSegmentation,
                        budget_fraction: float) -> SummaryResult:
    """Take shots by descending score (ties to the earlier shot) while they fit.

    A shot that overflows the remaining budget is skipped without blocking
    later, shorter shots.
    """
    scores = np.asarray(scores, dtype=np.float64)
    lengths = seg.lengths()
    capacity = _budget_frames(budget_fraction, seg.frame_count)
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    selected: list[int] = []
    used = 0
    for i in order:
        if used + lengths[i] <= capacity:
            selected.append(int(i))
            used += int(lengths[i])
    return _build_result(seg, selected, budget_fraction)


def select_shots_knapsack(scores: np.ndarray, seg: ShotSegmentation,
                          budget_fraction: float) -> SummaryResult:
    """Exact 0/1 knapsack maximizing sum(score_i * length_i) within the budget.

    Among equal-value optima the lexicographically smallest selected index
    set wins (and nothing is selected when the optimum is 0).
    """
    scores = np.asarray(scores, dtype=np.float64)
    lengths = seg.lengths()
    capacity = _budget_frames(budget_fraction, seg.frame_count)
    n = scores.shape[0]
    values = scores * lengths

    # best[i, c] = max value achievable with shots i..n-1 and capacity c
    best = np.zeros((n + 1, capacity + 1))
    for i in range(n - 1, -1, -1):
        w = int(lengths[i])
        best[i] = best[i + 1]
        if w <= capacity:
            take = values[i] + best[i + 1, :capacity + 1 - w]
            best[i, w:] = np.maximum(best[i + 1, w:], take)

    selected: list[int] = []
    c = capacity
    for i in range(n):
        w = int(lengths[i])
        if w <= c and best[i, c] > 0.0 and values[i] + best[i + 1, c - w] == best[i, c]:
            selected.append(i)
            c -= w
    return _build_result(seg, selected, budget_fraction)


SELECTORS = {
    "greedy": select_shots_greedy,
    "knapsack": select_shots_knapsack,
}


def summarize_scores(p: np.ndarray, seg: ShotSegmentation, budget_fraction: float,
                     selector: str = "greedy") -> SummaryResult:
    """Score shots with mean p and fill the budget with the chosen selector."""
    if selector not in SELECTORS:
        raise ValueError(f"unknown selector {selector!r}; choose from {sorted(SELECTORS)}")
    per_shot = shot_scores(p, seg)
    result = SELECTORS[selector](per_shot, seg, budget_fraction)
    return replace(result, frame_scores=np.asarray(p, dtype=np.float64))
