"""Evaluation metrics: summary F1, rank correlations, and MAP at top rho percent.

Rank correlations are tie-aware: Spearman works on average ranks, Kendall is
the tau-b variant computed with a merge-sort inversion count rather than the
quadratic pair scan (tests compare against the all-pairs definition).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data_io import VideoRecord
from .errors import ConsistencyError, DegenerateInputError
from .segmentation import SELECTORS, segmentation_for, shot_scores


def f1_summary(pred_summary: np.ndarray, gt_summary: np.ndarray) -> float:
    """Harmonic mean of frame precision and recall between two 0/1 summaries."""
    pred = np.asarray(pred_summary).astype(bool)
    gt = np.asarray(gt_summary).astype(bool)
    if pred.shape != gt.shape:
        raise ConsistencyError(f"summary lengths differ: {pred.shape} vs {gt.shape}")
    n_pred = int(pred.sum())
    n_gt = int(gt.sum())
    if n_pred == 0 or n_gt == 0:
        return 0.0
    overlap = int((pred & gt).sum())
    if overlap == 0:
        return 0.0
    precision = overlap / n_pred
    recall = overlap / n_gt
    return 2.0 * precision * recall / (precision + recall)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(x.shape[0])
    i = 0
    while i < x.shape[0]:
        j = i
        while j + 1 < x.shape[0] and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(pred_scores: np.ndarray, gt_scores: np.ndarray) -> float:
    """Pearson correlation of the average-rank transforms."""
    pred = np.asarray(pred_scores, dtype=np.float64)
    gt = np.asarray(gt_scores, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ConsistencyError(f"score lengths differ: {pred.shape} vs {gt.shape}")
    if pred.shape[0] < 2:
        raise DegenerateInputError("rank correlation needs at least two frames")
    ra = _average_ranks(pred)
    rb = _average_ranks(gt)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0.0:
        raise DegenerateInputError("constant scores have no rank ordering")
    return float(ra @ rb) / denom


def _merge_count(values: np.ndarray) -> int:
    """Number of strict inversions, counted with an iterative merge sort."""
    values = list(values)
    n = len(values)
    buf = values.copy()
    inversions = 0
    width = 1
    while width < n:
        for left in range(0, n, 2 * width):
            mid = min(left + width, n)
            right = min(left + 2 * width, n)
            i, j, k = left, mid, left
            while i < mid and j < right:
                if values[j] < values[i]:
                    inversions += mid - i
                    buf[k] = values[j]
                    j += 1
                else:
                    buf[k] = values[i]
                    i += 1
                k += 1
            buf[k:right] = values[i:mid] if i < mid else values[j:right]
            values[left:right] = buf[left:right]
        width *= 2
    return inversions


def _tie_pairs(x: np.ndarray) -> int:
    _, counts = np.unique(x, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def kendall_tau(pred_scores: np.ndarray, gt_scores: np.ndarray) -> float:
    """Tau-b: (C - D) normalized by the tie-corrected pair counts.

    Sorting by (pred, gt) makes the discordant pairs exactly the strict
    inversions of the gt sequence, so the whole statistic needs one merge
    sort plus tie bookkeeping.
    """
    pred = np.asarray(pred_scores, dtype=np.float64)
    gt = np.asarray(gt_scores, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ConsistencyError(f"score lengths differ: {pred.shape} vs {gt.shape}")
    n = pred.shape[0]
    if n < 2:
        raise DegenerateInputError("rank correlation needs at least two frames")

    n0 = n * (n - 1) // 2
    ties_pred = _tie_pairs(pred)
    ties_gt = _tie_pairs(gt)
    if ties_pred == n0 or ties_gt == n0:
        raise DegenerateInputError("constant scores have no rank ordering")

    order = np.lexsort((gt, pred))
    discordant = _merge_count(gt[order])
    ties_both = sum(c * (c - 1) // 2
                    for c in Counter(zip(pred.tolist(), gt.tolist())).values())
    concordant = n0 - ties_pred - ties_gt + ties_both - discordant

    denom = math.sqrt(float(n0 - ties_pred) * float(n0 - ties_gt))
    return (concordant - discordant) / denom


def map_at(pred_scores: np.ndarray, gt_scores: np.ndarray, rho_percent: float) -> float:
    """Average precision of recovering the top rho-percent ground-truth frames.

    Positives are the ceil(rho/100 * T) frames with the highest ground-truth
    scores, threshold ties resolved toward the lower frame index; the
    prediction ranking breaks ties the same way.
    """
    pred = np.asarray(pred_scores, dtype=np.float64)
    gt = np.asarray(gt_scores, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ConsistencyError(f"score lengths differ: {pred.shape} vs {gt.shape}")
    if not 0.0 < rho_percent <= 100.0:
        raise ValueError(f"rho_percent must be in (0,100], got {rho_percent}")
    t = pred.shape[0]
    n_pos = math.ceil(rho_percent / 100.0 * t)

    idx = np.arange(t)
    gt_order = np.lexsort((idx, -gt))
    positives = np.zeros(t, dtype=bool)
    positives[gt_order[:n_pos]] = True

    pred_order = np.lexsort((idx, -pred))
    hits = 0
    ap = 0.0
    for rank, frame in enumerate(pred_order, start=1):
        if positives[frame]:
            hits += 1
            ap += hits / rank
    return ap / n_pos


# ---------------------------------------------------------------------------
# Dataset-level evaluation
# ---------------------------------------------------------------------------

@dataclass
class VideoMetrics:
    video_id: str
    f1: float
    spearman: float | None
    kendall: float | None
    maps: dict[str, float]


@dataclass
class EvalReport:
    per_video: list[VideoMetrics]
    aggregates: dict[str, float]
    skipped_missing_gt: int
    degenerate_rank: int
    rho_percents: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "aggregates": self.aggregates,
            "videos": [
                {
                    "video_id": v.video_id,
                    "f1": v.f1,
                    "spearman_rho": v.spearman,
                    "kendall_tau": v.kendall,
                    **v.maps,
                }
                for v in self.per_video
            ],
            "skipped_missing_gt": self.skipped_missing_gt,
            "degenerate_rank": self.degenerate_rank,
        }


def _map_key(rho: float) -> str:
    return f"map{rho:g}"


ScoreFn = Callable[[VideoRecord], np.ndarray]


def evaluate_records(records: Sequence[VideoRecord], score_fn: ScoreFn,
                     budget: float = 0.15, rho_percents: Sequence[float] = (50, 15, 5),
                     selector: str = "knapsack", max_shots: int | None = None,
                     penalty_weight: float = 1.0,
                     map_fn: Callable | None = None) -> EvalReport:
    """Score every labelled video and aggregate.

    Machine and ground-truth summaries go through the identical segmentation
    and selector path so the F1 comparison is unbiased.  Videos without
    ground truth are skipped; constant-score videos are dropped from the
    rank-correlation means only.  ``map_fn`` swaps in an alternative MAP
    implementation (same signature as :func:`map_at`).
    """
    if selector not in SELECTORS:
        raise ValueError(f"unknown selector {selector!r}")
    map_impl = map_fn or map_at
    per_video: list[VideoMetrics] = []
    skipped = 0
    degenerate = 0

    for record in records:
        gt = record.ground_truth_scores
        if gt is None:
            skipped += 1
            continue
        p = np.asarray(score_fn(record), dtype=np.float64)
        if p.shape[0] != record.frame_count:
            raise ConsistencyError(
                f"{record.video_id}: scorer returned {p.shape[0]} values for "
                f"{record.frame_count} frames")

        seg = segmentation_for(record, max_shots, penalty_weight)
        select = SELECTORS[selector]
        machine = select(shot_scores(p, seg), seg, budget)
        reference = select(shot_scores(gt, seg), seg, budget)
        f1 = f1_summary(machine.summary, reference.summary)

        try:
            rho = spearman_rho(p, gt)
            tau = kendall_tau(p, gt)
        except DegenerateInputError:
            rho = tau = None
            degenerate += 1

        maps = {_map_key(r): map_impl(p, gt, r) for r in rho_percents}
        per_video.append(VideoMetrics(record.video_id, f1, rho, tau, maps))

    aggregates: dict[str, float] = {}
    if per_video:
        aggregates["f1"] = float(np.mean([v.f1 for v in per_video]))
        ranked = [v for v in per_video if v.spearman is not None]
        if ranked:
            aggregates["spearman_rho"] = float(np.mean([v.spearman for v in ranked]))
            aggregates["kendall_tau"] = float(np.mean([v.kendall for v in ranked]))
        for r in rho_percents:
            key = _map_key(r)
            aggregates[key] = float(np.mean([v.maps[key] for v in per_video]))
    return EvalReport(
        per_video=per_video,
        aggregates=aggregates,
        skipped_missing_gt=skipped,
        degenerate_rank=degenerate,
        rho_percents=tuple(rho_percents),
    )


def format_report_table(report: EvalReport) -> str:
    """Plain-text table; F1 and MAP shown as percentages, correlations raw."""
    map_keys = [_map_key(r) for r in report.rho_percents]
    headers = ["video_id", "F1", "Spearman_rho", "Kendall_tau"] + [k.upper() for k in map_keys]

    def fmt_row(vid: str, f1, rho, tau, maps) -> list[str]:
        cells = [vid, _pct(f1), _corr(rho), _corr(tau)]
        cells += [_pct(maps.get(k)) for k in map_keys]
        return cells

    rows = [fmt_row(v.video_id, v.f1, v.spearman, v.kendall, v.maps)
            for v in report.per_video]
    agg = report.aggregates
    rows.append(fmt_row("MEAN", agg.get("f1"), agg.get("spearman_rho"),
                        agg.get("kendall_tau"), agg))

    widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines += ["  ".join(c.ljust(widths[i]) for i, c in enumerate(row)) for row in rows]
    lines.append(f"skipped (no ground truth): {report.skipped_missing_gt}; "
                 f"degenerate for rank metrics: {report.degenerate_rank}")
    return "\n".join(lines)


def _pct(value) -> str:
    return "-" if value is None else f"{100.0 * value:.2f}"


def _corr(value) -> str:
    return "-" if value is None else f"{value:.4f}"
