"""Reward functions scoring a candidate summary: diversity, representativeness, saliency.

A summary is a binary per-frame selection vector.  The total reward is the
plain sum of the three components; individual components can be switched off
for unimodal ablations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import SentenceAlignment
from .errors import CoverageError, DegenerateVectorError

# cosine dissimilarity drifts slightly outside [0,2] near (anti)parallel vectors
_DISSIM_RANGE = (0.0, 2.0)


@dataclass(frozen=True)
class RewardConfig:
    """Knobs for reward evaluation.

    ``lam`` is the frame-distance cutoff beyond which frames count as fully
    dissimilar.  The ``use_*`` flags disable components (the unimodal mode
    drops saliency).  ``normalize_saliency`` rescales per-video sentence
    saliencies by their maximum so the saliency term stays commensurate with
    the other two.
    """

    lam: int = 20
    use_diversity: bool = True
    use_representativeness: bool = True
    use_saliency: bool = True
    normalize_saliency: bool = True

    def __post_init__(self) -> None:
        if self.lam < 1:
            raise ValueError(f"lam must be >= 1, got {self.lam}")


@dataclass(frozen=True)
class RewardBundle:
    """Component rewards plus their sum; ``degenerate`` names components that
    fell back to 0 because the selection was too small to score."""

    r_div: float
    r_rep: float
    r_sal: float
    total: float
    degenerate: tuple[str, ...] = ()


def _selected_indices(selection: np.ndarray) -> np.ndarray:
    sel = np.asarray(selection)
    if sel.ndim != 1:
        raise ValueError(f"selection must be a flat 0/1 vector, got shape {sel.shape}")
    return np.flatnonzero(sel)


def dissimilarity(x_t: np.ndarray, x_t2: np.ndarray, t: int, t2: int, lam: int) -> float:
    """1 - cosine similarity, forced to exactly 1 for frames more than lam apart."""
    if t == t2:
        raise ValueError("dissimilarity is defined for distinct frame indices")
    if abs(t - t2) > lam:
        return 1.0
    a = np.asarray(x_t, dtype=np.float64)
    b = np.asarray(x_t2, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError(f"zero-norm feature vector at frame {t if na == 0.0 else t2}")
    value = 1.0 - float(a @ b) / (na * nb)
    return float(np.clip(value, *_DISSIM_RANGE))


def diversity_reward(frames: np.ndarray, selection: np.ndarray, cfg: RewardConfig) -> float:
    """Average pairwise dissimilarity over the selected frames.

    Selections with fewer than two frames have no pairwise term and score 0
    (flagged as degenerate by total_reward).
    """
    idx = _selected_indices(selection)
    if idx.size <= 1:
        return 0.0
    x = np.asarray(frames, dtype=np.float64)[idx]
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateVectorError(
            f"zero-norm feature vector at frame {int(idx[np.argmin(norms)])}")
    cosine = (x @ x.T) / np.outer(norms, norms)
    dis = np.clip(1.0 - cosine, *_DISSIM_RANGE)
    far = np.abs(idx[:, None] - idx[None, :]) > cfg.lam
    dis = np.where(far, 1.0, dis)
    np.fill_diagonal(dis, 0.0)
    n = idx.size
    return float(dis.sum() / (n * (n - 1)))


def representativeness_reward(frames: np.ndarray, selection: np.ndarray) -> float:
    """exp(-mean over all frames of the distance to the nearest selected frame)."""
    idx = _selected_indices(selection)
    if idx.size == 0:
        return 0.0
    x = np.asarray(frames, dtype=np.float64)
    # direct differencing: the Gram-expansion shortcut loses digits when
    # frames nearly coincide
    diff = x[:, None, :] - x[idx][None, :, :]
    dists = np.sqrt((diff * diff).sum(axis=2))
    return float(np.exp(-dists.min(axis=1).mean()))


def saliency_reward(alignment: SentenceAlignment, selection: np.ndarray,
                    saliencies: np.ndarray | None = None) -> float:
    """Saliency mass of the selected frames.

    Each sentence's saliency is spread evenly over its aligned frames; frames
    outside every span contribute nothing.  ``saliencies`` overrides the
    per-sentence values stored in the alignment (used for normalization).
    """
    sel = np.asarray(selection)
    if sel.shape[0] != alignment.frame_count:
        raise ValueError(
            f"selection length {sel.shape[0]} != frame_count {alignment.frame_count}")
    values = alignment.saliencies() if saliencies is None else np.asarray(saliencies, float)
    total = 0.0
    for span, sal in zip(alignment.entries, values):
        picked = int(sel[span.frame_start:span.frame_end + 1].sum())
        total += sal / span.length * picked
    return float(total)


def total_reward(frames: np.ndarray, alignment: SentenceAlignment,
                 selection: np.ndarray, cfg: RewardConfig) -> RewardBundle:
    """Sum of the enabled reward components for one selection."""
    idx = _selected_indices(selection)
    degenerate = []

    r_div = 0.0
    if cfg.use_diversity:
        if idx.size <= 1:
            degenerate.append("diversity")
        else:
            r_div = diversity_reward(frames, selection, cfg)

    r_rep = 0.0
    if cfg.use_representativeness:
        if idx.size == 0:
            degenerate.append("representativeness")
        else:
            r_rep = representativeness_reward(frames, selection)

    r_sal = 0.0
    if cfg.use_saliency and alignment.sentence_count > 0:
        values = alignment.saliencies()
        if cfg.normalize_saliency and values.size and values.max() > 0.0:
            values = values / values.max()
        r_sal = saliency_reward(alignment, selection, saliencies=values)

    return RewardBundle(
        r_div=r_div,
        r_rep=r_rep,
        r_sal=r_sal,
        total=r_div + r_rep + r_sal,
        degenerate=tuple(degenerate),
    )


def merge_window_saliency(window_scores: list[tuple[int, np.ndarray]],
                          window: int, step: int) -> np.ndarray:
    """Merge overlapping sliding-window saliency scores into per-token scores.

    ``window_scores`` holds (token_offset, scores) pairs produced by scoring
    consecutive windows of at most ``window`` tokens, offset by ``step``.
    A token covered by several windows gets the arithmetic mean of its
    per-window scores.
    """
    if step < 1 or window < 1 or step > window:
        raise ValueError(f"need 1 <= step <= window, got step={step} window={window}")
    if not window_scores:
        raise CoverageError("no windows supplied")

    expected_offset = 0
    length = 0
    for offset, scores in window_scores:
        scores = np.asarray(scores, dtype=np.float64)
        if offset != expected_offset:
            raise CoverageError(f"window at offset {offset}, expected {expected_offset}")
        if scores.ndim != 1 or scores.size < 1 or scores.size > window:
            raise CoverageError(f"window at offset {offset} has bad length {scores.size}")
        length = max(length, offset + scores.size)
        expected_offset += step

    sums = np.zeros(length)
    counts = np.zeros(length)
    for offset, scores in window_scores:
        scores = np.asarray(scores, dtype=np.float64)
        sums[offset:offset + scores.size] += scores
        counts[offset:offset + scores.size] += 1.0
    if np.any(counts == 0):
        gap = int(np.flatnonzero(counts == 0)[0])
        raise CoverageError(f"token {gap} not covered by any window")
    return sums / counts
