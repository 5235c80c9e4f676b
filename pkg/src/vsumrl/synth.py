"""Synthetic desk-scale datasets with planted structure.

Each video gets frame features drawn from a handful of Gaussian blobs laid
out along time (so change-point detection has something to find), a
transcript whose sentences cover most of the timeline with small gaps, and a
planted subset of "salient" sentences.  Salient sentences carry saliency 1.0
and a shared marker direction in their features; everything else sits near
0.05.  Ground-truth scores are high exactly on the salient spans and at the
blob transitions, which is what a correctly trained multimodal model should
rediscover.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_io import (
    Manifest,
    ManifestEntry,
    SentenceSpan,
    validate_alignment,
    write_alignment,
    write_feature_matrix,
    write_ground_truth,
    write_manifest,
)

SALIENT_SCORE = 1.0
BACKGROUND_SCORE = 0.05


@dataclass(frozen=True)
class SyntheticSpec:
    num_videos: int = 8
    frames_per_video: int = 64
    frame_dim: int = 16
    sentence_dim: int = 8
    clusters: int = 4
    sentences_per_video: int = 8
    salient_fraction: float = 0.25
    noise: float = 0.1
    seed: int = 0
    split: str = "train"

    def __post_init__(self) -> None:
        for name in ("num_videos", "frames_per_video", "frame_dim", "sentence_dim",
                     "clusters", "sentences_per_video"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.salient_fraction < 1.0:
            raise ValueError("salient_fraction must be in (0,1)")
        if self.noise <= 0.0:
            raise ValueError("noise must be positive")
        if self.clusters > self.frames_per_video:
            raise ValueError("more clusters than frames")


def _sentence_spans(t: int, m: int) -> list[tuple[int, int]]:
    """Evenly spaced sentence spans with gaps of background frames between."""
    span = max(1, t // (m + 2))
    gap = max(0, (t - m * span) // (m + 1))
    spans = []
    start = gap
    for _ in range(m):
        end = min(start + span - 1, t - 1)
        if start > t - 1 or end < start:
            break
        spans.append((start, end))
        start = end + 1 + gap
    return spans


def _cluster_blocks(t: int, clusters: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, t, clusters + 1).astype(int)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(clusters)]


def generate_dataset(spec: SyntheticSpec, out_dir: str | Path) -> Manifest:
    """Write a complete dataset (features, alignments, ground truth, manifest).

    Fully determined by the seed: rerunning with the same spec produces
    byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    # shared across the dataset so models can learn them
    marker = rng.normal(0.0, 1.0, spec.sentence_dim)
    marker /= np.linalg.norm(marker)
    centers = rng.normal(0.0, 1.0, (spec.clusters, spec.frame_dim))
    centers = 3.0 * centers / np.linalg.norm(centers, axis=1, keepdims=True)

    t = spec.frames_per_video
    blocks = _cluster_blocks(t, spec.clusters)
    spans = _sentence_spans(t, spec.sentences_per_video)
    n_salient = max(1, round(spec.salient_fraction * len(spans)))

    entries = []
    for vid_index in range(spec.num_videos):
        video_id = f"video_{vid_index:03d}"

        frames = np.empty((t, spec.frame_dim))
        for ci, (start, end) in enumerate(blocks):
            frames[start:end] = centers[ci] + rng.normal(
                0.0, spec.noise, (end - start, spec.frame_dim))

        salient = np.sort(rng.choice(len(spans), size=n_salient, replace=False))
        sentence_feats = rng.normal(0.0, spec.noise, (len(spans), spec.sentence_dim))
        sentence_feats[salient] += 2.5 * marker

        alignment = validate_alignment(t, [
            SentenceSpan(index=i, frame_start=k, frame_end=l,
                         saliency=SALIENT_SCORE if i in salient else BACKGROUND_SCORE,
                         text=f"sentence {i}")
            for i, (k, l) in enumerate(spans)
        ])

        scores = 0.05 + 0.05 * rng.random(t)
        for i in salient:
            k, l = spans[i]
            scores[k:l + 1] = 0.9 + 0.05 * rng.random(l - k + 1)
        transitions = [start for start, _ in blocks[1:]]
        for b in transitions:
            lo, hi = max(0, b - 1), min(t, b + 1)
            scores[lo:hi] = np.maximum(scores[lo:hi], 0.5 + 0.05 * rng.random(hi - lo))

        # shots finer than the blobs so a 10-20% summary budget can fit some;
        # blob transitions stay in the set
        shot_len = max(2, t // 16)
        boundaries = sorted(set(range(shot_len, t, shot_len)) | set(transitions))

        frame_path = out / f"{video_id}.frames.vsum"
        sent_path = out / f"{video_id}.sentences.vsum"
        align_path = out / f"{video_id}.alignment.json"
        gt_path = out / f"{video_id}.gt.json"
        write_feature_matrix(frames, frame_path)
        write_feature_matrix(sentence_feats, sent_path)
        write_alignment(alignment, align_path)
        write_ground_truth(scores, gt_path, shot_boundaries=tuple(boundaries))
        entries.append(ManifestEntry(
            video_id=video_id,
            frame_features=frame_path,
            sentence_features=sent_path,
            alignment=align_path,
            ground_truth=gt_path,
        ))

    manifest = Manifest(split=spec.split, entries=tuple(entries))
    write_manifest(manifest, out / "manifest.json")
    return manifest


def salient_frame_mask(alignment) -> np.ndarray:
    """Frames covered by a sentence whose saliency equals the planted maximum."""
    mask = np.zeros(alignment.frame_count, dtype=bool)
    for span in alignment.entries:
        if span.saliency >= SALIENT_SCORE:
            mask[span.frame_start:span.frame_end + 1] = True
    return mask
