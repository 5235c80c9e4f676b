import numpy as np
import pytest

from vsumrl.data_io import SentenceAlignment, SentenceSpan, VideoRecord, validate_alignment
from vsumrl.model import ModelConfig


def make_alignment(frame_count: int, spans: list[tuple[int, int, float]]) -> SentenceAlignment:
    """spans: (frame_start, frame_end, saliency) in transcript order."""
    return validate_alignment(frame_count, [
        SentenceSpan(index=i, frame_start=k, frame_end=l, saliency=s)
        for i, (k, l, s) in enumerate(spans)
    ])


def random_alignment(rng: np.random.Generator, frame_count: int,
                     max_sentences: int) -> SentenceAlignment:
    """Random non-overlapping ordered spans, possibly leaving background frames."""
    spans = []
    cursor = int(rng.integers(0, 2))
    while len(spans) < max_sentences and cursor < frame_count:
        length = int(rng.integers(1, 4))
        end = min(cursor + length - 1, frame_count - 1)
        spans.append((cursor, end, float(rng.random())))
        cursor = end + 1 + int(rng.integers(0, 3))
    return make_alignment(frame_count, spans)


def make_record(rng: np.random.Generator, frame_count: int = 10,
                spans: list[tuple[int, int, float]] | None = None,
                frame_dim: int = 6, sentence_dim: int = 4,
                gt: np.ndarray | None = None,
                shot_boundaries: tuple[int, ...] | None = None,
                video_id: str = "test_video") -> VideoRecord:
    if spans is None:
        spans = [(0, 2, 0.8), (4, 6, 0.3)]
    alignment = make_alignment(frame_count, spans)
    return VideoRecord(
        video_id=video_id,
        frame_features=rng.normal(size=(frame_count, frame_dim)),
        sentence_features=rng.normal(size=(alignment.sentence_count, sentence_dim)),
        alignment=alignment,
        ground_truth_scores=gt,
        shot_boundaries=shot_boundaries,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(
        hidden_size=8, num_layers=1, num_heads=2, max_frames=32, max_sentences=6,
        frame_dim=6, sentence_dim=4,
        dropout_attn=0.0, dropout_expert=0.0, dropout_head=0.0)
