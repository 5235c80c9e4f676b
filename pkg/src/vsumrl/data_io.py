"""On-disk formats: feature matrices, transcripts with alignment, ground truth, manifests.

Feature files are a small binary container:

    magic   4 bytes  b"VSUM"
    version u32      currently 1
    rows    u32
    cols    u32
    payload rows*cols IEEE-754 float32, little-endian, row-major
    reserved 1 byte  written as 0x00

All integers are little-endian.  Everything else (alignment, ground truth,
manifests) is plain JSON, documented next to each loader.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConsistencyError, DataError, FormatError, IoError

MAGIC = b"VSUM"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def _require(condition: bool, exc: type[Exception], message: str) -> None:
    if not condition:
        raise exc(message)


# ---------------------------------------------------------------------------
# Feature matrices
# ---------------------------------------------------------------------------

def validate_feature_matrix(m: np.ndarray) -> np.ndarray:
    """Check the in-memory invariants of a feature matrix and return it as float64."""
    arr = np.asarray(m, dtype=np.float64)
    _require(arr.ndim == 2, DataError, f"feature matrix must be 2-D, got shape {arr.shape}")
    _require(arr.shape[0] >= 1 and arr.shape[1] >= 1, DataError,
             f"feature matrix must be at least 1x1, got {arr.shape}")
    _require(bool(np.isfinite(arr).all()), DataError, "feature matrix contains NaN/Inf")
    return arr


def write_feature_matrix(m: np.ndarray, path: str | Path) -> None:
    """Serialize a feature matrix; payload is stored as float32."""
    arr = validate_feature_matrix(m)
    payload = arr.astype("<f4")
    # values outside float32 range would silently become Inf
    _require(bool(np.isfinite(payload).all()), DataError,
             "feature matrix overflows float32 storage")
    rows, cols = arr.shape
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, rows, cols))
            fh.write(payload.tobytes(order="C"))
            fh.write(b"\x00")
    except OSError as exc:
        raise IoError(f"cannot write feature file {path}: {exc}") from exc


def load_feature_matrix(path: str | Path) -> np.ndarray:
    """Decode a feature file into a read-only float64 matrix."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read feature file {path}: {exc}") from exc

    _require(len(blob) >= _HEADER.size, FormatError, f"{path}: file shorter than header")
    magic, version, rows, cols = _HEADER.unpack_from(blob)
    _require(magic == MAGIC, FormatError, f"{path}: bad magic {magic!r}")
    _require(version == VERSION, FormatError, f"{path}: unsupported version {version}")
    _require(rows >= 1 and cols >= 1, FormatError, f"{path}: empty dimensions {rows}x{cols}")

    expected = _HEADER.size + 4 * rows * cols + 1
    _require(len(blob) >= expected, FormatError,
             f"{path}: truncated payload ({len(blob)} bytes, need {expected})")
    _require(len(blob) == expected, FormatError,
             f"{path}: {len(blob) - expected} trailing bytes")

    flat = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=_HEADER.size)
    _require(bool(np.isfinite(flat).all()), DataError, f"{path}: payload contains NaN/Inf")
    out = flat.astype(np.float64).reshape(rows, cols)
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# Transcript alignment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SentenceSpan:
    """One transcript sentence mapped to its contiguous frame span (inclusive ends)."""

    index: int
    frame_start: int
    frame_end: int
    saliency: float
    text: str | None = None

    @property
    def length(self) -> int:
        return self.frame_end - self.frame_start + 1


@dataclass(frozen=True)
class SentenceAlignment:
    """All sentence spans of one video plus the video's frame count."""

    frame_count: int
    entries: tuple[SentenceSpan, ...]

    @property
    def sentence_count(self) -> int:
        return len(self.entries)

    def sentence_of_frame(self) -> np.ndarray:
        """Per-frame sentence index, -1 for frames outside every span."""
        ids = np.full(self.frame_count, -1, dtype=np.int64)
        for span in self.entries:
            ids[span.frame_start:span.frame_end + 1] = span.index
        return ids

    def saliencies(self) -> np.ndarray:
        return np.array([span.saliency for span in self.entries], dtype=np.float64)


def validate_alignment(frame_count: int, entries: list[SentenceSpan]) -> SentenceAlignment:
    _require(frame_count >= 1, ConsistencyError, "frame_count must be >= 1")
    ordered = sorted(entries, key=lambda s: s.index)
    indices = [s.index for s in ordered]
    _require(indices == list(range(len(ordered))), ConsistencyError,
             f"sentence indices must be exactly 0..{len(ordered) - 1}, got {indices}")
    prev_end = -1
    for span in ordered:
        _require(0 <= span.frame_start <= span.frame_end < frame_count, ConsistencyError,
                 f"sentence {span.index} span [{span.frame_start},{span.frame_end}] "
                 f"out of range for T={frame_count}")
        _require(span.frame_start > prev_end, ConsistencyError,
                 f"sentence {span.index} overlaps or precedes its predecessor")
        _require(math.isfinite(span.saliency), DataError,
                 f"sentence {span.index} saliency is not finite")
        _require(span.saliency >= 0.0, DataError,
                 f"sentence {span.index} saliency is negative")
        prev_end = span.frame_end
    return SentenceAlignment(frame_count=frame_count, entries=tuple(ordered))


def load_alignment(path: str | Path) -> SentenceAlignment:
    """Parse an alignment JSON file.

    Schema: ``{"frame_count": T, "sentences": [{"index": i, "frame_start": k,
    "frame_end": l, "saliency": s, "text": "..."}]}`` with "text" optional.
    """
    doc = _load_json(path)
    _require(isinstance(doc, dict), FormatError, f"{path}: top level must be an object")
    _require("frame_count" in doc and "sentences" in doc, FormatError,
             f"{path}: missing frame_count/sentences")
    frame_count = doc["frame_count"]
    _require(isinstance(frame_count, int), FormatError, f"{path}: frame_count must be an int")
    sentences = doc["sentences"]
    _require(isinstance(sentences, list), FormatError, f"{path}: sentences must be a list")

    entries = []
    for raw in sentences:
        _require(isinstance(raw, dict), FormatError, f"{path}: sentence entries must be objects")
        try:
            entries.append(SentenceSpan(
                index=int(raw["index"]),
                frame_start=int(raw["frame_start"]),
                frame_end=int(raw["frame_end"]),
                saliency=float(raw["saliency"]),
                text=raw.get("text"),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed sentence entry: {exc}") from exc
    return validate_alignment(frame_count, entries)


def write_alignment(alignment: SentenceAlignment, path: str | Path) -> None:
    doc: dict[str, Any] = {
        "frame_count": alignment.frame_count,
        "sentences": [
            {
                "index": s.index,
                "frame_start": s.frame_start,
                "frame_end": s.frame_end,
                "saliency": s.saliency,
                **({"text": s.text} if s.text is not None else {}),
            }
            for s in alignment.entries
        ],
    }
    _dump_json(doc, path)


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

def load_ground_truth(path: str | Path) -> tuple[np.ndarray, tuple[int, ...] | None]:
    """Parse ``{"scores": [...], "shot_boundaries": [...]}`` (boundaries optional)."""
    doc = _load_json(path)
    _require(isinstance(doc, dict) and "scores" in doc, FormatError,
             f"{path}: expected an object with a scores field")
    scores = np.asarray(doc["scores"], dtype=np.float64)
    _require(scores.ndim == 1 and scores.size >= 1, FormatError,
             f"{path}: scores must be a non-empty flat list")
    _require(bool(np.isfinite(scores).all()), DataError, f"{path}: scores contain NaN/Inf")
    _require(bool((scores >= 0).all()), DataError, f"{path}: scores must be non-negative")
    scores.flags.writeable = False

    boundaries = None
    if doc.get("shot_boundaries") is not None:
        raw = doc["shot_boundaries"]
        _require(isinstance(raw, list), FormatError, f"{path}: shot_boundaries must be a list")
        boundaries = tuple(int(b) for b in raw)
    return scores, boundaries


def write_ground_truth(scores: np.ndarray, path: str | Path,
                       shot_boundaries: tuple[int, ...] | None = None) -> None:
    doc: dict[str, Any] = {"scores": [float(s) for s in np.asarray(scores).ravel()]}
    if shot_boundaries is not None:
        doc["shot_boundaries"] = list(shot_boundaries)
    _dump_json(doc, path)


# ---------------------------------------------------------------------------
# Video records and manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VideoRecord:
    """One fully loaded video: features, alignment, optional labels."""

    video_id: str
    frame_features: np.ndarray
    sentence_features: np.ndarray
    alignment: SentenceAlignment
    ground_truth_scores: np.ndarray | None = None
    shot_boundaries: tuple[int, ...] | None = None

    @property
    def frame_count(self) -> int:
        return self.frame_features.shape[0]

    @property
    def sentence_count(self) -> int:
        return self.alignment.sentence_count


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    frame_features: Path
    sentence_features: Path
    alignment: Path
    ground_truth: Path | None = None


@dataclass(frozen=True)
class Manifest:
    split: str
    entries: tuple[ManifestEntry, ...]

    def video_ids(self) -> list[str]:
        return [e.video_id for e in self.entries]


def load_manifest(path: str | Path) -> Manifest:
    """Parse ``{"split": ..., "videos": [{"video_id": ..., file paths...}]}``.

    Relative paths are resolved against the manifest's directory; every
    referenced file must exist.
    """
    path = Path(path)
    doc = _load_json(path)
    _require(isinstance(doc, dict) and "videos" in doc, FormatError,
             f"{path}: expected an object with a videos field")
    split = doc.get("split", "train")
    _require(split in ("train", "eval"), FormatError, f"{path}: split must be train or eval")

    base = path.parent
    entries = []
    seen: set[str] = set()
    for raw in doc["videos"]:
        _require(isinstance(raw, dict), FormatError, f"{path}: video entries must be objects")
        try:
            vid = str(raw["video_id"])
            entry = ManifestEntry(
                video_id=vid,
                frame_features=_resolve(base, raw["frame_features"]),
                sentence_features=_resolve(base, raw["sentence_features"]),
                alignment=_resolve(base, raw["alignment"]),
                ground_truth=_resolve(base, raw["ground_truth"]) if raw.get("ground_truth") else None,
            )
        except KeyError as exc:
            raise FormatError(f"{path}: video entry missing {exc}") from exc
        _require(vid not in seen, ConsistencyError, f"{path}: duplicate video_id {vid}")
        seen.add(vid)
        for file_path in (entry.frame_features, entry.sentence_features,
                          entry.alignment, entry.ground_truth):
            if file_path is not None:
                _require(file_path.exists(), IoError, f"{path}: missing file {file_path}")
        entries.append(entry)
    return Manifest(split=split, entries=tuple(entries))


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    base = Path(path).parent
    doc: dict[str, Any] = {"split": manifest.split, "videos": []}
    for e in manifest.entries:
        video: dict[str, Any] = {
            "video_id": e.video_id,
            "frame_features": _relativize(base, e.frame_features),
            "sentence_features": _relativize(base, e.sentence_features),
            "alignment": _relativize(base, e.alignment),
        }
        if e.ground_truth is not None:
            video["ground_truth"] = _relativize(base, e.ground_truth)
        doc["videos"].append(video)
    _dump_json(doc, path)


def load_video_record(entry: ManifestEntry) -> VideoRecord:
    """Assemble a VideoRecord, checking every cross-file invariant."""
    frames = load_feature_matrix(entry.frame_features)
    sentences = load_feature_matrix(entry.sentence_features)
    alignment = load_alignment(entry.alignment)

    _require(frames.shape[0] == alignment.frame_count, ConsistencyError,
             f"{entry.video_id}: {frames.shape[0]} frame features vs "
             f"alignment frame_count {alignment.frame_count}")
    _require(sentences.shape[0] == alignment.sentence_count, ConsistencyError,
             f"{entry.video_id}: {sentences.shape[0]} sentence features vs "
             f"{alignment.sentence_count} alignment sentences")

    scores = None
    boundaries = None
    if entry.ground_truth is not None:
        scores, boundaries = load_ground_truth(entry.ground_truth)
        _require(scores.shape[0] == alignment.frame_count, ConsistencyError,
                 f"{entry.video_id}: {scores.shape[0]} ground-truth scores for "
                 f"T={alignment.frame_count}")
        if boundaries is not None:
            _validate_boundaries(boundaries, alignment.frame_count, entry.video_id)
    return VideoRecord(
        video_id=entry.video_id,
        frame_features=frames,
        sentence_features=sentences,
        alignment=alignment,
        ground_truth_scores=scores,
        shot_boundaries=boundaries,
    )


def load_records(manifest: Manifest) -> list[VideoRecord]:
    records = [load_video_record(entry) for entry in manifest.entries]
    frame_dims = {r.frame_features.shape[1] for r in records}
    sentence_dims = {r.sentence_features.shape[1] for r in records}
    _require(len(frame_dims) <= 1, ConsistencyError,
             f"frame feature dimensions differ across the dataset: {sorted(frame_dims)}")
    _require(len(sentence_dims) <= 1, ConsistencyError,
             f"sentence feature dimensions differ across the dataset: {sorted(sentence_dims)}")
    return records


def _validate_boundaries(boundaries: tuple[int, ...], frame_count: int, video_id: str) -> None:
    prev = 0
    for b in boundaries:
        _require(0 < b < frame_count, ConsistencyError,
                 f"{video_id}: shot boundary {b} out of range (0,{frame_count})")
        _require(b > prev, ConsistencyError,
                 f"{video_id}: shot boundaries must be strictly increasing")
        prev = b


# ---------------------------------------------------------------------------
# JSON helpers
# ---------------------------------------------------------------------------

def _load_json(path: str | Path) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc


def _dump_json(doc: Any, path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _resolve(base: Path, raw: Any) -> Path:
    p = Path(str(raw))
    return p if p.is_absolute() else base / p


def _relativize(base: Path, target: Path) -> str:
    try:
        return str(target.relative_to(base))
    except ValueError:
        return str(target)
