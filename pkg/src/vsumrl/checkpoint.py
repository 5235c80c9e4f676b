"""Versioned binary checkpoints for model parameters and optimizer state.

Layout (all integers little-endian):

    magic    4 bytes  b"VSCK"
    version  u32      currently 1
    hdr_len  u32
    header   hdr_len bytes of UTF-8 JSON (sorted keys):
             {"config": {...ModelConfig fields...},
              "meta": {...free-form strings/bools...},
              "tensors": [{"name": ..., "shape": [...]}, ...],
              "optimizer": null | {"step": int}}
    data     each tensor from "tensors", float64 little-endian, C order;
             if an optimizer is present, its first and second moment tensors
             follow in the same name order.

Parameters are stored at full 64-bit precision so save/load round-trips are
bit-exact (the 32-bit feature-file encoding would quantize training state).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Any

import numpy as np

from .errors import FormatError, IoError
from .model import ModelConfig, ModelParams

MAGIC = b"VSCK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def save_checkpoint(path: str | Path, params: ModelParams,
                    optimizer_state: dict[str, Any] | None = None,
                    meta: dict[str, Any] | None = None) -> None:
    header = {
        "config": asdict(params.config),
        "meta": meta or {},
        "tensors": [{"name": name, "shape": list(arr.shape)}
                    for name, arr in params.tensors.items()],
        "optimizer": None if optimizer_state is None
        else {"step": int(optimizer_state["step"])},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
            fh.write(blob)
            for arr in params.tensors.values():
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            if optimizer_state is not None:
                for moment in ("m", "v"):
                    for name in params.tensors:
                        fh.write(np.ascontiguousarray(
                            optimizer_state[moment][name], dtype="<f8").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict[str, Any] | None, dict[str, Any]]:
    """Returns (params, optimizer_state_or_None, meta)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc

    if len(blob) < _PREFIX.size:
        raise FormatError(f"{path}: shorter than checkpoint prefix")
    magic, version, hdr_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if len(blob) < _PREFIX.size + hdr_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[_PREFIX.size:_PREFIX.size + hdr_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad header JSON: {exc}") from exc

    config = ModelConfig(**header["config"])
    offset = _PREFIX.size + hdr_len

    def take(shape: list[int]) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise FormatError(f"{path}: truncated tensor data")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset = end
        return arr.astype(np.float64).reshape(shape)

    tensors = {spec["name"]: take(spec["shape"]) for spec in header["tensors"]}
    params = ModelParams(config=config, tensors=tensors)

    optimizer_state = None
    if header.get("optimizer") is not None:
        optimizer_state = {"step": int(header["optimizer"]["step"]), "m": {}, "v": {}}
        for moment in ("m", "v"):
            for spec in header["tensors"]:
                optimizer_state[moment][spec["name"]] = take(spec["shape"])
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return params, optimizer_state, header.get("meta", {})
