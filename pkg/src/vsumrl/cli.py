"""Command-line entry point: gen-synth, train, score, summarize, eval.

Every command is driven by a JSON config (see config.py) with flag
overrides, validates everything before touching data, and is a
deterministic function of (inputs, config, seed).  Exit codes: 0 success,
2 configuration/validation problems, 3 numerical failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig, load_config
from .data_io import Manifest, VideoRecord, load_manifest, load_records
from .errors import NumericsError, VsumError
from .metrics import evaluate_records, format_report_table
from .model import ModelParams, forward
from .segmentation import segmentation_for, summarize_scores
from .synth import generate_dataset
from .training import record_inputs, train, write_train_log

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICS = 3


def _scorer(params: ModelParams, unimodal: bool) -> Callable[[VideoRecord], np.ndarray]:
    def score(record: VideoRecord) -> np.ndarray:
        x, y, alignment = record_inputs(record, unimodal)
        return forward(params, x, y, alignment, mode="eval", keep_cache=False).p
    return score


def _map_videos(records: Sequence[VideoRecord], fn, workers: int) -> list:
    """Apply fn per video, possibly in a thread pool; results in video order."""
    if workers <= 1 or len(records) <= 1:
        return [fn(r) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, records))


def _require_path(value: str | None, name: str) -> Path:
    if not value:
        raise VsumError(f"missing required path: {name}")
    return Path(value)


def _load_eval_inputs(args, cfg: RunConfig) -> tuple[Manifest, list[VideoRecord], ModelParams, bool]:
    manifest_path = _require_path(args.manifest or cfg.paths.manifest, "manifest")
    checkpoint_path = _require_path(args.checkpoint or cfg.paths.checkpoint, "checkpoint")
    manifest = load_manifest(manifest_path)
    params, _, meta = ckpt.load_checkpoint(checkpoint_path)
    unimodal = bool(meta.get("unimodal", cfg.unimodal))
    records = load_records(manifest)
    return manifest, records, params, unimodal


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.paths.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.synthetic
    overrides = {}
    for flag, field_name in (
        ("videos", "num_videos"), ("frames", "frames_per_video"),
        ("sentences", "sentences_per_video"), ("clusters", "clusters"),
        ("salient_fraction", "salient_fraction"), ("noise", "noise"),
        ("split", "split"),
    ):
        value = getattr(args, flag)
        if value is not None:
            overrides[field_name] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    spec = dataclasses.replace(spec, **overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = generate_dataset(spec, out)
    print(f"wrote {len(manifest.entries)} videos to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    manifest_path = _require_path(args.manifest or cfg.paths.manifest, "manifest")
    manifest = load_manifest(manifest_path)
    out = _out_dir(args, cfg)

    params, log_rows, state = train(
        manifest, cfg.model, cfg.resolved_train(), cfg.resolved_reward())

    checkpoint_path = out / "checkpoint.bin"
    ckpt.save_checkpoint(checkpoint_path, params,
                         optimizer_state=state.optimizer.state(),
                         meta={"unimodal": cfg.unimodal, "seed": cfg.seed})
    write_train_log(log_rows, out / "train_log.jsonl")
    print(f"trained {cfg.train.epochs} epochs on {len(manifest.entries)} videos; "
          f"checkpoint at {checkpoint_path}")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = load_config(args.config)
    _, records, params, unimodal = _load_eval_inputs(args, cfg)
    out = _out_dir(args, cfg)
    score = _scorer(params, unimodal)

    def one(record: VideoRecord) -> tuple[str, list[float]]:
        return record.video_id, [float(v) for v in score(record)]

    results = _map_videos(records, one, args.workers or cfg.workers)
    for video_id, scores in results:
        with open(out / f"{video_id}.scores.json", "w", encoding="utf-8") as fh:
            json.dump({"video_id": video_id, "scores": scores}, fh, sort_keys=True)
            fh.write("\n")
    print(f"scored {len(results)} videos into {out}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    cfg = load_config(args.config)
    _, records, params, unimodal = _load_eval_inputs(args, cfg)
    out = _out_dir(args, cfg)
    seg_cfg = cfg.segmentation
    budget = args.budget if args.budget is not None else seg_cfg.budget
    selector = args.selector or seg_cfg.selector
    score = _scorer(params, unimodal)

    def one(record: VideoRecord) -> dict:
        p = score(record)
        seg = segmentation_for(record, seg_cfg.max_shots, seg_cfg.penalty_weight)
        result = summarize_scores(p, seg, budget, selector)
        return {
            "video_id": record.video_id,
            "boundaries": list(seg.boundaries),
            "selected_shots": list(result.selected_shots),
            "summary": [int(v) for v in result.summary],
            "scores": [float(v) for v in p],
            "budget": budget,
        }

    results = _map_videos(records, one, args.workers or cfg.workers)
    for doc in results:
        with open(out / f"{doc['video_id']}.summary.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")
    print(f"summarized {len(results)} videos into {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    _, records, params, unimodal = _load_eval_inputs(args, cfg)
    out = _out_dir(args, cfg)
    m = cfg.metrics
    report = evaluate_records(
        records, _scorer(params, unimodal),
        budget=args.budget if args.budget is not None else m.budget,
        rho_percents=m.rho_percents,
        selector=args.selector or m.selector,
        max_shots=cfg.segmentation.max_shots,
        penalty_weight=cfg.segmentation.penalty_weight,
    )
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    table = format_report_table(report)
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vsumrl",
        description="Train and evaluate the multimodal summary/highlight pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="video-level worker pool size")
        p.add_argument("--out", help="output directory")
        if manifest:
            p.add_argument("--manifest", help="dataset manifest JSON")

    g = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    common(g, manifest=False)
    g.add_argument("--videos", type=int)
    g.add_argument("--frames", type=int)
    g.add_argument("--sentences", type=int)
    g.add_argument("--clusters", type=int)
    g.add_argument("--salient-fraction", dest="salient_fraction", type=float)
    g.add_argument("--noise", type=float)
    g.add_argument("--split", choices=["train", "eval"])
    g.set_defaults(fn=cmd_gen_synth, out=".")

    t = sub.add_parser("train", help="run REINFORCE training")
    common(t)
    t.set_defaults(fn=cmd_train)

    for name, fn, extra in (
        ("score", cmd_score, False),
        ("summarize", cmd_summarize, True),
        ("eval", cmd_eval, True),
    ):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--checkpoint", help="trained checkpoint file")
        if extra:
            p.add_argument("--budget", type=float, help="summary length fraction")
            p.add_argument("--selector", choices=["greedy", "knapsack"])
        p.set_defaults(fn=fn)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except (VsumError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
