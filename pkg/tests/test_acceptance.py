"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
lines.  The training-based criteria share one seeded synthetic run via a
module-scoped fixture; everything is deterministic.
"""

import json
import math
import time

import numpy as np
import pytest

from vsumrl.cli import main
from vsumrl.data_io import load_records
from vsumrl.errors import DegenerateInputError
from vsumrl.metrics import kendall_tau, map_at, spearman_rho
from vsumrl.model import (
    ModelConfig,
    build_attention_mask,
    forward,
    init_params,
)
from vsumrl.rewards import (
    RewardConfig,
    diversity_reward,
    representativeness_reward,
    saliency_reward,
    total_reward,
)
from vsumrl.segmentation import kts_segment, select_shots_knapsack
from vsumrl.synth import SyntheticSpec, generate_dataset, salient_frame_mask
from vsumrl.training import (
    TrainConfig,
    record_inputs,
    sample_episode,
    surrogate_gradients,
    surrogate_objective,
    train,
)

from conftest import make_record, random_alignment
from test_metrics import (
    oracle_average_precision,
    oracle_kendall,
    oracle_spearman,
    scores_with_ties,
)
from test_rewards import oracle_diversity, oracle_representativeness, oracle_saliency
from test_segmentation import knapsack_oracle, segmentation_from_lengths


def report(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"[criterion {num}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


# ---------------------------------------------------------------------------
# Criterion 1: gradient correctness on the frozen REINFORCE surrogate
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_correctness(rng):
    started = time.time()
    model_cfg = ModelConfig(
        hidden_size=8, num_layers=2, num_heads=2, max_frames=6, max_sentences=2,
        frame_dim=5, sentence_dim=3,
        dropout_attn=0.0, dropout_expert=0.0, dropout_head=0.0)
    cfg = TrainConfig(episodes=4, beta1=0.12, beta2=1e-5, epsilon=0.5, seed=0)
    params = init_params(model_cfg, seed=12)
    record = make_record(rng, frame_count=6, spans=[(0, 2, 0.9), (3, 4, 0.4)],
                         frame_dim=5, sentence_dim=3)

    x, y, alignment = record_inputs(record, False)
    trace = forward(params, x, y, alignment, mode="eval")
    ep_rng = np.random.default_rng(5)
    episodes = [sample_episode(trace.p, ep_rng) for _ in range(cfg.episodes)]
    rewards = [total_reward(record.frame_features, record.alignment, a,
                            RewardConfig()).total for a in episodes]
    b = float(np.mean(rewards)) - 0.2

    analytic = surrogate_gradients(params, trace, episodes, rewards, b, cfg)

    h = 1e-4
    worst = 0.0
    for name, arr in params.tensors.items():
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + h
            fp = surrogate_objective(params, record, episodes, rewards, b, cfg)
            arr[ix] = orig - h
            fm = surrogate_objective(params, record, episodes, rewards, b, cfg)
            arr[ix] = orig
            fd = (fp - fm) / (2.0 * h)
            an = float(analytic[name][ix])
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    elapsed = time.time() - started

    report(1, "gradient correctness",
           worst < 1e-4 and elapsed < 60.0,
           f"max rel err {worst:.3e} over {params.num_parameters()} parameters "
           f"in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 2: reward oracles
# ---------------------------------------------------------------------------

def test_criterion_2_reward_oracles():
    rng = np.random.default_rng(2024)
    instances = 200
    worst = 0.0
    cutoff_exercised = 0
    for _ in range(instances):
        t = int(rng.integers(8, 33))
        alignment = random_alignment(rng, t, max_sentences=6)
        frames = rng.normal(size=(t, int(rng.integers(3, 8))))
        lam = int(rng.integers(2, 6))
        cfg = RewardConfig(lam=lam)
        while True:
            selection = (rng.random(t) < 0.5).astype(np.int8)
            if selection.sum() >= 2:
                break
        idx = np.flatnonzero(selection)
        if (np.abs(idx[:, None] - idx[None, :]) > lam).any():
            cutoff_exercised += 1

        got_div = diversity_reward(frames, selection, cfg)
        want_div = oracle_diversity(frames.tolist(), idx.tolist(), lam)
        got_rep = representativeness_reward(frames, selection)
        want_rep = oracle_representativeness(frames.tolist(), idx.tolist())
        got_sal = saliency_reward(alignment, selection)
        want_sal = oracle_saliency(alignment, selection)
        worst = max(worst, abs(got_div - want_div), abs(got_rep - want_rep),
                    abs(got_sal - want_sal))

    report(2, "reward oracles",
           worst <= 1e-12 and cutoff_exercised >= instances / 2,
           f"max abs err {worst:.2e}; distance cutoff hit in "
           f"{cutoff_exercised}/{instances} instances")


# ---------------------------------------------------------------------------
# Criterion 3: attention-mask structure and information flow
# ---------------------------------------------------------------------------

def test_criterion_3_mask_structure():
    rng = np.random.default_rng(31)
    structural_ok = True
    for _ in range(100):
        t = int(rng.integers(2, 14))
        alignment = random_alignment(rng, t, max_sentences=5)
        m = alignment.sentence_count
        mask = build_attention_mask(t, m, alignment)
        structural_ok &= bool((mask == mask.T).all())
        structural_ok &= bool(mask[:t, :t].all() and mask[t:, t:].all())
        cross = np.zeros((t, m), dtype=bool)
        for span in alignment.entries:
            cross[span.frame_start:span.frame_end + 1, span.index] = True
        structural_ok &= bool((mask[:t, t:] == cross).all())

    # single-block locality: frames not aligned to a sentence never see it
    model_cfg = ModelConfig(
        hidden_size=8, num_layers=1, num_heads=2, max_frames=16, max_sentences=4,
        frame_dim=5, sentence_dim=3,
        dropout_attn=0.0, dropout_expert=0.0, dropout_head=0.0)
    params = init_params(model_cfg, seed=4)
    locality_ok = True
    for trial in range(10):
        t = 10
        alignment = random_alignment(rng, t, max_sentences=3)
        if alignment.sentence_count == 0:
            continue
        x = rng.normal(size=(t, 5))
        y = rng.normal(size=(alignment.sentence_count, 3))
        target = int(rng.integers(0, alignment.sentence_count))
        span = alignment.entries[target]
        y2 = y.copy()
        y2[target] += rng.normal(size=3)

        h_base = forward(params, x, y, alignment).h
        h_moved = forward(params, x, y2, alignment).h
        aligned = np.zeros(t, dtype=bool)
        aligned[span.frame_start:span.frame_end + 1] = True
        locality_ok &= bool((h_base[~aligned] == h_moved[~aligned]).all())
        locality_ok &= not np.allclose(h_base[aligned], h_moved[aligned])

    report(3, "mask structure", structural_ok and locality_ok,
           f"100 random masks structurally exact; single-block sentence "
           f"perturbations stay within aligned frames")


# ---------------------------------------------------------------------------
# Criterion 4: metric oracles
# ---------------------------------------------------------------------------

def test_criterion_4_metric_oracles():
    rng = np.random.default_rng(44)
    worst_rank = 0.0
    checked = 0
    for _ in range(500):
        n = int(rng.integers(3, 51))
        pred = scores_with_ties(rng, n)
        gt = scores_with_ties(rng, n)
        try:
            rho = spearman_rho(pred, gt)
            tau = kendall_tau(pred, gt)
        except DegenerateInputError:
            continue
        checked += 1
        worst_rank = max(worst_rank,
                         abs(rho - oracle_spearman(pred.tolist(), gt.tolist())),
                         abs(tau - oracle_kendall(pred.tolist(), gt.tolist())))

    worst_map = 0.0
    for _ in range(500):
        n = int(rng.integers(3, 41))
        pred = scores_with_ties(rng, n)
        gt = scores_with_ties(rng, n)
        rho_pct = float(rng.choice([5, 15, 25, 50, 80, 100]))
        worst_map = max(worst_map, abs(
            map_at(pred, gt, rho_pct)
            - oracle_average_precision(pred.tolist(), gt.tolist(), rho_pct)))

    knapsack_ok = True
    for _ in range(120):
        t = int(rng.integers(2, 17))
        lengths = []
        remaining = t
        while remaining:
            n = int(rng.integers(1, min(4, remaining) + 1))
            lengths.append(n)
            remaining -= n
        seg = segmentation_from_lengths(lengths)
        scores = np.round(rng.random(len(lengths)), 3)
        budget = float(rng.uniform(0.2, 1.0))
        capacity = math.floor(budget * t)
        values = [scores[i] * lengths[i] for i in range(len(lengths))]
        _, want = knapsack_oracle(values, lengths, capacity)
        got = select_shots_knapsack(scores, seg, budget)
        knapsack_ok &= got.selected_shots == want

    report(4, "metric oracles",
           worst_rank <= 1e-12 and worst_map <= 1e-12 and knapsack_ok and checked >= 450,
           f"rank err {worst_rank:.2e} ({checked} pairs); AP err {worst_map:.2e}; "
           f"knapsack equals exhaustive search on 120 instances")


# ---------------------------------------------------------------------------
# Criteria 5 and 6: synthetic training run (shared fixture)
# ---------------------------------------------------------------------------

SYNTH_SEED = 7
SYNTH_MODEL = ModelConfig(
    hidden_size=16, num_layers=1, num_heads=4, max_frames=128, max_sentences=16,
    frame_dim=16, sentence_dim=8)
# optimization settings sized for this tiny planted dataset; the production
# defaults in TrainConfig are far too slow-moving for 64-frame videos
SYNTH_TRAIN = dict(epochs=40, episodes=5, learning_rate=5e-3,
                   epsilon=0.5, beta1=30.0, beta2=1e-5, seed=SYNTH_SEED)


def _probe(params, records, unimodal):
    rows = []
    for record in records:
        x, y, alignment = record_inputs(record, unimodal)
        p = forward(params, x, y, alignment, mode="eval", keep_cache=False).p
        rows.append({
            "p": p,
            "salient": salient_frame_mask(record.alignment),
            "gt": record.ground_truth_scores,
        })
    return rows


def _auc(pos, neg):
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins) / (pos.size * neg.size)


@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    spec = SyntheticSpec(num_videos=20, frames_per_video=64, frame_dim=16,
                         sentence_dim=8, clusters=4, sentences_per_video=8,
                         salient_fraction=0.25, noise=0.3, seed=SYNTH_SEED)
    manifest = generate_dataset(spec, out)
    records = load_records(manifest)

    started = time.time()
    runs = {}
    for tag, unimodal in (("multi", False), ("uni", True)):
        cfg = TrainConfig(unimodal=unimodal, **SYNTH_TRAIN)
        reward_cfg = RewardConfig(use_saliency=not unimodal)
        params, _, _ = train(records, SYNTH_MODEL, cfg, reward_cfg)
        runs[tag] = _probe(params, records, unimodal)
    runs["init"] = _probe(init_params(SYNTH_MODEL, seed=SYNTH_SEED), records, False)
    runs["runtime"] = time.time() - started
    return runs


def test_criterion_5_training_sanity(synthetic_run):
    multi = synthetic_run["multi"]
    aucs = [_auc(r["p"][r["salient"]], r["p"][~r["salient"]]) for r in multi]
    mean_gap_ok = all(r["p"][r["salient"]].mean() > r["p"][~r["salient"]].mean()
                      for r in multi)
    auc = float(np.mean(aucs))

    map15 = {tag: float(np.mean([map_at(r["p"], r["gt"], 15) for r in synthetic_run[tag]]))
             for tag in ("multi", "uni", "init")}
    runtime = synthetic_run["runtime"]

    ok = (auc >= 0.8 and mean_gap_ok
          and map15["multi"] > map15["init"]
          and map15["multi"] > map15["uni"]
          and runtime < 600.0)
    report(5, "training sanity", ok,
           f"salient-vs-rest AUC {auc:.3f} (>=0.8); MAP15 multi {map15['multi']:.3f} "
           f"> init {map15['init']:.3f} and > unimodal {map15['uni']:.3f}; "
           f"runtime {runtime:.0f}s")


def test_criterion_6_percentage_regularizer(synthetic_run):
    mean_p = float(np.mean([r["p"].mean() for r in synthetic_run["multi"]]))
    gap = abs(mean_p - 0.5)
    report(6, "percentage regularizer", gap < 0.1,
           f"|mean p - 0.5| = {gap:.3f} (< 0.1) with target fraction 0.5")


# ---------------------------------------------------------------------------
# Criterion 7: baseline subtraction is unbiased
# ---------------------------------------------------------------------------

def test_criterion_7_baseline_unbiasedness(rng):
    record = make_record(rng, frame_count=8, spans=[(0, 2, 0.9), (4, 6, 0.3)])
    t = record.frame_count
    p = rng.uniform(0.25, 0.75, t)
    b = 1.0
    episodes = 50_000
    cfg = RewardConfig()

    ep_rng = np.random.default_rng(1717)
    actions = (ep_rng.random((episodes, t)) < p).astype(np.int8)
    scores = actions / p - (1 - actions) / (1 - p)
    rewards = np.array([
        total_reward(record.frame_features, record.alignment, a, cfg).total
        for a in actions
    ])

    with_baseline = (rewards - b)[:, None] * scores
    without = rewards[:, None] * scores
    diff = with_baseline - without
    mean_diff = diff.mean(axis=0)
    se = diff.std(axis=0, ddof=1) / math.sqrt(episodes)
    z = np.abs(mean_diff) / se

    report(7, "baseline unbiasedness", bool((z <= 3.0).all()),
           f"max |mean difference| = {np.abs(mean_diff).max():.2e} at "
           f"{z.max():.2f} standard errors over {episodes} episodes")


# ---------------------------------------------------------------------------
# Criterion 8: determinism of train and eval
# ---------------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "seed": 13,
        "model": {"hidden_size": 8, "num_layers": 1, "num_heads": 2,
                  "max_frames": 32, "max_sentences": 8,
                  "frame_dim": 6, "sentence_dim": 4},
        "train": {"epochs": 2, "episodes": 3, "learning_rate": 1e-3},
        "synthetic": {"num_videos": 3, "frames_per_video": 16, "frame_dim": 6,
                      "sentence_dim": 4, "clusters": 2, "sentences_per_video": 3,
                      "salient_fraction": 0.34, "noise": 0.2, "seed": 13},
    }))
    data = tmp_path / "data"
    assert main(["gen-synth", "--config", str(config), "--out", str(data)]) == 0
    manifest = str(data / "manifest.json")

    checkpoints, reports = [], []
    for run in ("a", "b"):
        run_dir = tmp_path / f"train_{run}"
        assert main(["train", "--config", str(config), "--manifest", manifest,
                     "--out", str(run_dir)]) == 0
        checkpoints.append((run_dir / "checkpoint.bin").read_bytes())
        eval_dir = tmp_path / f"eval_{run}"
        assert main(["eval", "--config", str(config), "--manifest", manifest,
                     "--checkpoint", str(run_dir / "checkpoint.bin"),
                     "--out", str(eval_dir)]) == 0
        reports.append((eval_dir / "report.json").read_bytes()
                       + (eval_dir / "report.txt").read_bytes())

    ok = checkpoints[0] == checkpoints[1] and reports[0] == reports[1]
    report(8, "determinism", ok,
           f"checkpoints byte-identical: {checkpoints[0] == checkpoints[1]}; "
           f"reports byte-identical: {reports[0] == reports[1]}")


# ---------------------------------------------------------------------------
# Criterion 9: change-point detection sanity
# ---------------------------------------------------------------------------

def test_criterion_9_kts_sanity():
    u = np.array([2.0, 0.0, 0.0])
    v = np.array([0.0, 2.0, 0.0])
    frames = np.vstack([np.tile(u, (4, 1)), np.tile(v, (4, 1))])
    two_blob = kts_segment(frames, max_shots=4, penalty_weight=1.0)

    flat = kts_segment(np.tile([1.0, 2.0, 3.0], (12, 1)), max_shots=4)

    ok = two_blob.boundaries == (4,) and flat.boundaries == ()
    report(9, "change-point sanity", ok,
           f"two-blob boundary {two_blob.boundaries} (expected (4,)); "
           f"constant video has {flat.num_shots} shot")
