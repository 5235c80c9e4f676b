"""Multimodal transformer scoring each frame with a selection probability.

Frame and sentence features are projected into a shared hidden space, get
learnable positional and segment embeddings, and run through L blocks of
masked multi-head attention followed by modality-specific feedforward
experts.  The mask keeps attention within each modality plus the aligned
(sentence, frame) pairs, so unrelated modalities never mix.  A small head
with a sigmoid turns the final frame embeddings into probabilities.

Everything is float64 numpy, and ``backward`` computes exact parameter
gradients of ``sum_t upstream_t * p_t`` from the activations cached during
``forward``.  Dropout masks are drawn from the caller's RNG and cached, so
the backward pass is exact in train mode too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .data_io import SentenceAlignment
from .errors import ConsistencyError, NumericsError, UsageError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715
P_CLIP = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 128
    num_layers: int = 1
    num_heads: int = 8
    max_frames: int = 4096
    max_sentences: int = 512
    frame_dim: int = 1024
    sentence_dim: int = 768
    dropout_attn: float = 0.1
    dropout_expert: float = 0.1
    dropout_head: float = 0.5
    layer_norm_eps: float = 1e-5

    def __post_init__(self) -> None:
        if self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        for name in ("hidden_size", "num_layers", "num_heads", "max_frames",
                     "max_sentences", "frame_dim", "sentence_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("dropout_attn", "dropout_expert", "dropout_head"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must be in [0,1), got {rate}")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    @property
    def expert_dim(self) -> int:
        return 4 * self.hidden_size


@dataclass
class ModelParams:
    """All learnable tensors, keyed by a fixed canonical name order."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor names and shapes, in serialization order."""
    c = config.hidden_size
    e = config.expert_dim
    shapes: dict[str, tuple[int, ...]] = {
        "proj_video.w": (config.frame_dim, c),
        "proj_video.b": (c,),
        "proj_text.w": (config.sentence_dim, c),
        "proj_text.b": (c,),
        "pos_frame": (config.max_frames, c),
        "pos_sentence": (config.max_sentences, c),
        # one row per sentence slot plus a reserved row for uncovered frames
        "segment": (config.max_sentences + 1, c),
    }
    for layer in range(config.num_layers):
        p = f"block{layer}."
        shapes[p + "attn.wq"] = (c, c)
        shapes[p + "attn.bq"] = (c,)
        shapes[p + "attn.wk"] = (c, c)
        shapes[p + "attn.bk"] = (c,)
        shapes[p + "attn.wv"] = (c, c)
        shapes[p + "attn.bv"] = (c,)
        shapes[p + "attn.wo"] = (c, c)
        shapes[p + "attn.bo"] = (c,)
        shapes[p + "ln_attn.gain"] = (c,)
        shapes[p + "ln_attn.bias"] = (c,)
        for expert in ("ffn_video", "ffn_text"):
            shapes[p + expert + ".w1"] = (c, e)
            shapes[p + expert + ".b1"] = (e,)
            shapes[p + expert + ".w2"] = (e, c)
            shapes[p + expert + ".b2"] = (c,)
        shapes[p + "ln_ffn.gain"] = (c,)
        shapes[p + "ln_ffn.bias"] = (c,)
    shapes["head.w1"] = (c, c)
    shapes["head.b1"] = (c,)
    shapes["head.w2"] = (c, 1)
    shapes["head.b2"] = (1,)
    return shapes


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic initialization: N(0, 1/sqrt(fan_in)) weights, zero biases,
    unit layer-norm gains, N(0, 0.02) embedding tables."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name in ("pos_frame", "pos_sentence", "segment"):
            tensors[name] = rng.normal(0.0, 0.02, shape)
        elif leaf == "gain":
            tensors[name] = np.ones(shape)
        elif leaf in ("b", "bias", "bq", "bk", "bv", "bo", "b1", "b2"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = shape[0]
            tensors[name] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape)
    return ModelParams(config=config, tensors=tensors)


def build_attention_mask(frame_count: int, sentence_count: int,
                         alignment: SentenceAlignment) -> np.ndarray:
    """Boolean (T+M)x(T+M) mask, frames first.

    Starts all False; the frame-frame and sentence-sentence blocks are fully
    enabled, and cross-modal positions are enabled exactly for aligned
    (sentence, frame) pairs.
    """
    if alignment.frame_count != frame_count or alignment.sentence_count != sentence_count:
        raise ConsistencyError(
            f"alignment is for T={alignment.frame_count}, M={alignment.sentence_count}; "
            f"mask requested for T={frame_count}, M={sentence_count}")
    n = frame_count + sentence_count
    mask = np.zeros((n, n), dtype=bool)
    mask[:frame_count, :frame_count] = True
    mask[frame_count:, frame_count:] = True
    for span in alignment.entries:
        if span.frame_end >= frame_count:
            raise ConsistencyError(f"sentence {span.index} span exceeds frame count")
        row = frame_count + span.index
        mask[row, span.frame_start:span.frame_end + 1] = True
        mask[span.frame_start:span.frame_end + 1, row] = True
    return mask


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

@dataclass
class _BlockCache:
    z_in: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    attn_keep: np.ndarray | None
    ctx: np.ndarray
    ln1_xhat: np.ndarray
    ln1_inv: np.ndarray
    out1: np.ndarray
    a1_video: np.ndarray
    g_video: np.ndarray
    a1_text: np.ndarray
    g_text: np.ndarray
    expert_keep: np.ndarray | None
    ln2_xhat: np.ndarray
    ln2_inv: np.ndarray
    out2: np.ndarray


@dataclass
class ForwardTrace:
    """Per-frame probabilities plus everything backward() needs."""

    config: ModelConfig
    mode: str
    frames: np.ndarray
    sentences: np.ndarray
    alignment: SentenceAlignment
    seg_ids: np.ndarray
    mask: np.ndarray
    h: np.ndarray
    p: np.ndarray
    sig: np.ndarray
    cache: dict[str, Any] | None = field(default=None, repr=False)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def sentence_count(self) -> int:
        return self.sentences.shape[0]


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x ** 3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
                eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gain * xhat + bias, xhat, inv


def _layer_norm_backward(dy: np.ndarray, xhat: np.ndarray, inv: np.ndarray,
                         gain: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    dx = inv * (dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def _dropout_mask(rng: np.random.Generator | None, rate: float,
                  shape: tuple[int, ...], mode: str) -> np.ndarray | None:
    if mode != "train" or rate == 0.0:
        return None
    assert rng is not None
    return (rng.random(shape) >= rate).astype(np.float64)


def _apply_dropout(x: np.ndarray, keep: np.ndarray | None, rate: float) -> np.ndarray:
    if keep is None:
        return x
    return x * keep / (1.0 - rate)


def _heads(x: np.ndarray, num_heads: int, head_dim: int) -> np.ndarray:
    n = x.shape[0]
    return x.reshape(n, num_heads, head_dim).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * d)


def forward(params: ModelParams, frames: np.ndarray, sentences: np.ndarray,
            alignment: SentenceAlignment, mode: str = "eval",
            rng: np.random.Generator | None = None,
            keep_cache: bool = True) -> ForwardTrace:
    """Run the full pipeline and return probabilities plus cached activations.

    ``mode`` is "train" (dropout active, requires ``rng``) or "eval".
    ``sentences`` may be empty (M=0), which degrades to a unimodal
    transformer over frames.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    cfg = params.config
    t = params.tensors
    x = np.asarray(frames, dtype=np.float64)
    y = np.asarray(sentences, dtype=np.float64)
    if y.size == 0:
        y = y.reshape(0, cfg.sentence_dim)
    n_frames, n_sent = x.shape[0], y.shape[0]
    if x.shape[1] != cfg.frame_dim:
        raise ConsistencyError(f"frame dim {x.shape[1]} != configured {cfg.frame_dim}")
    if n_sent and y.shape[1] != cfg.sentence_dim:
        raise ConsistencyError(f"sentence dim {y.shape[1]} != configured {cfg.sentence_dim}")
    if n_frames > cfg.max_frames or n_sent > cfg.max_sentences:
        raise ConsistencyError(
            f"video with T={n_frames}, M={n_sent} exceeds capacity "
            f"({cfg.max_frames}, {cfg.max_sentences})")
    if alignment.frame_count != n_frames or alignment.sentence_count != n_sent:
        raise ConsistencyError("alignment inconsistent with feature shapes")
    if mode == "train" and rng is None and (
            cfg.dropout_attn or cfg.dropout_expert or cfg.dropout_head):
        raise UsageError("train mode with non-zero dropout needs an rng")

    # frames aligned to a sentence share its segment row; the rest use the
    # reserved final row
    seg_ids = np.full(n_frames, cfg.max_sentences, dtype=np.int64)
    for span in alignment.entries:
        seg_ids[span.frame_start:span.frame_end + 1] = span.index

    xe = x @ t["proj_video.w"] + t["proj_video.b"]
    xe = xe + t["pos_frame"][:n_frames] + t["segment"][seg_ids]
    ye = y @ t["proj_text.w"] + t["proj_text.b"]
    if n_sent:
        ye = ye + t["pos_sentence"][:n_sent] + t["segment"][np.arange(n_sent)]
    z = np.concatenate([xe, ye], axis=0)

    mask = build_attention_mask(n_frames, n_sent, alignment)
    neg = np.where(mask, 0.0, -np.inf)
    scale = 1.0 / math.sqrt(cfg.head_dim)

    blocks: list[_BlockCache] = []
    for layer in range(cfg.num_layers):
        pre = f"block{layer}."
        q = _heads(z @ t[pre + "attn.wq"] + t[pre + "attn.bq"], cfg.num_heads, cfg.head_dim)
        k = _heads(z @ t[pre + "attn.wk"] + t[pre + "attn.bk"], cfg.num_heads, cfg.head_dim)
        v = _heads(z @ t[pre + "attn.wv"] + t[pre + "attn.bv"], cfg.num_heads, cfg.head_dim)

        scores = q @ k.transpose(0, 2, 1) * scale + neg[None, :, :]
        scores -= scores.max(axis=-1, keepdims=True)
        expo = np.exp(scores)
        probs = expo / expo.sum(axis=-1, keepdims=True)

        attn_keep = _dropout_mask(rng, cfg.dropout_attn, probs.shape, mode)
        probs_used = _apply_dropout(probs, attn_keep, cfg.dropout_attn)

        ctx = _merge_heads(probs_used @ v)
        attn_out = ctx @ t[pre + "attn.wo"] + t[pre + "attn.bo"]

        out1, ln1_xhat, ln1_inv = _layer_norm(
            z + attn_out, t[pre + "ln_attn.gain"], t[pre + "ln_attn.bias"],
            cfg.layer_norm_eps)

        a1_video = out1[:n_frames] @ t[pre + "ffn_video.w1"] + t[pre + "ffn_video.b1"]
        g_video = gelu(a1_video)
        out_video = g_video @ t[pre + "ffn_video.w2"] + t[pre + "ffn_video.b2"]
        a1_text = out1[n_frames:] @ t[pre + "ffn_text.w1"] + t[pre + "ffn_text.b1"]
        g_text = gelu(a1_text)
        out_text = g_text @ t[pre + "ffn_text.w2"] + t[pre + "ffn_text.b2"]
        expert = np.concatenate([out_video, out_text], axis=0)

        expert_keep = _dropout_mask(rng, cfg.dropout_expert, expert.shape, mode)
        expert_used = _apply_dropout(expert, expert_keep, cfg.dropout_expert)

        out2, ln2_xhat, ln2_inv = _layer_norm(
            out1 + expert_used, t[pre + "ln_ffn.gain"], t[pre + "ln_ffn.bias"],
            cfg.layer_norm_eps)
        if not np.isfinite(out2).all():
            raise NumericsError(f"non-finite activation leaving block {layer}")

        blocks.append(_BlockCache(
            z_in=z, q=q, k=k, v=v, probs=probs, attn_keep=attn_keep, ctx=ctx,
            ln1_xhat=ln1_xhat, ln1_inv=ln1_inv, out1=out1,
            a1_video=a1_video, g_video=g_video, a1_text=a1_text, g_text=g_text,
            expert_keep=expert_keep, ln2_xhat=ln2_xhat, ln2_inv=ln2_inv, out2=out2))
        z = out2

    h = z[:n_frames]
    u1 = h @ t["head.w1"] + t["head.b1"]
    g_head = gelu(u1)
    head_keep = _dropout_mask(rng, cfg.dropout_head, g_head.shape, mode)
    g_used = _apply_dropout(g_head, head_keep, cfg.dropout_head)
    logits = (g_used @ t["head.w2"] + t["head.b2"]).ravel()
    if not np.isfinite(logits).all():
        raise NumericsError("non-finite logits in head")
    sig = sigmoid(logits)
    p = np.clip(sig, P_CLIP, 1.0 - P_CLIP)

    cache = None
    if keep_cache:
        cache = {
            "blocks": blocks,
            "u1": u1,
            "g_head": g_head,
            "head_keep": head_keep,
        }
    return ForwardTrace(
        config=cfg, mode=mode, frames=x, sentences=y, alignment=alignment,
        seg_ids=seg_ids, mask=mask, h=h, p=p, sig=sig, cache=cache)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def backward(trace: ForwardTrace, params: ModelParams,
             upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of ``sum_t upstream_t * p_t`` for every parameter tensor.

    ``upstream`` holds d(objective)/d(p_t).  The trace must come from a
    forward call with ``keep_cache=True``; dropout masks cached there are
    reused so train-mode gradients are exact.
    """
    if trace.cache is None:
        raise UsageError("backward needs a trace produced with keep_cache=True")
    cfg = params.config
    t = params.tensors
    n_frames = trace.frame_count
    n_sent = trace.sentence_count
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (n_frames,):
        raise ValueError(f"upstream must have shape ({n_frames},), got {upstream.shape}")

    grads = {name: np.zeros_like(arr) for name, arr in t.items()}
    scale = 1.0 / math.sqrt(cfg.head_dim)

    # head: p = sigmoid(logits)
    dlogits = upstream * trace.sig * (1.0 - trace.sig)
    g_head = trace.cache["g_head"]
    head_keep = trace.cache["head_keep"]
    u1 = trace.cache["u1"]
    g_used = _apply_dropout(g_head, head_keep, cfg.dropout_head)

    grads["head.w2"] += g_used.T @ dlogits[:, None]
    grads["head.b2"] += np.array([dlogits.sum()])
    dg_used = dlogits[:, None] @ t["head.w2"].T
    dg_head = _apply_dropout(dg_used, head_keep, cfg.dropout_head)
    du1 = dg_head * gelu_grad(u1)
    grads["head.w1"] += trace.h.T @ du1
    grads["head.b1"] += du1.sum(axis=0)
    dh = du1 @ t["head.w1"].T

    dz = np.zeros((n_frames + n_sent, cfg.hidden_size))
    dz[:n_frames] = dh

    for layer in reversed(range(cfg.num_layers)):
        pre = f"block{layer}."
        blk: _BlockCache = trace.cache["blocks"][layer]

        dres2, dgain2, dbias2 = _layer_norm_backward(
            dz, blk.ln2_xhat, blk.ln2_inv, t[pre + "ln_ffn.gain"])
        grads[pre + "ln_ffn.gain"] += dgain2
        grads[pre + "ln_ffn.bias"] += dbias2

        dout1 = dres2.copy()
        dexpert = _apply_dropout(dres2, blk.expert_keep, cfg.dropout_expert)

        da2_video = dexpert[:n_frames]
        grads[pre + "ffn_video.w2"] += blk.g_video.T @ da2_video
        grads[pre + "ffn_video.b2"] += da2_video.sum(axis=0)
        da1_video = (da2_video @ t[pre + "ffn_video.w2"].T) * gelu_grad(blk.a1_video)
        grads[pre + "ffn_video.w1"] += blk.out1[:n_frames].T @ da1_video
        grads[pre + "ffn_video.b1"] += da1_video.sum(axis=0)
        dout1[:n_frames] += da1_video @ t[pre + "ffn_video.w1"].T

        da2_text = dexpert[n_frames:]
        grads[pre + "ffn_text.w2"] += blk.g_text.T @ da2_text
        grads[pre + "ffn_text.b2"] += da2_text.sum(axis=0)
        da1_text = (da2_text @ t[pre + "ffn_text.w2"].T) * gelu_grad(blk.a1_text)
        grads[pre + "ffn_text.w1"] += blk.out1[n_frames:].T @ da1_text
        grads[pre + "ffn_text.b1"] += da1_text.sum(axis=0)
        dout1[n_frames:] += da1_text @ t[pre + "ffn_text.w1"].T

        dres1, dgain1, dbias1 = _layer_norm_backward(
            dout1, blk.ln1_xhat, blk.ln1_inv, t[pre + "ln_attn.gain"])
        grads[pre + "ln_attn.gain"] += dgain1
        grads[pre + "ln_attn.bias"] += dbias1

        dz_in = dres1.copy()
        dattn_out = dres1

        grads[pre + "attn.wo"] += blk.ctx.T @ dattn_out
        grads[pre + "attn.bo"] += dattn_out.sum(axis=0)
        dctx = _heads(dattn_out @ t[pre + "attn.wo"].T, cfg.num_heads, cfg.head_dim)

        probs_used = _apply_dropout(blk.probs, blk.attn_keep, cfg.dropout_attn)
        dprobs_used = dctx @ blk.v.transpose(0, 2, 1)
        dv = probs_used.transpose(0, 2, 1) @ dctx
        dprobs = _apply_dropout(dprobs_used, blk.attn_keep, cfg.dropout_attn)

        # softmax backward; masked positions have prob exactly 0 so they drop out
        inner = (dprobs * blk.probs).sum(axis=-1, keepdims=True)
        dscores = blk.probs * (dprobs - inner)

        dq = dscores @ blk.k * scale
        dk = dscores.transpose(0, 2, 1) @ blk.q * scale

        for name, dmat in (("wq", dq), ("wk", dk), ("wv", dv)):
            flat = _merge_heads(dmat)
            grads[pre + f"attn.{name}"] += blk.z_in.T @ flat
            grads[pre + f"attn.b{name[-1]}"] += flat.sum(axis=0)
            dz_in += flat @ t[pre + f"attn.{name}"].T

        dz = dz_in

    dx = dz[:n_frames]
    dy = dz[n_frames:]

    grads["proj_video.w"] += trace.frames.T @ dx
    grads["proj_video.b"] += dx.sum(axis=0)
    grads["pos_frame"][:n_frames] += dx
    np.add.at(grads["segment"], trace.seg_ids, dx)
    if n_sent:
        grads["proj_text.w"] += trace.sentences.T @ dy
        grads["proj_text.b"] += dy.sum(axis=0)
        grads["pos_sentence"][:n_sent] += dy
        np.add.at(grads["segment"], np.arange(n_sent), dy)
    return grads
