"""Trainable scorer head: frame aggregation plus cross-attention scoring.

For each visible identity, one post-norm transformer encoder layer
(self-attention, no positional encoding: frames are a set) re-weights
its face-frame embeddings before mean pooling into a single identity
embedding. An utterance is scored by cross-attending the identity
embeddings (queries) over the utterance segment embeddings (keys and
values); a residual plus layer norm feeds a width-collapsing affine
layer, and the per-identity logits softmax into a dependent probability
across all visible identities of the clip.

The residual matters: with a single key the cross-attention output is
query-independent, and only the residual keeps logits identity-aware.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, AttentionParams, Tensor, adam_step, backward, zero_grad
from .corpus import Clip, Corpus
from .fvem import load_tensors, save_tensors


@dataclass
class ModelConfig:
    d: int = 128
    n_heads: int = 4
    n_encoder_layers: int = 1
    ffn_hidden: int = 0  # 0 means 4*d
    max_frames_per_identity: int = 512
    bypass_encoder: bool = False  # ablation: plain mean pooling

    def __post_init__(self):
        if self.ffn_hidden == 0:
            self.ffn_hidden = 4 * self.d
        if self.d % self.n_heads != 0:
            raise ValueError(f"d={self.d} not divisible by n_heads={self.n_heads}")


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 50
    lr: float = 1e-5
    lr_decay_factor: float = 0.2
    lr_decay_interval: int = 5
    model: ModelConfig = field(default_factory=ModelConfig)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_interval)


@dataclass
class EncoderLayerParams:
    attn: AttentionParams
    ln1_g: Tensor
    ln1_b: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln2_g: Tensor
    ln2_b: Tensor

    def tensors(self) -> list[Tensor]:
        return self.attn.tensors() + [
            self.ln1_g, self.ln1_b,
            self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2,
            self.ln2_g, self.ln2_b,
        ]


@dataclass
class ModelParams:
    cfg: ModelConfig
    encoder: list[EncoderLayerParams]
    cross: AttentionParams
    cross_ln_g: Tensor
    cross_ln_b: Tensor
    head_w: Tensor
    head_b: Tensor

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        attn_names = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"]
        for li, layer in enumerate(self.encoder):
            for name, t in zip(attn_names, layer.attn.tensors()):
                out[f"enc{li}.attn.{name}"] = t
            out[f"enc{li}.ln1.g"] = layer.ln1_g
            out[f"enc{li}.ln1.b"] = layer.ln1_b
            out[f"enc{li}.ffn.w1"] = layer.ffn_w1
            out[f"enc{li}.ffn.b1"] = layer.ffn_b1
            out[f"enc{li}.ffn.w2"] = layer.ffn_w2
            out[f"enc{li}.ffn.b2"] = layer.ffn_b2
            out[f"enc{li}.ln2.g"] = layer.ln2_g
            out[f"enc{li}.ln2.b"] = layer.ln2_b
        for name, t in zip(attn_names, self.cross.tensors()):
            out[f"cross.attn.{name}"] = t
        out["cross.ln.g"] = self.cross_ln_g
        out["cross.ln.b"] = self.cross_ln_b
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named_tensors().values())

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.tensors():
            t.requires_grad = flag


def _attn_params(d: int, rng: np.random.Generator, dtype) -> AttentionParams:
    def w():
        return ad.tensor(rng.standard_normal((d, d)) / np.sqrt(d), True, dtype)

    def b():
        return ad.tensor(np.zeros(d), True, dtype)

    return AttentionParams(wq=w(), bq=b(), wk=w(), bk=b(), wv=w(), bv=b(), wo=w(), bo=b())


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(seed)
    d, f = cfg.d, cfg.ffn_hidden
    layers = []
    for _ in range(cfg.n_encoder_layers):
        layers.append(
            EncoderLayerParams(
                attn=_attn_params(d, rng, dtype),
                ln1_g=ad.tensor(np.ones(d), True, dtype),
                ln1_b=ad.tensor(np.zeros(d), True, dtype),
                ffn_w1=ad.tensor(rng.standard_normal((d, f)) / np.sqrt(d), True, dtype),
                ffn_b1=ad.tensor(np.zeros(f), True, dtype),
                ffn_w2=ad.tensor(rng.standard_normal((f, d)) / np.sqrt(f), True, dtype),
                ffn_b2=ad.tensor(np.zeros(d), True, dtype),
                ln2_g=ad.tensor(np.ones(d), True, dtype),
                ln2_b=ad.tensor(np.zeros(d), True, dtype),
            )
        )
    return ModelParams(
        cfg=cfg,
        encoder=layers,
        cross=_attn_params(d, rng, dtype),
        cross_ln_g=ad.tensor(np.ones(d), True, dtype),
        cross_ln_b=ad.tensor(np.zeros(d), True, dtype),
        head_w=ad.tensor(rng.standard_normal((d, 1)) / np.sqrt(d), True, dtype),
        head_b=ad.tensor(np.zeros(1), True, dtype),
    )


def count_params(params: ModelParams) -> int:
    """Exact learnable scalar count."""
    return sum(t.data.size for t in params.tensors())


def subsample_frames(frames: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if frames.shape[0] <= cap:
        return frames
    idx = np.sort(rng.choice(frames.shape[0], size=cap, replace=False))
    return frames[idx]


def encode_identity(
    frames: np.ndarray | Tensor,
    params: ModelParams,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Aggregate one identity's frame embeddings into a (1, D) embedding.

    Applies the encoder layer(s) over the frame rows then mean-pools.
    Identities above the frame cap are uniformly subsampled first
    (seeded via ``rng``). Permutation- and duplication-invariant since
    nothing depends on row order.
    """
    cfg = params.cfg
    if isinstance(frames, Tensor):
        x = frames
    else:
        frames = np.asarray(frames)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError(f"frames must be (T>=1, D), got {frames.shape}")
        if frames.shape[0] > cfg.max_frames_per_identity:
            frames = subsample_frames(
                frames, cfg.max_frames_per_identity, rng or np.random.default_rng(0)
            )
        x = Tensor(frames)
    if not cfg.bypass_encoder:
        for layer in params.encoder:
            attended = ad.multi_head_attention(x, x, x, layer.attn, cfg.n_heads)
            x = ad.layer_norm(ad.add(x, attended), layer.ln1_g, layer.ln1_b)
            hidden = ad.gelu(ad.add_bias(ad.matmul(x, layer.ffn_w1), layer.ffn_b1))
            ffn_out = ad.add_bias(ad.matmul(hidden, layer.ffn_w2), layer.ffn_b2)
            x = ad.layer_norm(ad.add(x, ffn_out), layer.ln2_g, layer.ln2_b)
    return ad.mean_rows(x)


@dataclass
class ScoreResult:
    clip_id: str
    utt_id: str
    identity_ids: list[str]
    probabilities: list[float]
    logits: list[float]

    def as_prob_map(self) -> dict[str, float]:
        return dict(zip(self.identity_ids, self.probabilities))


def score_logits(utt_segs: np.ndarray | Tensor, identity_embs: Tensor, params: ModelParams) -> Tensor:
    """Per-identity logits for one utterance; shape (N,)."""
    keys = utt_segs if isinstance(utt_segs, Tensor) else Tensor(np.asarray(utt_segs))
    if keys.data.ndim != 2 or keys.data.shape[0] < 1:
        raise ValueError(f"utterance segments must be (M>=1, D), got {keys.data.shape}")
    if keys.data.shape[1] != identity_embs.data.shape[1]:
        raise ValueError("utterance/identity embedding width mismatch")
    attended = ad.multi_head_attention(identity_embs, keys, keys, params.cross, params.cfg.n_heads)
    fused = ad.layer_norm(ad.add(identity_embs, attended), params.cross_ln_g, params.cross_ln_b)
    return ad.flatten(ad.add_bias(ad.matmul(fused, params.head_w), params.head_b))


def score_utterance(
    utt_segs: np.ndarray,
    identity_embs: Tensor | np.ndarray,
    params: ModelParams,
    identity_ids: list[str] | None = None,
    clip_id: str = "",
    utt_id: str = "",
) -> ScoreResult:
    if not isinstance(identity_embs, Tensor):
        identity_embs = Tensor(np.asarray(identity_embs))
    n = identity_embs.data.shape[0]
    if n < 1:
        raise ValueError("need at least one identity embedding")
    logits = score_logits(utt_segs, identity_embs, params)
    z = logits.data.astype(np.float64)
    e = np.exp(z - z.max())
    probs = e / e.sum()
    ids = identity_ids if identity_ids is not None else [str(i) for i in range(n)]
    return ScoreResult(
        clip_id=clip_id,
        utt_id=utt_id,
        identity_ids=list(ids),
        probabilities=probs.tolist(),
        logits=z.tolist(),
    )


def identity_frame_matrix(clip: Clip, identity_id: str, root) -> np.ndarray:
    """All of one identity's track frames in the clip, concatenated."""
    mats = [t.frame_embeddings.load(root) for t in clip.tracks_of(identity_id)]
    if not mats:
        raise ValueError(f"identity {identity_id} has no tracks in clip {clip.id}")
    return np.concatenate(mats, axis=0)


def compose_training_batch(clip: Clip, identity_id: str, root=None):
    """Batch per the training protocol: one identity's utterances vs all frames.

    Returns (utterance matrices of the target identity, frame matrix per
    visible identity in order, target index). Identities without face
    tracks cannot be candidates, so their utterances form no batch.
    """
    visible = clip.visible_identities()
    if identity_id not in visible:
        raise ValueError(f"{identity_id} has no face track in clip {clip.id}")
    utts = [u for u in clip.utterances if u.speaker_id == identity_id]
    if not utts:
        raise ValueError(f"{identity_id} has no utterances in clip {clip.id}")
    audio = [u.segment_embeddings.load(root) for u in utts]
    frames = {vid: identity_frame_matrix(clip, vid, root) for vid in visible}
    return audio, frames, visible.index(identity_id)


def _training_batches(corpus: Corpus) -> list[tuple[Clip, str]]:
    batches = []
    for clip in corpus.clips:
        visible = clip.visible_identities()
        if len(visible) < 2:
            continue  # size-1 softmax carries no gradient signal
        speakers = {u.speaker_id for u in clip.labeled_utterances()}
        for vid in visible:
            if vid in speakers:
                batches.append((clip, vid))
    return batches


def encode_clip_identities(
    clip: Clip,
    params: ModelParams,
    root=None,
    rng: np.random.Generator | None = None,
) -> tuple[list[str], Tensor]:
    visible = clip.visible_identities()
    embs = [
        encode_identity(identity_frame_matrix(clip, vid, root), params, rng=rng)
        for vid in visible
    ]
    return visible, (ad.concat_rows(embs) if len(embs) > 1 else embs[0])


def train(corpus: Corpus, cfg: TrainConfig) -> tuple[ModelParams, list[dict]]:
    """Cross-entropy training over clipwise identity batches.

    Batches shuffle each epoch under the run seed; the loss for a batch
    averages cross-entropy over the target identity's utterances, scored
    against all visible identities of the clip. Learning rate follows
    lr * decay^floor(epoch/interval). Returns params and the loss curve.
    """
    batches = _training_batches(corpus)
    if not batches:
        raise ValueError("corpus has no trainable batches (need >=2 visible identities and labels)")
    params = init_params(cfg.model, seed=cfg.seed)
    tensors = params.tensors()
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    curve: list[dict] = []
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = rng.permutation(len(batches))
        losses = []
        for bi in order:
            clip, identity_id = batches[bi]
            audio, frames, target = compose_training_batch(clip, identity_id, corpus.root)
            visible = clip.visible_identities()
            embs = ad.concat_rows(
                [encode_identity(frames[vid], params, rng=rng) for vid in visible]
            )
            utt_losses = [
                ad.cross_entropy_logits(score_logits(segs, embs, params), target)
                for segs in audio
            ]
            loss = ad.mean_of(utt_losses)
            zero_grad(tensors)
            backward(loss)
            adam_step(tensors, [t.grad for t in tensors], state, lr)
            losses.append(float(loss.data))
        curve.append({"epoch": epoch, "loss": float(np.mean(losses)), "lr": lr})
    return params, curve


def score_corpus(
    corpus: Corpus,
    hyps_by_clip: dict[str, list],
    params: ModelParams,
    seed: int = 0,
) -> list[ScoreResult]:
    """Score every hypothesis utterance against its clip's identities."""
    params.set_requires_grad(False)
    try:
        results = []
        for clip in corpus.clips:
            hyps = hyps_by_clip.get(clip.id, [])
            if not hyps or not clip.tracks:
                continue
            rng = np.random.default_rng(seed)
            visible, embs = encode_clip_identities(clip, params, corpus.root, rng)
            for h in hyps:
                segs = h.segment_embeddings
                if segs is None:
                    raise ValueError(f"hypothesis {h.utt_id} has no embeddings")
                results.append(
                    score_utterance(segs, embs, params, visible, clip.id, h.utt_id)
                )
        return results
    finally:
        params.set_requires_grad(True)


def save_checkpoint(params: ModelParams, out_dir, extra_meta: dict | None = None) -> None:
    meta = {"model_config": vars(params.cfg)}
    if extra_meta:
        meta.update(extra_meta)
    save_tensors(out_dir, {k: t.data for k, t in params.named_tensors().items()}, meta)


def load_checkpoint(ckpt_dir) -> ModelParams:
    arrays, index = load_tensors(ckpt_dir)
    cfg = ModelConfig(**index["model_config"])
    params = init_params(cfg, seed=0)
    named = params.named_tensors()
    missing = set(named) - set(arrays)
    if missing:
        raise ValueError(f"checkpoint missing tensors: {sorted(missing)}")
    for name, t in named.items():
        arr = arrays[name].astype(np.float32)
        if arr.shape != t.data.shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != expected {t.data.shape}")
        t.data = arr
    return params
