"""Cross-modal alignment finetuning over frozen embeddings.

Small affine projections (one per modality, near-identity initialized)
are trained with the multi-similarity loss. Supervision is
self-generated: k-means over the projected face embeddings yields
pseudo-labels, each track/utterance identity group adopts the majority
cluster of its face frames, and voice rows inherit their group's label.
Clustering and training alternate for a configured number of rounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import AdamState, Tensor, adam_step, backward, zero_grad
from .fvem import load_tensors, save_tensors


@dataclass
class ClusterAssignment:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_history: list[float] = field(default_factory=list)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    closest = ((x - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[i] = x[rng.integers(n)]
            continue
        probs = closest / total
        centroids[i] = x[rng.choice(n, p=probs)]
        d = ((x - centroids[i]) ** 2).sum(axis=1)
        closest = np.minimum(closest, d)
    return centroids


def kmeans(embs: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> ClusterAssignment:
    """Lloyd's algorithm with seeded k-means++ init.

    Runs to an assignment fixpoint or max_iter; empty clusters are
    re-seeded from the points farthest from their assigned centroids.
    """
    x = np.asarray(embs, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"embeddings must be 2-D, got {x.shape}")
    n = x.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(x, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        new_labels, inertia = kernels.assign_clusters(x, centroids)
        history.append(float(inertia))
        sums, counts = kernels.sum_by_label(x, new_labels, k)
        empties = np.nonzero(counts == 0)[0]
        if len(empties):
            dist = ((x - centroids[new_labels]) ** 2).sum(axis=1)
            far = np.argsort(dist)[::-1]
            for e_idx, point in zip(empties, far):
                centroids[e_idx] = x[point]
                new_labels[point] = e_idx
            sums, counts = kernels.sum_by_label(x, new_labels, k)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
        nonzero = counts > 0
        centroids[nonzero] = sums[nonzero] / counts[nonzero, None]
    final_labels, final_inertia = kernels.assign_clusters(x, centroids)
    return ClusterAssignment(
        centroids=centroids,
        labels=final_labels,
        inertia=float(final_inertia),
        n_iter=it,
        inertia_history=history,
    )


def multi_similarity_loss(
    similarities: np.ndarray,
    labels: np.ndarray,
    alpha: float = 2.0,
    beta: float = 50.0,
    lam: float = 0.5,
    margin: float = 0.1,
) -> tuple[float, np.ndarray]:
    """Multi-similarity loss and its gradient w.r.t. the similarity matrix.

    Mining per anchor: positives below the hardest negative plus the
    margin, negatives above the easiest positive minus the margin.
    Anchors lacking positives or negatives contribute nothing; a batch
    where nothing is mined scores 0.
    """
    s = np.asarray(similarities, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {s.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != s.shape[0]:
        raise ValueError("labels length must match the similarity matrix")
    if s.shape[0] == 0:
        return 0.0, np.zeros_like(s)
    loss, grad = kernels.ms_loss_grad(s, labels, float(alpha), float(beta), float(lam), float(margin))
    return float(loss), grad


@dataclass
class FinetuneConfig:
    rounds: int = 3
    k: int = 50
    steps_per_round: int = 150
    groups_per_batch: int = 12
    rows_per_group: int = 3
    lr: float = 1e-3
    seed: int = 0
    alpha: float = 2.0
    beta: float = 50.0
    lam: float = 0.5
    margin: float = 0.1
    init_noise: float = 0.01
    kmeans_max_iter: int = 50


@dataclass
class ProjectionParams:
    face_w: Tensor
    face_b: Tensor
    voice_w: Tensor
    voice_b: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.face_w, self.face_b, self.voice_w, self.voice_b]

    def project_faces(self, x: np.ndarray) -> np.ndarray:
        return _project(x, self.face_w.data, self.face_b.data)

    def project_voices(self, x: np.ndarray) -> np.ndarray:
        return _project(x, self.voice_w.data, self.voice_b.data)


def _project(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    z = np.asarray(x) @ w + b
    return z / np.maximum(np.linalg.norm(z, axis=-1, keepdims=True), 1e-12)


def init_projections(d_in: int, d_out: int | None = None, seed: int = 0, noise: float = 0.01) -> ProjectionParams:
    """Near-identity init so training starts from the frozen space."""
    d_out = d_out or d_in
    rng = np.random.default_rng(seed)

    def w():
        base = np.eye(d_in, d_out) if d_in == d_out else rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)
        return ad.tensor(base + noise * rng.standard_normal((d_in, d_out)), True)

    return ProjectionParams(
        face_w=w(),
        face_b=ad.tensor(np.zeros(d_out), True),
        voice_w=w(),
        voice_b=ad.tensor(np.zeros(d_out), True),
    )


def _majority_group_labels(groups: np.ndarray, row_labels: np.ndarray) -> dict[int, int]:
    out: dict[int, int] = {}
    for g in np.unique(groups):
        members = row_labels[groups == g]
        vals, counts = np.unique(members, return_counts=True)
        out[int(g)] = int(vals[np.argmax(counts)])
    return out


def finetune(
    face_embs: np.ndarray,
    voice_embs: np.ndarray,
    face_groups: np.ndarray,
    voice_groups: np.ndarray,
    cfg: FinetuneConfig,
) -> ProjectionParams:
    """Alternating pseudo-labeling and multi-similarity training.

    ``face_groups``/``voice_groups`` carry the track/utterance identity
    grouping (clip-local identity index per row); groups are the unit of
    label transfer from the face clustering to the voice rows. Voice
    groups with no face rows are excluded from training batches.
    """
    faces = np.asarray(face_embs, dtype=np.float32)
    voices = np.asarray(voice_embs, dtype=np.float32)
    face_groups = np.asarray(face_groups, dtype=np.int64)
    voice_groups = np.asarray(voice_groups, dtype=np.int64)
    if faces.ndim != 2 or voices.ndim != 2 or faces.shape[1] != voices.shape[1]:
        raise ValueError("face and voice embeddings must be 2-D with a shared width")
    if float(faces.std()) < 1e-9 or float(voices.std()) < 1e-9:
        raise ValueError("degenerate input: embeddings are all identical, nothing to align")

    params = init_projections(faces.shape[1], seed=cfg.seed, noise=cfg.init_noise)
    if cfg.rounds == 0:
        return params
    rng = np.random.default_rng(cfg.seed)
    tensors = params.tensors()
    state = AdamState()
    face_rows_by_group = {int(g): np.nonzero(face_groups == g)[0] for g in np.unique(face_groups)}
    voice_rows_by_group = {int(g): np.nonzero(voice_groups == g)[0] for g in np.unique(voice_groups)}

    for rnd in range(cfg.rounds):
        k = min(cfg.k, faces.shape[0])
        clusters = kmeans(params.project_faces(faces), k, seed=cfg.seed + rnd, max_iter=cfg.kmeans_max_iter)
        group_label = _majority_group_labels(face_groups, clusters.labels)
        trainable_groups = sorted(set(group_label) & set(voice_rows_by_group))
        if not trainable_groups:
            raise ValueError("no identity group has both face and voice rows")

        for _ in range(cfg.steps_per_round):
            n_groups = min(cfg.groups_per_batch, len(trainable_groups))
            chosen = rng.choice(trainable_groups, size=n_groups, replace=False)
            face_idx, voice_idx, face_labels, voice_labels = [], [], [], []
            for g in chosen:
                lbl = group_label[int(g)]
                fr = face_rows_by_group[int(g)]
                vr = voice_rows_by_group[int(g)]
                take_f = rng.choice(fr, size=min(cfg.rows_per_group, len(fr)), replace=False)
                take_v = rng.choice(vr, size=min(cfg.rows_per_group, len(vr)), replace=False)
                face_idx.extend(take_f.tolist())
                voice_idx.extend(take_v.tolist())
                face_labels.extend([lbl] * len(take_f))
                voice_labels.extend([lbl] * len(take_v))
            fb = Tensor(faces[face_idx])
            vb = Tensor(voices[voice_idx])
            zf = ad.l2_normalize_rows(ad.add_bias(ad.matmul(fb, params.face_w), params.face_b))
            zv = ad.l2_normalize_rows(ad.add_bias(ad.matmul(vb, params.voice_w), params.voice_b))
            z = ad.concat_rows([zf, zv])
            sim = ad.matmul(z, ad.transpose(z))
            row_labels = np.asarray(face_labels + voice_labels, dtype=np.int64)
            loss = ad.multi_similarity(sim, row_labels, cfg.alpha, cfg.beta, cfg.lam, cfg.margin)
            zero_grad(tensors)
            backward(loss)
            adam_step(tensors, [t.grad for t in tensors], state, cfg.lr)
    return params


def crossmodal_recall_at_1(
    face_embs: np.ndarray,
    face_ids: np.ndarray,
    voice_embs: np.ndarray,
    voice_ids: np.ndarray,
    params: ProjectionParams,
) -> float:
    """Percent of voice rows whose nearest projected face centroid matches.

    Identity centroids are the mean projected face embedding per
    identity; ranking is by cosine similarity.
    """
    face_ids = np.asarray(face_ids)
    voice_ids = np.asarray(voice_ids)
    zf = params.project_faces(np.asarray(face_embs))
    zv = params.project_voices(np.asarray(voice_embs))
    ids = np.unique(face_ids)
    centroids = np.stack([zf[face_ids == i].mean(axis=0) for i in ids])
    centroids /= np.maximum(np.linalg.norm(centroids, axis=1, keepdims=True), 1e-12)
    sims = zv @ centroids.T
    top1 = ids[np.argmax(sims, axis=1)]
    return 100.0 * float(np.mean(top1 == voice_ids))


def arrays_from_corpus(corpus) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Flatten a corpus into finetuning arrays.

    Face rows are every track frame, voice rows every labeled utterance
    segment; groups are clip-local identities, so labels never leak
    across clips. Off-screen speakers get voice groups with no face
    rows and are skipped by ``finetune``.
    """
    faces, face_groups, voices, voice_groups = [], [], [], []
    group_index: dict[tuple[str, str], int] = {}

    def gid(clip_id: str, identity: str) -> int:
        return group_index.setdefault((clip_id, identity), len(group_index))

    for clip in corpus.clips:
        for track in clip.tracks:
            mat = track.frame_embeddings.load(corpus.root)
            faces.append(mat)
            face_groups.extend([gid(clip.id, track.identity_id)] * mat.shape[0])
        for utt in clip.labeled_utterances():
            mat = utt.segment_embeddings.load(corpus.root)
            voices.append(mat)
            voice_groups.extend([gid(clip.id, utt.speaker_id)] * mat.shape[0])
    if not faces or not voices:
        raise ValueError("corpus has no face frames or no labeled utterances")
    return (
        np.concatenate(faces, axis=0),
        np.concatenate(voices, axis=0),
        np.asarray(face_groups, dtype=np.int64),
        np.asarray(voice_groups, dtype=np.int64),
    )


def save_projections(params: ProjectionParams, out_dir, extra_meta: dict | None = None) -> None:
    meta = extra_meta or {}
    save_tensors(
        out_dir,
        {
            "face.w": params.face_w.data,
            "face.b": params.face_b.data,
            "voice.w": params.voice_w.data,
            "voice.b": params.voice_b.data,
        },
        meta,
    )


def load_projections(ckpt_dir) -> ProjectionParams:
    arrays, _ = load_tensors(ckpt_dir)
    return ProjectionParams(
        face_w=ad.tensor(arrays["face.w"], True),
        face_b=ad.tensor(arrays["face.b"], True),
        voice_w=ad.tensor(arrays["voice.w"], True),
        voice_b=ad.tensor(arrays["voice.b"], True),
    )
