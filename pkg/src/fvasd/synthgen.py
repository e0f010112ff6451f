"""Synthetic corpora with known ground truth.

Each identity gets a unit-norm anchor vector; face frames, utterance
segments and the speaker stream are noisy normalized copies of it.
Frame corruption is a latent Bernoulli flag that switches the noise
scale, modeling occlusion and blur at embedding level. Hidden ground
truth (anchors, per-frame quality, true boundaries) is returned next to
the corpus and written as ``ground_truth.json``.

Noise model: ``normalize(anchor + sigma * eps)`` with eps i.i.d.
standard normal per coordinate, so the effective angular noise grows
with sigma * sqrt(D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluate as _evaluate
from .corpus import AudioStreams, Clip, Corpus, EmbeddingRef, FaceTrack, Utterance
from .fvem import write_embeddings
from .util import write_json

# Internal placement constants (seconds); utterance gaps must sometimes
# undercut the VAD hangover so merged regions exist to split.
_GAP_RANGE = (0.2, 0.7)
_LEAD_IN_RANGE = (0.3, 0.8)
_TAIL_MARGIN = 0.2
_SILENCE_ENERGY = 0.05
_SPEECH_ENERGY = 1.0


@dataclass
class SynthConfig:
    n_clips: int = 4
    identities_per_clip: int = 3
    tracks_per_identity: int = 2
    frames_per_track_range: tuple[int, int] = (20, 40)
    utterances_per_identity: int = 4
    utterance_duration_range_s: tuple[float, float] = (0.8, 1.6)
    clip_duration_s: float = 30.0
    d: int = 128
    face_noise_sigma_clean: float = 0.05
    face_noise_sigma_corrupt: float = 1.0
    corrupt_frame_fraction: float = 0.0
    voice_noise_sigma: float = 0.05
    offscreen_speaker_fraction: float = 0.0
    overlap_speech_fraction: float = 0.0
    seed: int = 0
    stream_hop_s: float = 0.05

    def validate(self) -> None:
        if min(self.face_noise_sigma_clean, self.face_noise_sigma_corrupt, self.voice_noise_sigma) < 0:
            raise ValueError("noise sigmas must be >= 0")
        for name in ("corrupt_frame_fraction", "offscreen_speaker_fraction", "overlap_speech_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.offscreen_speaker_fraction >= 1.0 and self.utterances_per_identity > 0:
            raise ValueError("offscreen_speaker_fraction must be < 1 when utterances exist")
        if self.frames_per_track_range[0] < 1 or self.frames_per_track_range[0] > self.frames_per_track_range[1]:
            raise ValueError("frames_per_track_range must be a non-empty positive range")
        if self.utterance_duration_range_s[0] <= 0 or self.utterance_duration_range_s[0] > self.utterance_duration_range_s[1]:
            raise ValueError("utterance_duration_range_s must be a non-empty positive range")
        if self.n_clips < 0 or self.identities_per_clip < 0 or self.tracks_per_identity < 0:
            raise ValueError("counts must be >= 0")
        if self.d <= 0 or self.clip_duration_s <= 0 or self.stream_hop_s <= 0:
            raise ValueError("d, clip_duration_s and stream_hop_s must be positive")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / max(float(np.linalg.norm(v)), 1e-12)


def _noisy_copy(anchor: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return _unit(anchor + sigma * rng.standard_normal(anchor.shape[0]))


def generate_corpus(
    cfg: SynthConfig,
    out_dir: str | Path | None = None,
) -> tuple[Corpus, dict]:
    """Build a corpus plus hidden ground truth; optionally write both.

    Deterministic for a fixed config: the PRNG is numpy's default
    (PCG64) seeded with cfg.seed, consumed in a fixed order, so repeated
    calls produce byte-identical manifests and embedding files.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    clips: list[Clip] = []
    gt: dict = {"seed": cfg.seed, "clips": {}}

    for ci in range(cfg.n_clips):
        clip_id = f"clip_{ci:03d}"
        clip, clip_gt = _generate_clip(clip_id, cfg, rng)
        clips.append(clip)
        gt["clips"][clip_id] = clip_gt

    corpus = Corpus(clips=clips, embedding_dim=cfg.d, root=None)
    if out_dir is not None:
        _write_corpus(corpus, gt, Path(out_dir))
    return corpus, gt


def _generate_clip(clip_id: str, cfg: SynthConfig, rng: np.random.Generator):
    d = cfg.d
    visible = [f"id{v}" for v in range(cfg.identities_per_clip)]
    n_vis_utts = cfg.identities_per_clip * cfg.utterances_per_identity
    f_off = cfg.offscreen_speaker_fraction
    n_off_utts = int(round(f_off / (1.0 - f_off) * n_vis_utts)) if n_vis_utts else 0
    n_off_speakers = math.ceil(n_off_utts / cfg.utterances_per_identity) if n_off_utts else 0
    offscreen = [f"off{v}" for v in range(n_off_speakers)]

    anchors = {name: _unit(rng.standard_normal(d)) for name in visible + offscreen}

    # Speaking schedule: shuffled speaker slots placed left to right with
    # random gaps; a chosen subset starts before the previous utterance
    # ends to create overlapping speech.
    slots = [name for name in visible for _ in range(cfg.utterances_per_identity)]
    for i in range(n_off_utts):
        slots.append(offscreen[i % n_off_speakers])
    rng.shuffle(slots)
    n_overlap = int(round(cfg.overlap_speech_fraction * len(slots)))
    overlap_idx = set(rng.choice(np.arange(1, len(slots)), size=min(n_overlap, max(len(slots) - 1, 0)), replace=False).tolist()) if n_overlap and len(slots) > 1 else set()

    schedule: list[tuple[str, float, float]] = []
    cursor = rng.uniform(*_LEAD_IN_RANGE)
    for k, speaker in enumerate(slots):
        dur = rng.uniform(*cfg.utterance_duration_range_s)
        if k in overlap_idx and schedule:
            _, prev_start, prev_end = schedule[-1]
            depth = rng.uniform(0.3, 0.6) * min(prev_end - prev_start, dur)
            start = max(prev_start + 0.05, prev_end - depth)
        else:
            start = cursor
        end = start + dur
        if end > cfg.clip_duration_s - _TAIL_MARGIN:
            raise ValueError(
                f"clip_duration_s={cfg.clip_duration_s} too short for "
                f"{len(slots)} utterances of up to {cfg.utterance_duration_range_s[1]}s"
            )
        schedule.append((speaker, start, end))
        cursor = max(cursor, end) + rng.uniform(*_GAP_RANGE)

    clip = Clip(
        id=clip_id,
        duration_s=cfg.clip_duration_s,
        offscreen_speakers=offscreen,
    )
    clip_gt: dict = {
        "anchors": {name: anchors[name].astype(np.float32) for name in visible + offscreen},
        "frame_quality": {},
        "utterances": [],
    }

    total_frames = clip.total_frames
    for identity in visible:
        for j in range(cfg.tracks_per_identity):
            n_frames = int(rng.integers(cfg.frames_per_track_range[0], cfg.frames_per_track_range[1] + 1))
            n_frames = min(n_frames, total_frames)
            start_frame = int(rng.integers(0, total_frames - n_frames + 1))
            corrupt = rng.random(n_frames) < cfg.corrupt_frame_fraction
            rows = np.stack(
                [
                    _noisy_copy(
                        anchors[identity],
                        cfg.face_noise_sigma_corrupt if corrupt[t] else cfg.face_noise_sigma_clean,
                        rng,
                    )
                    for t in range(n_frames)
                ]
            ).astype(np.float32)
            track_id = f"{clip_id}:{identity}:t{j}"
            clip.tracks.append(
                FaceTrack(
                    track_id=track_id,
                    identity_id=identity,
                    track_index=j,
                    start_frame=start_frame,
                    end_frame=start_frame + n_frames - 1,
                    frame_embeddings=EmbeddingRef.from_array(rows),
                )
            )
            clip_gt["frame_quality"][track_id] = corrupt.astype(int).tolist()

    for k, (speaker, start, end) in enumerate(schedule):
        seg = _noisy_copy(anchors[speaker], cfg.voice_noise_sigma, rng)[None, :].astype(np.float32)
        utt_id = f"{clip_id}:u{k:03d}"
        clip.utterances.append(
            Utterance(
                utt_id=utt_id,
                speaker_id=speaker,
                start_s=round(start, 6),
                end_s=round(end, 6),
                segment_embeddings=EmbeddingRef.from_array(seg),
            )
        )
        clip_gt["utterances"].append(
            {"utt_id": utt_id, "speaker_id": speaker, "start_s": round(start, 6), "end_s": round(end, 6)}
        )

    hop = cfg.stream_hop_s
    n_hops = int(round(cfg.clip_duration_s / hop))
    energy = np.empty(n_hops, dtype=np.float32)
    stream = np.empty((n_hops, d), dtype=np.float32)
    for h in range(n_hops):
        t = (h + 0.5) * hop
        active = [sp for sp, s, e in schedule if s <= t < e]
        if active:
            energy[h] = _SPEECH_ENERGY + 0.05 * rng.standard_normal() + 0.3 * (len(active) - 1)
            mix = np.mean([anchors[sp] for sp in active], axis=0)
            stream[h] = _noisy_copy(mix, cfg.voice_noise_sigma, rng)
        else:
            energy[h] = _SILENCE_ENERGY + 0.02 * abs(rng.standard_normal())
            stream[h] = _unit(rng.standard_normal(d))
    clip.audio_streams = AudioStreams(
        hop_s=hop,
        energy=EmbeddingRef.from_array(energy[:, None]),
        speaker_stream=EmbeddingRef.from_array(stream),
    )
    return clip, clip_gt


def _write_corpus(corpus: Corpus, gt: dict, out_dir: Path) -> None:
    from .corpus import save_manifest

    emb = out_dir / "emb"
    emb.mkdir(parents=True, exist_ok=True)
    gt_doc: dict = {"seed": gt["seed"], "clips": {}}
    for clip in corpus.clips:
        for track in clip.tracks:
            rel = f"emb/{track.track_id.replace(':', '_')}.fvem"
            write_embeddings(out_dir / rel, track.frame_embeddings.load())
            track.frame_embeddings.path = rel
        for utt in clip.utterances:
            rel = f"emb/{utt.utt_id.replace(':', '_')}.fvem"
            write_embeddings(out_dir / rel, utt.segment_embeddings.load())
            utt.segment_embeddings.path = rel
        streams = clip.audio_streams
        if streams is not None:
            for name, ref in (("energy", streams.energy), ("stream", streams.speaker_stream)):
                if ref is None:
                    continue
                rel = f"emb/{clip.id}_{name}.fvem"
                write_embeddings(out_dir / rel, ref.load())
                ref.path = rel
        clip_gt = gt["clips"][clip.id]
        names = list(clip_gt["anchors"])
        anchors_rel = f"emb/{clip.id}_gt_anchors.fvem"
        write_embeddings(out_dir / anchors_rel, np.stack([clip_gt["anchors"][n] for n in names]))
        gt_doc["clips"][clip.id] = {
            "anchors_file": anchors_rel,
            "anchor_identities": names,
            "frame_quality": clip_gt["frame_quality"],
            "utterances": clip_gt["utterances"],
        }
    corpus.root = out_dir
    save_manifest(corpus, out_dir / "manifest.json")
    write_json(out_dir / "ground_truth.json", gt_doc)


def ground_truth_detections(corpus: Corpus):
    """Score-1.0 detections on every truly speaking (frame, track) pair."""
    return _evaluate.groundtruth_detections(corpus)


def split_utterances(corpus: Corpus, holdout_fraction: float, seed: int = 0) -> tuple[Corpus, Corpus]:
    """Partition labeled utterances per speaker into train/held-out corpora.

    Clips, tracks and streams are shared; only the utterance lists
    differ. Every speaker keeps at least one training utterance.
    """
    rng = np.random.default_rng(seed)
    train_clips, held_clips = [], []
    for clip in corpus.clips:
        by_speaker: dict[str, list[Utterance]] = {}
        for u in clip.utterances:
            by_speaker.setdefault(u.speaker_id, []).append(u)
        train_u, held_u = [], []
        for utts in by_speaker.values():
            order = rng.permutation(len(utts))
            n_hold = min(int(round(holdout_fraction * len(utts))), len(utts) - 1)
            held_set = set(order[:n_hold].tolist())
            for idx, u in enumerate(utts):
                (held_u if idx in held_set else train_u).append(u)
        train_u.sort(key=lambda u: u.start_s)
        held_u.sort(key=lambda u: u.start_s)
        for bucket, utts in ((train_clips, train_u), (held_clips, held_u)):
            bucket.append(
                Clip(
                    id=clip.id,
                    duration_s=clip.duration_s,
                    fps=clip.fps,
                    sample_rate_hz=clip.sample_rate_hz,
                    tracks=clip.tracks,
                    utterances=utts,
                    audio_streams=clip.audio_streams,
                    offscreen_speakers=clip.offscreen_speakers,
                )
            )
    dim, root = corpus.embedding_dim, corpus.root
    return Corpus(train_clips, dim, root), Corpus(held_clips, dim, root)


def generate_crossmodal_arrays(
    n_train_ids: int,
    n_test_ids: int,
    frames_per_id: int,
    utts_per_id: int,
    d: int = 64,
    face_sigma: float = 0.05,
    voice_sigma: float = 0.05,
    rotation_seed: int = 7,
    seed: int = 0,
) -> dict:
    """Face/voice pairs whose voice space is rotated by a hidden map.

    Used to exercise cross-modal alignment training: face embeddings sit
    near each identity anchor, voice embeddings near the rotated anchor,
    so an untrained near-identity projection scores at chance while a
    learned linear map can undo the rotation and generalize to the
    held-out identities (same rotation, fresh anchors).
    """
    rot_rng = np.random.default_rng(rotation_seed)
    q, r = np.linalg.qr(rot_rng.standard_normal((d, d)))
    rotation = q * np.sign(np.diag(r))

    rng = np.random.default_rng(seed)
    out: dict = {"rotation": rotation.astype(np.float32)}
    for split, n_ids in (("train", n_train_ids), ("test", n_test_ids)):
        faces, face_ids, voices, voice_ids = [], [], [], []
        for i in range(n_ids):
            anchor = _unit(rng.standard_normal(d))
            v_anchor = rotation @ anchor
            for _ in range(frames_per_id):
                faces.append(_noisy_copy(anchor, face_sigma, rng))
                face_ids.append(i)
            for _ in range(utts_per_id):
                voices.append(_noisy_copy(v_anchor, voice_sigma, rng))
                voice_ids.append(i)
        out[split] = {
            "face_embs": np.asarray(faces, dtype=np.float32),
            "face_ids": np.asarray(face_ids, dtype=np.int64),
            "voice_embs": np.asarray(voices, dtype=np.float32),
            "voice_ids": np.asarray(voice_ids, dtype=np.int64),
        }
    return out
