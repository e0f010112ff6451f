from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from fvasd.corpus import (
    AudioStreams,
    Clip,
    Corpus,
    EmbeddingRef,
    FaceTrack,
    Utterance,
)
from fvasd.fvem import write_embeddings


def write_min_corpus(
    root: Path,
    dim: int = 8,
    track_frames=(30, 45),
    utterances=((1.0, 2.0, "id0"),),
    duration_s: float = 10.0,
    offscreen=(),
) -> Path:
    """Write a minimal single-clip corpus; returns the manifest path."""
    rng = np.random.default_rng(0)
    (root / "emb").mkdir(parents=True, exist_ok=True)
    tracks = []
    for j, n in enumerate(track_frames):
        rel = f"emb/t{j}.fvem"
        write_embeddings(root / rel, rng.standard_normal((n, dim)).astype(np.float32))
        tracks.append(
            {
                "track_id": f"c0:id{j % 2}:t{j}",
                "identity_id": f"id{j % 2}",
                "track_index": j,
                "start_frame": 10 * j,
                "end_frame": 10 * j + n - 1,
                "frame_embeddings": rel,
            }
        )
    utts = []
    for k, (s, e, spk) in enumerate(utterances):
        rel = f"emb/u{k}.fvem"
        write_embeddings(root / rel, rng.standard_normal((1, dim)).astype(np.float32))
        utts.append(
            {
                "utt_id": f"c0:u{k}",
                "speaker_id": spk,
                "start_s": s,
                "end_s": e,
                "segment_embeddings": rel,
            }
        )
    manifest = {
        "embedding_dim": dim,
        "clips": [
            {
                "id": "c0",
                "duration_s": duration_s,
                "fps": 30.0,
                "sample_rate_hz": 16000,
                "tracks": tracks,
                "utterances": utts,
                "offscreen_speakers": list(offscreen),
            }
        ],
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def make_memory_clip(
    clip_id: str = "c0",
    duration_s: float = 10.0,
    fps: float = 30.0,
    tracks=(),
    utterances=(),
    stream: np.ndarray | None = None,
    energy: np.ndarray | None = None,
    hop_s: float = 0.05,
    offscreen=(),
) -> Clip:
    """In-memory clip from (identity, start_frame, frames TxD) tracks and
    (speaker, start_s, end_s, segments MxD) utterances."""
    clip = Clip(id=clip_id, duration_s=duration_s, fps=fps, offscreen_speakers=list(offscreen))
    for j, (identity, start_frame, mat) in enumerate(tracks):
        clip.tracks.append(
            FaceTrack(
                track_id=f"{clip_id}:{identity}:t{j}",
                identity_id=identity,
                track_index=j,
                start_frame=start_frame,
                end_frame=start_frame + mat.shape[0] - 1,
                frame_embeddings=EmbeddingRef.from_array(mat),
            )
        )
    for k, (speaker, s, e, segs) in enumerate(utterances):
        clip.utterances.append(
            Utterance(
                utt_id=f"{clip_id}:u{k}",
                speaker_id=speaker,
                start_s=s,
                end_s=e,
                segment_embeddings=EmbeddingRef.from_array(segs),
            )
        )
    if stream is not None or energy is not None:
        clip.audio_streams = AudioStreams(
            hop_s=hop_s,
            energy=EmbeddingRef.from_array(energy[:, None]) if energy is not None else None,
            speaker_stream=EmbeddingRef.from_array(stream) if stream is not None else None,
        )
    return clip


def make_memory_corpus(clips: list[Clip], dim: int) -> Corpus:
    return Corpus(clips=clips, embedding_dim=dim, root=None)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
