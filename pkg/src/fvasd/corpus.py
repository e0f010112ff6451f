"""Corpus data model: clips, face tracks, utterances, audio streams.

A corpus is a single ``manifest.json`` plus sidecar FVEM embedding files
referenced by relative path. The manifest is human-inspectable; all
numeric payloads live in the binaries. Identity annotations are
clip-local: the same identity_id in two clips means nothing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fvem import FvemError, read_embeddings

UNKNOWN_SPEAKER = "unknown"
DEFAULT_EMBEDDING_DIM = 128


class CorpusError(ValueError):
    """Raised by load_manifest for malformed or invalid corpora."""


class EmbeddingRef:
    """Reference to an embedding matrix, on disk or in memory.

    Disk-backed refs carry a path relative to the corpus root and cache
    the matrix after the first load. In-memory refs (used by generators
    and tests) carry the matrix directly and have no path.
    """

    def __init__(self, path: str | None = None, matrix: np.ndarray | None = None):
        if path is None and matrix is None:
            raise ValueError("EmbeddingRef needs a path or a matrix")
        self.path = path
        self._matrix = None if matrix is None else np.asarray(matrix, dtype=np.float32)

    @classmethod
    def from_array(cls, matrix: np.ndarray) -> "EmbeddingRef":
        return cls(path=None, matrix=matrix)

    def load(self, root: str | Path | None = None) -> np.ndarray:
        if self._matrix is None:
            full = Path(root) / self.path if root is not None else Path(self.path)
            self._matrix = read_embeddings(full)
        return self._matrix

    @property
    def shape(self) -> tuple[int, int] | None:
        return None if self._matrix is None else self._matrix.shape

    def __repr__(self):
        loc = self.path if self.path is not None else f"in-memory {self.shape}"
        return f"EmbeddingRef({loc})"


@dataclass
class FaceTrack:
    track_id: str
    identity_id: str
    track_index: int
    start_frame: int
    end_frame: int
    frame_embeddings: EmbeddingRef
    crop_meta: dict | None = None
    boxes: list[list[float]] | None = None

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame + 1

    def span_s(self, fps: float) -> tuple[float, float]:
        """Time interval covered by the track's frames, half-open."""
        return self.start_frame / fps, (self.end_frame + 1) / fps


@dataclass
class Utterance:
    utt_id: str
    speaker_id: str
    start_s: float
    end_s: float
    segment_embeddings: EmbeddingRef

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class AudioStreams:
    hop_s: float
    energy: EmbeddingRef | None = None
    speaker_stream: EmbeddingRef | None = None


@dataclass
class Clip:
    id: str
    duration_s: float
    fps: float = 30.0
    sample_rate_hz: int = 16000
    tracks: list[FaceTrack] = field(default_factory=list)
    utterances: list[Utterance] = field(default_factory=list)
    audio_streams: AudioStreams | None = None
    offscreen_speakers: list[str] = field(default_factory=list)

    @property
    def total_frames(self) -> int:
        return int(math.floor(self.duration_s * self.fps))

    def visible_identities(self) -> list[str]:
        """Distinct identity ids in track order (first appearance wins)."""
        seen: list[str] = []
        for t in self.tracks:
            if t.identity_id not in seen:
                seen.append(t.identity_id)
        return seen

    def tracks_of(self, identity_id: str) -> list[FaceTrack]:
        return [t for t in self.tracks if t.identity_id == identity_id]

    def labeled_utterances(self) -> list[Utterance]:
        return [u for u in self.utterances if u.speaker_id != UNKNOWN_SPEAKER]


@dataclass
class Corpus:
    clips: list[Clip]
    embedding_dim: int = DEFAULT_EMBEDDING_DIM
    root: Path | None = None

    def clip(self, clip_id: str) -> Clip:
        for c in self.clips:
            if c.id == clip_id:
                return c
        raise KeyError(clip_id)


def _ref(value, root_known: bool) -> EmbeddingRef:
    if not isinstance(value, str) or not value:
        raise CorpusError(f"embedding reference must be a non-empty path string, got {value!r}")
    return EmbeddingRef(path=value)


def _parse_clip(obj: dict) -> Clip:
    try:
        clip = Clip(
            id=obj["id"],
            duration_s=float(obj["duration_s"]),
            fps=float(obj.get("fps", 30.0)),
            sample_rate_hz=int(obj.get("sample_rate_hz", 16000)),
            offscreen_speakers=list(obj.get("offscreen_speakers", [])),
        )
        for t in obj.get("tracks", []):
            clip.tracks.append(
                FaceTrack(
                    track_id=t["track_id"],
                    identity_id=t["identity_id"],
                    track_index=int(t["track_index"]),
                    start_frame=int(t["start_frame"]),
                    end_frame=int(t["end_frame"]),
                    frame_embeddings=_ref(t["frame_embeddings"], True),
                    crop_meta=t.get("crop_meta"),
                    boxes=t.get("boxes"),
                )
            )
        for u in obj.get("utterances", []):
            clip.utterances.append(
                Utterance(
                    utt_id=u["utt_id"],
                    speaker_id=u.get("speaker_id", UNKNOWN_SPEAKER),
                    start_s=float(u["start_s"]),
                    end_s=float(u["end_s"]),
                    segment_embeddings=_ref(u["segment_embeddings"], True),
                )
            )
        streams = obj.get("audio_streams")
        if streams is not None:
            clip.audio_streams = AudioStreams(
                hop_s=float(streams["hop_s"]),
                energy=_ref(streams["energy"], True) if streams.get("energy") else None,
                speaker_stream=_ref(streams["speaker_stream"], True)
                if streams.get("speaker_stream")
                else None,
            )
        return clip
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorpusError):
            raise
        raise CorpusError(f"clip {obj.get('id', '<missing id>')!r}: {exc}") from exc


def load_manifest(path: str | Path) -> Corpus:
    """Load and fully validate a corpus manifest.

    Embedding files are read eagerly so every structural invariant,
    including matrix shapes and finiteness, is checked up front. Raises
    CorpusError naming the first offending clip/track/utterance.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise CorpusError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorpusError(f"malformed manifest JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict) or "clips" not in doc:
        raise CorpusError(f"{path}: manifest must be an object with a 'clips' list")
    corpus = Corpus(
        clips=[_parse_clip(c) for c in doc["clips"]],
        embedding_dim=int(doc.get("embedding_dim", DEFAULT_EMBEDDING_DIM)),
        root=path.parent,
    )
    violations = validate_corpus(corpus)
    if violations:
        raise CorpusError("corpus validation failed:\n" + "\n".join(violations))
    return corpus


def validate_corpus(corpus: Corpus) -> list[str]:
    """Check every structural invariant; returns human-readable violations.

    An empty list means the corpus is valid. Violations are data, not
    exceptions: callers decide whether to raise.
    """
    out: list[str] = []
    d = corpus.embedding_dim
    if d <= 0:
        out.append(f"embedding_dim must be positive, got {d}")
        return out

    seen_ids: set[str] = set()
    for clip in corpus.clips:
        if clip.id in seen_ids:
            out.append(f"duplicate clip id {clip.id!r}")
        seen_ids.add(clip.id)
        if clip.duration_s <= 0:
            out.append(f"clip {clip.id}: duration_s must be positive")
            continue
        max_frame = clip.total_frames
        visible = set(clip.visible_identities())
        allowed_speakers = visible | set(clip.offscreen_speakers)

        for track in clip.tracks:
            where = f"clip {clip.id} track {track.track_id}"
            if track.start_frame < 0 or track.end_frame > max_frame:
                out.append(
                    f"{where}: frame range [{track.start_frame}, {track.end_frame}] "
                    f"outside [0, {max_frame}]"
                )
            if track.end_frame < track.start_frame:
                out.append(f"{where}: end_frame precedes start_frame")
                continue
            mat = _try_load(track.frame_embeddings, corpus.root, where, out)
            if mat is None:
                continue
            if mat.shape[1] != d:
                out.append(f"{where}: embedding cols {mat.shape[1]} != corpus dim {d}")
            if mat.shape[0] != track.n_frames:
                out.append(
                    f"{where}: embedding rows {mat.shape[0]} != frame count {track.n_frames}"
                )

        for utt in clip.utterances:
            where = f"clip {clip.id} utterance {utt.utt_id}"
            if not (0.0 <= utt.start_s < utt.end_s <= clip.duration_s):
                out.append(
                    f"{where}: interval [{utt.start_s}, {utt.end_s}] invalid for "
                    f"duration {clip.duration_s}"
                )
            if utt.speaker_id != UNKNOWN_SPEAKER and utt.speaker_id not in allowed_speakers:
                out.append(
                    f"{where}: speaker {utt.speaker_id!r} is neither a clip identity "
                    f"nor a designated off-screen speaker"
                )
            mat = _try_load(utt.segment_embeddings, corpus.root, where, out)
            if mat is None:
                continue
            if mat.shape[0] < 1:
                out.append(f"{where}: needs at least one segment embedding row")
            if mat.shape[1] != d:
                out.append(f"{where}: embedding cols {mat.shape[1]} != corpus dim {d}")

        if clip.audio_streams is not None:
            streams = clip.audio_streams
            where = f"clip {clip.id} audio_streams"
            if streams.hop_s <= 0:
                out.append(f"{where}: hop_s must be positive")
            else:
                expected = clip.duration_s / streams.hop_s
                for name, ref, cols in (
                    ("energy", streams.energy, 1),
                    ("speaker_stream", streams.speaker_stream, d),
                ):
                    if ref is None:
                        continue
                    mat = _try_load(ref, corpus.root, f"{where}.{name}", out)
                    if mat is None:
                        continue
                    if mat.shape[1] != cols:
                        out.append(f"{where}.{name}: cols {mat.shape[1]} != {cols}")
                    if abs(mat.shape[0] - expected) > 1.0:
                        out.append(
                            f"{where}.{name}: {mat.shape[0]} rows inconsistent with "
                            f"duration {clip.duration_s}s / hop {streams.hop_s}s"
                        )
    return out


def _try_load(ref: EmbeddingRef, root, where: str, out: list[str]) -> np.ndarray | None:
    try:
        return ref.load(root)
    except FileNotFoundError:
        out.append(f"{where}: missing embedding file {ref.path!r}")
    except FvemError as exc:
        out.append(f"{where}: {exc}")
    return None


def to_manifest_dict(corpus: Corpus) -> dict:
    """Serialize a corpus back into its manifest JSON structure.

    Requires every EmbeddingRef to be disk-backed (have a path); clip,
    track and utterance order is preserved exactly.
    """
    clips = []
    for clip in corpus.clips:
        obj: dict = {
            "id": clip.id,
            "duration_s": clip.duration_s,
            "fps": clip.fps,
            "sample_rate_hz": clip.sample_rate_hz,
            "tracks": [],
            "utterances": [],
        }
        if clip.offscreen_speakers:
            obj["offscreen_speakers"] = list(clip.offscreen_speakers)
        for t in clip.tracks:
            entry = {
                "track_id": t.track_id,
                "identity_id": t.identity_id,
                "track_index": t.track_index,
                "start_frame": t.start_frame,
                "end_frame": t.end_frame,
                "frame_embeddings": _require_path(t.frame_embeddings),
            }
            if t.crop_meta is not None:
                entry["crop_meta"] = t.crop_meta
            if t.boxes is not None:
                entry["boxes"] = t.boxes
            obj["tracks"].append(entry)
        for u in clip.utterances:
            obj["utterances"].append(
                {
                    "utt_id": u.utt_id,
                    "speaker_id": u.speaker_id,
                    "start_s": u.start_s,
                    "end_s": u.end_s,
                    "segment_embeddings": _require_path(u.segment_embeddings),
                }
            )
        if clip.audio_streams is not None:
            s = clip.audio_streams
            obj["audio_streams"] = {
                "hop_s": s.hop_s,
                "energy": _require_path(s.energy) if s.energy else None,
                "speaker_stream": _require_path(s.speaker_stream) if s.speaker_stream else None,
            }
        clips.append(obj)
    return {"embedding_dim": corpus.embedding_dim, "clips": clips}


def save_manifest(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_manifest_dict(corpus), indent=2) + "\n")


def _require_path(ref: EmbeddingRef) -> str:
    if ref.path is None:
        raise CorpusError("cannot serialize an in-memory EmbeddingRef; write it to disk first")
    return ref.path
