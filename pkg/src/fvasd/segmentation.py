"""Front-end utterance segmentation over precomputed audio streams.

Two stages: an energy-threshold voice activity detector produces speech
regions, and a derivative-style change detector (cosine distance
between adjacent window means of the speaker-embedding stream) marks
speaker turns inside them. Regions split at change points become
hypothesis utterances. Segmentation errors are deliberately left
uncorrected downstream so their cost is measurable.

Also provides the 15%-overlap training filter and the utterance recall
metric used to size evaluation subsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .corpus import Clip, Corpus, Utterance

VAD_SMOOTH_HOPS = 5
NOISE_FLOOR_PERCENTILE = 10.0


@dataclass
class SegConfig:
    vad_threshold_margin: float = 0.25
    vad_hangover_s: float = 0.3
    vad_min_speech_s: float = 0.2
    scd_window_s: float = 0.5
    scd_hop_s: float = 0.0  # 0 means one evaluation per stream hop
    scd_peak_threshold_mode: str = "adaptive"  # "adaptive" (mu + kappa*sigma) or "absolute"
    scd_kappa: float = 1.0
    scd_theta: float = 0.5  # absolute-mode threshold
    min_utt_s: float | None = None
    max_utt_s: float | None = None
    embed_segments: int = 1  # rows per hypothesis utterance embedding

    def validate(self) -> None:
        if self.scd_window_s <= 0 or self.scd_hop_s < 0:
            raise ValueError("scd windows/hops must be positive")
        if self.vad_hangover_s < 0:
            raise ValueError("vad_hangover_s must be >= 0")
        if self.scd_peak_threshold_mode not in ("adaptive", "absolute"):
            raise ValueError(f"unknown threshold mode {self.scd_peak_threshold_mode!r}")
        if self.embed_segments < 1:
            raise ValueError("embed_segments must be >= 1")


@dataclass
class SpeechRegion:
    start_s: float
    end_s: float


@dataclass
class ChangePoint:
    t_s: float
    score: float


@dataclass
class HypUtterance:
    start_s: float
    end_s: float
    utt_id: str = ""
    segment_embeddings: np.ndarray | None = field(default=None, repr=False)

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def energy_vad(energy: np.ndarray, hop_s: float, cfg: SegConfig) -> list[SpeechRegion]:
    """Speech regions where smoothed energy clears the noise floor margin.

    The noise floor is the 10th percentile of the 5-hop-smoothed energy;
    gaps shorter than the hangover are bridged, then regions shorter
    than vad_min_speech_s are dropped.
    """
    energy = np.asarray(energy, dtype=np.float64).reshape(-1)
    if energy.size == 0:
        raise ValueError("empty energy stream")
    if not np.isfinite(energy).all():
        raise ValueError("energy stream contains non-finite values")
    smooth = kernels.moving_average(energy, VAD_SMOOTH_HOPS)
    floor = float(np.percentile(smooth, NOISE_FLOOR_PERCENTILE))
    active = smooth > floor + cfg.vad_threshold_margin

    regions: list[SpeechRegion] = []
    start = None
    for i, on in enumerate(active):
        if on and start is None:
            start = i
        elif not on and start is not None:
            regions.append(SpeechRegion(start * hop_s, i * hop_s))
            start = None
    if start is not None:
        regions.append(SpeechRegion(start * hop_s, len(active) * hop_s))

    merged: list[SpeechRegion] = []
    for r in regions:
        if merged and r.start_s - merged[-1].end_s < cfg.vad_hangover_s:
            merged[-1].end_s = r.end_s
        else:
            merged.append(r)
    return [r for r in merged if r.end_s - r.start_s >= cfg.vad_min_speech_s]


def detect_change_points(stream: np.ndarray, hop_s: float, cfg: SegConfig) -> list[ChangePoint]:
    """Speaker-turn candidates from the per-hop speaker embedding stream.

    d(t) is the cosine distance between the mean embeddings of
    [t-w, t) and [t, t+w); change points are local maxima of d above
    the configured threshold. A stream shorter than two windows yields
    no change points. Invariant to positive rescaling of the stream.
    """
    stream = np.asarray(stream, dtype=np.float64)
    if stream.ndim != 2:
        raise ValueError(f"speaker stream must be 2-D, got shape {stream.shape}")
    w = max(1, round(cfg.scd_window_s / hop_s))
    n = stream.shape[0]
    if n < 2 * w:
        return []
    stride = max(1, round(cfg.scd_hop_s / hop_s)) if cfg.scd_hop_s > 0 else 1

    d = kernels.window_cos_dist(stream, w)
    ts = np.arange(w, n - w + 1, stride)
    vals = d[ts]
    if cfg.scd_peak_threshold_mode == "absolute":
        thr = cfg.scd_theta
    else:
        thr = float(vals.mean() + cfg.scd_kappa * vals.std())

    points: list[ChangePoint] = []
    i = 0
    while i < len(ts):
        j = i
        while j + 1 < len(ts) and vals[j + 1] == vals[i]:
            j += 1
        is_peak = (
            vals[i] > thr
            and i > 0
            and j < len(ts) - 1
            and vals[i] > vals[i - 1]
            and vals[i] > vals[j + 1]
        )
        if is_peak:
            mid = ts[(i + j) // 2]
            points.append(ChangePoint(t_s=mid * hop_s, score=float(vals[i])))
        i = j + 1
    return points


def region_change_points(
    stream: np.ndarray,
    hop_s: float,
    regions: list[SpeechRegion],
    cfg: SegConfig,
) -> list[ChangePoint]:
    """Change detection applied per speech region.

    Running the detector on each region's stream slice keeps the
    adaptive threshold statistics over speech only; between regions the
    stream is silence-like noise whose near-maximal distances would
    otherwise swamp the clip-level mean and hide real speaker turns.
    """
    points: list[ChangePoint] = []
    n = stream.shape[0]
    for region in regions:
        lo = max(0, int(np.floor(region.start_s / hop_s + 1e-9)))
        hi = min(n, int(np.ceil(region.end_s / hop_s - 1e-9)))
        if hi - lo < 2:
            continue
        for p in detect_change_points(stream[lo:hi], hop_s, cfg):
            points.append(ChangePoint(t_s=p.t_s + lo * hop_s, score=p.score))
    return points


def assemble_utterances(
    regions: list[SpeechRegion],
    change_points: list[ChangePoint],
    cfg: SegConfig | None = None,
) -> list[HypUtterance]:
    """Split each region at interior change points; apply duration limits.

    min_utt_s drops short pieces; max_utt_s chops long pieces into equal
    parts. Both apply only when configured.
    """
    hyps: list[HypUtterance] = []
    times = sorted(p.t_s for p in change_points)
    for region in regions:
        interior = [t for t in times if region.start_s < t < region.end_s]
        bounds = [region.start_s, *interior, region.end_s]
        for a, b in zip(bounds[:-1], bounds[1:]):
            hyps.append(HypUtterance(start_s=a, end_s=b))
    if cfg is not None and cfg.max_utt_s is not None:
        chopped: list[HypUtterance] = []
        for h in hyps:
            n_parts = max(1, int(np.ceil(h.duration_s / cfg.max_utt_s - 1e-9)))
            edges = np.linspace(h.start_s, h.end_s, n_parts + 1)
            chopped.extend(HypUtterance(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:]))
        hyps = chopped
    if cfg is not None and cfg.min_utt_s is not None:
        hyps = [h for h in hyps if h.duration_s >= cfg.min_utt_s]
    return hyps


def interval_overlap(a_start: float, a_end: float, b_start: float, b_end: float) -> float:
    return max(0.0, min(a_end, b_end) - max(a_start, b_start))


def overlap_filter(
    hyps: list[HypUtterance],
    refs: list[Utterance],
    min_ratio: float = 0.15,
) -> list[tuple[HypUtterance, str]]:
    """Training-mode pseudo-labeling.

    Keeps a hypothesis iff some reference is overlapped by at least
    ``min_ratio`` of that reference's duration; the label comes from the
    reference with the largest raw overlap (ties broken by earlier
    reference start).
    """
    out = []
    for h in hyps:
        qualifies = False
        best_overlap = -1.0
        best_ref: Utterance | None = None
        for r in refs:
            ov = interval_overlap(h.start_s, h.end_s, r.start_s, r.end_s)
            if ov >= min_ratio * r.duration_s:
                qualifies = True
            if ov > best_overlap or (ov == best_overlap and best_ref is not None and r.start_s < best_ref.start_s):
                best_overlap = ov
                best_ref = r
        if qualifies and best_ref is not None:
            out.append((h, best_ref.speaker_id))
    return out


def utterance_recall(
    hyps: list[HypUtterance],
    refs: list[Utterance],
    min_ratio: float = 0.15,
) -> float:
    """Percentage of references overlapped >= min_ratio of their duration.

    Any single qualifying hypothesis counts; an empty reference set is
    100 by definition.
    """
    if not refs:
        return 100.0
    hit = 0
    for r in refs:
        need = min_ratio * r.duration_s
        if any(interval_overlap(h.start_s, h.end_s, r.start_s, r.end_s) >= need for h in hyps):
            hit += 1
    return 100.0 * hit / len(refs)


def clipwise_recall(
    hyps_by_clip: dict[str, list[HypUtterance]],
    refs_by_clip: dict[str, list[Utterance]],
    min_ratio: float = 0.15,
) -> float:
    """Utterance recall aggregated over clips.

    Coverage is only meaningful within a clip (all clips share the time
    origin, so pooling intervals across clips would let one clip's
    hypotheses spuriously cover another's references).
    """
    total = sum(len(refs) for refs in refs_by_clip.values())
    if total == 0:
        return 100.0
    hit = 0
    for clip_id, refs in refs_by_clip.items():
        hyps = hyps_by_clip.get(clip_id, [])
        for r in refs:
            need = min_ratio * r.duration_s
            if any(
                interval_overlap(h.start_s, h.end_s, r.start_s, r.end_s) >= need for h in hyps
            ):
                hit += 1
    return 100.0 * hit / total


def embed_hyp_utterances(
    hyps: list[HypUtterance],
    stream: np.ndarray,
    hop_s: float,
    n_segments: int = 1,
) -> list[HypUtterance]:
    """Assign speaker-stream pooled embeddings to hypothesis utterances.

    Stream rows whose hop lies inside [start, end) are mean-pooled into
    ``n_segments`` equal chunks and L2-normalized; hypotheses covering
    no rows are discarded.
    """
    kept = []
    n = stream.shape[0]
    for h in hyps:
        lo = int(np.floor(h.start_s / hop_s + 1e-9))
        hi = int(np.ceil(h.end_s / hop_s - 1e-9))
        lo, hi = max(0, lo), min(n, hi)
        if hi <= lo:
            continue
        rows = stream[lo:hi]
        chunks = np.array_split(rows, min(n_segments, len(rows)))
        segs = np.stack([c.mean(axis=0) for c in chunks])
        norms = np.linalg.norm(segs, axis=1, keepdims=True)
        segs = segs / np.maximum(norms, 1e-12)
        h.segment_embeddings = segs.astype(np.float32)
        kept.append(h)
    return kept


def segment_clip(
    clip: Clip,
    corpus: Corpus,
    cfg: SegConfig,
    front_end: str = "full",
) -> list[HypUtterance]:
    """Run one front-end over a clip and return embedded hypotheses.

    front_end: "full" (VAD + change detection), "vad" (VAD regions
    only), or "refs" (reference boundaries re-embedded from the stream,
    the oracle front-end).
    """
    cfg.validate()
    if clip.audio_streams is None or clip.audio_streams.speaker_stream is None:
        raise ValueError(f"clip {clip.id} has no speaker stream to segment")
    streams = clip.audio_streams
    hop_s = streams.hop_s
    stream = streams.speaker_stream.load(corpus.root)

    if front_end == "refs":
        hyps = [HypUtterance(u.start_s, u.end_s) for u in clip.utterances]
    else:
        if streams.energy is None:
            raise ValueError(f"clip {clip.id} has no energy stream")
        energy = streams.energy.load(corpus.root).reshape(-1)
        regions = energy_vad(energy, hop_s, cfg)
        if front_end == "full":
            points = region_change_points(stream, hop_s, regions, cfg)
        elif front_end == "vad":
            points = []
        else:
            raise ValueError(f"unknown front_end {front_end!r}")
        hyps = assemble_utterances(regions, points, cfg)

    hyps = embed_hyp_utterances(hyps, stream, hop_s, cfg.embed_segments)
    for i, h in enumerate(hyps):
        h.utt_id = f"{clip.id}:hyp{i:04d}"
    return hyps
