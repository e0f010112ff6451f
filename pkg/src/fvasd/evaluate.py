"""Frame attribution and VOC2012-style mean average precision.

Per-utterance identity probabilities become framewise detections on
concurrent face tracks; colliding scores merge by max. Scoring is a
single "speaking" class: detections are ranked by descending score
(deterministic lexicographic tie-break on clip, frame, track), matched
greedily against unclaimed groundtruth, and AP is the area under the
monotone interpolated precision envelope over recall (the all-point
VOC2012 method). Evaluation restricts itself to the dynamic subset of
tracks concurrent with at least one hypothesis utterance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .corpus import Clip, Corpus, FaceTrack
from .segmentation import HypUtterance, Utterance, clipwise_recall, interval_overlap


@dataclass
class FrameDetection:
    clip_id: str
    frame_index: int
    track_id: str
    score: float
    box: list[float] | None = None


@dataclass
class EvalReport:
    map_percent: float
    per_clip_ap: dict[str, float]
    recall_percent: float
    n_detections: int
    n_groundtruth: int
    dynamic_subset_track_count: int
    degenerate: bool = False
    config_hash: str = ""
    corpus_id: str = ""

    def to_dict(self) -> dict:
        return {
            "map_percent": self.map_percent,
            "per_clip_ap": self.per_clip_ap,
            "recall_percent": self.recall_percent,
            "n_detections": self.n_detections,
            "n_groundtruth": self.n_groundtruth,
            "dynamic_subset_track_count": self.dynamic_subset_track_count,
            "degenerate": self.degenerate,
            "config_hash": self.config_hash,
            "corpus_id": self.corpus_id,
        }


def frames_in_interval(track: FaceTrack, start_s: float, end_s: float, fps: float) -> range:
    """Frames f of the track with start_s <= f/fps < end_s.

    Half-open on the right so adjacent utterances never double-count a
    boundary frame.
    """
    lo = max(track.start_frame, int(math.ceil(start_s * fps - 1e-9)))
    hi = min(track.end_frame, int(math.ceil(end_s * fps - 1e-9)) - 1)
    return range(lo, hi + 1)


def attribute(
    probabilities: dict[str, float],
    utt: HypUtterance,
    clip: Clip,
    tracks: list[FaceTrack] | None = None,
) -> list[FrameDetection]:
    """Assign each identity's probability to its concurrent track frames.

    ``probabilities`` maps every visible identity of the clip to its
    utterance-correspondence probability. Only frames inside both the
    utterance interval and the track span receive detections.
    """
    out: list[FrameDetection] = []
    for track in tracks if tracks is not None else clip.tracks:
        p = probabilities.get(track.identity_id)
        if p is None:
            continue
        for f in frames_in_interval(track, utt.start_s, utt.end_s, clip.fps):
            out.append(FrameDetection(clip.id, f, track.track_id, float(p)))
    return out


def merge_detections(dets: list[FrameDetection]) -> list[FrameDetection]:
    """Collapse to one detection per (clip, frame, track), keeping the max."""
    best: dict[tuple[str, int, str], FrameDetection] = {}
    for d in dets:
        key = (d.clip_id, d.frame_index, d.track_id)
        cur = best.get(key)
        if cur is None or d.score > cur.score:
            best[key] = d
    return [best[k] for k in sorted(best)]


def groundtruth_detections(corpus: Corpus) -> list[FrameDetection]:
    """Score-1.0 positives: frames of a track whose identity is speaking."""
    out: list[FrameDetection] = []
    seen: set[tuple[str, int, str]] = set()
    for clip in corpus.clips:
        for utt in clip.labeled_utterances():
            for track in clip.tracks_of(utt.speaker_id):
                for f in frames_in_interval(track, utt.start_s, utt.end_s, clip.fps):
                    key = (clip.id, f, track.track_id)
                    if key not in seen:
                        seen.add(key)
                        out.append(FrameDetection(clip.id, f, track.track_id, 1.0))
    return out


def _rank_order(dets: list[FrameDetection]) -> list[FrameDetection]:
    return sorted(dets, key=lambda d: (-d.score, d.clip_id, d.frame_index, d.track_id))


def _ap_from_tp(tp: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from ranked TP flags, in [0, 1]."""
    tp_cum = np.cumsum(tp.astype(np.float64))
    fp_cum = np.cumsum((~tp).astype(np.float64))
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


def _box_iou(a: list[float], b: list[float]) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter <= 0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def voc_map(
    dets: list[FrameDetection],
    gts: list[FrameDetection],
    mode: str = "identity",
    iou_threshold: float = 0.5,
) -> float:
    """Single-class mAP in percent.

    identity mode matches a detection to the unclaimed groundtruth with
    the same (clip, frame, track); box mode greedily takes the best
    unclaimed IoU >= threshold on the same (clip, frame). Empty
    groundtruth scores 100 with no detections, 0 otherwise.
    """
    if not gts:
        return 100.0 if not dets else 0.0
    if not dets:
        return 0.0
    ranked = _rank_order(dets)
    if mode == "identity":
        tp = _match_identity(ranked, gts)
    elif mode == "box":
        tp = _match_boxes(ranked, gts, iou_threshold)
    else:
        raise ValueError(f"unknown mAP mode {mode!r}")
    return 100.0 * _ap_from_tp(tp, len(gts))


def _encode_keys(dets: list[FrameDetection], clip_ids: dict[str, int], track_ids: dict[str, int]) -> np.ndarray:
    keys = np.empty(len(dets), dtype=np.int64)
    for i, d in enumerate(dets):
        keys[i] = (clip_ids[d.clip_id] << 44) | (track_ids[d.track_id] << 24) | d.frame_index
    return keys


def _match_identity(ranked: list[FrameDetection], gts: list[FrameDetection]) -> np.ndarray:
    clip_ids: dict[str, int] = {}
    track_ids: dict[str, int] = {}
    for d in list(ranked) + list(gts):
        clip_ids.setdefault(d.clip_id, len(clip_ids))
        track_ids.setdefault(d.track_id, len(track_ids))
        if d.frame_index < 0 or d.frame_index >= (1 << 24):
            raise ValueError(f"frame index {d.frame_index} out of encodable range")
    det_keys = _encode_keys(ranked, clip_ids, track_ids)
    gt_keys = np.unique(_encode_keys(gts, clip_ids, track_ids))
    if len(gt_keys) != len(gts):
        raise ValueError("duplicate groundtruth (clip, frame, track) entries")
    return np.asarray(kernels.greedy_match(det_keys, gt_keys), dtype=bool)


def _match_boxes(ranked: list[FrameDetection], gts: list[FrameDetection], thr: float) -> np.ndarray:
    by_frame: dict[tuple[str, int], list[int]] = {}
    for gi, g in enumerate(gts):
        if g.box is None:
            raise ValueError("box mode requires groundtruth boxes")
        by_frame.setdefault((g.clip_id, g.frame_index), []).append(gi)
    claimed = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(ranked), dtype=bool)
    for i, d in enumerate(ranked):
        if d.box is None:
            continue
        best_iou, best_gi = thr, -1
        for gi in by_frame.get((d.clip_id, d.frame_index), []):
            if claimed[gi]:
                continue
            iou = _box_iou(d.box, gts[gi].box)
            if iou >= best_iou:
                best_iou, best_gi = iou, gi
        if best_gi >= 0:
            tp[i] = True
            claimed[best_gi] = True
    return tp


@dataclass
class ScoredUtterance:
    """A hypothesis utterance joined with its identity probabilities."""

    clip_id: str
    utt: HypUtterance
    probabilities: dict[str, float] = field(default_factory=dict)


def dynamic_subset(clip: Clip, hyps: list[HypUtterance]) -> list[FaceTrack]:
    """Tracks concurrent with at least one hypothesis utterance."""
    kept = []
    for track in clip.tracks:
        t0, t1 = track.span_s(clip.fps)
        if any(interval_overlap(t0, t1, h.start_s, h.end_s) > 0 for h in hyps):
            kept.append(track)
    return kept


def evaluate_run(
    corpus: Corpus,
    hyps_by_clip: dict[str, list[HypUtterance]],
    scored: list[ScoredUtterance],
    mode: str = "identity",
    config_hash: str = "",
    corpus_id: str = "",
) -> EvalReport:
    """Full protocol: dynamic subset, attribute, merge, mAP, recall.

    Groundtruth positives come from the corpus's labeled utterances,
    restricted to the dynamic subset. Recall compares hypothesis
    boundaries against the labeled utterances at the 15% rule.
    """
    scored_by_key = {(s.clip_id, s.utt.utt_id): s for s in scored}
    all_dets: list[FrameDetection] = []
    gt_all: list[FrameDetection] = []
    subset_tracks = 0
    per_clip_det: dict[str, list[FrameDetection]] = {}
    per_clip_gt: dict[str, list[FrameDetection]] = {}

    refs_by_clip: dict[str, list[Utterance]] = {}
    hyps_all: list[HypUtterance] = []
    for clip in corpus.clips:
        hyps = hyps_by_clip.get(clip.id, [])
        refs_by_clip[clip.id] = clip.labeled_utterances()
        hyps_all.extend(hyps)
        tracks = dynamic_subset(clip, hyps)
        subset_tracks += len(tracks)
        track_set = {t.track_id for t in tracks}

        clip_dets: list[FrameDetection] = []
        for h in hyps:
            s = scored_by_key.get((clip.id, h.utt_id))
            if s is None:
                continue
            clip_dets.extend(attribute(s.probabilities, h, clip, tracks))
        clip_dets = merge_detections(clip_dets)

        clip_gt = [
            g
            for g in groundtruth_detections(Corpus([clip], corpus.embedding_dim, corpus.root))
            if g.track_id in track_set
        ]
        per_clip_det[clip.id] = clip_dets
        per_clip_gt[clip.id] = clip_gt
        all_dets.extend(clip_dets)
        gt_all.extend(clip_gt)

    degenerate = not hyps_all or subset_tracks == 0
    report = EvalReport(
        map_percent=0.0 if degenerate else voc_map(all_dets, gt_all, mode=mode),
        per_clip_ap={
            cid: voc_map(per_clip_det[cid], per_clip_gt[cid], mode=mode) for cid in per_clip_det
        },
        recall_percent=0.0 if not hyps_all else clipwise_recall(hyps_by_clip, refs_by_clip),
        n_detections=len(all_dets),
        n_groundtruth=len(gt_all),
        dynamic_subset_track_count=subset_tracks,
        degenerate=degenerate,
        config_hash=config_hash,
        corpus_id=corpus_id,
    )
    return report
