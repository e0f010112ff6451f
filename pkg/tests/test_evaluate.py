import numpy as np
import pytest

from fvasd.evaluate import (
    FrameDetection,
    ScoredUtterance,
    attribute,
    dynamic_subset,
    evaluate_run,
    groundtruth_detections,
    merge_detections,
    voc_map,
)
from fvasd.segmentation import HypUtterance

from .conftest import make_memory_clip, make_memory_corpus
from .oracles import frames_inside_reference, greedy_match_reference, voc_ap_reference


def _det(frame, track="t0", score=0.5, clip="c0"):
    return FrameDetection(clip, frame, track, score)


def _random_instance(rng, n_det_max=20):
    """Random detections/groundtruth over a small (frame, track) grid."""
    n_det = int(rng.integers(1, n_det_max + 1))
    dets = [
        FrameDetection("c0", int(rng.integers(0, 6)), f"t{rng.integers(0, 3)}", float(rng.random()))
        for _ in range(n_det)
    ]
    gts = []
    seen = set()
    for _ in range(int(rng.integers(0, 8))):
        key = (int(rng.integers(0, 6)), f"t{rng.integers(0, 3)}")
        if key not in seen:
            seen.add(key)
            gts.append(FrameDetection("c0", key[0], key[1], 1.0))
    return dets, gts


def _reference_map(dets, gts):
    ranked = sorted(dets, key=lambda d: (-d.score, d.clip_id, d.frame_index, d.track_id))
    flags = greedy_match_reference(
        [(d.clip_id, d.frame_index, d.track_id) for d in ranked],
        [(g.clip_id, g.frame_index, g.track_id) for g in gts],
    )
    return voc_ap_reference(flags, len(gts))


class TestAttribute:
    def _clip(self, rng):
        return make_memory_clip(
            tracks=[
                ("a", 0, rng.standard_normal((90, 4)).astype(np.float32)),
                ("a", 150, rng.standard_normal((60, 4)).astype(np.float32)),
                ("b", 0, rng.standard_normal((90, 4)).astype(np.float32)),
            ],
        )

    def test_disjoint_utterance_empty(self, rng):
        clip = self._clip(rng)
        out = attribute({"a": 0.9, "b": 0.1}, HypUtterance(8.0, 9.0), clip)
        assert out == []

    def test_fully_concurrent_one_second(self, rng):
        clip = make_memory_clip(tracks=[("a", 0, np.zeros((300, 4), dtype=np.float32))])
        out = attribute({"a": 0.8}, HypUtterance(1.0, 2.0), clip)
        assert len(out) == 30
        assert all(d.score == pytest.approx(0.8) for d in out)
        want = frames_inside_reference(0, 299, 1.0, 2.0, 30.0)
        assert sorted(d.frame_index for d in out) == want

    def test_both_tracks_of_identity_receive(self, rng):
        clip = self._clip(rng)
        out = attribute({"a": 0.7, "b": 0.2}, HypUtterance(0.0, 10.0), clip)
        tracks = {d.track_id for d in out if d.score == pytest.approx(0.7)}
        assert tracks == {"c0:a:t0", "c0:a:t1"}

    def test_never_outside_interval_or_span(self, rng):
        for _ in range(50):
            start = float(rng.uniform(0, 9))
            end = start + float(rng.uniform(0.05, 1.0))
            clip = self._clip(rng)
            for d in attribute({"a": 0.5, "b": 0.5}, HypUtterance(start, end), clip):
                track = next(t for t in clip.tracks if t.track_id == d.track_id)
                assert track.start_frame <= d.frame_index <= track.end_frame
                assert start - 1e-9 <= d.frame_index / clip.fps < end


class TestMerge:
    def test_single_unchanged(self):
        out = merge_detections([_det(1)])
        assert len(out) == 1 and out[0].score == 0.5

    def test_max_wins(self):
        out = merge_detections([_det(1, score=0.3), _det(1, score=0.9), _det(1, score=0.6)])
        assert len(out) == 1 and out[0].score == 0.9

    def test_distinct_frames_kept(self):
        out = merge_detections([_det(1), _det(2)])
        assert len(out) == 2


class TestVocMap:
    def test_perfect_ranking(self):
        gts = [_det(f, score=1.0) for f in range(5)]
        dets = [_det(f, score=1.0) for f in range(5)]
        assert voc_map(dets, gts) == 100.0

    def test_no_matching_groundtruth(self):
        assert voc_map([_det(1)], [_det(9)]) == 0.0

    def test_empty_cases(self):
        assert voc_map([], []) == 100.0
        assert voc_map([_det(1)], []) == 0.0
        assert voc_map([], [_det(1)]) == 0.0

    def test_handworked_three_gt_instance(self):
        # ranked TP, FP, TP, TP over 3 positives: the monotone-envelope
        # all-point method yields 5/6 (see notes on the envelope at the
        # 1/3 -> 2/3 recall step).
        gts = [_det(0, score=1.0), _det(1, score=1.0), _det(2, score=1.0)]
        dets = [
            _det(0, score=0.9),
            _det(7, score=0.8),
            _det(1, score=0.7),
            _det(2, score=0.6),
        ]
        assert voc_map(dets, gts) == pytest.approx(100.0 * 5.0 / 6.0, abs=1e-9)
        assert _reference_map(dets, gts) == pytest.approx(100.0 * 5.0 / 6.0, abs=1e-9)

    def test_matches_bruteforce_on_random_instances(self, rng):
        for _ in range(200):
            dets, gts = _random_instance(rng)
            assert voc_map(dets, gts) == pytest.approx(_reference_map(dets, gts), abs=1e-9)

    def test_duplicate_detections_second_is_fp(self):
        gts = [_det(0)]
        dets = [_det(0, score=0.9), _det(0, score=0.8)]
        # one TP then one FP on the same key
        assert voc_map(dets, gts) == pytest.approx(100.0, abs=1e-9)
        flags = greedy_match_reference([(0,), (0,)], [(0,)])
        assert flags == [True, False]

    def test_monotone_under_score_transform(self, rng):
        dets, gts = _random_instance(rng)
        base = voc_map(dets, gts)
        warped = [
            FrameDetection(d.clip_id, d.frame_index, d.track_id, float(np.exp(3 * d.score - 1)))
            for d in dets
        ]
        assert voc_map(warped, gts) == pytest.approx(base, abs=1e-9)

    def test_appending_tp_never_hurts_fp_never_helps(self, rng):
        for _ in range(50):
            dets, gts = _random_instance(rng, n_det_max=10)
            if not gts:
                continue
            matched = {(d.clip_id, d.frame_index, d.track_id) for d in dets}
            base = voc_map(dets, gts)
            min_score = min(d.score for d in dets)
            open_gt = [
                g for g in gts if (g.clip_id, g.frame_index, g.track_id) not in matched
            ]
            if open_gt:
                extra_tp = FrameDetection(
                    open_gt[0].clip_id, open_gt[0].frame_index, open_gt[0].track_id, min_score / 2
                )
                assert voc_map(dets + [extra_tp], gts) >= base - 1e-12
            extra_fp = FrameDetection("c0", 9999, "t9", min_score / 2)
            assert voc_map(dets + [extra_fp], gts) <= base + 1e-12

    def test_equal_scores_break_ties_lexicographically(self):
        # rank order under ties is (clip, frame, track); with gt only at
        # frame 0, the tied detections must rank frame 0 first (TP at
        # rank 1 -> AP 100), not depend on input order
        gts = [_det(0, score=1.0)]
        dets = [_det(5, score=0.5), _det(0, score=0.5)]
        assert voc_map(dets, gts) == pytest.approx(100.0, abs=1e-9)
        assert voc_map(list(reversed(dets)), gts) == pytest.approx(100.0, abs=1e-9)

    def test_box_mode(self):
        gts = [FrameDetection("c0", 0, "g", 1.0, box=[0, 0, 10, 10])]
        hit = FrameDetection("c0", 0, "d1", 0.9, box=[1, 1, 10, 10])
        miss = FrameDetection("c0", 0, "d2", 0.8, box=[20, 20, 30, 30])
        assert voc_map([hit], gts, mode="box") == 100.0
        assert voc_map([miss], gts, mode="box") == 0.0


class TestGroundtruthDetections:
    def test_one_second_utterance(self, rng):
        segs = np.zeros((1, 4), dtype=np.float32)
        clip = make_memory_clip(
            tracks=[("a", 0, np.zeros((300, 4), dtype=np.float32))],
            utterances=[("a", 1.0, 2.0, segs)],
        )
        corpus = make_memory_corpus([clip], 4)
        out = groundtruth_detections(corpus)
        assert len(out) == 30
        assert all(d.score == 1.0 for d in out)

    def test_no_utterances(self, rng):
        clip = make_memory_clip(tracks=[("a", 0, np.zeros((30, 4), dtype=np.float32))])
        assert groundtruth_detections(make_memory_corpus([clip], 4)) == []

    def test_offscreen_contributes_nothing(self, rng):
        segs = np.zeros((1, 4), dtype=np.float32)
        clip = make_memory_clip(
            tracks=[("a", 0, np.zeros((300, 4), dtype=np.float32))],
            utterances=[("off0", 1.0, 2.0, segs)],
            offscreen=("off0",),
        )
        assert groundtruth_detections(make_memory_corpus([clip], 4)) == []


class TestEvaluateRun:
    def _oracle_setup(self, rng):
        segs = np.zeros((1, 4), dtype=np.float32)
        clip = make_memory_clip(
            tracks=[
                ("a", 0, np.zeros((150, 4), dtype=np.float32)),
                ("b", 0, np.zeros((150, 4), dtype=np.float32)),
            ],
            utterances=[("a", 1.0, 2.0, segs), ("b", 2.5, 3.5, segs)],
            duration_s=5.0,
        )
        corpus = make_memory_corpus([clip], 4)
        hyps = [
            HypUtterance(1.0, 2.0, utt_id="h0", segment_embeddings=segs),
            HypUtterance(2.5, 3.5, utt_id="h1", segment_embeddings=segs),
        ]
        scored = [
            ScoredUtterance("c0", hyps[0], {"a": 1.0, "b": 0.0}),
            ScoredUtterance("c0", hyps[1], {"a": 0.0, "b": 1.0}),
        ]
        return corpus, {"c0": hyps}, scored

    def test_oracle_ceiling(self, rng):
        corpus, hyps, scored = self._oracle_setup(rng)
        report = evaluate_run(corpus, hyps, scored)
        assert report.map_percent == 100.0
        assert report.recall_percent == 100.0
        assert report.dynamic_subset_track_count == 2
        assert not report.degenerate

    def test_no_hypotheses_degenerate(self, rng):
        corpus, _, _ = self._oracle_setup(rng)
        report = evaluate_run(corpus, {"c0": []}, [])
        assert report.degenerate
        assert report.recall_percent == 0.0
        assert report.dynamic_subset_track_count == 0

    def test_dynamic_subset_drops_idle_tracks(self, rng):
        clip = make_memory_clip(
            tracks=[
                ("a", 0, np.zeros((30, 4), dtype=np.float32)),
                ("b", 200, np.zeros((30, 4), dtype=np.float32)),
            ],
        )
        hyps = [HypUtterance(0.2, 0.8, utt_id="h0")]
        kept = dynamic_subset(clip, hyps)
        assert [t.identity_id for t in kept] == ["a"]
