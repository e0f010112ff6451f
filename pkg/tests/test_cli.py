import json

import numpy as np
import pytest

from fvasd.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from fvasd.corpus import load_manifest
from fvasd.segmentation import HypUtterance, clipwise_recall
from fvasd.util import read_json, write_json


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    cfg = {
        "n_clips": 3,
        "identities_per_clip": 3,
        "tracks_per_identity": 2,
        "frames_per_track_range": [20, 40],
        "utterances_per_identity": 4,
        "utterance_duration_range_s": [0.8, 1.4],
        "clip_duration_s": 40.0,
        "d": 32,
        "voice_noise_sigma": 0.1,
        "offscreen_speaker_fraction": 0.2,
        "seed": 17,
    }
    cfg_path = out.parent / "synth.json"
    write_json(cfg_path, cfg)
    assert main(["generate", "--config", str(cfg_path), "--out", str(out)]) == EXIT_OK
    return out


def test_generate_outputs(corpus_dir):
    assert (corpus_dir / "manifest.json").exists()
    assert (corpus_dir / "ground_truth.json").exists()
    assert (corpus_dir / "run_manifest.json").exists()
    corpus = load_manifest(corpus_dir / "manifest.json")
    assert len(corpus.clips) == 3


def test_segment_recall_matches_inprocess(corpus_dir, tmp_path):
    hyps_path = tmp_path / "hyps.json"
    assert main([
        "segment", "--corpus", str(corpus_dir / "manifest.json"),
        "--front-end", "full", "--out", str(hyps_path),
    ]) == EXIT_OK
    doc = read_json(hyps_path)
    assert "config_hash" in doc
    corpus = load_manifest(corpus_dir / "manifest.json")
    refs_by_clip = {c.id: c.labeled_utterances() for c in corpus.clips}
    hyps_by_clip = {
        entry["clip_id"]: [
            HypUtterance(u["start_s"], u["end_s"], utt_id=u["utt_id"])
            for u in entry["utterances"]
        ]
        for entry in doc["clips"]
    }
    assert doc["recall_percent"] == pytest.approx(clipwise_recall(hyps_by_clip, refs_by_clip))


def test_full_pipeline_and_oracle_eval(corpus_dir, tmp_path):
    manifest = str(corpus_dir / "manifest.json")
    hyps_path = tmp_path / "hyps_refs.json"
    assert main([
        "segment", "--corpus", manifest, "--front-end", "refs", "--out", str(hyps_path),
    ]) == EXIT_OK

    train_cfg = tmp_path / "train.json"
    write_json(
        train_cfg,
        {"epochs": 3, "lr": 1e-3, "seed": 0, "model": {"d": 32, "n_heads": 4}},
    )
    ckpt = tmp_path / "ckpt"
    assert main([
        "train", "--corpus", manifest, "--config", str(train_cfg), "--out", str(ckpt),
    ]) == EXIT_OK
    assert (ckpt / "index.json").exists()
    assert (ckpt / "loss_curve.csv").exists()

    scores_path = tmp_path / "scores.json"
    assert main([
        "score", "--corpus", manifest, "--checkpoint", str(ckpt),
        "--utterances", str(hyps_path), "--out", str(scores_path),
    ]) == EXIT_OK
    scores = read_json(scores_path)
    assert scores["results"]
    for r in scores["results"]:
        assert sum(r["probabilities"]) == pytest.approx(1.0, abs=1e-6)

    report_path = tmp_path / "report.json"
    assert main([
        "eval", "--corpus", manifest, "--scores", str(scores_path),
        "--utterances", str(hyps_path), "--out", str(report_path),
    ]) == EXIT_OK
    report = read_json(report_path)
    assert 0.0 <= report["map_percent"] <= 100.0
    assert report["recall_percent"] == pytest.approx(100.0)
    assert report["config_hash"]

    # oracle probabilities (1.0 on the true speaker) must give mAP 100
    corpus = load_manifest(manifest)
    oracle = {"results": []}
    speaker_of = {
        (c.id, f"{c.id}:hyp{i:04d}"): u.speaker_id
        for c in corpus.clips
        for i, u in enumerate(c.utterances)
    }
    for r in scores["results"]:
        spk = speaker_of[(r["clip_id"], r["utt_id"])]
        probs = [1.0 if i == spk else 0.0 for i in r["identity_ids"]]
        oracle["results"].append({**r, "probabilities": probs})
    oracle_path = tmp_path / "oracle_scores.json"
    write_json(oracle_path, oracle)
    oracle_report_path = tmp_path / "oracle_report.json"
    assert main([
        "eval", "--corpus", manifest, "--scores", str(oracle_path),
        "--utterances", str(hyps_path), "--out", str(oracle_report_path),
    ]) == EXIT_OK
    assert read_json(oracle_report_path)["map_percent"] == pytest.approx(100.0)


def test_eval_with_raw_detections(corpus_dir, tmp_path):
    from fvasd.evaluate import groundtruth_detections

    corpus = load_manifest(corpus_dir / "manifest.json")
    dets = [
        {"clip_id": d.clip_id, "frame_index": d.frame_index, "track_id": d.track_id, "score": 1.0}
        for d in groundtruth_detections(corpus)
    ]
    det_path = tmp_path / "dets.json"
    write_json(det_path, {"detections": dets})
    out = tmp_path / "det_report.json"
    assert main([
        "eval", "--corpus", str(corpus_dir / "manifest.json"),
        "--detections", str(det_path), "--out", str(out),
    ]) == EXIT_OK
    assert read_json(out)["map_percent"] == pytest.approx(100.0)


def test_unknown_subcommand_usage_error(capsys):
    assert main(["frobnicate"]) == EXIT_USAGE


def test_missing_corpus_is_data_error(tmp_path, capsys):
    rc = main(["segment", "--corpus", str(tmp_path / "nope.json"), "--out", str(tmp_path / "h.json")])
    assert rc == EXIT_DATA
    assert "error" in capsys.readouterr().err


def test_unknown_config_key_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    write_json(bad, {"definitely_not_a_knob": 1})
    rc = main(["generate", "--config", str(bad), "--out", str(tmp_path / "c")])
    assert rc == EXIT_DATA


def test_eval_needs_inputs(corpus_dir, tmp_path):
    rc = main([
        "eval", "--corpus", str(corpus_dir / "manifest.json"), "--out", str(tmp_path / "r.json"),
    ])
    assert rc == EXIT_DATA


def test_seeded_rerun_identical(corpus_dir, tmp_path):
    out1, out2 = tmp_path / "s1.json", tmp_path / "s2.json"
    for out in (out1, out2):
        assert main([
            "segment", "--corpus", str(corpus_dir / "manifest.json"), "--out", str(out),
        ]) == EXIT_OK
    assert read_json(out1) == read_json(out2)
