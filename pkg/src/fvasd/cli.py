"""Batch command-line entry points wiring the pipeline end to end.

Subcommands: generate, segment, finetune, train, score, eval. Every
command emits machine-readable JSON stamped with the producing config
hash, plus a run manifest next to its outputs. Exit codes: 0 success,
2 usage error, 3 data/validation error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import finetune as ft
from . import model as mdl
from . import segmentation as seg
from .corpus import Corpus, CorpusError, load_manifest
from .synthgen import SynthConfig, generate_corpus
from .util import config_hash, read_json, write_json

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class DataError(Exception):
    """Invalid inputs: bad corpus, bad config, missing files."""


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _dataclass_from_json(cls, path: str | None, overrides: dict | None = None):
    doc = read_json(path) if path else {}
    if not isinstance(doc, dict):
        raise DataError(f"{path}: config must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise DataError(f"{path}: unknown config keys {sorted(unknown)}")
    if overrides:
        doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid {cls.__name__}: {exc}") from exc


def _load_corpus(path: str) -> Corpus:
    try:
        return load_manifest(path)
    except CorpusError as exc:
        raise DataError(str(exc)) from exc


def _run_manifest(out_anchor: Path, payload: dict) -> None:
    if out_anchor.is_dir():
        path = out_anchor / "run_manifest.json"
    else:
        path = out_anchor.with_name(out_anchor.name + ".run.json")
    write_json(path, payload)


def _finish(args, started: str, cfg_hash: str, outputs: list[str]) -> None:
    anchor = Path(outputs[0])
    _run_manifest(
        anchor,
        {
            "command": args.command,
            "config_hash": cfg_hash,
            "corpus": getattr(args, "corpus", None),
            "seed": getattr(args, "seed", None),
            "started_utc": started,
            "finished_utc": _utcnow(),
            "outputs": outputs,
        },
    )


# -- subcommands --------------------------------------------------------------


def cmd_generate(args) -> int:
    started = _utcnow()
    cfg = _dataclass_from_json(SynthConfig, args.config, {"seed": args.seed})
    for key in ("frames_per_track_range", "utterance_duration_range_s"):
        val = getattr(cfg, key)
        if isinstance(val, list):
            setattr(cfg, key, tuple(val))
    try:
        cfg.validate()
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    generate_corpus(cfg, out_dir=out)
    print(f"wrote corpus with {cfg.n_clips} clips to {out}")
    _finish(args, started, config_hash(cfg), [str(out)])
    return EXIT_OK


def _hyps_to_json(hyps_by_clip: dict[str, list[seg.HypUtterance]]) -> list[dict]:
    clips = []
    for clip_id, hyps in hyps_by_clip.items():
        clips.append(
            {
                "clip_id": clip_id,
                "utterances": [
                    {
                        "utt_id": h.utt_id,
                        "start_s": h.start_s,
                        "end_s": h.end_s,
                        "segments": h.segment_embeddings.tolist(),
                    }
                    for h in hyps
                ],
            }
        )
    return clips


def load_hyps_json(path: str) -> dict[str, list[seg.HypUtterance]]:
    doc = read_json(path)
    out: dict[str, list[seg.HypUtterance]] = {}
    for entry in doc["clips"]:
        hyps = []
        for u in entry["utterances"]:
            h = seg.HypUtterance(start_s=u["start_s"], end_s=u["end_s"], utt_id=u["utt_id"])
            h.segment_embeddings = np.asarray(u["segments"], dtype=np.float32)
            hyps.append(h)
        out[entry["clip_id"]] = hyps
    return out


def cmd_segment(args) -> int:
    started = _utcnow()
    cfg = _dataclass_from_json(seg.SegConfig, args.config)
    corpus = _load_corpus(args.corpus)
    hyps_by_clip: dict[str, list[seg.HypUtterance]] = {}
    for clip in corpus.clips:
        hyps_by_clip[clip.id] = seg.segment_clip(clip, corpus, cfg, front_end=args.front_end)
    refs_by_clip = {c.id: c.labeled_utterances() for c in corpus.clips}
    n_refs = sum(len(v) for v in refs_by_clip.values())
    doc: dict = {
        "config_hash": config_hash(cfg),
        "front_end": args.front_end,
        "clips": _hyps_to_json(hyps_by_clip),
    }
    if n_refs:
        doc["recall_percent"] = seg.clipwise_recall(hyps_by_clip, refs_by_clip)
        print(f"recall vs {n_refs} reference utterances: {doc['recall_percent']:.1f}%")
    write_json(args.out, doc)
    print(f"wrote {sum(len(v) for v in hyps_by_clip.values())} hypothesis utterances to {args.out}")
    _finish(args, started, doc["config_hash"], [args.out])
    return EXIT_OK


def cmd_finetune(args) -> int:
    started = _utcnow()
    cfg = _dataclass_from_json(ft.FinetuneConfig, args.config, {"seed": args.seed})
    corpus = _load_corpus(args.corpus)
    try:
        faces, voices, face_groups, voice_groups = ft.arrays_from_corpus(corpus)
        params = ft.finetune(faces, voices, face_groups, voice_groups, cfg)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    ft.save_projections(params, args.out, {"config_hash": config_hash(cfg)})
    print(f"wrote projection checkpoint to {args.out}")
    _finish(args, started, config_hash(cfg), [args.out])
    return EXIT_OK


def _train_config(args) -> mdl.TrainConfig:
    doc = read_json(args.config) if args.config else {}
    model_doc = doc.pop("model", {})
    cfg = _dataclass_from_json_dict(mdl.TrainConfig, doc, {"seed": args.seed})
    cfg.model = _dataclass_from_json_dict(mdl.ModelConfig, model_doc, {})
    return cfg


def _dataclass_from_json_dict(cls, doc: dict, overrides: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known - {"model"}
    if unknown:
        raise DataError(f"unknown {cls.__name__} keys {sorted(unknown)}")
    doc = {k: v for k, v in doc.items() if k in known}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid {cls.__name__}: {exc}") from exc


def cmd_train(args) -> int:
    started = _utcnow()
    cfg = _train_config(args)
    corpus = _load_corpus(args.corpus)
    if corpus.embedding_dim != cfg.model.d:
        raise DataError(
            f"model width {cfg.model.d} does not match corpus embedding_dim {corpus.embedding_dim}"
        )
    try:
        params, curve = mdl.train(corpus, cfg)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    cfg_hash = config_hash({**dataclasses.asdict(cfg)})
    mdl.save_checkpoint(params, out, {"config_hash": cfg_hash})
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "loss", "lr"])
        writer.writeheader()
        writer.writerows(curve)
    print(f"trained {cfg.epochs} epochs; final loss {curve[-1]['loss']:.4f}; checkpoint in {out}")
    _finish(args, started, cfg_hash, [str(out)])
    return EXIT_OK


def cmd_score(args) -> int:
    started = _utcnow()
    corpus = _load_corpus(args.corpus)
    try:
        params = mdl.load_checkpoint(args.checkpoint)
        hyps_by_clip = load_hyps_json(args.utterances)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load inputs: {exc}") from exc
    results = mdl.score_corpus(corpus, hyps_by_clip, params, seed=args.seed or 0)
    doc = {
        "config_hash": config_hash({"checkpoint": str(args.checkpoint), "seed": args.seed or 0}),
        "results": [dataclasses.asdict(r) for r in results],
    }
    write_json(args.out, doc)
    print(f"scored {len(results)} utterances to {args.out}")
    _finish(args, started, doc["config_hash"], [args.out])
    return EXIT_OK


def cmd_eval(args) -> int:
    started = _utcnow()
    corpus = _load_corpus(args.corpus)
    cfg_hash = config_hash({"mode": args.mode, "scores": args.scores, "detections": args.detections})
    if args.detections:
        doc = read_json(args.detections)
        dets = [
            ev.FrameDetection(d["clip_id"], d["frame_index"], d["track_id"], d["score"], d.get("box"))
            for d in doc["detections"]
        ]
        gts = ev.groundtruth_detections(corpus)
        report = ev.EvalReport(
            map_percent=ev.voc_map(dets, gts, mode=args.mode),
            per_clip_ap={},
            recall_percent=float("nan"),
            n_detections=len(dets),
            n_groundtruth=len(gts),
            dynamic_subset_track_count=sum(len(c.tracks) for c in corpus.clips),
            config_hash=cfg_hash,
            corpus_id=Path(args.corpus).stem,
        )
    else:
        if not args.scores or not args.utterances:
            raise DataError("eval needs either --detections or both --scores and --utterances")
        hyps_by_clip = load_hyps_json(args.utterances)
        scores_doc = read_json(args.scores)
        scored = []
        hyp_lookup = {
            (cid, h.utt_id): h for cid, hyps in hyps_by_clip.items() for h in hyps
        }
        for r in scores_doc["results"]:
            key = (r["clip_id"], r["utt_id"])
            if key not in hyp_lookup:
                raise DataError(f"score entry {key} has no matching hypothesis utterance")
            scored.append(
                ev.ScoredUtterance(
                    clip_id=r["clip_id"],
                    utt=hyp_lookup[key],
                    probabilities=dict(zip(r["identity_ids"], r["probabilities"])),
                )
            )
        report = ev.evaluate_run(
            corpus,
            hyps_by_clip,
            scored,
            mode=args.mode,
            config_hash=cfg_hash,
            corpus_id=Path(args.corpus).stem,
        )
    write_json(args.out, report.to_dict())
    print(f"mAP {report.map_percent:.1f}% over {report.n_groundtruth} positives -> {args.out}")
    _finish(args, started, cfg_hash, [args.out])
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fvasd",
        description="Embedding-level face-voice active speaker detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    p.add_argument("--config", help="SynthConfig JSON", default=None)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("segment", help="run a segmentation front-end over a corpus")
    p.add_argument("--corpus", required=True, help="manifest.json path")
    p.add_argument("--config", help="SegConfig JSON", default=None)
    p.add_argument("--front-end", choices=["full", "vad", "refs"], default="full")
    p.add_argument("--out", required=True, help="hypothesis utterances JSON")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("finetune", help="train cross-modal projection layers")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="FinetuneConfig JSON", default=None)
    p.add_argument("--out", required=True, help="projection checkpoint directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("train", help="train the scorer head")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="TrainConfig JSON (may nest a 'model' object)", default=None)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score hypothesis utterances with a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--utterances", required=True, help="hypothesis utterances JSON")
    p.add_argument("--out", required=True, help="score results JSON")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="evaluate scores or raw detections")
    p.add_argument("--corpus", required=True)
    p.add_argument("--scores", default=None, help="score results JSON")
    p.add_argument("--utterances", default=None, help="hypothesis utterances JSON")
    p.add_argument("--detections", default=None, help="raw detections JSON")
    p.add_argument("--mode", choices=["identity", "box"], default="identity")
    p.add_argument("--out", required=True, help="evaluation report JSON")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
