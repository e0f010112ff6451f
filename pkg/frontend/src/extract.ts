/**
 * Extraction jobs: turn media plus track/utterance metadata into a
 * corpus the engine loads directly (manifest.json + FVEM sidecars).
 *
 * The adapter only emits data; it never scores anything. Real encoders
 * are reached through the provider registry; the deterministic stubs
 * keep the path runnable without model weights.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { encodeFvem } from "./fvem.js";
import {
  ClipEntry,
  CorpusManifest,
  serializeManifest,
  TrackEntry,
  UtteranceEntry,
} from "./manifest.js";
import { resolveFaceProvider, resolveVoiceProvider } from "./providers.js";

export interface TrackSpec {
  track_id: string;
  identity_id: string;
  track_index: number;
  start_frame: number;
  end_frame: number;
  crop_meta?: { channels: number; height: number; width: number };
}

export interface UtteranceSpec {
  utt_id: string;
  speaker_id?: string;
  start_s: number;
  end_s: number;
}

export interface MediaClipSpec {
  clip_id: string;
  /** path to the source recording (any readable file for the stubs) */
  media: string;
  duration_s: number;
  fps?: number;
  sample_rate_hz?: number;
  tracks: TrackSpec[];
  utterances: UtteranceSpec[];
  offscreen_speakers?: string[];
}

export interface ExtractionJob {
  clips: MediaClipSpec[];
  face_encoder: string;
  voice_encoder: string;
  embedding_dim: number;
  out_dir: string;
  /** sub-segment rows per utterance (M); defaults to 1 */
  utterance_segments?: number;
}

export interface JobLog {
  face_encoder: string;
  voice_encoder: string;
  embedding_dim: number;
  clips: number;
  tracks_written: number;
  utterances_written: number;
  skipped_utterances: { clip_id: string; utt_id: string; reason: string }[];
  warnings: string[];
}

export function loadJob(jobPath: string): ExtractionJob {
  const doc = JSON.parse(fs.readFileSync(jobPath, "utf8")) as ExtractionJob;
  for (const key of ["clips", "face_encoder", "voice_encoder", "embedding_dim", "out_dir"]) {
    if (!(key in doc)) throw new Error(`job file missing required key '${key}'`);
  }
  // media paths are relative to the job file
  const base = path.dirname(path.resolve(jobPath));
  for (const clip of doc.clips) {
    clip.media = path.resolve(base, clip.media);
  }
  if (!path.isAbsolute(doc.out_dir)) doc.out_dir = path.resolve(base, doc.out_dir);
  return doc;
}

function readMedia(clip: MediaClipSpec): Buffer {
  try {
    return fs.readFileSync(clip.media);
  } catch (err) {
    throw new Error(`unreadable media for clip ${clip.clip_id}: ${clip.media} (${err})`);
  }
}

function writeMatrix(outDir: string, rel: string, rows: Float32Array[], dim: number): void {
  const data = new Float32Array(rows.length * dim);
  rows.forEach((row, i) => {
    if (row.length !== dim) throw new Error(`provider emitted width ${row.length}, expected ${dim}`);
    data.set(row, i * dim);
  });
  fs.writeFileSync(path.join(outDir, rel), encodeFvem({ rows: rows.length, cols: dim, data }));
}

function sanitize(id: string): string {
  return id.replace(/[^A-Za-z0-9_.-]/g, "_");
}

export function extractFaceEmbeddings(
  job: ExtractionJob,
  clip: MediaClipSpec,
  media: Buffer,
  log: JobLog,
): TrackEntry[] {
  const provider = resolveFaceProvider(job.face_encoder, job.embedding_dim);
  const entries: TrackEntry[] = [];
  for (const track of clip.tracks) {
    if (track.end_frame < track.start_frame) {
      throw new Error(`track ${track.track_id}: end_frame precedes start_frame`);
    }
    const frames: number[] = [];
    for (let f = track.start_frame; f <= track.end_frame; f++) frames.push(f);
    const rows = provider.embedFrames(media, track.track_id, frames);
    const rel = `emb/${sanitize(clip.clip_id)}_${sanitize(track.track_id)}.fvem`;
    writeMatrix(job.out_dir, rel, rows, job.embedding_dim);
    entries.push({ ...track, frame_embeddings: rel });
    log.tracks_written += 1;
  }
  return entries;
}

export function extractVoiceEmbeddings(
  job: ExtractionJob,
  clip: MediaClipSpec,
  media: Buffer,
  log: JobLog,
): UtteranceEntry[] {
  const provider = resolveVoiceProvider(job.voice_encoder, job.embedding_dim);
  const segments = Math.max(1, job.utterance_segments ?? 1);
  const entries: UtteranceEntry[] = [];
  for (const utt of clip.utterances) {
    const duration = utt.end_s - utt.start_s;
    if (duration < provider.minDurationS) {
      const reason = `duration ${duration.toFixed(3)}s below encoder minimum ${provider.minDurationS}s`;
      log.skipped_utterances.push({ clip_id: clip.clip_id, utt_id: utt.utt_id, reason });
      log.warnings.push(`skipped ${clip.clip_id}/${utt.utt_id}: ${reason}`);
      continue;
    }
    const rows = provider.embedUtterance(media, utt.start_s, utt.end_s, segments);
    const rel = `emb/${sanitize(clip.clip_id)}_${sanitize(utt.utt_id)}.fvem`;
    writeMatrix(job.out_dir, rel, rows, job.embedding_dim);
    entries.push({
      utt_id: utt.utt_id,
      speaker_id: utt.speaker_id ?? "unknown",
      start_s: utt.start_s,
      end_s: utt.end_s,
      segment_embeddings: rel,
    });
    log.utterances_written += 1;
  }
  return entries;
}

export function runJob(job: ExtractionJob): JobLog {
  const log: JobLog = {
    face_encoder: job.face_encoder,
    voice_encoder: job.voice_encoder,
    embedding_dim: job.embedding_dim,
    clips: job.clips.length,
    tracks_written: 0,
    utterances_written: 0,
    skipped_utterances: [],
    warnings: [],
  };
  fs.mkdirSync(path.join(job.out_dir, "emb"), { recursive: true });
  const clips: ClipEntry[] = [];
  for (const clip of job.clips) {
    const media = readMedia(clip);
    const tracks = extractFaceEmbeddings(job, clip, media, log);
    const utterances = extractVoiceEmbeddings(job, clip, media, log);
    const entry: ClipEntry = {
      id: clip.clip_id,
      duration_s: clip.duration_s,
      fps: clip.fps ?? 30,
      sample_rate_hz: clip.sample_rate_hz ?? 16000,
      tracks,
      utterances,
    };
    if (clip.offscreen_speakers?.length) entry.offscreen_speakers = clip.offscreen_speakers;
    clips.push(entry);
  }
  const manifest: CorpusManifest = { embedding_dim: job.embedding_dim, clips };
  fs.writeFileSync(path.join(job.out_dir, "manifest.json"), serializeManifest(manifest));
  fs.writeFileSync(path.join(job.out_dir, "job_log.json"), JSON.stringify(log, null, 2) + "\n");
  return log;
}
