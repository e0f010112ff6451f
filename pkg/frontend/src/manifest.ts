/**
 * Corpus manifest structures mirroring the engine's JSON schema.
 * Embedding payloads are referenced by path relative to the manifest.
 */

export interface TrackEntry {
  track_id: string;
  identity_id: string;
  track_index: number;
  start_frame: number;
  end_frame: number;
  frame_embeddings: string;
  crop_meta?: { channels: number; height: number; width: number };
  boxes?: number[][];
}

export interface UtteranceEntry {
  utt_id: string;
  speaker_id: string;
  start_s: number;
  end_s: number;
  segment_embeddings: string;
}

export interface ClipEntry {
  id: string;
  duration_s: number;
  fps: number;
  sample_rate_hz: number;
  tracks: TrackEntry[];
  utterances: UtteranceEntry[];
  offscreen_speakers?: string[];
}

export interface CorpusManifest {
  embedding_dim: number;
  clips: ClipEntry[];
}

export function serializeManifest(manifest: CorpusManifest): string {
  return JSON.stringify(manifest, null, 2) + "\n";
}
