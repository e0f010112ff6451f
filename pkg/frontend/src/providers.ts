/**
 * Embedding providers wrap the actual face/speaker encoders behind a
 * uniform interface. Real encoders plug in by registering a provider
 * under their model identifier; the bundled deterministic stub lets the
 * whole export path run (and be tested bit-for-bit) without model
 * weights: embeddings are unit vectors derived from a hash of the media
 * content and the crop/window coordinates.
 */

export interface FaceEmbeddingProvider {
  readonly id: string;
  readonly dim: number;
  /** one embedding per frame of the crop sequence, in frame order */
  embedFrames(media: Buffer, trackId: string, frameIndices: number[]): Float32Array[];
}

export interface VoiceEmbeddingProvider {
  readonly id: string;
  readonly dim: number;
  /** minimum usable utterance duration; shorter ones are skipped */
  readonly minDurationS: number;
  /** one or more rows (sub-segment embeddings) for [startS, endS) */
  embedUtterance(media: Buffer, startS: number, endS: number, segments: number): Float32Array[];
}

/** FNV-1a 64-bit over a byte buffer, returned as bigint. */
function fnv1a64(bytes: Buffer): bigint {
  let h = 0xcbf29ce484222325n;
  const prime = 0x100000001b3n;
  for (const b of bytes) {
    h ^= BigInt(b);
    h = (h * prime) & 0xffffffffffffffffn;
  }
  return h;
}

/** splitmix64 PRNG; deterministic across platforms. */
function* splitmix64(seed: bigint): Generator<number> {
  let state = seed & 0xffffffffffffffffn;
  while (true) {
    state = (state + 0x9e3779b97f4a7c15n) & 0xffffffffffffffffn;
    let z = state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & 0xffffffffffffffffn;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & 0xffffffffffffffffn;
    z = z ^ (z >> 31n);
    // top 53 bits -> uniform double in [0, 1); exact for bigints < 2^53
    yield Number(z >> 11n) / 9007199254740992;
  }
}

function gaussianUnitVector(seed: bigint, dim: number): Float32Array {
  const rng = splitmix64(seed);
  const out = new Float32Array(dim);
  for (let i = 0; i < dim; i += 2) {
    // Box-Muller
    const u1 = Math.max(rng.next().value as number, 1e-12);
    const u2 = rng.next().value as number;
    const r = Math.sqrt(-2 * Math.log(u1));
    out[i] = r * Math.cos(2 * Math.PI * u2);
    if (i + 1 < dim) out[i + 1] = r * Math.sin(2 * Math.PI * u2);
  }
  let norm = 0;
  for (const v of out) norm += v * v;
  norm = Math.sqrt(norm) || 1;
  for (let i = 0; i < dim; i++) out[i] = out[i] / norm;
  return out;
}

function contentSeed(media: Buffer, salt: string): bigint {
  return fnv1a64(Buffer.concat([media, Buffer.from(salt, "utf8")]));
}

export class StubFaceProvider implements FaceEmbeddingProvider {
  readonly id: string;
  constructor(readonly dim: number = 128, idSuffix = "v1") {
    this.id = `stub-face-${idSuffix}`;
  }

  embedFrames(media: Buffer, trackId: string, frameIndices: number[]): Float32Array[] {
    return frameIndices.map((f) =>
      gaussianUnitVector(contentSeed(media, `face|${trackId}|${f}`), this.dim),
    );
  }
}

export class StubVoiceProvider implements VoiceEmbeddingProvider {
  readonly id: string;
  readonly minDurationS = 0.2;
  constructor(readonly dim: number = 128, idSuffix = "v1") {
    this.id = `stub-voice-${idSuffix}`;
  }

  embedUtterance(media: Buffer, startS: number, endS: number, segments: number): Float32Array[] {
    const rows: Float32Array[] = [];
    const step = (endS - startS) / segments;
    for (let m = 0; m < segments; m++) {
      const a = (startS + m * step).toFixed(6);
      const b = (startS + (m + 1) * step).toFixed(6);
      rows.push(gaussianUnitVector(contentSeed(media, `voice|${a}|${b}`), this.dim));
    }
    return rows;
  }
}

export function resolveFaceProvider(modelId: string, dim: number): FaceEmbeddingProvider {
  if (modelId.startsWith("stub-face")) return new StubFaceProvider(dim);
  throw new Error(`face encoder model not available: ${modelId}`);
}

export function resolveVoiceProvider(modelId: string, dim: number): VoiceEmbeddingProvider {
  if (modelId.startsWith("stub-voice")) return new StubVoiceProvider(dim);
  throw new Error(`speaker encoder model not available: ${modelId}`);
}
