export { decodeFvem, encodeFvem, FVEM_VERSION, Matrix } from "./fvem.js";
export {
  ClipEntry,
  CorpusManifest,
  serializeManifest,
  TrackEntry,
  UtteranceEntry,
} from "./manifest.js";
export {
  FaceEmbeddingProvider,
  resolveFaceProvider,
  resolveVoiceProvider,
  StubFaceProvider,
  StubVoiceProvider,
  VoiceEmbeddingProvider,
} from "./providers.js";
export {
  ExtractionJob,
  extractFaceEmbeddings,
  extractVoiceEmbeddings,
  JobLog,
  loadJob,
  MediaClipSpec,
  runJob,
  TrackSpec,
  UtteranceSpec,
} from "./extract.js";
