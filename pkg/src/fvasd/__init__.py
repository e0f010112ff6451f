"""Face-voice association pipeline for active speaker detection.

Everything operates at embedding level: corpora are manifests of
pre-extracted face-frame and utterance embeddings, the trainable head
scores utterances against visible identities, and evaluation produces
framewise detections ranked by VOC2012 mean average precision.
"""

__version__ = "0.1.0"
