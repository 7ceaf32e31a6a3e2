"""Feature exporter: audio/caption pairs -> rankclap ingestion format v1.

Encodes each manifest row with a speech encoder (1024-d) and a text encoder
(768-d) and writes the line-oriented JSON ingestion format consumed by the
rankclap toolkit.  Two encoder backends exist: "pretrained" (frozen
HuggingFace speech/text models, requires the optional torch stack) and
"deterministic" (hash-seeded stand-in, no model downloads, exact reruns).
"""

__version__ = "0.1.0"
