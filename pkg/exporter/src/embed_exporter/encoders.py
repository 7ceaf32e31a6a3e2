"""Encoder backends.

Both backends share the preprocessing contract: audio is resampled to 16 kHz
and cropped or zero-padded to 10 seconds; captions are truncated to 512
tokens.  The pretrained backend wraps frozen HuggingFace checkpoints (speech
model pooled to 1024-d, text model's final-layer CLS token, 768-d); the
deterministic backend derives embeddings from content hashes of the
preprocessed inputs, so reruns are bit-identical with no model downloads.
"""

from __future__ import annotations

import hashlib
import wave
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16_000
CLIP_SECONDS = 10
MAX_TEXT_TOKENS = 512

AUDIO_DIM = 1024
TEXT_DIM = 768

SPEECH_MODEL_ID = "3loi/SER-Odyssey-Baseline-WavLM-Multi-Attributes"
TEXT_MODEL_ID = "j-hartmann/emotion-english-distilroberta-base"


class AudioReadError(RuntimeError):
    pass


def load_wav_mono(path: Path) -> tuple[np.ndarray, int]:
    """Decode a PCM WAV file to float64 mono in [-1, 1]."""
    try:
        with wave.open(str(path), "rb") as wav:
            n_channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            frames = wav.readframes(wav.getnframes())
    except (OSError, wave.Error) as exc:
        raise AudioReadError(f"cannot read {path}: {exc}") from exc
    if width == 2:
        samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 1:
        samples = (np.frombuffer(frames, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif width == 4:
        samples = np.frombuffer(frames, dtype="<i4").astype(np.float64) / 2147483648.0
    else:
        raise AudioReadError(f"{path}: unsupported sample width {width}")
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return samples, rate


def resample_linear(samples: np.ndarray, rate: int, target: int = SAMPLE_RATE) -> np.ndarray:
    if rate == target or samples.size == 0:
        return samples
    duration = samples.size / rate
    n_out = max(1, int(round(duration * target)))
    t_out = np.arange(n_out) / target
    t_in = np.arange(samples.size) / rate
    return np.interp(t_out, t_in, samples)


def crop_or_pad(samples: np.ndarray, seconds: int = CLIP_SECONDS, rate: int = SAMPLE_RATE) -> np.ndarray:
    n = seconds * rate
    if samples.size >= n:
        return samples[:n]
    out = np.zeros(n)
    out[: samples.size] = samples
    return out


def preprocess_audio(path: Path) -> np.ndarray:
    samples, rate = load_wav_mono(path)
    return crop_or_pad(resample_linear(samples, rate))


def truncate_tokens(caption: str, limit: int = MAX_TEXT_TOKENS) -> str:
    tokens = caption.split()
    return " ".join(tokens[:limit])


def _hash_embedding(payload: bytes, dim: int) -> np.ndarray:
    """Deterministic unit-scale embedding from a content hash.

    Expands a blake2b digest through counter-mode hashing into dim standard-
    normal-ish coordinates (sum of 12 uniforms, shifted), then scales to unit
    norm.  Stable across platforms and runs.
    """
    out = np.empty(dim)
    counter = 0
    produced = 0
    while produced < dim:
        digest = hashlib.blake2b(payload + counter.to_bytes(4, "little"), digest_size=64).digest()
        words = np.frombuffer(digest, dtype="<u8")
        uniforms = (words >> 11) * 2.0**-53
        take = min(uniforms.size, dim - produced)
        out[produced : produced + take] = uniforms[:take]
        produced += take
        counter += 1
    # Irwin-Hall style normalization keeps coordinates roughly symmetric
    out = out - 0.5
    norm = float(np.linalg.norm(out))
    return out / norm if norm > 0 else out


class DeterministicEncoder:
    """Hash-seeded stand-in encoder with the real backends' shapes and
    preprocessing; useful for format tests and offline pipelines."""

    name = "deterministic"

    def describe(self) -> dict:
        return {"encoder": self.name, "audio_dim": AUDIO_DIM, "text_dim": TEXT_DIM}

    def encode_audio(self, path: Path) -> np.ndarray:
        samples = preprocess_audio(path)
        quantized = np.round(samples * 32768.0).astype("<i4").tobytes()
        return _hash_embedding(b"audio:" + quantized, AUDIO_DIM)

    def encode_text(self, caption: str) -> np.ndarray:
        text = truncate_tokens(caption)
        return _hash_embedding(b"text:" + text.encode("utf-8"), TEXT_DIM)


class PretrainedEncoder:
    """Frozen HuggingFace speech + text encoders (optional torch stack).

    The speech model is mean-pooled over the temporal dimension of its last
    hidden layer when the checkpoint does not expose its own pooled output;
    the exact pooling in use is recorded in the export manifest.
    """

    name = "pretrained"

    def __init__(self, device: str = "cpu",
                 speech_model: str = SPEECH_MODEL_ID, text_model: str = TEXT_MODEL_ID):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError(
                "pretrained encoder needs the optional torch stack: "
                "pip install 'rankclap-exporter[pretrained]'"
            ) from exc
        self._torch = torch
        self.device = device
        self.speech_model_id = speech_model
        self.text_model_id = text_model
        self.speech = AutoModel.from_pretrained(speech_model, trust_remote_code=True)
        self.speech.eval().to(device)
        self.tokenizer = AutoTokenizer.from_pretrained(text_model)
        self.text = AutoModel.from_pretrained(text_model)
        self.text.eval().to(device)

    def describe(self) -> dict:
        return {
            "encoder": self.name,
            "speech_model": self.speech_model_id,
            "speech_weights_sha256": _state_digest(self.speech),
            "text_model": self.text_model_id,
            "text_weights_sha256": _state_digest(self.text),
            "audio_pooling": "model-pooled" if hasattr(self.speech, "pool") else "temporal-mean",
            "audio_dim": AUDIO_DIM,
            "text_dim": TEXT_DIM,
        }

    def encode_audio(self, path: Path) -> np.ndarray:
        torch = self._torch
        samples = preprocess_audio(path)
        with torch.no_grad():
            wav = torch.tensor(samples, dtype=torch.float32, device=self.device)[None, :]
            out = self.speech(wav)
            if hasattr(out, "pooler_output") and out.pooler_output is not None:
                emb = out.pooler_output[0]
            else:
                emb = out.last_hidden_state[0].mean(dim=0)
        vec = emb.cpu().numpy().astype(np.float64)
        if vec.shape != (AUDIO_DIM,):
            raise RuntimeError(f"speech encoder produced shape {vec.shape}, expected ({AUDIO_DIM},)")
        return vec

    def encode_text(self, caption: str) -> np.ndarray:
        torch = self._torch
        enc = self.tokenizer(
            truncate_tokens(caption), return_tensors="pt",
            truncation=True, max_length=MAX_TEXT_TOKENS,
        ).to(self.device)
        with torch.no_grad():
            out = self.text(**enc)
        vec = out.last_hidden_state[0, 0].cpu().numpy().astype(np.float64)  # CLS token
        if vec.shape != (TEXT_DIM,):
            raise RuntimeError(f"text encoder produced shape {vec.shape}, expected ({TEXT_DIM},)")
        return vec


def _state_digest(model) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.cpu().numpy().tobytes())
    return h.hexdigest()


def make_encoder(name: str, device: str = "cpu"):
    if name == "deterministic":
        return DeterministicEncoder()
    if name == "pretrained":
        return PretrainedEncoder(device=device)
    raise ValueError(f"unknown encoder {name!r} (expected deterministic|pretrained)")
