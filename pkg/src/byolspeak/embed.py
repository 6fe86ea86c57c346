"""Inference path: arbitrary-length utterance to one fixed-size embedding.

Only the trained online encoder runs here; no augmentation, projector, or
predictor. Utterances are normalized with the TRAINING corpus statistics
regardless of where they come from, then cut into non-overlapping segments
whose encoder outputs are averaged.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .audio_io import Waveform, resample
from .features import NormStats, apply_norm, log_mel
from .nn import network_forward
from .trainer import Checkpoint, _sub


def segment_utterance(x: np.ndarray, segment_frames: int = 100) -> list[np.ndarray]:
    """Non-overlapping segment windows over a (T, F) spectrogram.

    A trailing remainder of at least half a segment is zero-padded to full
    length and kept; a shorter one is dropped unless it is all there is.
    """
    n_frames, n_bins = x.shape
    full = n_frames // segment_frames
    segments = [x[i * segment_frames : (i + 1) * segment_frames] for i in range(full)]
    rem = n_frames - full * segment_frames
    if rem > 0 and (rem * 2 >= segment_frames or full == 0):
        tail = np.zeros((segment_frames, n_bins), dtype=x.dtype)
        tail[:rem] = x[full * segment_frames :]
        segments.append(tail)
    return segments


def embed_utterance(w: Waveform, ck: Checkpoint, stats: NormStats) -> np.ndarray:
    """Mean online-encoder representation over the utterance's segments."""
    if w.sample_rate != ck.mel_config.sample_rate:
        w = resample(w, ck.mel_config.sample_rate)
    x = apply_norm(log_mel(w, ck.mel_config), stats)
    segments = segment_utterance(x, ck.segment_frames)
    if not segments:
        raise ValueError("utterance produced no segments")
    dtype = next(iter(ck.theta.values())).dtype
    batch = np.stack(segments)[..., None].astype(dtype)
    y, _ = network_forward(ck.encoder_spec, _sub(ck.theta, "f"), batch, want_trace=False)
    return y.astype(np.float64).mean(axis=0)


def write_embeddings_binary(path, embeddings: Iterable[tuple[str, np.ndarray]]) -> None:
    """Concatenated raw little-endian f32 vectors, in input order."""
    with open(path, "wb") as f:
        for _, vec in embeddings:
            f.write(np.asarray(vec, dtype="<f4").tobytes())


def write_embeddings_text(path, embeddings: Iterable[tuple[str, np.ndarray]]) -> None:
    """One line per utterance: identifier, tab, space-separated decimals."""
    with open(path, "w", encoding="utf-8") as f:
        for name, vec in embeddings:
            f.write(name + "\t" + " ".join(repr(float(v)) for v in vec) + "\n")


def read_embeddings_binary(path, dim: int) -> list[np.ndarray]:
    from pathlib import Path

    blob = Path(path).read_bytes()
    if len(blob) % (4 * dim):
        raise ValueError(f"{path}: size is not a multiple of {dim} f32 values")
    flat = np.frombuffer(blob, dtype="<f4")
    return [row.copy() for row in flat.reshape(-1, dim)]
