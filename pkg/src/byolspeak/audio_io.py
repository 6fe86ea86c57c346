"""WAV loading, saving, and band-limited resampling.

All audio in this package is a mono float waveform with an explicit sample
rate. Stereo files are averaged down to mono at load time; only 16-bit
integer PCM RIFF/WAVE is supported.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from math import gcd
from pathlib import Path

import numpy as np

PCM_SCALE = 32768.0


class WavError(Exception):
    """Base class for WAV parsing failures."""


class MalformedWavError(WavError):
    """File is not a well-formed RIFF/WAVE container."""


class UnsupportedWavError(WavError):
    """File is valid RIFF/WAVE but not 16-bit integer PCM."""


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float samples (nominal range [-1, 1]) at a sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def load_wav(path) -> Waveform:
    """Read a 16-bit PCM RIFF/WAVE file as a mono waveform.

    Samples are scaled by 1/32768; multi-channel content is averaged to mono.
    Raises FileNotFoundError, MalformedWavError, or UnsupportedWavError.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[0:4] != b"RIFF":
        raise MalformedWavError(f"{path}: missing RIFF magic")
    if data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: RIFF form type is not WAVE")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError(f"{path}: fmt chunk truncated")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise MalformedWavError(f"{path}: data chunk truncated")
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or payload is None:
        raise MalformedWavError(f"{path}: missing fmt or data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise UnsupportedWavError(f"{path}: format tag {audio_format}, want PCM (1)")
    if bits != 16:
        raise UnsupportedWavError(f"{path}: {bits}-bit samples, want 16-bit")
    if channels < 1:
        raise MalformedWavError(f"{path}: channel count {channels}")

    raw = np.frombuffer(payload[: len(payload) - len(payload) % (2 * channels)], dtype="<i2")
    samples = raw.astype(np.float64) / PCM_SCALE
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return Waveform(samples=samples, sample_rate=sample_rate)


def save_wav(path, w: Waveform) -> None:
    """Write a mono 16-bit PCM WAV file, clamping samples to [-1, 1)."""
    q = np.round(w.samples * PCM_SCALE)
    q = np.clip(q, -32768, 32767).astype("<i2")
    payload = q.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        1,  # mono
        w.sample_rate,
        w.sample_rate * 2,
        2,
        16,
        b"data",
        len(payload),
    )
    Path(path).write_bytes(header + payload)


@lru_cache(maxsize=64)
def _design_polyphase(up: int, down: int, taps_per_phase: int = 32, beta: float = 8.6):
    """Kaiser-windowed sinc for rational resampling by up/down, split by phase.

    Cutoff is 0.95 of the Nyquist of the lower rate; gain compensates for
    zero-stuffing. Length is odd so the group delay is an integer. Returns a
    (up, taps_per_phase + 1) table where row p holds h[p::up], zero padded.
    """
    half = (taps_per_phase // 2) * up
    n = np.arange(-half, half + 1, dtype=np.float64)
    cutoff = 0.95 * 0.5 / max(up, down)  # cycles per upsampled sample
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * n)
    h *= np.kaiser(2 * half + 1, beta)
    h *= up
    table = np.zeros((up, taps_per_phase + 1))
    for p in range(up):
        taps = h[p::up]
        table[p, : taps.size] = taps
    table.setflags(write=False)
    return table, half


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase windowed-sinc resampling to target_rate.

    Output length is round(len * target_rate / source_rate); a pure tone
    below half the lower Nyquist survives with its frequency intact.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    n_in = w.samples.size
    n_out = int(round(n_in * target_rate / w.sample_rate))
    if n_in == 0 or n_out == 0:
        return Waveform(np.zeros(n_out), target_rate)

    g = gcd(target_rate, w.sample_rate)
    up, down = target_rate // g, w.sample_rate // g
    table, half = _design_polyphase(up, down)
    n_taps = table.shape[1]

    # y[j] = sum_k h[j*down + half - k*up] * x[k]: per output sample, one row
    # of per-phase taps against a contiguous window of (zero-padded) input
    m = np.arange(n_out, dtype=np.int64) * down + half
    base = m // up
    phase = m - base * up
    pad = n_taps
    padded = np.concatenate([np.zeros(pad), w.samples, np.zeros(pad)])
    offsets = np.arange(n_taps, dtype=np.int64)
    src = padded[(base[:, None] + pad) - offsets[None, :]]
    out = np.einsum("ij,ij->i", table[phase], src)
    return Waveform(out, target_rate)
