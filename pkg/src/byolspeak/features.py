"""Log-mel spectrograms and corpus-level normalization statistics.

Spectrograms are plain (T, F) float arrays of natural-log mel energies.
Conventions fixed here so downstream tests are well-defined: HTK mel scale,
triangular filters without area normalization, power spectrum, reflect
center-padding with T = ceil(n_samples / hop), log floor 1e-10.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np

from .audio_io import Waveform

SIGMA_FLOOR = 1e-5
_NST_MAGIC = b"NST1"


@dataclass(frozen=True)
class MelConfig:
    """Front-end parameters for log-mel extraction."""

    sample_rate: int = 16000
    n_mels: int = 64
    window_ms: float = 64.0
    hop_ms: float = 10.0
    fft_size: int = 0  # 0 -> next power of two >= window samples
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.hop_ms > self.window_ms:
            raise ValueError("hop_ms must not exceed window_ms")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ValueError("need 0 <= fmin < fmax <= sample_rate/2")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.fft_size == 0:
            object.__setattr__(self, "fft_size", 1 << (self.window_samples - 1).bit_length())
        if self.fft_size < self.window_samples:
            raise ValueError("fft_size smaller than window")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms * self.sample_rate / 1000))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))


@dataclass(frozen=True)
class NormStats:
    """Global mean/std over every time-frequency cell of a corpus."""

    mean: float
    std: float

    def __post_init__(self):
        if self.std < SIGMA_FLOOR:
            raise ValueError(f"std below floor {SIGMA_FLOOR}")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(cfg: MelConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mels[1:-1])


@lru_cache(maxsize=16)
def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """(n_mels, fft_size//2 + 1) triangular weights on the rfft bin grid."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    edges = mel_to_hz(mels)
    bins = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / np.maximum(mid - lo, 1e-12)
    falling = (hi - bins) / np.maximum(hi - mid, 1e-12)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    bank.setflags(write=False)
    return bank


def _reflect_indices(n: int, lo: int, hi: int) -> np.ndarray:
    """Indices lo..hi-1 mapped into [0, n) by boundary reflection."""
    idx = np.arange(lo, hi)
    if n == 1:
        return np.zeros(idx.size, dtype=np.int64)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def log_mel(w: Waveform, cfg: MelConfig | None = None) -> np.ndarray:
    """Natural-log mel spectrogram, shape (ceil(n/hop), n_mels)."""
    cfg = cfg or MelConfig()
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"waveform rate {w.sample_rate} != config rate {cfg.sample_rate}")
    n = w.samples.size
    win, hop = cfg.window_samples, cfg.hop_samples
    if n < hop:
        raise ValueError(f"too short: {n} samples < one hop ({hop})")

    n_frames = -(-n // hop)
    pad = win // 2
    padded = w.samples[_reflect_indices(n, -pad, n + pad)]
    starts = np.arange(n_frames) * hop
    frames = padded[starts[:, None] + np.arange(win)[None, :]]
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win) / win)  # periodic Hann
    spec = np.fft.rfft(frames * window, n=cfg.fft_size, axis=1)
    power = spec.real**2 + spec.imag**2
    energies = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(energies, cfg.log_floor))


@dataclass
class Welford:
    """Streaming mean/variance accumulator over array cells, mergeable across shards."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64)
        n_b = x.size
        if n_b == 0:
            return
        mean_b = float(x.mean())
        m2_b = float(((x - mean_b) ** 2).sum())
        self._combine(n_b, mean_b, m2_b)

    def merge(self, other: "Welford") -> None:
        self._combine(other.count, other.mean, other.m2)

    def _combine(self, n_b: int, mean_b: float, m2_b: float) -> None:
        if n_b == 0:
            return
        n_a = self.count
        delta = mean_b - self.mean
        total = n_a + n_b
        self.mean += delta * n_b / total
        self.m2 += m2_b + delta * delta * n_a * n_b / total
        self.count = total

    def stats(self) -> NormStats:
        if self.count == 0:
            raise ValueError("no cells accumulated")
        return NormStats(self.mean, max(np.sqrt(self.m2 / self.count), SIGMA_FLOOR))


def compute_norm_stats(corpus: Iterable[np.ndarray]) -> NormStats:
    """Single-pass global mean and population std over all cells of a corpus."""
    acc = Welford()
    for spec in corpus:
        acc.add(spec)
    return acc.stats()


def apply_norm(x: np.ndarray, s: NormStats) -> np.ndarray:
    return (x - s.mean) / s.std


def save_norm_stats(path, s: NormStats) -> None:
    """16-byte record (two little-endian f64) behind a 4-byte magic."""
    with open(path, "wb") as f:
        f.write(_NST_MAGIC + struct.pack("<dd", s.mean, s.std))


def load_norm_stats(path) -> NormStats:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) != 20 or blob[:4] != _NST_MAGIC:
        raise ValueError(f"{path}: not a NST1 stats file")
    mean, std = struct.unpack("<dd", blob[4:])
    return NormStats(mean, std)
