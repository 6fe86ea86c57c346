"""The augmentation family that produces paired training views.

Waveform-domain transforms (pitch shift, duration scaling, additive noise at
a target SNR) run first; spectrogram-domain transforms (mixup against a bank
of past inputs, random resize crop, Gaussian interpolation noise) run on the
normalized log-mel segment. Every transform draws from a caller-supplied
seeded generator and nothing else, so a replayed seed replays outputs
bit-exactly.

Log-domain mixing uses the exp/log path throughout: features are mapped to
linear energies, interpolated there, and mapped back.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .audio_io import Waveform, resample
from .features import MelConfig, NormStats, apply_norm, log_mel

SIGMA_FLOOR = 1e-5


@dataclass(frozen=True)
class AugmentationPolicy:
    """Hyperparameters and per-view application probabilities for all augmentations."""

    mixup_alpha: float = 0.4
    mixup_bank_size: int = 256
    rrc_freq_range: tuple[float, float] = (0.6, 1.5)
    rrc_time_range: tuple[float, float] = (0.6, 1.5)
    gaussian_std: float = 0.2
    gaussian_alpha: float = 0.4
    pitch_semitones: tuple[float, ...] = (-1.0, 1.0)
    stretch_factors: tuple[float, ...] = (0.95, 1.05)
    snr_db_choices: tuple[float, ...] = (5.0, 10.0, 25.0)
    p_prosodic: float = 0.5
    p_noise: float = 0.5
    p_gaussian: float = 0.5
    enable_mixup: bool = True
    enable_rrc: bool = True
    enable_prosodic: bool = True
    enable_noise: bool = True
    enable_gaussian: bool = True

    def __post_init__(self):
        for name in ("p_prosodic", "p_noise", "p_gaussian"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        for name in ("rrc_freq_range", "rrc_time_range"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got {(lo, hi)}")
        if self.mixup_alpha < 0 or self.gaussian_alpha < 0:
            raise ValueError("mixing ratios must be non-negative")
        if self.mixup_bank_size < 1:
            raise ValueError("mixup_bank_size must be >= 1")


class MixupBank:
    """Bounded FIFO of past inputs in the linear-energy domain, oldest evicted first.

    Shared across a whole training run so mixing partners span speakers.
    Not thread-safe: concurrent view builders must serialize sample/push.
    """

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._entries: deque[np.ndarray] = deque(maxlen=capacity)

    def push(self, linear_frames: np.ndarray) -> None:
        self._entries.append(linear_frames)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if not self._entries:
            raise IndexError("bank is empty")
        return self._entries[int(rng.integers(len(self._entries)))]

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def capacity(self) -> int:
        return self._entries.maxlen

    def snapshot(self) -> list[np.ndarray]:
        return list(self._entries)


def mixup(x: np.ndarray, bank: MixupBank, rng: np.random.Generator, alpha: float = 0.4) -> np.ndarray:
    """Interpolate x with a random past input in the linear domain.

    output = log((1 - lam) * exp(x) + lam * q), lam ~ U(0, alpha). The linear
    form of x is pushed into the bank after mixing; with an empty bank the
    input passes through untouched.
    """
    p = np.exp(x)
    if len(bank):
        q = bank.sample(rng)
        lam = rng.uniform(0.0, alpha)
        out = np.log((1.0 - lam) * p + lam * q)
    else:
        out = x.copy()
    bank.push(p)
    return out


@dataclass(frozen=True)
class CropSpec:
    """A sampled crop rectangle; t_offset may be negative (zero-filled canvas)."""

    t_count: int
    f_count: int
    t_offset: int
    f_offset: int


def sample_crop(n_time: int, n_freq: int, policy: AugmentationPolicy, rng: np.random.Generator) -> CropSpec:
    """Draw the crop size and placement.

    The frequency extent is capped at the full axis (scale min'd with 1.0), so
    crops never leave the frequency range; the time extent may exceed the
    original, in which case the source is centered on a zero canvas.
    """
    h = rng.uniform(*policy.rrc_freq_range)
    w = rng.uniform(*policy.rrc_time_range)
    f_count = max(1, int(min(h, 1.0) * n_freq))
    t_count = max(1, int(w * n_time))
    f_offset = int(rng.integers(0, n_freq - f_count + 1))
    if t_count <= n_time:
        t_offset = int(rng.integers(0, n_time - t_count + 1))
    else:
        t_offset = -((t_count - n_time) // 2)
    return CropSpec(t_count=t_count, f_count=f_count, t_offset=t_offset, f_offset=f_offset)


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = img.shape

    def grid(src, dst):
        if dst == 1:
            return np.zeros(1)
        return np.arange(dst) * ((src - 1) / (dst - 1))  # corner-aligned

    gy, gx = grid(in_h, out_h), grid(in_w, out_w)
    y0 = np.minimum(gy.astype(np.int64), in_h - 1)
    x0 = np.minimum(gx.astype(np.int64), in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (gy - y0)[:, None]
    wx = gx - x0
    top = img[y0][:, x0] * (1.0 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1.0 - wx) + img[y1][:, x1] * wx
    return top * (1.0 - wy) + bot * wy


def apply_crop_resize(x: np.ndarray, crop: CropSpec) -> np.ndarray:
    """Extract the crop (zero fill outside the time range) and resize back."""
    n_time, n_freq = x.shape
    ti = np.arange(crop.t_offset, crop.t_offset + crop.t_count)
    inside = (ti >= 0) & (ti < n_time)
    patch = np.zeros((crop.t_count, crop.f_count), dtype=np.float64)
    patch[inside] = x[ti[inside], crop.f_offset : crop.f_offset + crop.f_count]
    return _bilinear_resize(patch, n_time, n_freq)


def random_resize_crop(x: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    crop = sample_crop(x.shape[0], x.shape[1], policy, rng)
    return apply_crop_resize(x, crop)


def gaussian_mix(x: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    """Interpolate toward a Gaussian noise field through the linear domain."""
    lam = rng.uniform(0.0, policy.gaussian_alpha)
    noise = rng.normal(0.0, policy.gaussian_std, x.shape)
    return np.log((1.0 - lam) * np.exp(x) + lam * np.exp(noise))


def time_stretch(w: Waveform, factor: float) -> Waveform:
    """Change duration by `factor` without changing pitch (WSOLA overlap-add).

    Output length is exactly round(factor * len). Window 512, synthesis hop
    256, alignment search radius 128 samples.
    """
    if not 0.5 <= factor <= 2.0:
        raise ValueError(f"stretch factor {factor} outside [0.5, 2.0]")
    x = w.samples
    n_in = x.size
    n_out = int(round(factor * n_in))
    if factor == 1.0:
        return Waveform(x.copy(), w.sample_rate)
    if n_out == 0 or n_in == 0:
        return Waveform(np.zeros(0), w.sample_rate)

    win_len, hop, radius = 512, 256, 128
    if n_in < win_len + 2 * radius + 2:
        # too short for overlap-add frames; positional resample is close enough
        pos = np.arange(n_out) * ((n_in - 1) / max(n_out - 1, 1))
        return Waveform(np.interp(pos, np.arange(n_in), x), w.sample_rate)

    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win_len) / win_len)
    out = np.zeros(n_out + win_len)
    norm = np.zeros(n_out + win_len)
    max_start = n_in - win_len
    prev = None
    for m in range(n_out // hop + 1):
        ideal = int(round(m * hop / factor))
        if prev is None:
            start = min(max(ideal, 0), max_start)
        else:
            natural = x[min(prev + hop, max_start) : min(prev + hop, max_start) + win_len]
            lo = min(max(ideal - radius, 0), max_start)
            hi = min(ideal + radius, max_start)
            if hi <= lo:
                start = lo
            else:
                scores = np.correlate(x[lo : hi + win_len], natural, mode="valid")
                start = lo + int(np.argmax(scores))
        seg = x[start : start + win_len] * window
        out[m * hop : m * hop + win_len] += seg
        norm[m * hop : m * hop + win_len] += window
        prev = start
    return Waveform(out[:n_out] / np.maximum(norm[:n_out], 1e-3), w.sample_rate)


def pitch_shift(w: Waveform, semitones: float) -> Waveform:
    """Scale all frequencies by 2^(semitones/12), keeping duration fixed.

    Resamples by the reciprocal ratio (reinterpreted at the original rate),
    then stretches the duration back with WSOLA.
    """
    if abs(semitones) > 12:
        raise ValueError(f"|semitones| must be <= 12, got {semitones}")
    if semitones == 0 or w.samples.size == 0:
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = 2.0 ** (semitones / 12.0)
    # snap the intermediate rate to a multiple of 80: bounds the polyphase
    # order while keeping the frequency error under 0.3%
    inter_rate = max(80, int(round(w.sample_rate / ratio / 80.0)) * 80)
    sped = resample(w, inter_rate)
    sped = Waveform(sped.samples, w.sample_rate)  # reinterpret: pitch now scaled
    factor = w.samples.size / sped.samples.size
    out = time_stretch(sped, factor)
    assert out.samples.size == w.samples.size
    return out


def mix_noise_at_snr(w: Waveform, noise: Waveform, snr_db: float, rng: np.random.Generator) -> Waveform:
    """Add a random contiguous noise slice scaled to the requested SNR.

    Noise shorter than the signal is tiled before the slice is drawn. The
    achieved power ratio equals the request up to float rounding.
    """
    if noise.sample_rate != w.sample_rate:
        raise ValueError(f"rate mismatch: {w.sample_rate} vs {noise.sample_rate}")
    n = w.samples.size
    if n == 0 or noise.samples.size == 0:
        raise ValueError("degenerate power: empty signal or noise")
    ns = noise.samples
    if ns.size < n:
        ns = np.tile(ns, -(-n // ns.size) + 1)
    offset = int(rng.integers(0, ns.size - n + 1))
    piece = ns[offset : offset + n]
    p_signal = float(np.mean(w.samples**2))
    p_noise = float(np.mean(piece**2))
    if p_signal <= 0.0 or p_noise <= 0.0:
        raise ValueError("degenerate power: all-zero signal or noise slice")
    gain = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(w.samples + gain * piece, w.sample_rate)


def post_normalize(batch: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Standardize a batch with one mean/std over every cell of every member."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    cells = np.concatenate([np.ravel(b) for b in batch])
    mu = float(cells.mean())
    sigma = max(float(cells.std()), SIGMA_FLOOR)
    return [(b - mu) / sigma for b in batch]


@dataclass(frozen=True)
class ViewPair:
    """Two augmented views of one utterance, identically shaped."""

    u: np.ndarray
    u_prime: np.ndarray


def _augment_waveform(
    w: Waveform,
    policy: AugmentationPolicy,
    rng: np.random.Generator,
    noise_bank: Sequence[Waveform] | None,
) -> tuple[Waveform, float]:
    """Waveform-domain stage for one view; returns the applied stretch factor."""
    stretch = 1.0
    if policy.enable_prosodic and rng.random() < policy.p_prosodic:
        semi = policy.pitch_semitones[int(rng.integers(len(policy.pitch_semitones)))]
        factor = policy.stretch_factors[int(rng.integers(len(policy.stretch_factors)))]
        w = pitch_shift(w, semi)
        w = time_stretch(w, factor)
        stretch = factor
    if policy.enable_noise and rng.random() < policy.p_noise:
        if not noise_bank:
            raise ValueError("noise augmentation is enabled but no noise waveforms were provided")
        noise = noise_bank[int(rng.integers(len(noise_bank)))]
        snr = policy.snr_db_choices[int(rng.integers(len(policy.snr_db_choices)))]
        w = mix_noise_at_snr(w, noise, snr, rng)
    return w, stretch


def make_view_pair(
    w: Waveform,
    stats: NormStats,
    policy: AugmentationPolicy,
    bank: MixupBank,
    rng: np.random.Generator,
    mel_cfg: MelConfig | None = None,
    noise_bank: Sequence[Waveform] | None = None,
    segment_frames: int = 100,
) -> ViewPair:
    """Build one (u, u') training pair from a raw utterance.

    Per view: prosodic augmentation, noise mixing, log-mel, dataset
    normalization, segment extraction, mixup, random resize crop, Gaussian
    noise. The segment start is drawn once per pair in un-stretched sample
    time and mapped through each view's stretch factor, so both views cover
    the same region of the waveform. Batch-level post-normalization is the
    trainer's job.

    Draw order (fixed; replaying a seed replays the pair): view A waveform
    stage, view B waveform stage, shared segment start, view A spectrogram
    stage, view B spectrogram stage.
    """
    cfg = mel_cfg or MelConfig()
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"utterance rate {w.sample_rate} != config rate {cfg.sample_rate}")

    views = [_augment_waveform(w, policy, rng, noise_bank) for _ in range(2)]
    specs = [apply_norm(log_mel(wv, cfg), stats) for wv, _ in views]

    hop = cfg.hop_samples
    start_cap = min(
        (spec.shape[0] - segment_frames) * hop / stretch
        for spec, (_, stretch) in zip(specs, views)
    )
    if start_cap < 0:
        raise ValueError("utterance shorter than one segment")
    start = int(rng.integers(0, int(start_cap) + 1))

    out = []
    for spec, (_, stretch) in zip(specs, views):
        first = int(round(stretch * start / hop))
        first = min(first, spec.shape[0] - segment_frames)
        seg = spec[first : first + segment_frames]
        if policy.enable_mixup:
            seg = mixup(seg, bank, rng, policy.mixup_alpha)
        if policy.enable_rrc:
            seg = random_resize_crop(seg, policy, rng)
        if policy.enable_gaussian and rng.random() < policy.p_gaussian:
            seg = gaussian_mix(seg, policy, rng)
        out.append(seg)
    return ViewPair(u=out[0], u_prime=out[1])
