"""Deterministic synthetic speakers for desk-scale experiments.

A speaker is a fundamental-frequency range plus a set of resonant peaks.
Utterances are harmonic stacks with slow pitch wobble, shaped by the
resonance envelope, so speaker identity lives in exactly the attributes the
augmentations perturb or preserve.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import Waveform, save_wav

RESONANCE_GAIN = 0.8
RESONANCE_BW_HZ = 150.0


@dataclass(frozen=True)
class SyntheticSpeakerSpec:
    f0_range: tuple[float, float]
    formant_centers: tuple[float, ...]
    jitter: float = 0.01
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.f0_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad f0 range {self.f0_range}")


def _resonance_envelope(freqs: np.ndarray, centers) -> np.ndarray:
    env = np.ones_like(freqs)
    for c in centers:
        env += RESONANCE_GAIN / (1.0 + ((freqs - c) / RESONANCE_BW_HZ) ** 2)
    return env


def synth_utterance(
    spec: SyntheticSpeakerSpec,
    duration_s: float,
    rng: np.random.Generator,
    sample_rate: int = 16000,
) -> Waveform:
    """One utterance: jittered harmonic stack through the speaker's resonances.

    The 1/k harmonic rolloff dominates the bounded resonance gain, so the
    spectral peak stays at the fundamental. Peak amplitude is normalized
    to 0.5.
    """
    if duration_s < 1.2:
        raise ValueError("utterances must be at least 1.2 s so augmented views still fit a segment")
    n = int(round(duration_s * sample_rate))
    f0 = rng.uniform(*spec.f0_range)

    # slow multiplicative wobble: control points at ~8 Hz, linearly interpolated
    n_ctrl = max(2, int(duration_s * 8))
    ctrl = rng.standard_normal(n_ctrl)
    wobble = np.interp(np.arange(n), np.linspace(0, n - 1, n_ctrl), ctrl)
    inst_f0 = f0 * (1.0 + spec.jitter * wobble)
    phase = 2.0 * np.pi * np.cumsum(inst_f0) / sample_rate

    nyquist_margin = 0.45 * sample_rate
    n_harm = max(1, int(nyquist_margin / (f0 * (1.0 + abs(spec.jitter) * 3))))
    harm_freqs = f0 * np.arange(1, n_harm + 1)
    amps = _resonance_envelope(harm_freqs, spec.formant_centers) / np.arange(1, n_harm + 1)
    out = np.zeros(n)
    for k, amp in enumerate(amps, start=1):
        out += amp * np.sin(k * phase)
    out *= 0.5 / np.max(np.abs(out))
    return Waveform(out, sample_rate)


def default_speaker_specs(n_speakers: int, seed: int = 0) -> list[SyntheticSpeakerSpec]:
    """Well-separated speakers: f0 ranges spaced by ~4 semitones, rotating formants."""
    specs = []
    formant_menu = [(500.0, 1500.0), (700.0, 1800.0), (450.0, 2200.0), (900.0, 2600.0), (600.0, 1200.0)]
    f0 = 100.0
    for i in range(n_speakers):
        specs.append(
            SyntheticSpeakerSpec(
                f0_range=(f0, f0 * 1.05),
                formant_centers=formant_menu[i % len(formant_menu)],
                jitter=0.01,
                seed=seed * 1000 + i,
            )
        )
        f0 *= 2 ** (4 / 12)  # four semitones up per speaker
    return specs


def build_corpus(
    specs: list[SyntheticSpeakerSpec],
    utterances_per_speaker: int,
    out_dir,
    duration_s: float = 2.0,
    utterance_seed_offset: int = 0,
) -> dict[str, list[str]]:
    """Write WAV files plus manifest.tsv; returns speaker -> paths.

    Fully seeded: regenerating with the same specs produces byte-identical
    files. utterance_seed_offset shifts the per-utterance seed stream, for
    carving out held-out sets that never collide with training utterances.
    """
    if utterances_per_speaker < 1:
        raise ValueError("need at least one utterance per speaker")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, list[str]] = {}
    lines = []
    for s_idx, spec in enumerate(specs):
        speaker = f"spk{s_idx:02d}"
        paths = []
        for u_idx in range(utterances_per_speaker):
            rng = np.random.default_rng([spec.seed, utterance_seed_offset + u_idx])
            w = synth_utterance(spec, duration_s, rng)
            path = out_dir / f"{speaker}_{utterance_seed_offset + u_idx:03d}.wav"
            save_wav(path, w)
            paths.append(str(path))
            lines.append(f"{speaker}\t{path}")
        manifest[speaker] = paths
    (out_dir / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def corrupt_with_noise(
    manifest: dict[str, list[str]],
    noise_paths: list[str],
    snr_db: float,
    out_dir,
    seed: int = 0,
) -> dict[str, list[str]]:
    """Noisy copies of every manifest utterance at a fixed SNR; seeded draws."""
    from .audio_io import load_wav
    from .augment import mix_noise_at_snr

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    noises = [load_wav(p) for p in noise_paths]
    corrupted: dict[str, list[str]] = {}
    rng = np.random.default_rng(seed)
    for speaker in sorted(manifest):
        out_paths = []
        for path in manifest[speaker]:
            w = load_wav(path)
            noise = noises[int(rng.integers(len(noises)))]
            noisy = mix_noise_at_snr(w, noise, snr_db, rng)
            out = out_dir / Path(path).name
            save_wav(out, noisy)
            out_paths.append(str(out))
        corrupted[speaker] = out_paths
    return corrupted


def build_noise_corpus(out_dir, n_files: int = 4, seed: int = 0, duration_s: float = 2.0) -> list[str]:
    """Colored-noise WAVs standing in for recorded background noise."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    sr = 16000
    n = int(duration_s * sr)
    for i in range(n_files):
        rng = np.random.default_rng([seed, i])
        white = rng.standard_normal(n)
        # spectral tilt varies per file: 1/(1 + f/knee)^slope
        knee = 200.0 + 800.0 * rng.random()
        slope = 0.5 + rng.random()
        freqs = np.fft.rfftfreq(n, 1.0 / sr)
        shaped = np.fft.rfft(white) / (1.0 + freqs / knee) ** slope
        colored = np.fft.irfft(shaped, n)
        colored *= 0.3 / np.max(np.abs(colored))
        path = out_dir / f"noise_{i:02d}.wav"
        save_wav(path, Waveform(colored, sr))
        paths.append(str(path))
    return paths
