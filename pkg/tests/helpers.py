"""Shared test utilities: tone synthesis and an independent spectral-peak oracle."""

import numpy as np

from byolspeak.audio_io import Waveform


def fourier_peak_hz(w: Waveform, pad_factor: int = 8) -> float:
    """Peak frequency via zero-padded DFT argmax; independent of the DSP under test."""
    n = int(2 ** np.ceil(np.log2(w.samples.size * pad_factor)))
    spec = np.abs(np.fft.rfft(w.samples * np.hanning(w.samples.size), n=n))
    return np.argmax(spec) * w.sample_rate / n


def tone(freq: float, seconds: float = 1.0, sr: int = 16000, amp: float = 0.5) -> Waveform:
    t = np.arange(int(round(seconds * sr))) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


def enumerate_monotone_paths(ta: int, tb: int) -> list[list[tuple[int, int]]]:
    """Every monotone path from (0,0) to (ta-1,tb-1) with steps (1,0),(0,1),(1,1).

    Pure enumeration; shares no logic with the dynamic program it checks.
    """
    paths = []

    def walk(i, j, acc):
        acc = acc + [(i, j)]
        if i == ta - 1 and j == tb - 1:
            paths.append(acc)
            return
        if i + 1 < ta and j + 1 < tb:
            walk(i + 1, j + 1, acc)
        if i + 1 < ta:
            walk(i + 1, j, acc)
        if j + 1 < tb:
            walk(i, j + 1, acc)

    walk(0, 0, [])
    return paths


def brute_force_dtw_cost(a: np.ndarray, b: np.ndarray) -> float:
    """Min path cost by exhaustive enumeration (Euclidean frame distance)."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    local = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    best = np.inf
    for path in enumerate_monotone_paths(a.shape[0], b.shape[0]):
        cost = sum(local[i, j] for i, j in path)
        best = min(best, cost)
    return best


class ScriptedRng:
    """Replays a fixed script of draws; fails loudly when the script runs dry.

    Pins the documented draw order of composite augmentations in tests.
    """

    def __init__(self, script):
        self._script = list(script)
        self._real = np.random.default_rng(0)

    def _pop(self, kind):
        if not self._script:
            raise AssertionError(f"rng script exhausted at {kind} draw")
        k, v = self._script.pop(0)
        assert k == kind, f"expected {k} draw, implementation asked for {kind}"
        return v

    def random(self):
        return self._pop("random")

    def uniform(self, lo, hi):
        return self._pop("uniform")

    def integers(self, *args):
        return self._pop("integers")

    def normal(self, loc, scale, size=None):
        val = self._pop("normal")
        if val is None:
            return self._real.normal(loc, scale, size)
        return val
