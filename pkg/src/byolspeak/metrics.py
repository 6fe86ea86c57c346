"""Objective speaker-similarity metrics.

Two families: embedding-space scores (cosine distance between per-speaker
centroids, reduced to a median across speakers) and signal-space scores
(mel-cepstral distortion along a dynamic-time-warping alignment).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio_io import load_wav
from .embed import embed_utterance
from .features import NormStats
from .trainer import Checkpoint


def cosine_distance(u1, u2) -> float:
    """1 - cosine similarity; 0 parallel, 1 orthogonal, 2 antiparallel."""
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    n1, n2 = np.linalg.norm(u1), np.linalg.norm(u2)
    if n1 < 1e-12 or n2 < 1e-12:
        raise ValueError("zero vector has no direction")
    return float(1.0 - (u1 / n1) @ (u2 / n2))


def speaker_centroid(embeddings) -> np.ndarray:
    embeddings = [np.asarray(e, dtype=np.float64) for e in embeddings]
    if not embeddings:
        raise ValueError("no embeddings to average")
    return np.mean(embeddings, axis=0)


def load_manifest(path) -> dict[str, list[str]]:
    """speaker_id<TAB>path lines -> ordered mapping speaker -> utterance paths."""
    manifest: dict[str, list[str]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'speaker<TAB>path', got {line!r}")
        speaker, utt = parts
        bucket = manifest.setdefault(speaker, [])
        if utt in bucket:
            raise ValueError(f"{path}:{lineno}: duplicate path for speaker {speaker}")
        bucket.append(utt)
    if not manifest:
        raise ValueError(f"{path}: empty manifest")
    return manifest


def s2t_same(
    probe: dict[str, list[str]],
    reference: dict[str, list[str]],
    ck: Checkpoint,
    stats: NormStats,
) -> tuple[float, dict[str, float]]:
    """Median over speakers of the probe-vs-reference centroid cosine distance.

    Probe and reference must cover the same speakers; each speaker's score is
    the distance between the mean embedding of their probe utterances and the
    mean embedding of their reference utterances.
    """
    if set(probe) != set(reference):
        raise ValueError(
            f"speaker sets differ: {sorted(set(probe) ^ set(reference))}"
        )
    per_speaker: dict[str, float] = {}
    for speaker in sorted(probe):
        if not probe[speaker] or not reference[speaker]:
            raise ValueError(f"speaker {speaker} has an empty utterance list")
        v_probe = speaker_centroid([embed_utterance(load_wav(p), ck, stats) for p in probe[speaker]])
        v_ref = speaker_centroid([embed_utterance(load_wav(p), ck, stats) for p in reference[speaker]])
        per_speaker[speaker] = cosine_distance(v_probe, v_ref)
    return float(np.median(list(per_speaker.values()))), per_speaker


def pairwise_speaker_distances(
    embeddings_by_speaker: dict[str, list[np.ndarray]],
) -> tuple[list[float], list[float]]:
    """All within-speaker and between-speaker cosine distances."""
    import itertools

    within, between = [], []
    for embs in embeddings_by_speaker.values():
        for a, b in itertools.combinations(embs, 2):
            within.append(cosine_distance(a, b))
    for s1, s2 in itertools.combinations(sorted(embeddings_by_speaker), 2):
        for a in embeddings_by_speaker[s1]:
            for b in embeddings_by_speaker[s2]:
                between.append(cosine_distance(a, b))
    return within, between


def cepstra(x: np.ndarray, n_coeffs: int = 13) -> np.ndarray:
    """Mel cepstra via orthonormal DCT-II per frame, coefficients 1..n_coeffs.

    The 0th (energy) coefficient is dropped.
    """
    n_frames, n_bins = x.shape
    if not 1 <= n_coeffs < n_bins:
        raise ValueError(f"need 1 <= n_coeffs < {n_bins}")
    k = np.arange(n_bins)[:, None]
    n = np.arange(n_bins)[None, :]
    basis = np.cos(np.pi * (2 * n + 1) * k / (2 * n_bins)) * np.sqrt(2.0 / n_bins)
    basis[0] /= np.sqrt(2.0)
    coeffs = x @ basis.T
    return coeffs[:, 1 : n_coeffs + 1]


def dct_full(x: np.ndarray) -> np.ndarray:
    """All orthonormal DCT-II coefficients (used by energy-conservation checks)."""
    n_bins = x.shape[1]
    k = np.arange(n_bins)[:, None]
    n = np.arange(n_bins)[None, :]
    basis = np.cos(np.pi * (2 * n + 1) * k / (2 * n_bins)) * np.sqrt(2.0 / n_bins)
    basis[0] /= np.sqrt(2.0)
    return x @ basis.T


def dtw_align(a: np.ndarray, b: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """Minimal-cost monotone alignment with steps (1,0), (0,1), (1,1).

    Local cost is the Euclidean distance between frames; ties prefer the
    diagonal step. Returns the path from (0,0) to (Ta-1, Tb-1) and its cost.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    ta, tb = a.shape[0], b.shape[0]
    if ta == 0 or tb == 0:
        raise ValueError("empty sequence")
    diff = a[:, None, :] - b[None, :, :]
    local = np.sqrt((diff * diff).sum(axis=2))

    # accumulate on python lists: for the short sequences this metric sees,
    # row-wise numpy churn costs more than it saves
    cost = local.tolist()
    move = [[0] * tb for _ in range(ta)]  # 0 diag, 1 up (i-1), 2 left (j-1)
    acc_prev = cost[0]
    for j in range(1, tb):
        acc_prev[j] += acc_prev[j - 1]
        move[0][j] = 2
    for i in range(1, ta):
        acc = cost[i]
        move_i = move[i]
        acc[0] += acc_prev[0]
        move_i[0] = 1
        left = acc[0]
        for j in range(1, tb):
            diag, up = acc_prev[j - 1], acc_prev[j]
            if diag <= up and diag <= left:
                best, m = diag, 0
            elif up <= left:
                best, m = up, 1
            else:
                best, m = left, 2
            left = acc[j] = acc[j] + best
            move_i[j] = m
        acc_prev = acc
    i, j = ta - 1, tb - 1
    path = [(i, j)]
    while (i, j) != (0, 0):
        m = move[i][j]
        if m == 0:
            i, j = i - 1, j - 1
        elif m == 1:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    path.reverse()
    return path, float(cost[ta - 1][tb - 1])


MCD_CONST = 10.0 / np.log(10.0)


def mcd(a: np.ndarray, b: np.ndarray) -> float:
    """Mel-cepstral distortion in dB: (10/ln10) * mean over the DTW path of
    sqrt(2 * sum of squared coefficient differences)."""
    path, _ = dtw_align(a, b)
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    ai = np.array([p[0] for p in path])
    bi = np.array([p[1] for p in path])
    d = a[ai] - b[bi]
    return float(MCD_CONST * np.mean(np.sqrt(2.0 * (d * d).sum(axis=1))))
