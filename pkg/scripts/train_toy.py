"""End-to-end desk-scale run: synthetic corpus -> stats -> training -> speaker
separation report. Everything is seeded; rerunning reproduces the numbers.

    python scripts/train_toy.py --out /tmp/toy --steps 2000 --seed 1
"""

import argparse
import itertools
import time
from pathlib import Path

import numpy as np

from byolspeak.audio_io import load_wav
from byolspeak.augment import AugmentationPolicy
from byolspeak.corpus import build_corpus, build_noise_corpus, default_speaker_specs
from byolspeak.embed import embed_utterance
from byolspeak.features import MelConfig, compute_norm_stats, log_mel
from byolspeak.metrics import cosine_distance, pairwise_speaker_distances, s2t_same, speaker_centroid
from byolspeak.trainer import TrainConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--speakers", type=int, default=4)
    ap.add_argument("--utts", type=int, default=20)
    ap.add_argument("--held-out", type=int, default=4)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    t0 = time.time()
    out = Path(args.out)
    specs = default_speaker_specs(args.speakers, seed=args.seed)
    train_man = build_corpus(specs, args.utts, out / "train")
    held_man = build_corpus(specs, args.held_out, out / "held", utterance_seed_offset=1000)
    noise_paths = build_noise_corpus(out / "noise", n_files=4, seed=args.seed + 1)

    mel = MelConfig()
    paths = [p for utts in train_man.values() for p in utts]
    stats = compute_norm_stats(log_mel(load_wav(p), mel) for p in paths)
    noise_bank = [load_wav(p) for p in noise_paths]

    cfg = TrainConfig(batch_size=args.batch, steps=args.steps, lr=args.lr,
                      seed=args.seed, checkpoint_every=max(args.steps // 4, 1))
    with open(out / "train.log", "w") as log:
        ck, reports = fit(paths, cfg, policy=AugmentationPolicy(), mel_cfg=mel,
                          stats=stats, noise_bank=noise_bank, out_dir=out / "ckpt",
                          log_stream=log)

    n = min(100, len(reports) // 2)
    print(f"loss: first-{n} mean {np.mean([r.loss_total for r in reports[:n]]):.4f}  "
          f"last-{n} mean {np.mean([r.loss_total for r in reports[-n:]]):.4f}")
    print(f"embedding-std min {min(r.embedding_std for r in reports):.5f}")

    embs = {s: [embed_utterance(load_wav(p), ck, stats) for p in ps] for s, ps in held_man.items()}
    within, between = pairwise_speaker_distances(embs)
    print(f"held-out cosine distance: within {np.mean(within):.4f}  between {np.mean(between):.4f}")

    half = args.held_out // 2
    probe = {s: ps[:half] for s, ps in held_man.items()}
    ref = {s: ps[half:] for s, ps in held_man.items()}
    median, per = s2t_same(probe, ref, ck, stats)
    cents = {s: speaker_centroid(es) for s, es in embs.items()}
    cross = [cosine_distance(cents[a], cents[b]) for a, b in itertools.combinations(sorted(cents), 2)]
    print(f"split-half s2t-same median {median:.4f}  cross-speaker centroid median {np.median(cross):.4f}")
    print(f"done in {time.time() - t0:.0f}s; checkpoint at {out / 'ckpt' / 'final.ckpt'}")


if __name__ == "__main__":
    main()
