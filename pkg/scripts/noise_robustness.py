"""Noise-robustness study: does noise augmentation reduce the degradation of
the same-speaker score when probes are corrupted at SNR 5?

Trains paired models (p_noise = 0 vs 0.5) per seed on one synthetic corpus,
evaluates split-half s2t-same with clean and noise-corrupted probes, and
reports the noisy-minus-clean degradation for both.

    python scripts/noise_robustness.py --out /tmp/noise_study --seeds 1 2 3
"""

import argparse
import time
from pathlib import Path

from byolspeak.audio_io import load_wav
from byolspeak.augment import AugmentationPolicy
from byolspeak.corpus import build_corpus, build_noise_corpus, corrupt_with_noise, default_speaker_specs
from byolspeak.features import MelConfig, compute_norm_stats, log_mel
from byolspeak.metrics import s2t_same
from byolspeak.trainer import TrainConfig, fit


def run_study(out, seeds, steps=400, batch=8, speakers=4, utts=12, held_out=4, snr_db=5.0):
    out = Path(out)
    mel = MelConfig()
    results = []
    for seed in seeds:
        specs = default_speaker_specs(speakers, seed=seed)
        train_man = build_corpus(specs, utts, out / f"s{seed}" / "train")
        held_man = build_corpus(specs, held_out, out / f"s{seed}" / "held", utterance_seed_offset=1000)
        train_noise = build_noise_corpus(out / f"s{seed}" / "noise_train", n_files=4, seed=seed * 7 + 1)
        eval_noise = build_noise_corpus(out / f"s{seed}" / "noise_eval", n_files=4, seed=seed * 7 + 500)

        paths = [p for u in train_man.values() for p in u]
        stats = compute_norm_stats(log_mel(load_wav(p), mel) for p in paths)
        noise_bank = [load_wav(p) for p in train_noise]

        half = held_out // 2
        ref = {s: ps[half:] for s, ps in held_man.items()}
        probe_clean = {s: ps[:half] for s, ps in held_man.items()}
        probe_noisy = corrupt_with_noise(
            probe_clean, eval_noise, snr_db, out / f"s{seed}" / "held_noisy", seed=seed + 31
        )

        row = {"seed": seed}
        for label, p_noise in (("plain", 0.0), ("noise_aug", 0.5)):
            policy = AugmentationPolicy(p_noise=p_noise)
            cfg = TrainConfig(batch_size=batch, steps=steps, seed=seed)
            ck, _ = fit(paths, cfg, policy=policy, mel_cfg=mel, stats=stats,
                        noise_bank=noise_bank if p_noise > 0 else None)
            clean, _ = s2t_same(probe_clean, ref, ck, stats)
            noisy, _ = s2t_same(probe_noisy, ref, ck, stats)
            row[label] = {"clean": clean, "noisy": noisy, "degradation": noisy - clean}
        results.append(row)
    return results


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--batch", type=int, default=8)
    args = ap.parse_args()

    t0 = time.time()
    results = run_study(args.out, args.seeds, steps=args.steps, batch=args.batch)
    wins = 0
    for row in results:
        plain, aug = row["plain"], row["noise_aug"]
        better = aug["degradation"] <= plain["degradation"]
        wins += better
        print(
            f"seed {row['seed']}: plain clean {plain['clean']:.4f} noisy {plain['noisy']:.4f} "
            f"(deg {plain['degradation']:+.4f}) | noise-aug clean {aug['clean']:.4f} "
            f"noisy {aug['noisy']:.4f} (deg {aug['degradation']:+.4f}) "
            f"{'<- aug degrades less' if better else ''}"
        )
    print(f"noise augmentation won on {wins}/{len(results)} seeds; {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
