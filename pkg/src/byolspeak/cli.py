"""Operator entry point.

Subcommands: synth-corpus, featstats, train, embed, eval-s2t, eval-mcd,
augment. Exit codes: 0 success, 1 usage error, 2 data error. Every command
derives all randomness from explicit seeds; outputs carry no timestamps, so
identical invocations produce identical files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .audio_io import WavError, Waveform, load_wav, resample, save_wav
from .augment import mix_noise_at_snr, pitch_shift, time_stretch
from .config import parse_run_config
from .corpus import build_corpus, default_speaker_specs
from .embed import embed_utterance, write_embeddings_binary, write_embeddings_text
from .features import MelConfig, Welford, load_norm_stats, log_mel, save_norm_stats
from .metrics import cepstra, load_manifest, mcd, s2t_same
from .trainer import CheckpointError, fit, load_checkpoint


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="byolspeak", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="generate a deterministic synthetic speaker corpus")
    p.add_argument("--speakers", type=int, required=True)
    p.add_argument("--utts", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--duration", type=float, default=2.0)

    p = sub.add_parser("featstats", help="compute corpus log-mel normalization statistics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run self-supervised training from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("embed", help="embed utterances with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--stats", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--wav")
    group.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("bin", "txt"), default="txt")

    p = sub.add_parser("eval-s2t", help="median same-speaker centroid cosine distance")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--machine", action="store_true", help="line-oriented output")

    p = sub.add_parser("eval-mcd", help="mel cepstral distortion between two audio files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--coeffs", type=int, default=13)

    p = sub.add_parser("augment", help="apply the waveform-domain augmentation chain")
    p.add_argument("--wav", required=True)
    p.add_argument("--pitch", type=float, default=None)
    p.add_argument("--stretch", type=float, default=None)
    p.add_argument("--noise", default=None)
    p.add_argument("--snr", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    return parser


def _load_at_16k(path, cfg: MelConfig) -> Waveform:
    w = load_wav(path)
    if w.sample_rate != cfg.sample_rate:
        w = resample(w, cfg.sample_rate)
    return w


def _cmd_synth_corpus(args) -> int:
    specs = default_speaker_specs(args.speakers, seed=args.seed)
    manifest = build_corpus(specs, args.utts, args.out, duration_s=args.duration)
    total = sum(len(v) for v in manifest.values())
    print(f"wrote {total} utterances for {len(manifest)} speakers under {args.out}")
    print(f"manifest {Path(args.out) / 'manifest.tsv'}")
    return 0


def _cmd_featstats(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = MelConfig()
    acc = Welford()
    for paths in manifest.values():
        for path in paths:
            acc.add(log_mel(_load_at_16k(path, cfg), cfg))
    stats = acc.stats()
    save_norm_stats(args.out, stats)
    print(f"mean {stats.mean:.6f}")
    print(f"std {stats.std:.6f}")
    return 0


def _discover_wavs(root: Path) -> list[Path]:
    return sorted(p for p in root.rglob("*.wav") if p.is_file())


def _cmd_train(args) -> int:
    rc = parse_run_config(args.config, seed_override=args.seed)
    if rc.manifest is None:
        raise ValueError("config lacks paths.manifest")
    if rc.stats_path is None:
        raise ValueError("config lacks paths.stats (run featstats first)")
    if rc.checkpoint_dir is None:
        raise ValueError("config lacks paths.checkpoint_dir")
    manifest = load_manifest(rc.manifest)
    paths = [p for utts in manifest.values() for p in utts]
    stats = load_norm_stats(rc.stats_path)

    noise_bank = None
    if rc.policy.enable_noise and rc.policy.p_noise > 0:
        if rc.noise_dir is None:
            raise ValueError("noise augmentation enabled but config lacks paths.noise_dir")
        noise_paths = _discover_wavs(rc.noise_dir)
        if not noise_paths:
            raise ValueError(f"no WAV files under {rc.noise_dir}")
        noise_bank = [_load_at_16k(p, rc.mel) for p in noise_paths]

    rc.checkpoint_dir.mkdir(parents=True, exist_ok=True)
    with open(rc.checkpoint_dir / "train.log", "w", encoding="utf-8") as log:
        final, reports = fit(
            paths, rc.train, policy=rc.policy, mel_cfg=rc.mel, stats=stats,
            noise_bank=noise_bank, out_dir=rc.checkpoint_dir, log_stream=log,
        )
    print(f"trained {final.step} steps; final loss {reports[-1].loss_total:.6f}")
    print(f"checkpoint {rc.checkpoint_dir / 'final.ckpt'}")
    return 0


def _cmd_embed(args) -> int:
    ck = load_checkpoint(args.ckpt)
    stats = load_norm_stats(args.stats)
    if args.wav:
        named = [(args.wav, load_wav(args.wav))]
    else:
        manifest = load_manifest(args.manifest)
        named = [(p, load_wav(p)) for utts in manifest.values() for p in utts]
    embeddings = [(name, embed_utterance(w, ck, stats)) for name, w in named]
    if args.format == "bin":
        write_embeddings_binary(args.out, embeddings)
    else:
        write_embeddings_text(args.out, embeddings)
    print(f"embedded {len(embeddings)} utterance(s) -> {args.out}")
    return 0


def _cmd_eval_s2t(args) -> int:
    ck = load_checkpoint(args.ckpt)
    stats = load_norm_stats(args.stats)
    median, per_speaker = s2t_same(load_manifest(args.probe), load_manifest(args.ref), ck, stats)
    if args.machine:
        for speaker, value in per_speaker.items():
            print(f"s2t_same\t{speaker}\t{value:.6f}")
        print(f"s2t_same\tmedian\t{median:.6f}")
    else:
        width = max(len(s) for s in per_speaker)
        print(f"{'speaker'.ljust(width)}  s2t-same")
        for speaker, value in per_speaker.items():
            print(f"{speaker.ljust(width)}  {value:.6f}")
        print(f"{'median'.ljust(width)}  {median:.6f}")
    return 0


def _cmd_eval_mcd(args) -> int:
    cfg = MelConfig()
    ca = cepstra(log_mel(_load_at_16k(args.a, cfg), cfg), args.coeffs)
    cb = cepstra(log_mel(_load_at_16k(args.b, cfg), cfg), args.coeffs)
    print(f"mcd {mcd(ca, cb):.3f}")
    return 0


def _cmd_augment(args) -> int:
    if (args.noise is None) != (args.snr is None):
        raise _UsageError("--noise and --snr must be given together")
    rng = np.random.default_rng(args.seed)
    w = load_wav(args.wav)
    if args.pitch is not None:
        w = pitch_shift(w, args.pitch)
    if args.stretch is not None:
        w = time_stretch(w, args.stretch)
    if args.noise is not None:
        noise = load_wav(args.noise)
        if noise.sample_rate != w.sample_rate:
            noise = resample(noise, w.sample_rate)
        w = mix_noise_at_snr(w, noise, args.snr, rng)
    save_wav(args.out, w)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "synth-corpus": _cmd_synth_corpus,
    "featstats": _cmd_featstats,
    "train": _cmd_train,
    "embed": _cmd_embed,
    "eval-s2t": _cmd_eval_s2t,
    "eval-mcd": _cmd_eval_mcd,
    "augment": _cmd_augment,
}


def run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, WavError, CheckpointError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))
