"""Self-supervised training loop: online/target networks, symmetrized loss,
EMA target updates, collapse monitoring, and checkpoint serialization.

The online stack is encoder -> projector -> predictor (theta); the target
stack is encoder -> projector only (xi), updated as an exponential moving
average of theta and never by gradient. Parameter dicts are flat, keyed
"f.<i>.weight" / "g.<i>.bias" / "q.<i>.weight" by network.
"""

from __future__ import annotations

import struct
import sys
import zlib
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .audio_io import Waveform, load_wav, resample
from .augment import AugmentationPolicy, MixupBank, make_view_pair, post_normalize
from .features import MelConfig, NormStats
from .nn import (
    CODE_KINDS,
    KIND_CODES,
    AdamState,
    LayerSpec,
    NetworkSpec,
    adam_step,
    default_encoder,
    default_predictor,
    default_projector,
    init_adam,
    init_params,
    network_backward,
    network_forward,
    output_dim,
)

CHECKPOINT_MAGIC = b"BYLC"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.99
    batch_size: int = 64
    steps: int = 1000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0  # 0 -> final checkpoint only
    seed: int = 0
    segment_frames: int = 100
    embedding_dim: int = 512
    skip_bad_audio: bool = False

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class TrainStepReport:
    step: int
    loss_forward: float
    loss_reverse: float
    loss_total: float
    embedding_std: float

    def line(self) -> str:
        return (
            f"{self.step}\t{self.loss_forward:.6f}\t{self.loss_reverse:.6f}"
            f"\t{self.loss_total:.6f}\t{self.embedding_std:.6f}"
        )


def byol_loss(p, z_target) -> float:
    """Euclidean distance between the L2-normalized prediction and target.

    Ranges over [0, 2]: 0 for parallel vectors, sqrt(2) for orthogonal,
    2 for antipodal.
    """
    p = np.asarray(p, dtype=np.float64)
    z = np.asarray(z_target, dtype=np.float64)
    pn, zn = np.linalg.norm(p), np.linalg.norm(z)
    if pn < 1e-12 or zn < 1e-12:
        raise ValueError("zero-magnitude vector has no direction")
    return float(np.linalg.norm(p / pn - z / zn))


def ema_update(theta: dict, xi: dict, tau: float) -> dict:
    """xi <- tau * xi + (1 - tau) * theta, elementwise over xi's keys."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must be in [0, 1]")
    out = {}
    for k, x in xi.items():
        t = theta[k]
        if t.shape != x.shape:
            raise ValueError(f"shape mismatch for {k}: {t.shape} vs {x.shape}")
        out[k] = tau * x + (1.0 - tau) * t
    return out


def _sub(params: dict, prefix: str) -> dict:
    pre = prefix + "."
    return {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}


def _row_losses_and_grads(p: np.ndarray, z: np.ndarray, want_grads: bool):
    """Per-row normalized-difference losses; gradients wrt the raw rows of p."""
    pn = np.linalg.norm(p, axis=1, keepdims=True)
    zn = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(pn < 1e-12) or np.any(zn < 1e-12):
        raise FloatingPointError("zero-magnitude projection row")
    pb, zb = p / pn, z / zn
    diff = pb - zb
    losses = np.linalg.norm(diff, axis=1)
    if not want_grads:
        return losses, None
    safe = np.maximum(losses, 1e-12)[:, None]
    dldpb = diff / safe
    radial = (pb * dldpb).sum(axis=1, keepdims=True)
    grad = (dldpb - pb * radial) / pn
    grad = np.where(losses[:, None] < 1e-12, 0.0, grad)
    return losses, grad


def symmetrized_forward(
    enc_spec: NetworkSpec,
    proj_spec: NetworkSpec,
    pred_spec: NetworkSpec,
    theta: dict,
    xi: dict,
    u: np.ndarray,
    up: np.ndarray,
    want_grads: bool = True,
    arena: dict | None = None,
):
    """Both loss directions through online (theta) and target (xi) stacks.

    u, up: (B, T, F) post-normalized segment batches. Returns
    (loss_forward, loss_reverse, theta_grads_or_None, online_representations).
    The target path is forward-only; no gradient ever reaches xi.
    """
    b = u.shape[0]
    dtype = next(iter(theta.values())).dtype
    x = np.concatenate([u, up])[..., None].astype(dtype, copy=False)

    y, tf = network_forward(enc_spec, _sub(theta, "f"), x, want_trace=want_grads, arena=arena)
    z, tg = network_forward(proj_spec, _sub(theta, "g"), y, want_trace=want_grads)
    p, tq = network_forward(pred_spec, _sub(theta, "q"), z, want_trace=want_grads)

    y_t, _ = network_forward(enc_spec, _sub(xi, "f"), x, want_trace=False)
    z_t, _ = network_forward(proj_spec, _sub(xi, "g"), y_t, want_trace=False)
    targets = np.concatenate([z_t[b:], z_t[:b]])  # swap: u pairs with u', u' with u

    losses, dp = _row_losses_and_grads(p, targets, want_grads)
    loss_fwd = float(losses[:b].mean())
    loss_rev = float(losses[b:].mean())

    if not want_grads:
        return loss_fwd, loss_rev, None, y

    dq_grads, dz = network_backward(pred_spec, _sub(theta, "q"), tq, dp / b)
    dg_grads, dy = network_backward(proj_spec, _sub(theta, "g"), tg, dz)
    df_grads, _ = network_backward(enc_spec, _sub(theta, "f"), tf, dy, need_input_grad=False)
    grads = (
        {f"f.{k}": v for k, v in df_grads.items()}
        | {f"g.{k}": v for k, v in dg_grads.items()}
        | {f"q.{k}": v for k, v in dq_grads.items()}
    )
    return loss_fwd, loss_rev, grads, y


class Trainer:
    """Owns the online/target parameters, optimizer state, and mixup bank."""

    def __init__(
        self,
        cfg: TrainConfig,
        mel_cfg: MelConfig | None = None,
        policy: AugmentationPolicy | None = None,
        stats: NormStats | None = None,
        encoder_spec: NetworkSpec | None = None,
        projector_spec: NetworkSpec | None = None,
        predictor_spec: NetworkSpec | None = None,
    ):
        self.cfg = cfg
        self.mel_cfg = mel_cfg or MelConfig()
        self.policy = policy or AugmentationPolicy()
        self.stats = stats or NormStats(0.0, 1.0)
        self.enc_spec = encoder_spec or default_encoder(cfg.embedding_dim)
        self.proj_spec = projector_spec or default_projector()
        self.pred_spec = predictor_spec or default_predictor()
        self.rng = np.random.default_rng(cfg.seed)

        input_shape = (cfg.segment_frames, self.mel_cfg.n_mels, 1)
        embed_dim = output_dim(self.enc_spec, input_shape)
        if embed_dim != cfg.embedding_dim:
            raise ValueError(f"encoder emits {embed_dim}-dim, config wants {cfg.embedding_dim}")
        proj_dim = output_dim(self.proj_spec, (embed_dim,))

        theta_f = init_params(self.enc_spec, input_shape, self.rng)
        theta_g = init_params(self.proj_spec, (embed_dim,), self.rng)
        theta_q = init_params(self.pred_spec, (proj_dim,), self.rng)
        self.theta = (
            {f"f.{k}": v for k, v in theta_f.items()}
            | {f"g.{k}": v for k, v in theta_g.items()}
            | {f"q.{k}": v for k, v in theta_q.items()}
        )
        # target starts as an exact copy of the online encoder+projector
        self.xi = {k: v.copy() for k, v in self.theta.items() if not k.startswith("q.")}
        self.adam = init_adam(self.theta, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
        self.bank = MixupBank(self.policy.mixup_bank_size)
        self.step_index = 0
        self._arena: dict = {}  # recycled trace buffers; traces die within train_step

    def train_step(self, u: np.ndarray, up: np.ndarray) -> TrainStepReport:
        """One optimization step on a post-normalized batch of view pairs.

        Gradients flow through theta only; after the Adam update, xi moves
        toward the new theta by the EMA rule.
        """
        loss_fwd, loss_rev, grads, y = symmetrized_forward(
            self.enc_spec, self.proj_spec, self.pred_spec, self.theta, self.xi, u, up,
            arena=self._arena,
        )
        total = loss_fwd + loss_rev
        if not np.isfinite(total):
            raise FloatingPointError(f"non-finite loss at step {self.step_index + 1}: {total}")
        self.theta, self.adam = adam_step(self.theta, grads, self.adam)
        self.xi = ema_update(self.theta, self.xi, self.cfg.tau)
        self.step_index += 1
        return TrainStepReport(
            step=self.step_index,
            loss_forward=loss_fwd,
            loss_reverse=loss_rev,
            loss_total=total,
            embedding_std=float(y.std(axis=0).mean()),
        )

    def checkpoint(self) -> "Checkpoint":
        return Checkpoint(
            mel_config=self.mel_cfg,
            norm_stats=self.stats,
            encoder_spec=self.enc_spec,
            projector_spec=self.proj_spec,
            predictor_spec=self.pred_spec,
            theta={k: v.copy() for k, v in self.theta.items()},
            xi={k: v.copy() for k, v in self.xi.items()},
            adam=self.adam,
            step=self.step_index,
            seed=self.cfg.seed,
            segment_frames=self.cfg.segment_frames,
        )


def _batch_stream(n: int, batch_size: int, rng: np.random.Generator):
    queue: list[int] = []
    while True:
        while len(queue) < batch_size:
            queue.extend(rng.permutation(n).tolist())
        yield queue[:batch_size]
        queue = queue[batch_size:]


def fit(
    manifest: Sequence,
    cfg: TrainConfig,
    policy: AugmentationPolicy | None = None,
    mel_cfg: MelConfig | None = None,
    stats: NormStats | None = None,
    noise_bank: Sequence[Waveform] | None = None,
    out_dir=None,
    log_stream: IO[str] | None = None,
) -> tuple["Checkpoint", list[TrainStepReport]]:
    """Train for cfg.steps over seeded shuffled batches of the manifest files.

    Writes step_<k>.ckpt every checkpoint_every steps plus final.ckpt when
    out_dir is given, and one tab-separated report line per step to
    log_stream. Unreadable audio aborts unless cfg.skip_bad_audio.
    """
    if len(manifest) == 0:
        raise ValueError("empty training manifest")
    trainer = Trainer(cfg, mel_cfg, policy, stats)
    mel = trainer.mel_cfg

    waves: list[Waveform] = []
    for path in manifest:
        try:
            w = load_wav(path)
        except Exception:
            if cfg.skip_bad_audio:
                print(f"warning: skipping unreadable {path}", file=sys.stderr)
                continue
            raise
        if w.sample_rate != mel.sample_rate:
            w = resample(w, mel.sample_rate)
        waves.append(w)
    if not waves:
        raise ValueError("no readable audio in manifest")

    if out_dir is not None:
        from pathlib import Path

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    reports: list[TrainStepReport] = []
    batches = _batch_stream(len(waves), cfg.batch_size, trainer.rng)
    for step in range(1, cfg.steps + 1):
        idx = next(batches)
        pairs = [
            make_view_pair(
                waves[i], trainer.stats, trainer.policy, trainer.bank, trainer.rng,
                mel, noise_bank, cfg.segment_frames,
            )
            for i in idx
        ]
        views = post_normalize([p.u for p in pairs] + [p.u_prime for p in pairs])
        b = len(pairs)
        u = np.stack(views[:b])
        up = np.stack(views[b:])
        report = trainer.train_step(u, up)
        reports.append(report)
        if log_stream is not None:
            log_stream.write(report.line() + "\n")
        if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(trainer.checkpoint(), out_dir / f"step_{step:06d}.ckpt")
    final = trainer.checkpoint()
    if out_dir is not None:
        save_checkpoint(final, out_dir / "final.ckpt")
    return final, reports


@dataclass
class Checkpoint:
    """Everything needed to resume training or embed utterances."""

    mel_config: MelConfig
    norm_stats: NormStats
    encoder_spec: NetworkSpec
    projector_spec: NetworkSpec
    predictor_spec: NetworkSpec
    theta: dict
    xi: dict
    adam: AdamState
    step: int
    seed: int
    segment_frames: int = 100
    version: int = CHECKPOINT_VERSION

    @property
    def embedding_dim(self) -> int:
        return output_dim(self.encoder_spec, (self.segment_frames, self.mel_config.n_mels, 1))


def _spec_to_array(spec: NetworkSpec) -> np.ndarray:
    rows = [[KIND_CODES[l.kind], l.out_channels if l.kind == "conv2d" else l.out_dim] for l in spec]
    return np.asarray(rows, dtype=np.float64)


def _spec_from_array(arr: np.ndarray) -> NetworkSpec:
    layers = []
    for code, arg in arr:
        kind = CODE_KINDS[int(code)]
        if kind == "conv2d":
            layers.append(LayerSpec(kind, out_channels=int(arg)))
        elif kind == "linear":
            layers.append(LayerSpec(kind, out_dim=int(arg)))
        else:
            layers.append(LayerSpec(kind))
    return tuple(layers)


_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _checkpoint_arrays(ck: Checkpoint) -> dict[str, np.ndarray]:
    mel = ck.mel_config
    arrays = {
        "meta.mel": np.asarray(
            [mel.sample_rate, mel.n_mels, mel.window_ms, mel.hop_ms,
             mel.fft_size, mel.fmin, mel.fmax, mel.log_floor], dtype=np.float64,
        ),
        "meta.norm": np.asarray([ck.norm_stats.mean, ck.norm_stats.std], dtype=np.float64),
        "meta.train": np.asarray([ck.step, ck.seed, ck.segment_frames], dtype=np.float64),
        "adam.hyper": np.asarray(
            [ck.adam.t, ck.adam.lr, ck.adam.beta1, ck.adam.beta2, ck.adam.eps], dtype=np.float64,
        ),
        "spec.f": _spec_to_array(ck.encoder_spec),
        "spec.g": _spec_to_array(ck.projector_spec),
        "spec.q": _spec_to_array(ck.predictor_spec),
    }
    arrays |= {f"theta.{k}": v for k, v in ck.theta.items()}
    arrays |= {f"xi.{k}": v for k, v in ck.xi.items()}
    arrays |= {f"adam.m.{k}": v for k, v in ck.adam.m.items()}
    arrays |= {f"adam.v.{k}": v for k, v in ck.adam.v.items()}
    return arrays


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Chunked array container: magic, version, named arrays, trailing CRC32."""
    blob = bytearray(CHECKPOINT_MAGIC + struct.pack("<I", ck.version))
    for name, arr in sorted(_checkpoint_arrays(ck).items()):
        arr = np.ascontiguousarray(arr)
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
        nb = name.encode()
        blob += struct.pack("<H", len(nb)) + nb + bytes([code, arr.ndim])
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as f:
        f.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointCorruptError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: version {version}, supported {CHECKPOINT_VERSION}")
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointCorruptError(f"{path}: checksum mismatch")

    arrays: dict[str, np.ndarray] = {}
    pos, end = 8, len(blob) - 4
    try:
        while pos < end:
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + name_len].decode()
            pos += name_len
            code, rank = blob[pos], blob[pos + 1]
            pos += 2
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            dtype = _CODE_DTYPES[code]
            nbytes = int(np.prod(shape)) * dtype.itemsize
            if pos + nbytes > end:
                raise CheckpointCorruptError(f"{path}: truncated array {name}")
            arrays[name] = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape)), offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as e:
        raise CheckpointCorruptError(f"{path}: malformed chunk table: {e}") from e
    if pos != end:
        raise CheckpointCorruptError(f"{path}: trailing bytes in chunk table")

    try:
        mel_vals = arrays["meta.mel"]
        mel = MelConfig(
            sample_rate=int(mel_vals[0]), n_mels=int(mel_vals[1]), window_ms=float(mel_vals[2]),
            hop_ms=float(mel_vals[3]), fft_size=int(mel_vals[4]), fmin=float(mel_vals[5]),
            fmax=float(mel_vals[6]), log_floor=float(mel_vals[7]),
        )
        norm = NormStats(float(arrays["meta.norm"][0]), float(arrays["meta.norm"][1]))
        step, seed, segment_frames = (int(v) for v in arrays["meta.train"])
        hyper = arrays["adam.hyper"]
        theta = {k[len("theta."):]: v for k, v in arrays.items() if k.startswith("theta.")}
        xi = {k[len("xi."):]: v for k, v in arrays.items() if k.startswith("xi.")}
        adam = AdamState(
            m={k[len("adam.m."):]: v for k, v in arrays.items() if k.startswith("adam.m.")},
            v={k[len("adam.v."):]: v for k, v in arrays.items() if k.startswith("adam.v.")},
            t=int(hyper[0]), lr=float(hyper[1]), beta1=float(hyper[2]),
            beta2=float(hyper[3]), eps=float(hyper[4]),
        )
        return Checkpoint(
            mel_config=mel,
            norm_stats=norm,
            encoder_spec=_spec_from_array(arrays["spec.f"]),
            projector_spec=_spec_from_array(arrays["spec.g"]),
            predictor_spec=_spec_from_array(arrays["spec.q"]),
            theta=theta,
            xi=xi,
            adam=adam,
            step=step,
            seed=seed,
            segment_frames=segment_frames,
            version=version,
        )
    except KeyError as e:
        raise CheckpointCorruptError(f"{path}: missing required array {e}") from e
