"""Line-oriented run configuration: dotted `key = value` pairs.

Sections map onto the dataclasses they configure: `mel.*` (features),
`augment.*` (augmentation policy), `train.*` (trainer), `paths.*` (inputs
and output directory), plus a mandatory top-level `seed`. Values are
coerced by the type of the dataclass default; tuples are comma-separated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .augment import AugmentationPolicy
from .features import MelConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    mel: MelConfig
    policy: AugmentationPolicy
    train: TrainConfig
    manifest: Path | None
    noise_dir: Path | None
    stats_path: Path | None
    checkpoint_dir: Path | None
    seed: int


def parse_kv_file(path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in pairs:
            raise ValueError(f"{path}:{lineno}: duplicate key {key}")
        pairs[key] = value.strip()
    return pairs


def _coerce(raw: str, like):
    if isinstance(like, bool):
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(float(v.strip()) for v in raw.split(","))
    return raw


def _build(cls, pairs: dict[str, str], section: str):
    defaults = cls()
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    prefix = section + "."
    for key, raw in pairs.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in fields:
            raise ValueError(f"unknown key {key}")
        kwargs[name] = _coerce(raw, getattr(defaults, name))
    return cls(**kwargs)


def parse_run_config(path, seed_override: int | None = None) -> RunConfig:
    """Parse and validate a run config file; input paths must exist."""
    pairs = parse_kv_file(path)

    known_path_keys = {"paths.manifest", "paths.noise_dir", "paths.stats", "paths.checkpoint_dir"}
    for key in pairs:
        if key.startswith("paths.") and key not in known_path_keys:
            raise ValueError(f"unknown key {key}")

    if seed_override is not None:
        seed = seed_override
    elif "seed" in pairs:
        seed = int(pairs["seed"])
    else:
        raise ValueError(f"{path}: missing required 'seed' (wall-clock seeding is not allowed)")

    mel = _build(MelConfig, pairs, "mel")
    policy = _build(AugmentationPolicy, pairs, "augment")
    train_kwargs = {"seed": seed}
    defaults = TrainConfig()
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    for key, raw in pairs.items():
        if key.startswith("train."):
            name = key[len("train."):]
            if name not in fields:
                raise ValueError(f"unknown key {key}")
            if name == "seed":
                continue  # 'seed' is the single seeding knob
            train_kwargs[name] = _coerce(raw, getattr(defaults, name))
    train = TrainConfig(**train_kwargs)

    base = Path(path).parent

    def resolve(key, must_exist):
        if key not in pairs:
            return None
        p = Path(pairs[key])
        if not p.is_absolute():
            p = base / p
        if must_exist and not p.exists():
            raise FileNotFoundError(f"{key} = {p}: does not exist")
        return p

    return RunConfig(
        mel=mel,
        policy=policy,
        train=train,
        manifest=resolve("paths.manifest", must_exist=True),
        noise_dir=resolve("paths.noise_dir", must_exist=True),
        stats_path=resolve("paths.stats", must_exist=True),
        checkpoint_dir=resolve("paths.checkpoint_dir", must_exist=False),
        seed=seed,
    )
