"""Flat ``key=value`` configuration files with dotted keys.

Blank lines and ``#`` comments are ignored. Values stay strings until a
consumer converts them; :data:`DEFAULTS` lists every recognised key.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

DEFAULTS = {
    # training
    "train.steps": "2000",
    "train.seed": "0",
    "train.checkpoint_interval": "0",  # 0 = final checkpoint only
    "train.workers": "0",
    "train.prefetch": "4",
    # pairing
    "pairing.delta_t_s": "60",
    "pairing.mode_mix": "0.5",
    "pairing.batch_b": "128",
    # optimiser
    "optim.lr": "1e-3",
    "optim.beta1": "0.9",
    "optim.beta2": "0.999",
    "optim.eps": "1e-8",
    # encoder / projector
    "model.channels": "16,32,64,128,256",
    "model.kernel": "5",
    "model.stride": "2",
    "model.embed_dim": "256",
    "model.proj_hidden": "128",
    # augmentation sampling ranges
    "augment.median_widths": "3,5,7",
    "augment.translate_min": "15",
    "augment.translate_max": "90",
    "augment.jump_min": "0.05",
    "augment.jump_max": "0.5",
    "augment.wander_amp_min": "0.05",
    "augment.wander_amp_max": "0.3",
    "augment.wander_period_min": "5",
    "augment.wander_period_max": "20",
    "augment.noise_min": "0.005",
    "augment.noise_max": "0.05",
    "augment.rotation_mode": "planar",
    "augment.max_chain": "3",
    # linear probe
    "probe.n_values": "1,5,10,15,25,50",
    "probe.repeats": "10",
    "probe.train_fraction": "0.75",
    "probe.C": "1.0",
    "probe.seed": "0",
    # segmentation
    "segment.block": "180",
    "segment.min_len": "3",
    "segment.max_neighbourhood": "30",
    "segment.min_block": "6",
}


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        cfg[key] = value
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the file at ``path``, then ``overrides``."""
    cfg = dict(DEFAULTS)
    if path is not None:
        user = parse_config(Path(path).read_text())
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(user)
    if overrides:
        cfg.update({k: str(v) for k, v in overrides.items() if v is not None})
    return cfg


def dump_config(cfg: dict) -> str:
    return "".join(f"{k}={cfg[k]}\n" for k in sorted(cfg))


def config_hash(cfg: dict) -> str:
    blob = json.dumps({k: str(v) for k, v in cfg.items()}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def get_list(cfg: dict, key: str, cast=int) -> list:
    value = cfg[key]
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    return [cast(v) for v in str(value).split(",") if v.strip()]
