"""Self-supervised training loop and the checkpoint container.

Each step draws ``b`` coincident pairs seeded by ``(seed, step)``, so batch
preparation can run ahead on worker threads and a resumed run replays exactly
the batches an uninterrupted run would have seen.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nn
from .augment import AugmentRanges
from .config import DEFAULTS, config_hash
from .errors import ChecksumMismatch, DivergedLoss, VersionMismatch
from .pairing import PairingConfig, WindowIndex, pair_matrices, sample_pair_data
from .signal_core import LabeledInterval, Recording, normalize_and_resample, split_windows

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "CADENCE-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    steps: int = 2000
    seed: int = 0
    checkpoint_interval: int = 0
    pairing: PairingConfig = field(default_factory=PairingConfig)
    augment: AugmentRanges = field(default_factory=AugmentRanges)
    model: nn.ModelConfig = field(default_factory=nn.ModelConfig)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    workers: int = 0
    prefetch: int = 4

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.checkpoint_interval > self.steps:
            raise ValueError("checkpoint_interval must not exceed steps")

    @property
    def batch_b(self) -> int:
        return self.pairing.batch_b

    @classmethod
    def from_config(cls, cfg: dict) -> "TrainConfig":
        merged = dict(DEFAULTS)
        merged.update(cfg)
        return cls(
            steps=int(merged["train.steps"]),
            seed=int(merged["train.seed"]),
            checkpoint_interval=int(merged["train.checkpoint_interval"]),
            pairing=PairingConfig.from_config(merged),
            augment=AugmentRanges.from_config(merged),
            model=nn.ModelConfig.from_config(merged),
            lr=float(merged["optim.lr"]),
            beta1=float(merged["optim.beta1"]),
            beta2=float(merged["optim.beta2"]),
            eps=float(merged["optim.eps"]),
            workers=int(merged["train.workers"]),
            prefetch=int(merged["train.prefetch"]),
        )

    def hash(self) -> str:
        d = {
            "seed": self.seed,
            "pairing": vars(self.pairing),
            "augment": {k: list(v) if isinstance(v, tuple) else v for k, v in vars(self.augment).items()},
            "model": self.model.to_dict(),
            "optim": [self.lr, self.beta1, self.beta2, self.eps],
        }
        return config_hash({"train": json.dumps(d, sort_keys=True)})


@dataclass
class Checkpoint:
    params: dict
    optimizer: nn.AdamState
    step: int
    model: nn.ModelConfig
    config_hash: str = ""
    seed: int = 0

    @property
    def encoder_params(self) -> dict:
        return {k: self.params[k] for k in nn.encoder_keys(self.params)}

    def embed(self, x: np.ndarray, chunk: int = 256) -> np.ndarray:
        return nn.embed_in_chunks(x, self.params, self.model, chunk)


def index_from_recordings(recordings: Sequence[tuple[Recording, Sequence[LabeledInterval]]] | Sequence[Recording]) -> WindowIndex:
    """Resample and window recordings into an unlabelled :class:`WindowIndex`."""
    data, subjects, starts = [], [], []
    for item in recordings:
        rec = item[0] if isinstance(item, tuple) else item
        for w in split_windows(normalize_and_resample(rec)):
            data.append(w.data)
            subjects.append(w.subject_id)
            starts.append(w.start_time)
    if not data:
        return WindowIndex(np.zeros((0, 300, 3)), [], [])
    return WindowIndex(np.stack(data), subjects, starts)


def _batch_for_step(index: WindowIndex, cfg: TrainConfig, step: int) -> np.ndarray:
    data, _ = sample_pair_data(index, cfg.pairing, cfg.batch_b, [cfg.seed, 1, step], cfg.augment)
    return data


def _batches(index: WindowIndex, cfg: TrainConfig, first: int, last: int):
    if cfg.workers <= 0:
        for step in range(first, last + 1):
            yield step, _batch_for_step(index, cfg, step)
        return
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        pending = deque()
        nxt = first
        while nxt <= last or pending:
            while nxt <= last and len(pending) < max(cfg.prefetch, 1):
                pending.append((nxt, pool.submit(_batch_for_step, index, cfg, nxt)))
                nxt += 1
            step, fut = pending.popleft()
            yield step, fut.result()


def train(cfg: TrainConfig, index: WindowIndex, resume: Optional[Checkpoint] = None,
          out_dir=None, log_every: int = 100) -> tuple[Checkpoint, list[float]]:
    """Run ``cfg.steps`` optimiser steps and return the final checkpoint and loss trace.

    With ``resume`` the run continues from that checkpoint's step counter and
    parameters; seeding by absolute step keeps it identical to an
    uninterrupted run.
    """
    if len(index) == 0:
        from .errors import EmptyDataset
        raise EmptyDataset("no windows to train on")
    if resume is not None:
        params = {k: v.copy() for k, v in resume.params.items()}
        state = resume.optimizer
        start = resume.step
    else:
        params = nn.init_params(cfg.model, [cfg.seed, 0], np.float32)
        state = nn.AdamState.fresh(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
        start = 0
    labels, weights = pair_matrices(cfg.batch_b)
    weights = weights.astype(np.float32)
    chash = cfg.hash()
    out_dir = Path(out_dir) if out_dir is not None else None

    losses: list[float] = []
    for step, x in _batches(index, cfg, start + 1, start + cfg.steps):
        loss, grads = nn.loss_and_grads(x, labels, weights, params, cfg.model)
        if not np.isfinite(loss):
            raise DivergedLoss(f"loss became {loss} at step {step}")
        params, state = nn.adam_step(params, grads, state)
        losses.append(loss)
        if log_every and step % log_every == 0:
            logger.info("step %d loss %.5f", step, float(np.mean(losses[-log_every:])))
        if out_dir is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            save_checkpoint(Checkpoint(params, state, step, cfg.model, chash, cfg.seed),
                            out_dir / f"checkpoint_{step:07d}.ckpt")

    ckpt = Checkpoint(params, state, start + cfg.steps, cfg.model, chash, cfg.seed)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, out_dir / "checkpoint.ckpt")
        write_loss_trace(out_dir / "loss.csv", losses, start + 1)
    return ckpt, losses


def write_loss_trace(path, losses: Sequence[float], first_step: int = 1):
    with open(path, "w") as fh:
        fh.write("step,loss\n")
        for i, loss in enumerate(losses):
            fh.write(f"{first_step + i},{loss!r}\n")


# ---------------------------------------------------------------------------
# checkpoint container
#
# Text manifest, then raw little-endian float32 payload:
#
#   CADENCE-CHECKPOINT 1
#   model {...json...}
#   step <int>
#   seed <int>
#   config_hash <str>
#   adam {"lr":..,"beta1":..,"beta2":..,"eps":..,"step":..}
#   payload_bytes <int>
#   sha256 <hex of payload>
#   tensor <name> <shape comma list> <byte offset> <byte count>
#   ...
#   end


def _tensors(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    out = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    out += [(f"adam.m/{k}", v) for k, v in ckpt.optimizer.m.items()]
    out += [(f"adam.v/{k}", v) for k, v in ckpt.optimizer.v.items()]
    return out


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blobs, entries, offset = [], [], 0
    for name, arr in _tensors(ckpt):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        shape = ",".join(str(s) for s in arr.shape) or "-"
        entries.append(f"tensor {name} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    payload = b"".join(blobs)
    opt = ckpt.optimizer
    header = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        "model " + json.dumps(ckpt.model.to_dict(), sort_keys=True),
        f"step {ckpt.step}",
        f"seed {ckpt.seed}",
        f"config_hash {ckpt.config_hash or '-'}",
        "adam " + json.dumps({"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
                              "eps": opt.eps, "step": opt.step}, sort_keys=True),
        f"payload_bytes {len(payload)}",
        f"sha256 {hashlib.sha256(payload).hexdigest()}",
        *entries,
        "end",
    ]
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        fh.write(payload)
    os.replace(tmp, path)
    return path


def load_checkpoint(path, expected_model: nn.ModelConfig | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    lines, pos = [], 0
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise ChecksumMismatch(f"{path}: truncated manifest")
        line = raw[pos:nl].decode("utf-8", errors="replace")
        pos = nl + 1
        if line == "end":
            break
        lines.append(line)
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
        raise VersionMismatch(f"{path}: not a checkpoint file")
    version = lines[0].split()[1] if len(lines[0].split()) > 1 else "?"
    if version != str(CHECKPOINT_VERSION):
        raise VersionMismatch(f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")

    fields_, tensors = {}, []
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "tensor":
            name, shape, off, nbytes = rest.split()
            dims = () if shape == "-" else tuple(int(s) for s in shape.split(","))
            tensors.append((name, dims, int(off), int(nbytes)))
        else:
            fields_[key] = rest

    payload = raw[pos:]
    if len(payload) != int(fields_.get("payload_bytes", -1)):
        raise ChecksumMismatch(f"{path}: payload is {len(payload)} bytes, manifest says {fields_.get('payload_bytes')}")
    if hashlib.sha256(payload).hexdigest() != fields_.get("sha256"):
        raise ChecksumMismatch(f"{path}: payload checksum mismatch")

    model = nn.ModelConfig.from_dict(json.loads(fields_["model"]))
    if expected_model is not None and model != expected_model:
        raise VersionMismatch(f"{path}: architecture {model} differs from expected {expected_model}")

    groups = {"param": {}, "adam.m": {}, "adam.v": {}}
    for name, dims, off, nbytes in tensors:
        group, _, key = name.partition("/")
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=off).reshape(dims)
        groups[group][key] = arr.astype(np.float32)
    expected_shapes = nn.param_shapes(model)
    actual_shapes = {k: v.shape for k, v in groups["param"].items()}
    if actual_shapes != expected_shapes:
        raise VersionMismatch(f"{path}: tensor shapes do not match the declared architecture")

    adam = json.loads(fields_["adam"])
    state = nn.AdamState(adam["lr"], adam["beta1"], adam["beta2"], adam["eps"], int(adam["step"]),
                         groups["adam.m"], groups["adam.v"])
    chash = fields_.get("config_hash", "-")
    return Checkpoint(groups["param"], state, int(fields_["step"]), model,
                      "" if chash == "-" else chash, int(fields_.get("seed", 0)))


def checkpoint_roundtrip(ckpt: Checkpoint, path) -> Checkpoint:
    save_checkpoint(ckpt, path)
    return load_checkpoint(path, ckpt.model)
