"""Behaviour-cloning trainer: MSE regression onto expert actions.

Each ensemble member owns its seeds: orthogonal init and per-epoch shuffle
order both derive from the member seed, so two runs with the same seeds give
bit-identical parameters regardless of how members are scheduled.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .dataset import (
    Dataset,
    FrameStore,
    batches,
    build_frame_store,
    compute_norm_stats,
    split_holdout,
)
from .seeding import derive_seed

VAL_CHUNK = 256


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.001
    max_epochs: int = 200
    patience: int = 30
    holdout_fraction: float = 0.2


PAPER_PROFILE = TrainConfig()
CI_PROFILE = TrainConfig(max_epochs=60, patience=15)


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    wall_seconds: float


@dataclass
class TrainHistory:
    member_seed: int
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val(self) -> float:
        return self.epochs[self.best_epoch - 1].val_mse


def evaluate_mse(params: dict, store: FrameStore, arch: nn.ArchDescriptor) -> float:
    sse = 0.0
    for start in range(0, store.n, VAL_CHUNK):
        img = store.images[start : start + VAL_CHUNK]
        out = nn.forward(params, img, store.proprio[start : start + VAL_CHUNK], arch)
        diff = out - store.actions[start : start + VAL_CHUNK]
        sse += float(np.sum(diff.astype(np.float64) ** 2))
    return sse / (store.n * store.actions.shape[1])


def train_member(
    train_store: FrameStore,
    val_store: FrameStore,
    member_seed: int,
    config: TrainConfig,
    arch: nn.ArchDescriptor,
) -> tuple[dict, TrainHistory]:
    if train_store.n == 0 or val_store.n == 0:
        raise ValueError("empty split")
    params = nn.init_policy(arch, member_seed)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(vv) for k, vv in params.items()}
    history = TrainHistory(member_seed=member_seed)
    best_params = {k: p.copy() for k, p in params.items()}
    best_val = np.inf
    bad_epochs = 0
    t = 0
    t_start = time.monotonic()
    for epoch in range(1, config.max_epochs + 1):
        epoch_seed = derive_seed(member_seed, "epoch", epoch)
        sse = 0.0
        for img, prop, act in batches(train_store, config.batch_size, epoch_seed):
            out, cache = nn.forward(params, img, prop, arch, want_cache=True)
            loss, dout = nn.mse_loss(out, act)
            grads = nn.backward(params, cache, dout.astype(np.float32), arch)
            t += 1
            nn.adam_step(params, grads, m, v, t, lr=config.learning_rate)
            sse += loss * out.size
        train_mse = sse / (train_store.n * train_store.actions.shape[1])
        val_mse = evaluate_mse(params, val_store, arch)
        history.epochs.append(
            EpochRecord(epoch, train_mse, val_mse, time.monotonic() - t_start)
        )
        if val_mse < best_val:
            best_val = val_mse
            best_params = {k: p.copy() for k, p in params.items()}
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    return best_params, history


def write_history_csv(path: Path, history: TrainHistory) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_mse", "val_mse", "wall_seconds"])
        for rec in history.epochs:
            writer.writerow(
                [rec.epoch, f"{rec.train_mse:.8g}", f"{rec.val_mse:.8g}", f"{rec.wall_seconds:.3f}"]
            )


# Shared state for forked training workers; set before the pool is created so
# the child processes inherit it without pickling the frame stores.
_WORKER_CTX: dict = {}


def _train_member_worker(member_seed: int):
    ctx = _WORKER_CTX
    return train_member(
        ctx["train_store"], ctx["val_store"], member_seed, ctx["config"], ctx["arch"]
    )


def train_ensemble(
    ds: Dataset,
    base_seed: int,
    config: TrainConfig = CI_PROFILE,
    history_dir: Path | None = None,
    workers: int = 1,
    arch: nn.ArchDescriptor | None = None,
) -> nn.PolicyEnsemble:
    train_split, val_split = split_holdout(ds, config.holdout_fraction, seed=base_seed)
    stats = compute_norm_stats(train_split)
    if arch is None:
        arch = nn.policy_arch(ds.action_dim)
    train_store = build_frame_store(train_split, stats)
    val_store = build_frame_store(val_split, stats)
    member_seeds = [derive_seed(base_seed, "member", i) for i in range(nn.ENSEMBLE_SIZE)]
    if workers > 1:
        _WORKER_CTX.update(
            train_store=train_store, val_store=val_store, config=config, arch=arch
        )
        try:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_train_member_worker, member_seeds))
        finally:
            _WORKER_CTX.clear()
    else:
        results = [
            train_member(train_store, val_store, seed, config, arch) for seed in member_seeds
        ]
    members = [params for params, _ in results]
    if history_dir is not None:
        history_dir = Path(history_dir)
        history_dir.mkdir(parents=True, exist_ok=True)
        for i, (_, hist) in enumerate(results):
            write_history_csv(history_dir / f"member_{i}.csv", hist)
    return nn.PolicyEnsemble(
        arch=arch, members=members, norm_stats=stats, member_seeds=member_seeds
    )
