"""Trajectory persistence, splitting, normalization, and batching.

A dataset is a directory: ``manifest.json`` plus one binary file per episode.
Episode files are little-endian: magic ``MVBC``, u32 version, u32 frame_count,
u32 proprio_dim, u32 action_dim, then per frame rgb u8[48*64*3],
depth f32[48*64], proprio f32, action f32, and a trailing u32 CRC32C over all
frame bytes.  The manifest repeats each episode's checksum so corruption is
detected without trusting the file's own trailer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checksum import crc32c
from .geometry import Pose2
from .seeding import stream

MAGIC = b"MVBC"
VERSION = 1
IMAGE_H = 48
IMAGE_W = 64
DEPTH_MAX = 3.0
PROPRIO_STD_FLOOR = 1e-6


class DatasetError(Exception):
    pass


class MagicError(DatasetError):
    """Wrong magic bytes or unsupported version."""


class TruncationError(DatasetError):
    """File ends before the declared payload does."""


class ChecksumError(DatasetError):
    """Stored and recomputed CRC32C disagree."""


@dataclass
class EpisodeData:
    rgb: np.ndarray  # (T, 48, 64, 3) uint8
    depth: np.ndarray  # (T, 48, 64) float32
    proprio: np.ndarray  # (T, P) float32
    actions: np.ndarray  # (T, A) float32
    success: bool
    base_pose: Pose2
    prenoise_phi: float
    seed: int
    attempt: int = 0

    def __post_init__(self):
        self.rgb = np.ascontiguousarray(self.rgb, dtype=np.uint8)
        self.depth = np.ascontiguousarray(self.depth, dtype=np.float32)
        self.proprio = np.ascontiguousarray(self.proprio, dtype=np.float32)
        self.actions = np.ascontiguousarray(self.actions, dtype=np.float32)
        t = self.actions.shape[0]
        if not (self.rgb.shape[0] == self.depth.shape[0] == self.proprio.shape[0] == t):
            raise ValueError("frame arrays disagree on length")
        if self.rgb.shape[1:] != (IMAGE_H, IMAGE_W, 3) or self.depth.shape[1:] != (IMAGE_H, IMAGE_W):
            raise ValueError("bad image dimensions")

    @property
    def length(self) -> int:
        return self.actions.shape[0]


@dataclass
class NormStats:
    action_scale: np.ndarray  # per-dim max-abs over the training split
    proprio_mean: np.ndarray
    proprio_std: np.ndarray  # floored at 1e-6
    depth_max: float = DEPTH_MAX

    def to_json(self) -> dict:
        return {
            "action_scale": [float(x) for x in self.action_scale],
            "proprio_mean": [float(x) for x in self.proprio_mean],
            "proprio_std": [float(x) for x in self.proprio_std],
            "depth_max": float(self.depth_max),
        }

    @staticmethod
    def from_json(obj: dict) -> "NormStats":
        return NormStats(
            action_scale=np.asarray(obj["action_scale"], dtype=np.float64),
            proprio_mean=np.asarray(obj["proprio_mean"], dtype=np.float64),
            proprio_std=np.asarray(obj["proprio_std"], dtype=np.float64),
            depth_max=float(obj["depth_max"]),
        )


@dataclass
class Dataset:
    task: str
    view_mode: str
    episodes: list[EpisodeData] = field(default_factory=list)
    seed: int | None = None
    norm_stats: NormStats | None = None

    @property
    def action_dim(self) -> int:
        if self.episodes:
            return self.episodes[0].actions.shape[1]
        raise ValueError("empty dataset has no action dim")

    @property
    def proprio_dim(self) -> int:
        if self.episodes:
            return self.episodes[0].proprio.shape[1]
        raise ValueError("empty dataset has no proprio dim")

    @property
    def n_frames(self) -> int:
        return sum(ep.length for ep in self.episodes)


# ---------------------------------------------------------------------------
# binary episode format


def _frame_dtype(proprio_dim: int, action_dim: int) -> np.dtype:
    return np.dtype(
        [
            ("rgb", np.uint8, (IMAGE_H, IMAGE_W, 3)),
            ("depth", "<f4", (IMAGE_H, IMAGE_W)),
            ("proprio", "<f4", (proprio_dim,)),
            ("action", "<f4", (action_dim,)),
        ]
    )


def episode_payload(ep: EpisodeData) -> bytes:
    dt = _frame_dtype(ep.proprio.shape[1], ep.actions.shape[1])
    arr = np.empty(ep.length, dtype=dt)
    arr["rgb"] = ep.rgb
    arr["depth"] = ep.depth
    arr["proprio"] = ep.proprio
    arr["action"] = ep.actions
    return arr.tobytes()


def episode_bytes(ep: EpisodeData) -> bytes:
    payload = episode_payload(ep)
    header = MAGIC + struct.pack(
        "<III I", VERSION, ep.length, ep.proprio.shape[1], ep.actions.shape[1]
    )
    return header + payload + struct.pack("<I", crc32c(payload))


def write_episode(path: Path, ep: EpisodeData) -> int:
    """Write one episode file; returns the payload CRC32C."""
    payload = episode_payload(ep)
    crc = crc32c(payload)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIII", VERSION, ep.length, ep.proprio.shape[1], ep.actions.shape[1]))
        f.write(payload)
        f.write(struct.pack("<I", crc))
    return crc


def read_episode_arrays(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 20:
        raise TruncationError(f"{path}: file shorter than header")
    if raw[:4] != MAGIC:
        raise MagicError(f"{path}: bad magic {raw[:4]!r}")
    version, frame_count, proprio_dim, action_dim = struct.unpack("<IIII", raw[4:20])
    if version != VERSION:
        raise MagicError(f"{path}: unsupported version {version}")
    dt = _frame_dtype(proprio_dim, action_dim)
    expected = 20 + frame_count * dt.itemsize + 4
    if len(raw) < expected:
        raise TruncationError(f"{path}: {len(raw)} bytes, expected {expected}")
    payload = raw[20 : 20 + frame_count * dt.itemsize]
    (stored_crc,) = struct.unpack("<I", raw[20 + len(payload) : 24 + len(payload)])
    if crc32c(payload) != stored_crc:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    frames = np.frombuffer(payload, dtype=dt)
    return (
        frames["rgb"].copy(),
        frames["depth"].copy(),
        frames["proprio"].copy(),
        frames["action"].copy(),
    )


# ---------------------------------------------------------------------------
# directory save / load


def _episode_filename(i: int) -> str:
    return f"episode_{i:04d}.mvbc"


def _manifest_dict(ds: Dataset, crcs: list[int]) -> dict:
    episodes = []
    for i, ep in enumerate(ds.episodes):
        episodes.append(
            {
                "file": _episode_filename(i),
                "length": ep.length,
                "success": bool(ep.success),
                "base_pose": [ep.base_pose.x, ep.base_pose.y, ep.base_pose.phi],
                "prenoise_phi": ep.prenoise_phi,
                "seed": int(ep.seed),
                "attempt": int(ep.attempt),
                "crc32c": crcs[i],
            }
        )
    return {
        "version": VERSION,
        "task": ds.task,
        "view_mode": ds.view_mode,
        "action_dim": ds.episodes[0].actions.shape[1] if ds.episodes else None,
        "proprio_dim": ds.episodes[0].proprio.shape[1] if ds.episodes else None,
        "image_height": IMAGE_H,
        "image_width": IMAGE_W,
        "seed": ds.seed,
        "norm_stats": ds.norm_stats.to_json() if ds.norm_stats is not None else None,
        "episodes": episodes,
    }


def save(ds: Dataset, dirpath: Path) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    crcs = [write_episode(dirpath / _episode_filename(i), ep) for i, ep in enumerate(ds.episodes)]
    manifest = _manifest_dict(ds, crcs)
    (dirpath / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load(dirpath: Path) -> Dataset:
    dirpath = Path(dirpath)
    manifest_path = dirpath / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"no manifest.json in {dirpath}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != VERSION:
        raise MagicError(f"{manifest_path}: unsupported manifest version {manifest.get('version')}")
    episodes = []
    for entry in manifest["episodes"]:
        path = dirpath / entry["file"]
        rgb, depth, proprio, actions = read_episode_arrays(path)
        payload_crc = crc32c(episode_payload_for(rgb, depth, proprio, actions))
        if payload_crc != entry["crc32c"]:
            raise ChecksumError(f"{path}: manifest checksum mismatch")
        if actions.shape[0] != entry["length"]:
            raise DatasetError(f"{path}: length {actions.shape[0]} != manifest {entry['length']}")
        bx, by, bphi = entry["base_pose"]
        episodes.append(
            EpisodeData(
                rgb=rgb,
                depth=depth,
                proprio=proprio,
                actions=actions,
                success=entry["success"],
                base_pose=Pose2(bx, by, bphi),
                prenoise_phi=entry["prenoise_phi"],
                seed=entry["seed"],
                attempt=entry.get("attempt", 0),
            )
        )
    stats = manifest.get("norm_stats")
    return Dataset(
        task=manifest["task"],
        view_mode=manifest["view_mode"],
        episodes=episodes,
        seed=manifest.get("seed"),
        norm_stats=NormStats.from_json(stats) if stats else None,
    )


def episode_payload_for(rgb, depth, proprio, actions) -> bytes:
    dt = _frame_dtype(proprio.shape[1], actions.shape[1])
    arr = np.empty(actions.shape[0], dtype=dt)
    arr["rgb"], arr["depth"], arr["proprio"], arr["action"] = rgb, depth, proprio, actions
    return arr.tobytes()


def append_episode(
    dirpath: Path, ep: EpisodeData, task: str = "unknown", view_mode: str = "unknown"
) -> str:
    """Add one episode to an existing (or fresh) dataset directory in place."""
    dirpath = Path(dirpath)
    manifest_path = dirpath / "manifest.json"
    if manifest_path.exists():
        ds = load(dirpath)
        if task != "unknown" and ds.task != task:
            raise DatasetError(f"dataset at {dirpath} holds task {ds.task!r}, not {task!r}")
    else:
        ds = Dataset(task=task, view_mode=view_mode, episodes=[])
    ds.episodes.append(ep)
    save(ds, dirpath)
    return _episode_filename(len(ds.episodes) - 1)


# ---------------------------------------------------------------------------
# splitting


def split_holdout(ds: Dataset, fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    n = len(ds.episodes)
    if n < 5:
        raise DatasetError(f"need at least 5 episodes to split, got {n}")
    n_val = int(round(fraction * n))
    perm = stream(seed, "split").permutation(n)
    val_idx = set(int(i) for i in perm[:n_val])
    train = [ep for i, ep in enumerate(ds.episodes) if i not in val_idx]
    val = [ep for i, ep in enumerate(ds.episodes) if i in val_idx]
    return (
        replace(ds, episodes=train),
        replace(ds, episodes=val),
    )


# ---------------------------------------------------------------------------
# normalization


def compute_norm_stats(train: Dataset | list[EpisodeData]) -> NormStats:
    episodes = train.episodes if isinstance(train, Dataset) else train
    if not episodes:
        raise DatasetError("cannot compute stats on an empty split")
    actions = np.concatenate([ep.actions for ep in episodes]).astype(np.float64)
    proprio = np.concatenate([ep.proprio for ep in episodes]).astype(np.float64)
    scale = np.maximum(np.max(np.abs(actions), axis=0), PROPRIO_STD_FLOOR)
    std = np.maximum(proprio.std(axis=0), PROPRIO_STD_FLOOR)
    return NormStats(
        action_scale=scale,
        proprio_mean=proprio.mean(axis=0),
        proprio_std=std,
        depth_max=DEPTH_MAX,
    )


def normalize_image(rgb: np.ndarray, depth: np.ndarray, stats: NormStats) -> np.ndarray:
    """Stack rgb/255 and clipped depth into a channels-last (H, W, 4) float32 tensor."""
    out = np.empty((rgb.shape[0], rgb.shape[1], 4), dtype=np.float32)
    out[..., :3] = rgb.astype(np.float32) / 255.0
    out[..., 3] = np.clip(depth, 0.0, stats.depth_max) / stats.depth_max
    return out


def normalize_proprio(proprio: np.ndarray, stats: NormStats) -> np.ndarray:
    return ((proprio - stats.proprio_mean) / stats.proprio_std).astype(np.float32)


def normalize_action(action: np.ndarray, stats: NormStats) -> np.ndarray:
    return (action / stats.action_scale).astype(np.float32)


def denormalize_action(action: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(action, dtype=np.float64) * stats.action_scale


# ---------------------------------------------------------------------------
# batching


@dataclass
class FrameStore:
    """Flat normalized training arrays, one row per frame."""

    images: np.ndarray  # (N, H, W, 4) float32 channels-last
    proprio: np.ndarray  # (N, P) float32
    actions: np.ndarray  # (N, A) float32

    @property
    def n(self) -> int:
        return self.actions.shape[0]


def build_frame_store(episodes: Dataset | list[EpisodeData], stats: NormStats) -> FrameStore:
    eps = episodes.episodes if isinstance(episodes, Dataset) else episodes
    n = sum(ep.length for ep in eps)
    if n == 0:
        raise DatasetError("no frames")
    p, a = eps[0].proprio.shape[1], eps[0].actions.shape[1]
    images = np.empty((n, IMAGE_H, IMAGE_W, 4), dtype=np.float32)
    proprio = np.empty((n, p), dtype=np.float32)
    actions = np.empty((n, a), dtype=np.float32)
    i = 0
    for ep in eps:
        for t in range(ep.length):
            images[i] = normalize_image(ep.rgb[t], ep.depth[t], stats)
            i += 1
        proprio[i - ep.length : i] = normalize_proprio(ep.proprio, stats)
        actions[i - ep.length : i] = normalize_action(ep.actions, stats)
    return FrameStore(images, proprio, actions)


def batches(store: FrameStore, batch_size: int, epoch_seed: int):
    """Deterministic frame-level shuffle; the final partial batch is kept."""
    perm = stream(epoch_seed, "shuffle").permutation(store.n)
    for start in range(0, store.n, batch_size):
        idx = perm[start : start + batch_size]
        yield store.images[idx], store.proprio[idx], store.actions[idx]
