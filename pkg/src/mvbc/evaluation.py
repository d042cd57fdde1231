"""Closed-loop policy evaluation: success rates, condition matrices, sweeps.

Episode randomness is keyed as (seed, "eval", env_kind, index), which keeps
evaluation disjoint from demo collection and makes paired comparisons exact:
two policies evaluated in the same environment column face byte-identical
initial states.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn, sim
from . import dataset as ds_mod
from .dataset import Dataset
from .seeding import derive_seed, stream
from . import __version__

OOD_BINS = [((j - 8) / 10.0, (j - 7) / 10.0) for j in range(12)]
OOD_BEYOND_TRAINING = [(-0.8, -0.7), (-0.7, -0.6), (0.2, 0.3), (0.3, 0.4)]


@dataclass
class EpisodeRecord:
    index: int
    seed: int
    prenoise_phi: float
    success: bool
    steps: int


@dataclass
class SuccessStats:
    task: str
    policy_kind: str
    env_kind: str
    records: list[EpisodeRecord] = field(default_factory=list)

    @property
    def n_episodes(self) -> int:
        return len(self.records)

    @property
    def n_success(self) -> int:
        return sum(r.success for r in self.records)

    @property
    def rate(self) -> float:
        return self.n_success / self.n_episodes if self.records else 0.0


def run_episode(
    policy: nn.PolicyEnsemble, cfg: sim.EpisodeConfig, rng: np.random.Generator
) -> tuple[bool, int, float]:
    """Greedy closed-loop rollout; returns (success, steps, prenoise_phi)."""
    if policy.arch.action_dim != sim.ACTION_DIMS[cfg.task]:
        raise ValueError(
            f"policy action_dim {policy.arch.action_dim} != {sim.ACTION_DIMS[cfg.task]} for {cfg.task}"
        )
    stats = policy.norm_stats
    state, obs = sim.reset(cfg, rng)
    steps = 0
    done = False
    while not done:
        img = ds_mod.normalize_image(obs.rgb, obs.depth, stats)[None]
        prop = ds_mod.normalize_proprio(obs.proprio_vector()[None, :], stats)
        out = nn.ensemble_forward(policy, img, prop)[0]
        action = ds_mod.denormalize_action(out, stats)
        state, obs, done = sim.step(state, sim.Action.from_vector(action, cfg.task), cfg)
        steps += 1
    return sim.success(state), steps, state.prenoise_phi


_EVAL_CTX: dict = {}


def _eval_episode_worker(args):
    idx, seed_parts = args
    policy = _EVAL_CTX["policy"]
    cfg = _EVAL_CTX["cfg"]
    rng = stream(*seed_parts)
    success, steps, phi = run_episode(policy, cfg, rng)
    return EpisodeRecord(idx, derive_seed(*seed_parts), phi, success, steps)


def _run_episode_batch(policy, cfg, seed_part_list, workers: int) -> list[EpisodeRecord]:
    jobs = list(enumerate(seed_part_list))
    if workers > 1:
        _EVAL_CTX.update(policy=policy, cfg=cfg)
        try:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(_eval_episode_worker, jobs))
        finally:
            _EVAL_CTX.clear()
    _EVAL_CTX.update(policy=policy, cfg=cfg)
    try:
        return [_eval_episode_worker(j) for j in jobs]
    finally:
        _EVAL_CTX.clear()


def evaluate(
    policy: nn.PolicyEnsemble,
    task: str,
    view_mode: str,
    n_episodes: int,
    seed: int,
    policy_kind: str = "",
    phi_range: tuple[float, float] | None = None,
    workers: int = 1,
) -> SuccessStats:
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    cfg = sim.make_episode_config(task, view_mode, phi_range=phi_range)
    parts = [(seed, "eval", view_mode, i) for i in range(n_episodes)]
    records = _run_episode_batch(policy, cfg, parts, workers)
    return SuccessStats(task, policy_kind or view_mode, view_mode, records)


def condition_matrix(
    pi_m: nn.PolicyEnsemble,
    pi_f: nn.PolicyEnsemble,
    task: str,
    n_episodes: int,
    seed: int,
    workers: int = 1,
) -> dict[tuple[str, str], SuccessStats]:
    """The four-cell (policy multi/fixed) x (env multi/fixed) comparison.

    Within an environment column both policies see identical episode streams.
    """
    out = {}
    for env_kind in ("multi", "fixed"):
        cfg = sim.make_episode_config(task, env_kind)
        parts = [(seed, "eval", env_kind, i) for i in range(n_episodes)]
        for policy_kind, policy in (("multi", pi_m), ("fixed", pi_f)):
            records = _run_episode_batch(policy, cfg, parts, workers)
            out[(policy_kind, env_kind)] = SuccessStats(task, policy_kind, env_kind, records)
    return out


def ood_sweep(
    pi_m: nn.PolicyEnsemble,
    pi_f: nn.PolicyEnsemble,
    task: str,
    n_per_bin: int,
    seed: int,
    workers: int = 1,
) -> list[tuple[float, float, SuccessStats, SuccessStats]]:
    """Per-bin paired evaluation over the 12 base-heading bins [-0.8, 0.4]."""
    results = []
    for j, (lo, hi) in enumerate(OOD_BINS):
        cfg = sim.make_episode_config(task, "multi", phi_range=(lo, hi))
        parts = [(seed, "ood", j, i) for i in range(n_per_bin)]
        stats = []
        for policy_kind, policy in (("multi", pi_m), ("fixed", pi_f)):
            records = _run_episode_batch(policy, cfg, parts, workers)
            st = SuccessStats(task, policy_kind, f"bin[{lo:+.1f},{hi:+.1f}]", records)
            stats.append(st)
        results.append((lo, hi, stats[0], stats[1]))
    return results


# ---------------------------------------------------------------------------
# demo-quantity sweep


def demo_quantity_sweep(
    ds: Dataset,
    increments: list[int],
    seeds: list[int],
    train_config,
    n_eval_episodes: int,
    eval_seed: int,
    workers: int = 1,
) -> list[dict]:
    """Train on nested episode prefixes and evaluate each ensemble.

    Returns long-format rows; import of the trainer is deferred to keep this
    module import-light for consumers that only evaluate.
    """
    from .train import train_ensemble

    for k in increments:
        if k > len(ds.episodes):
            raise ValueError(f"increment {k} exceeds dataset size {len(ds.episodes)}")
    rows = []
    for base_seed in seeds:
        for k in sorted(increments):
            subset = Dataset(
                task=ds.task, view_mode=ds.view_mode, episodes=ds.episodes[:k], seed=ds.seed
            )
            policy = train_ensemble(subset, base_seed, train_config, workers=workers)
            stats = evaluate(
                policy,
                ds.task,
                ds.view_mode,
                n_eval_episodes,
                eval_seed,
                policy_kind=ds.view_mode,
                workers=workers,
            )
            rows.append(
                {
                    "task": ds.task,
                    "policy_kind": ds.view_mode,
                    "env_kind": ds.view_mode,
                    "demos": k,
                    "seed": base_seed,
                    "bin_lo": "",
                    "bin_hi": "",
                    "rate": stats.rate,
                }
            )
    return rows


def sweep_summary(rows: list[dict]) -> list[dict]:
    """Across-seed mean and two-sigma band per demo count."""
    by_demos: dict[int, list[float]] = {}
    for r in rows:
        by_demos.setdefault(r["demos"], []).append(r["rate"])
    out = []
    for demos in sorted(by_demos):
        rates = np.asarray(by_demos[demos], dtype=float)
        std = rates.std(ddof=1) if rates.size > 1 else 0.0
        out.append(
            {
                "demos": demos,
                "mean_rate": float(rates.mean()),
                "two_sigma": float(2.0 * std),
                "n_seeds": int(rates.size),
            }
        )
    return out


# ---------------------------------------------------------------------------
# CSV / metadata emission

CSV_COLUMNS = ["task", "policy_kind", "env_kind", "demos", "seed", "bin_lo", "bin_hi", "rate"]


def stats_row(st: SuccessStats, demos="", seed="", bin_lo="", bin_hi="") -> dict:
    return {
        "task": st.task,
        "policy_kind": st.policy_kind,
        "env_kind": st.env_kind,
        "demos": demos,
        "seed": seed,
        "bin_lo": bin_lo,
        "bin_hi": bin_hi,
        "rate": f"{st.rate:.6g}",
    }


def write_rows_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in CSV_COLUMNS})


def write_records_csv(path: Path, stats_list: list[SuccessStats]) -> None:
    """Per-episode records, from which every aggregate is recomputable."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["task", "policy_kind", "env_kind", "index", "seed", "prenoise_phi", "success", "steps"]
        )
        for st in stats_list:
            for r in st.records:
                writer.writerow(
                    [
                        st.task,
                        st.policy_kind,
                        st.env_kind,
                        r.index,
                        r.seed,
                        f"{r.prenoise_phi:.9g}",
                        int(r.success),
                        r.steps,
                    ]
                )


def write_metadata(path: Path, config: dict) -> None:
    """Deterministic companion metadata: config, seeds, code version."""
    lines = [f"mvbc_version: {__version__}"]
    for key in sorted(config):
        lines.append(f"{key}: {config[key]}")
    Path(path).write_text("\n".join(lines) + "\n")
