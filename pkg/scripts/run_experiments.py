#!/usr/bin/env python3
"""Run the full multiview imitation study and emit result tables.

Stages, per task (lift, door):
  1. collect fixed-view and multiview demonstration sets
  2. train pi_f and pi_m ensembles for each seed
  3. policy-by-environment condition matrix
and for door additionally:
  4. out-of-distribution base-pose sweep
  5. soft-argmax feature-consistency reports (both policies, multiview)
plus an optional success-vs-demo-count sweep per view mode.

Everything is seeded and resumable: datasets and models already present
under --out are reused.  Tables land under <out>/tables as long-format
CSVs with a .meta sidecar recording the exact configuration.
"""

import argparse
import csv
import time
from pathlib import Path

from mvbc import dataset as ds_mod
from mvbc import evaluation, featviz, nn
from mvbc.expert import collect_demos
from mvbc.train import CI_PROFILE, PAPER_PROFILE, train_ensemble

MODES = ("fixed", "multi")


def log(msg: str) -> None:
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def get_dataset(out: Path, task: str, mode: str, args) -> ds_mod.Dataset:
    path = out / "datasets" / f"{task}_{mode}"
    if (path / "manifest.json").exists():
        return ds_mod.load(path)
    log(f"collecting {args.demos} {task}/{mode} demos")
    ds = collect_demos(
        task, mode, args.demos, seed=args.demo_seed, noise=args.demo_noise, workers=args.workers
    )
    ds_mod.save(ds, path)
    return ds


def get_model(out: Path, task: str, mode: str, seed: int, args) -> nn.PolicyEnsemble:
    path = out / "models" / f"{task}_{mode}_s{seed}.mvnn"
    if path.exists():
        return nn.load_ensemble(path)
    ds = get_dataset(out, task, mode, args)
    log(f"training {task}/{mode} seed {seed}")
    t0 = time.time()
    policy = train_ensemble(
        ds,
        base_seed=seed,
        config=args.train_config,
        history_dir=out / "history" / f"{task}_{mode}_s{seed}",
        workers=args.workers,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    nn.save_ensemble(path, policy)
    log(f"trained {task}/{mode} seed {seed} in {time.time() - t0:.0f}s")
    return policy


def write_table(path: Path, rows: list[dict], meta: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_rows_csv(path, rows)
    evaluation.write_metadata(path.with_suffix(path.suffix + ".meta"), meta)
    log(f"wrote {path}")


def run_matrices(out: Path, task: str, args) -> None:
    rows = []
    for seed in args.seeds:
        pi_m = get_model(out, task, "multi", seed, args)
        pi_f = get_model(out, task, "fixed", seed, args)
        cells = evaluation.condition_matrix(
            pi_m, pi_f, task, args.episodes, args.eval_seed, workers=args.workers
        )
        for key in sorted(cells):
            rows.append(evaluation.stats_row(cells[key], demos=args.demos, seed=seed))
        summary = " ".join(
            f"pi_{pk}|T_{ek}={cells[(pk, ek)].rate:.2f}" for pk, ek in sorted(cells)
        )
        log(f"matrix {task} seed {seed}: {summary}")
    write_table(
        out / "tables" / f"{task}_matrix.csv",
        rows,
        {"stage": "matrix", "task": task, "seeds": args.seeds,
         "episodes": args.episodes, "eval_seed": args.eval_seed, "demos": args.demos},
    )


def run_ood(out: Path, args) -> None:
    rows = []
    for seed in args.seeds:
        pi_m = get_model(out, "door", "multi", seed, args)
        pi_f = get_model(out, "door", "fixed", seed, args)
        results = evaluation.ood_sweep(
            pi_m, pi_f, "door", args.ood_per_bin, args.ood_seed, workers=args.workers
        )
        for lo, hi, st_m, st_f in results:
            for st in (st_m, st_f):
                rows.append(
                    evaluation.stats_row(st, demos=args.demos, seed=seed, bin_lo=lo, bin_hi=hi)
                )
        log(f"ood door seed {seed} done")
    write_table(
        out / "tables" / "door_ood.csv",
        rows,
        {"stage": "ood", "task": "door", "seeds": args.seeds,
         "per_bin": args.ood_per_bin, "ood_seed": args.ood_seed},
    )


def run_featviz(out: Path, args) -> None:
    rows = []
    for seed in args.seeds:
        for kind in MODES:
            policy = get_model(out, "door", kind, seed, args)
            try:
                selected, spreads = featviz.analyze_policy(
                    policy, "door", "multi", args.featviz_seed
                )
            except featviz.FeatvizError as exc:
                log(f"featviz door {kind} seed {seed}: {exc}")
                continue
            report_dir = out / "featviz" / f"door_s{seed}_{kind}"
            featviz.export_report(selected, spreads, report_dir, task="door")
            rows.append(
                {
                    "task": "door",
                    "policy_kind": kind,
                    "seed": seed,
                    "n_selected": len(selected),
                    "mean_trace": f"{featviz.mean_trace(spreads):.6g}" if spreads else "",
                }
            )
            log(f"featviz door {kind} seed {seed}: report in {report_dir}")
    path = out / "tables" / "door_spread.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["task", "policy_kind", "seed", "n_selected", "mean_trace"])
        writer.writeheader()
        writer.writerows(rows)
    log(f"wrote {path}")


def run_sweep(out: Path, task: str, mode: str, args) -> None:
    ds = get_dataset(out, task, mode, args)
    rows = evaluation.demo_quantity_sweep(
        ds,
        args.sweep_increments,
        args.seeds,
        args.train_config,
        args.episodes,
        args.eval_seed,
        workers=args.workers,
    )
    write_table(
        out / "tables" / f"{task}_{mode}_sweep.csv",
        rows,
        {"stage": "sweep", "task": task, "mode": mode, "seeds": args.seeds,
         "increments": args.sweep_increments, "episodes": args.episodes},
    )
    for row in evaluation.sweep_summary(rows):
        log(
            f"sweep {task}/{mode} demos {row['demos']:4d}: "
            f"mean {row['mean_rate']:.3f} two-sigma {row['two_sigma']:.3f}"
        )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("results"))
    parser.add_argument("--tasks", nargs="+", default=["lift", "door"], choices=["lift", "door"])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--demos", type=int, default=100)
    parser.add_argument("--demo-seed", type=int, default=7)
    parser.add_argument("--demo-noise", type=float, default=0.05)
    parser.add_argument("--episodes", type=int, default=25, help="eval episodes per condition")
    parser.add_argument("--eval-seed", type=int, default=500)
    parser.add_argument("--ood-per-bin", type=int, default=10)
    parser.add_argument("--ood-seed", type=int, default=501)
    parser.add_argument("--featviz-seed", type=int, default=502)
    parser.add_argument("--sweep-increments", type=int, nargs="+", default=[25, 50, 100])
    parser.add_argument("--profile", choices=["ci", "paper"], default="ci")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--skip-sweep", action="store_true",
                        help="skip the expensive success-vs-demo-count stage")
    parser.add_argument("--skip-featviz", action="store_true")
    args = parser.parse_args()
    args.train_config = CI_PROFILE if args.profile == "ci" else PAPER_PROFILE

    out = args.out
    for task in args.tasks:
        for mode in MODES:
            get_dataset(out, task, mode, args)
    for task in args.tasks:
        run_matrices(out, task, args)
    if "door" in args.tasks:
        run_ood(out, args)
        if not args.skip_featviz:
            run_featviz(out, args)
    if not args.skip_sweep:
        for task in args.tasks:
            for mode in MODES:
                run_sweep(out, task, mode, args)
    log("all stages complete")


if __name__ == "__main__":
    main()
