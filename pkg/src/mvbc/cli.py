"""Command-line entry point for the workbench pipelines.

Exit codes group failures by class so scripts can branch on them:
0 success, 2 usage (argparse), 3 missing file, 4 corrupt or malformed
artifact, 5 dimension mismatch between model and task, 6 demo-collection
failure, 7 verification suite failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_FORMAT = 4
EXIT_DIM_MISMATCH = 5
EXIT_COLLECTION = 6
EXIT_VERIFY = 7
EXIT_OTHER = 1


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("MVBC_WORKERS", "1")))
    except ValueError:
        return 1


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvbc",
        description="multiview behaviour-cloning workbench",
    )
    parser.add_argument("--version", action="version", version=f"mvbc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    workers_kw = dict(type=int, default=_default_workers(), help="parallel workers")

    p = sub.add_parser("gen-demos", help="collect scripted demonstrations")
    p.add_argument("--task", required=True, choices=["lift", "door", "stack"])
    p.add_argument("--views", required=True, choices=["multi", "fixed"])
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--workers", **workers_kw)

    p = sub.add_parser("train", help="train a policy ensemble on a dataset")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--demos", type=int, default=None, help="train on the first K episodes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=["paper", "ci"], default="ci")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--history-dir", type=Path, default=None)
    p.add_argument("--workers", **workers_kw)

    p = sub.add_parser("eval", help="success rate of one policy in one condition")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--task", required=True, choices=["lift", "door", "stack"])
    p.add_argument("--views", required=True, choices=["multi", "fixed"])
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--workers", **workers_kw)

    p = sub.add_parser("matrix", help="policy-by-environment condition matrix")
    p.add_argument("--model-m", required=True, type=Path, help="multiview-trained model")
    p.add_argument("--model-f", required=True, type=Path, help="fixed-view-trained model")
    p.add_argument("--task", required=True, choices=["lift", "door", "stack"])
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--workers", **workers_kw)

    p = sub.add_parser("sweep", help="success vs demonstration count")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--increments", required=True, type=_int_list, help="e.g. 25,50,100")
    p.add_argument("--seeds", required=True, type=_int_list, help="e.g. 0,1,2")
    p.add_argument("--profile", choices=["paper", "ci"], default="ci")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--eval-seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--workers", **workers_kw)

    p = sub.add_parser("ood", help="out-of-distribution base-pose sweep")
    p.add_argument("--model-m", required=True, type=Path)
    p.add_argument("--model-f", required=True, type=Path)
    p.add_argument("--task", required=True, choices=["lift", "door", "stack"])
    p.add_argument("--per-bin", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--workers", **workers_kw)

    p = sub.add_parser("featviz", help="soft-argmax feature consistency analysis")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--task", default="door", choices=["lift", "door", "stack"])
    p.add_argument("--views", default="multi", choices=["multi", "fixed"])
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("serve", help="run the teleoperation recording service")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--task", required=True, choices=["lift", "door", "stack"])
    p.add_argument("--views", required=True, choices=["multi", "fixed"])
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hz", type=float, default=10.0)

    p = sub.add_parser("verify", help="run the oracle and invariant suites")
    p.add_argument("--fast", action="store_true", help="reduced sample counts")

    return parser


# ---------------------------------------------------------------------------
# command bodies


def _load_model(path: Path):
    from . import nn

    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    return nn.load_ensemble(path)


def _load_data(path: Path):
    from . import dataset as ds_mod

    if not path.exists():
        raise FileNotFoundError(f"dataset directory not found: {path}")
    return ds_mod.load(path)


def _train_config(profile: str):
    from .train import CI_PROFILE, PAPER_PROFILE

    return PAPER_PROFILE if profile == "paper" else CI_PROFILE


def cmd_gen_demos(args) -> int:
    from . import dataset as ds_mod
    from .expert import collect_demos

    ds = collect_demos(
        args.task, args.views, args.n, seed=args.seed, noise=args.noise, workers=args.workers
    )
    ds_mod.save(ds, args.out)
    print(f"wrote {len(ds.episodes)} episodes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from . import nn
    from . import dataset as ds_mod
    from .train import train_ensemble

    ds = _load_data(args.data)
    if args.demos is not None:
        if args.demos > len(ds.episodes):
            raise ValueError(
                f"--demos {args.demos} exceeds dataset size {len(ds.episodes)}"
            )
        ds = ds_mod.Dataset(
            task=ds.task, view_mode=ds.view_mode, episodes=ds.episodes[: args.demos], seed=ds.seed
        )
    if args.history_dir is not None:
        args.history_dir.mkdir(parents=True, exist_ok=True)
    policy = train_ensemble(
        ds,
        base_seed=args.seed,
        config=_train_config(args.profile),
        history_dir=args.history_dir,
        workers=args.workers,
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    nn.save_ensemble(args.out, policy)
    print(f"wrote ensemble ({len(policy.members)} members) to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import evaluation

    policy = _load_model(args.model)
    stats = evaluation.evaluate(
        policy, args.task, args.views, args.episodes, args.seed, workers=args.workers
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_rows_csv(args.out, [evaluation.stats_row(stats, seed=args.seed)])
    evaluation.write_metadata(
        args.out.with_suffix(args.out.suffix + ".meta"),
        {
            "command": "eval",
            "model": args.model,
            "task": args.task,
            "views": args.views,
            "episodes": args.episodes,
            "seed": args.seed,
        },
    )
    print(f"{args.task} {args.views}: success rate {stats.rate:.3f} over {stats.n_episodes}")
    return EXIT_OK


def cmd_matrix(args) -> int:
    from . import evaluation

    pi_m = _load_model(args.model_m)
    pi_f = _load_model(args.model_f)
    cells = evaluation.condition_matrix(
        pi_m, pi_f, args.task, args.episodes, args.seed, workers=args.workers
    )
    rows = [
        evaluation.stats_row(cells[(pk, ek)], seed=args.seed)
        for pk in ("multi", "fixed")
        for ek in ("multi", "fixed")
    ]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_rows_csv(args.out, rows)
    evaluation.write_metadata(
        args.out.with_suffix(args.out.suffix + ".meta"),
        {
            "command": "matrix",
            "model_m": args.model_m,
            "model_f": args.model_f,
            "task": args.task,
            "episodes": args.episodes,
            "seed": args.seed,
        },
    )
    for (pk, ek), st in sorted(cells.items()):
        print(f"policy {pk:5s} | env {ek:5s}: {st.rate:.3f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from . import evaluation

    ds = _load_data(args.data)
    rows = evaluation.demo_quantity_sweep(
        ds,
        args.increments,
        args.seeds,
        _train_config(args.profile),
        args.episodes,
        args.eval_seed,
        workers=args.workers,
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_rows_csv(args.out, rows)
    evaluation.write_metadata(
        args.out.with_suffix(args.out.suffix + ".meta"),
        {
            "command": "sweep",
            "data": args.data,
            "increments": args.increments,
            "seeds": args.seeds,
            "profile": args.profile,
            "episodes": args.episodes,
            "eval_seed": args.eval_seed,
        },
    )
    for row in evaluation.sweep_summary(rows):
        print(
            f"demos {row['demos']:4d}: mean {row['mean_rate']:.3f} "
            f"two-sigma {row['two_sigma']:.3f} over {row['n_seeds']} seeds"
        )
    return EXIT_OK


def cmd_ood(args) -> int:
    from . import evaluation

    pi_m = _load_model(args.model_m)
    pi_f = _load_model(args.model_f)
    results = evaluation.ood_sweep(
        pi_m, pi_f, args.task, args.per_bin, args.seed, workers=args.workers
    )
    rows = []
    for lo, hi, st_m, st_f in results:
        for st in (st_m, st_f):
            rows.append(
                {
                    "task": st.task,
                    "policy_kind": st.policy_kind,
                    "env_kind": "multi",
                    "demos": "",
                    "seed": args.seed,
                    "bin_lo": lo,
                    "bin_hi": hi,
                    "rate": f"{st.rate:.6g}",
                }
            )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_rows_csv(args.out, rows)
    evaluation.write_metadata(
        args.out.with_suffix(args.out.suffix + ".meta"),
        {
            "command": "ood",
            "model_m": args.model_m,
            "model_f": args.model_f,
            "task": args.task,
            "per_bin": args.per_bin,
            "seed": args.seed,
        },
    )
    for lo, hi, st_m, st_f in results:
        print(f"bin [{lo:+.1f}, {hi:+.1f}]: multi {st_m.rate:.2f}  fixed {st_f.rate:.2f}")
    return EXIT_OK


def cmd_featviz(args) -> int:
    from . import featviz

    policy = _load_model(args.model)
    selected, spreads = featviz.analyze_policy(
        policy, args.task, args.views, args.seed, n_episodes=args.episodes
    )
    paths = featviz.export_report(selected, spreads, args.out, task=args.task)
    for s in spreads:
        print(f"channel {s.channel:2d} on {s.target}: trace {s.trace:.3e} ({s.n_points} points)")
    print(f"report written to {paths['points'].parent}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    print(f"serving {args.task} ({args.views}) on port {args.port}, saving to {args.out}")
    serve(args.port, args.task, args.views, args.out, seed=args.seed, hz=args.hz)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(fast=args.fast)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


COMMANDS = {
    "gen-demos": cmd_gen_demos,
    "train": cmd_train,
    "eval": cmd_eval,
    "matrix": cmd_matrix,
    "sweep": cmd_sweep,
    "ood": cmd_ood,
    "featviz": cmd_featviz,
    "serve": cmd_serve,
    "verify": cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    from . import dataset as ds_mod
    from .expert import CollectionError

    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ds_mod.MagicError, ds_mod.TruncationError, ds_mod.ChecksumError) as exc:
        print(f"error: corrupt or malformed artifact: {exc}", file=sys.stderr)
        return EXIT_BAD_FORMAT
    except ds_mod.DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FORMAT
    except CollectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COLLECTION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIM_MISMATCH
    except KeyboardInterrupt:
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
