#!/usr/bin/env python3
"""Pre-warm the trained-artifact cache that the acceptance tests read.

The acceptance suite (tests/test_acceptance.py) needs twelve trained
ensembles (2 tasks x 2 view modes x 3 seeds) plus their evaluation
matrices, the door OOD sweep, and the feature-spread summaries.  Run
this script first so pytest only loads finished artifacts; with a cold
cache the tests rebuild the same artifacts inline, which takes hours.

Idempotent: finished artifacts are skipped, so it can be interrupted
and resumed.  Artifacts land under .cache/acceptance (override with
MVBC_ACCEPTANCE_CACHE).
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

import acceptance_artifacts as aa


def log(msg: str) -> None:
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--seeds", type=int, nargs="+", default=list(aa.TRAIN_SEEDS),
        help="ensemble base seeds to build (default: all three)",
    )
    parser.add_argument(
        "--workers", type=int, default=1,
        help="worker processes for collection, training, and evaluation",
    )
    args = parser.parse_args()

    root = aa.cache_root()
    log(f"cache root: {root}")
    for task in aa.TASKS:
        for mode in aa.MODES:
            t0 = time.time()
            ds = aa.get_dataset(root, task, mode, workers=args.workers)
            log(f"dataset {task}/{mode}: {len(ds.episodes)} episodes  {time.time() - t0:.0f}s")

    for seed in args.seeds:
        for task in aa.TASKS:
            for mode in aa.MODES:
                t0 = time.time()
                aa.get_ensemble(root, task, mode, seed, workers=args.workers)
                log(f"ensemble {task}/{mode} s{seed}  {time.time() - t0:.0f}s")
            t0 = time.time()
            m = aa.get_matrix(root, task, seed, workers=args.workers)
            cells = " ".join(f"pi_{k[0]}|T_{k[1]}={m[k].rate:.2f}" for k in sorted(m))
            log(f"matrix {task} s{seed}: {cells}  {time.time() - t0:.0f}s")
        t0 = time.time()
        rows = aa.get_ood(root, seed, workers=args.workers)
        bins = " ".join(
            f"[{lo:+.1f},{hi:+.1f}]={sm.rate:.1f}/{sf.rate:.1f}" for lo, hi, sm, sf in rows
        )
        log(f"ood s{seed} (multi/fixed): {bins}  {time.time() - t0:.0f}s")
        for kind in aa.MODES:
            t0 = time.time()
            fv = aa.get_featviz(root, seed, kind, workers=args.workers)
            log(
                f"featviz s{seed} {kind}: selected {fv['n_selected']} "
                f"mean_trace {fv['mean_trace']}  {time.time() - t0:.0f}s"
            )
    log("cache complete")


if __name__ == "__main__":
    main()
