"""Run the desk-scale pipeline end to end and print a results table.

    python3 scripts/run_desk.py --root runs/desk
    python3 scripts/run_desk.py --root runs/desk --variants avs avg max --epochs 10

Datasets, render caches and finished runs under ``--root`` are reused.
"""

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from pointvst.evaluation import visibility_accuracy
from pointvst.experiment import DeskSetup, prepare, pretrained_probe, random_init_probe, train
from pointvst.model import POOLING_MODES


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--root", default="runs/desk")
    ap.add_argument("--variants", nargs="+", default=["avs", "avg"], choices=POOLING_MODES)
    ap.add_argument("--epochs", type=int, default=DeskSetup.epochs)
    ap.add_argument("--train-per-class", type=int, default=DeskSetup.train_per_class)
    ap.add_argument("--test-per-class", type=int, default=DeskSetup.test_per_class)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    setup = replace(DeskSetup(root=args.root), epochs=args.epochs, train_per_class=args.train_per_class,
                    test_per_class=args.test_per_class, jobs=args.jobs)
    t0 = time.perf_counter()
    train_ds, test_ds = prepare(setup)
    print(f"data ready: {train_ds.n_clouds} train / {test_ds.n_clouds} test clouds ({time.perf_counter() - t0:.0f}s)")

    rand, rand_all = random_init_probe(setup, train_ds, test_ds)
    results = {"random_init": {"probe_median": rand, "probe_seeds": rand_all}}
    print(f"random init probe: median {rand:.3f} {rand_all}")
    for pooling in args.variants:
        state, seconds = train(setup, train_ds, pooling, log=lambda e: print(f"  [{pooling}] {e.line()}", flush=True))
        probe, probe_all = pretrained_probe(state, train_ds, test_ds, setup.probe_seeds)
        vis = visibility_accuracy(state.params, test_ds)
        first, last = state.history[0].total, state.history[-1].total
        results[pooling] = {"seconds": seconds, "loss_first": first, "loss_last": last, "probe_median": probe,
                            "probe_seeds": probe_all, "visibility": {str(k): v for k, v in vis.items()}}
        print(f"{pooling}: {seconds:.0f}s, L {first:.4f} -> {last:.4f}, probe median {probe:.3f}, "
              f"visibility@0.5 {vis[0.5]:.4f}")

    out = Path(args.root) / "results.json"
    out.write_text(json.dumps(results, indent=2) + "\n")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
