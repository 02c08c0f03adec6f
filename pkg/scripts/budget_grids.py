"""Robust accuracy over the six-budget grid of every attack kind.

Trains the linear and perceptron models on the combined corpus and writes a
sweep CSV per model (carry-forward on) into OUT_DIR.  The perceptron sweep
takes about five minutes on one core.
"""
import argparse
from pathlib import Path

import numpy as np

from ballotadv import classifiers as C, synth
from ballotadv.attacks import pgd, sweep

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--limit", type=int, help="attack only the first N validation images")
    a = ap.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=False)
    ds, _ = synth.generate_dataset(synth.DatasetSpec.preset("combined-small", seed=a.seed))
    val = ds.split("val")
    if a.limit:
        val = val.subset(np.arange(min(a.limit, len(val))))
    models = {"linear-C": ("linear", C.TrainConfig(lr=0.01, standardize=True, seed=a.seed)),
              "mlp-C": ("mlp", C.TrainConfig(seed=a.seed))}
    configs = [c for k in pgd.KINDS for c in sweep.grid_configs(k, seed=a.seed)]
    for name, (kind, tc) in models.items():
        model, _ = C.train(ds.split("train"), kind, tc)
        rows = sweep.attack_sweep(model, val, configs)
        sweep.write_sweep_csv(out / f"{name}.csv", rows, {"model": name})
        for r, c in zip(rows, configs):
            print(f"{name:9s} {r.kind:8s} {sweep.budget_label(c):18s} {r.robust_accuracy:.3f}", flush=True)
