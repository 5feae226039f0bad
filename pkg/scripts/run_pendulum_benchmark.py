#!/usr/bin/env python3
"""Train a certified model on the noisy pendulum benchmark and report the
held-out loss. Writes a checkpoint, per-epoch metrics, and an evaluation
summary into --outdir."""
import argparse
import json
import os
import time

from ctren.core import Dims
from ctren.integrators import SolverConfig
from ctren.sysid import (OptimConfig, PendulumConfig, evaluate,
                         generate_dataset, save_dataset, train_sysid)
from ctren.checkpoint import save_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="artifacts/pendulum")
    ap.add_argument("--mode", default="contractive",
                    choices=["contractive", "general"])
    ap.add_argument("--n-exp", type=int, default=50)
    ap.add_argument("--noise-std", type=float, default=0.1)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--lr", type=float, default=1e-2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    os.makedirs(args.outdir, exist_ok=True)

    pend = PendulumConfig(length=0.5, damping=1.5)
    train_ds = generate_dataset(pend, args.n_exp, 8.0, args.noise_std,
                                "irregular", seed=0)
    test_ds = generate_dataset(pend, 20, 8.0, 0.0, "irregular", seed=1)
    save_dataset(train_ds, os.path.join(args.outdir, "train.csv"))
    save_dataset(test_ds, os.path.join(args.outdir, "test.csv"))

    solver = SolverConfig(method="rk4", steps=100, t_span=(0.0, 8.0))
    optim = OptimConfig(epochs=args.epochs, lr=args.lr)
    t0 = time.perf_counter()
    run = train_sysid(args.mode, Dims(4, 5, 1, 2), train_ds, solver, optim,
                      seed=args.seed,
                      metrics_path=os.path.join(args.outdir, "metrics.csv"))
    wall = time.perf_counter() - t0
    save_checkpoint(os.path.join(args.outdir, "model.json"), run.spec,
                    run.free, solver, optim,
                    {"seed": args.seed, "epochs": len(run.metrics)})
    test = evaluate(run.spec, run.free, test_ds)
    summary = {
        "mode": args.mode,
        "train_loss": run.metrics[-1]["train_loss"] if run.metrics else None,
        "test_loss": test.value,
        "certified_every_epoch": run.lmi_ok_every_epoch,
        "diverged": run.diverged,
        "wall_seconds": wall,
    }
    with open(os.path.join(args.outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
