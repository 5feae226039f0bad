"""Command-line entry point.

Subcommands: generate, train, eval, verify, simulate, tube.
Exit codes: 0 success, 1 usage error, 2 numerical failure,
3 verification failure (verify only).
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .core import CtrenError, Dims, ValidationError, supply_rate_for
from .dynamics import make_output, make_rhs
from .gradients import ModelSpec
from .integrators import SolverConfig, SolverError, integrate, write_trajectory_csv
from .sysid import (OptimConfig, PendulumConfig, evaluate, generate_dataset,
                    load_dataset, save_dataset, train_sysid, tube_experiment,
                    write_tube_csv)
from .verification import verification_report

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY_FAIL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="ctren", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a pendulum dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n-exp", type=int, required=True)
    g.add_argument("--t-end", type=float, required=True)
    g.add_argument("--noise-std", type=float, required=True)
    g.add_argument("--sampling", choices=["irregular", "uniform"], required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--length", type=float, default=0.5)
    g.add_argument("--damping", type=float, default=1.5)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--mode", choices=["contractive", "iqc", "general"], required=True)
    t.add_argument("--property", dest="prop",
                   choices=["l2_gain", "passivity", "input_passivity", "output_passivity"])
    t.add_argument("--param", type=float)
    t.add_argument("--nx", type=int, required=True)
    t.add_argument("--nq", type=int, required=True)
    t.add_argument("--solver", choices=["euler", "rk4"], required=True)
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--epochs", type=int, required=True)
    t.add_argument("--lr", type=float, required=True)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--metrics-out")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--solver", default="dopri5", choices=["euler", "rk4", "dopri5"])
    e.add_argument("--steps", type=int, default=200)
    e.add_argument("--rtol", type=float, default=1e-7)
    e.add_argument("--atol", type=float, default=1e-9)

    v = sub.add_parser("verify", help="check the certificate of a checkpoint")
    v.add_argument("--model", required=True)
    v.add_argument("--empirical", action="store_true")
    v.add_argument("--pairs", type=int, default=5)
    v.add_argument("--out")

    s = sub.add_parser("simulate", help="simulate a checkpointed model")
    s.add_argument("--model", required=True)
    s.add_argument("--x0", required=True, help="comma-separated initial state")
    s.add_argument("--t-end", type=float, required=True)
    s.add_argument("--solver", default="dopri5", choices=["euler", "rk4", "dopri5"])
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--rtol", type=float, default=1e-7)
    s.add_argument("--atol", type=float, default=1e-9)
    s.add_argument("--times", default="uniform:200",
                   help="'uniform:K' or a path to a file with one time per line")
    s.add_argument("--out", required=True)

    tb = sub.add_parser("tube", help="perturbed-initial-state trajectory bundle")
    tb.add_argument("--model", required=True)
    tb.add_argument("--x0", required=True)
    tb.add_argument("--radius", type=float, required=True)
    tb.add_argument("--count", type=int, required=True)
    tb.add_argument("--t-end", type=float, required=True)
    tb.add_argument("--seed", type=int, default=0)
    tb.add_argument("--out", required=True)
    return p


def _parse_x0(text: str, n: int) -> np.ndarray:
    try:
        vals = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise _UsageError(f"--x0 must be a comma-separated float list: {exc}") from exc
    if vals.size != n:
        raise _UsageError(f"--x0 has {vals.size} entries, model state dimension is {n}")
    return vals


def _cmd_generate(args) -> int:
    pend = PendulumConfig(length=args.length, damping=args.damping)
    ds = generate_dataset(pend, args.n_exp, args.t_end, args.noise_std,
                          args.sampling, args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {args.out} ({args.n_exp} experiments)")
    return EXIT_OK


def _cmd_train(args) -> int:
    ds = load_dataset(args.data)
    sr = None
    if args.mode == "iqc":
        if args.prop is None:
            raise _UsageError("--property is required in iqc mode")
        sr = supply_rate_for(args.prop, p=2, m=1, param=args.param)
    dims = Dims(n=args.nx, q=args.nq, m=1, p=2)
    solver = SolverConfig(method=args.solver, steps=args.steps,
                          t_span=(0.0, ds.t_end))
    optim = OptimConfig(epochs=args.epochs, lr=args.lr)
    res = train_sysid(args.mode, dims, ds, solver, optim, seed=args.seed, sr=sr,
                      metrics_path=args.metrics_out)
    if res.diverged:
        print("training diverged after retries", file=sys.stderr)
        return EXIT_NUMERICAL
    meta = {"seed": args.seed, "epochs": len(res.metrics),
            "final_train_loss": res.metrics[-1]["train_loss"] if res.metrics else None,
            "certified_every_epoch": res.lmi_ok_every_epoch,
            "data": args.data}
    save_checkpoint(args.out, res.spec, res.free, solver, optim, meta)
    print(f"wrote {args.out} (final train loss "
          f"{meta['final_train_loss']:.6g})" if res.metrics else f"wrote {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    ck = load_checkpoint(args.model)
    ds = load_dataset(args.data)
    cfg = SolverConfig(method=args.solver, steps=args.steps, rtol=args.rtol,
                       atol=args.atol, t_span=(0.0, ds.t_end))
    rep = evaluate(ck.spec, ck.free, ds, cfg)
    print(json.dumps({"test_loss": rep.value,
                      "per_experiment": rep.per_experiment.tolist()}, indent=1))
    return EXIT_OK


def _cmd_verify(args) -> int:
    ck = load_checkpoint(args.model)
    if ck.cert is None:
        print(json.dumps({"mode": ck.spec.mode, "lmi_pass": False,
                          "reason": "general-mode checkpoint carries no certificate"}))
        return EXIT_VERIFY_FAIL
    report = verification_report(ck.spec.mode, ck.params, ck.cert, sr=ck.spec.sr,
                                 act=ck.spec.activation,
                                 empirical_pairs=args.pairs if args.empirical else 0)
    text = json.dumps(report, indent=1)
    print(text)
    if args.out:
        from .sysid import _atomic_write
        _atomic_write(args.out, text)
    ok = report["lmi_pass"]
    if args.empirical and "empirical" in report:
        ok = ok and report["empirical"]["monotone_V"]
    return EXIT_OK if ok else EXIT_VERIFY_FAIL


def _sample_times(args, t_end: float) -> np.ndarray:
    if args.times.startswith("uniform:"):
        try:
            k = int(args.times.split(":", 1)[1])
        except ValueError as exc:
            raise _UsageError("--times uniform:K needs integer K") from exc
        return np.linspace(0.0, t_end, k)
    try:
        with open(args.times) as fh:
            return np.array([float(line) for line in fh if line.strip()])
    except OSError as exc:
        raise _UsageError(f"--times file unreadable: {exc}") from exc


def _cmd_simulate(args) -> int:
    ck = load_checkpoint(args.model)
    x0 = _parse_x0(args.x0, ck.spec.dims.n)
    cfg = SolverConfig(method=args.solver, steps=args.steps, rtol=args.rtol,
                       atol=args.atol, t_span=(0.0, args.t_end))
    rhs = make_rhs(ck.params, ck.spec.activation)
    out = make_output(ck.params, ck.spec.activation)
    traj = integrate(rhs, x0, cfg, _sample_times(args, args.t_end), output_fn=out)
    write_trajectory_csv(traj, args.out)
    print(f"wrote {args.out} (nfe = {traj.nfe})")
    return EXIT_OK


def _cmd_tube(args) -> int:
    ck = load_checkpoint(args.model)
    x0 = _parse_x0(args.x0, ck.spec.dims.n)
    res = tube_experiment(ck.params, ck.spec.activation, x0, args.radius,
                          args.count, args.t_end, cert=ck.cert, seed=args.seed)
    write_tube_csv(res, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "simulate": _cmd_simulate,
    "tube": _cmd_tube,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, CtrenError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
