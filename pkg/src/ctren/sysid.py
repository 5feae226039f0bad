"""Nonlinear-pendulum system-identification benchmark: plant, irregularly
sampled noisy dataset generation, the training/evaluation harness with
feature-augmented initial states, trajectory tubes, and the
irregular-sampling robustness study."""
from __future__ import annotations

import csv
import json
import os
import tempfile
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Activation, Certificate, Dims, ExplicitParams, SupplyRate, ValidationError
from .dynamics import make_output, make_rhs
from .gradients import (AdamState, LossReport, ModelSpec, SampledExperiment,
                        adam_init, adam_step, explicit_and_cert, mse_loss,
                        random_free, value_and_grad_dict)
from .integrators import SolverConfig, integrate
from .verification import assemble_contractivity_lmi, assemble_iqc_lmi, pd_check

GRAVITY = 9.81  # not stated by the benchmark protocol; standard value


@dataclass(frozen=True)
class PendulumConfig:
    length: float = 0.5
    damping: float = 1.5
    gravity: float = GRAVITY

    def __post_init__(self):
        if self.length <= 0 or self.damping <= 0:
            raise ValidationError("length and damping must be positive")


def pendulum_rhs(cfg: PendulumConfig, state) -> np.ndarray:
    """state = [alpha, alpha_dot]; l a'' + beta a' + g sin(a) = 0."""
    alpha, rate = state
    return np.array([rate, -(cfg.damping / cfg.length) * rate
                     - (cfg.gravity / cfg.length) * np.sin(alpha)])


def pendulum_energy(cfg: PendulumConfig, state) -> float:
    """E = 1/2 l a'^2 + g (1 - cos a); strictly dissipated for beta > 0."""
    alpha, rate = np.asarray(state, dtype=float).T
    return 0.5 * cfg.length * rate ** 2 + cfg.gravity * (1.0 - np.cos(alpha))


@dataclass(frozen=True)
class ExperimentRecord:
    init: np.ndarray      # (2,) known initial condition (alpha, alpha_dot)
    times: np.ndarray     # (n_i,) strictly ascending in [0, t_end]
    z: np.ndarray         # (n_i, 2) noisy measurements


@dataclass(frozen=True)
class Dataset:
    experiments: tuple[ExperimentRecord, ...]
    t_end: float
    noise_std: float
    seed: int
    sampling: str
    pendulum: PendulumConfig = PendulumConfig()

    def model_experiments(self, n: int) -> list[SampledExperiment]:
        """Lift each experiment to an n-dimensional model initial state:
        observed (alpha, alpha_dot) in the first two coordinates, the
        augmentation coordinates initialized to exactly zero."""
        if n < 2:
            raise ValidationError("model state must have n >= 2 to hold the observation")
        out = []
        for exp in self.experiments:
            x0 = np.zeros(n)
            x0[:2] = exp.init
            out.append(SampledExperiment(x0=x0, times=exp.times, targets=exp.z))
        return out


def _draw_times(rng: np.random.Generator, n_i: int, t_end: float, sampling: str) -> np.ndarray:
    if sampling == "uniform":
        return np.linspace(0.0, t_end, n_i)
    while True:
        t = np.sort(rng.uniform(0.0, t_end, size=n_i))
        if n_i == 1 or np.all(np.diff(t) > 0):
            return t


def generate_dataset(pend: PendulumConfig, n_exp: int, t_end: float,
                     noise_std: float, sampling: str = "irregular",
                     seed: int = 0, samples_range: tuple[int, int] = (10, 30),
                     initial_conditions: np.ndarray | None = None) -> Dataset:
    """Simulate the pendulum (dopri5, rtol = atol = 1e-10) from random initial
    conditions, sample at sorted random (or evenly spaced) times, and add
    i.i.d. Gaussian measurement noise. Deterministic given the seed."""
    if n_exp < 1:
        raise ValidationError("need at least one experiment")
    if sampling not in ("irregular", "uniform"):
        raise ValidationError("sampling must be 'irregular' or 'uniform'")
    rng = np.random.default_rng(seed)
    if initial_conditions is None:
        ics = np.column_stack([rng.uniform(-np.pi / 2, np.pi / 2, n_exp),
                               rng.uniform(-1.0, 1.0, n_exp)])
    else:
        ics = np.asarray(initial_conditions, dtype=float)
        if ics.shape != (n_exp, 2):
            raise ValidationError("initial_conditions must have shape (n_exp, 2)")
    rhs = lambda t, x: pendulum_rhs(pend, x)
    cfg = SolverConfig(method="dopri5", rtol=1e-10, atol=1e-10, t_span=(0.0, t_end))
    records = []
    for i in range(n_exp):
        n_i = int(rng.integers(samples_range[0], samples_range[1] + 1))
        times = _draw_times(rng, n_i, t_end, sampling)
        traj = integrate(rhs, ics[i], cfg, times)
        noise = noise_std * rng.standard_normal(traj.states.shape)
        records.append(ExperimentRecord(init=ics[i], times=traj.times,
                                        z=traj.states + noise))
    return Dataset(experiments=tuple(records), t_end=t_end, noise_std=noise_std,
                   seed=seed, sampling=sampling, pendulum=pend)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(ds: Dataset, path: str) -> None:
    """CSV (exp_id,t,z1,z2) plus a JSON sidecar with the generation metadata."""
    rows = ["exp_id,t,z1,z2"]
    for i, exp in enumerate(ds.experiments):
        for t, z in zip(exp.times, exp.z):
            rows.append(f"{i},{t:.17g},{z[0]:.17g},{z[1]:.17g}")
    _atomic_write(path, "\n".join(rows) + "\n")
    meta = {
        "n_exp": len(ds.experiments),
        "t_end": ds.t_end,
        "noise_std": ds.noise_std,
        "seed": ds.seed,
        "sampling": ds.sampling,
        "pendulum": {"length": ds.pendulum.length, "damping": ds.pendulum.damping,
                     "gravity": ds.pendulum.gravity},
        "initial_conditions": [list(map(float, e.init)) for e in ds.experiments],
    }
    _atomic_write(path + ".json", json.dumps(meta, indent=2))


def load_dataset(path: str) -> Dataset:
    with open(path + ".json") as fh:
        meta = json.load(fh)
    per_exp: dict[int, list[tuple[float, float, float]]] = {}
    with open(path) as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            per_exp.setdefault(int(row["exp_id"]), []).append(
                (float(row["t"]), float(row["z1"]), float(row["z2"])))
    records = []
    for i in range(meta["n_exp"]):
        rows = per_exp[i]
        times = np.array([r[0] for r in rows])
        z = np.array([[r[1], r[2]] for r in rows])
        records.append(ExperimentRecord(init=np.array(meta["initial_conditions"][i]),
                                        times=times, z=z))
    pend = PendulumConfig(**meta["pendulum"])
    return Dataset(experiments=tuple(records), t_end=meta["t_end"],
                   noise_std=meta["noise_std"], seed=meta["seed"],
                   sampling=meta["sampling"], pendulum=pend)


# ---------------------------------------------------------------------------
# training harness


@dataclass(frozen=True)
class OptimConfig:
    epochs: int = 1000
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    max_retries: int = 3  # general-mode blow-up policy: halve lr and retry


@dataclass
class TrainResult:
    spec: ModelSpec
    free: dict
    params: ExplicitParams
    cert: Certificate | None
    metrics: list[dict]
    lmi_ok_every_epoch: bool
    diverged: bool = False


def _lmi_pass(spec: ModelSpec, free: dict) -> tuple[bool, float]:
    params, cert = explicit_and_cert(spec, free)
    if cert is None:
        return True, np.nan
    if spec.mode == "iqc":
        lmi = assemble_iqc_lmi(params, cert, spec.sr)
    else:
        lmi = assemble_contractivity_lmi(params, cert)
    return pd_check(lmi)


def train_sysid(mode: str, dims: Dims, dataset: Dataset, solver_cfg: SolverConfig,
                optim: OptimConfig = OptimConfig(), seed: int = 0,
                sr: SupplyRate | None = None,
                activation: Activation = Activation.TANH,
                check_lmi_every_epoch: bool = True,
                metrics_path: str | None = None) -> TrainResult:
    """Full-batch Adam over the chosen parametrization. In contractive / iqc
    mode every intermediate model carries a valid certificate (totality of
    the direct map); the LMI is still re-checked each epoch when requested."""
    if dims.p != 2:
        raise ValidationError("the benchmark observes angle and rate: dims.p must be 2")
    spec = ModelSpec(mode=mode, dims=dims, activation=activation, sr=sr)
    rng = np.random.default_rng(seed)
    free = random_free(spec, rng, zero_bias=True)
    exps = dataset.model_experiments(dims.n)
    state = adam_init(free)
    lr = optim.lr
    retries = 0
    diverged = False
    lmi_ok_all = True
    metrics: list[dict] = []
    epoch = 0
    snapshot = state
    while epoch < optim.epochs:
        t0 = time.perf_counter()
        value, grads, _ = value_and_grad_dict(spec, state.params, exps, solver_cfg)
        gnorm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if not (np.isfinite(value) and np.isfinite(gnorm)):
            # expected possibility in general mode: back off and retry
            if retries < optim.max_retries:
                retries += 1
                lr *= 0.5
                state = snapshot
                continue
            diverged = True
            break
        if check_lmi_every_epoch:
            ok, _ = _lmi_pass(spec, state.params)
            lmi_ok_all = lmi_ok_all and ok
        snapshot = state
        state = adam_step(state, grads, lr=lr, beta1=optim.beta1,
                          beta2=optim.beta2, eps_adam=optim.eps_adam)
        metrics.append({"epoch": epoch, "train_loss": value, "grad_norm": gnorm,
                        "wall_ms": 1e3 * (time.perf_counter() - t0)})
        epoch += 1
    if check_lmi_every_epoch:
        ok, _ = _lmi_pass(spec, state.params)
        lmi_ok_all = lmi_ok_all and ok
    if metrics_path is not None:
        rows = ["epoch,train_loss,grad_norm,wall_ms"]
        rows += [f"{m['epoch']},{m['train_loss']:.17g},{m['grad_norm']:.17g},"
                 f"{m['wall_ms']:.3f}" for m in metrics]
        _atomic_write(metrics_path, "\n".join(rows) + "\n")
    params, cert = explicit_and_cert(spec, state.params)
    return TrainResult(spec=spec, free=state.params, params=params, cert=cert,
                       metrics=metrics, lmi_ok_every_epoch=lmi_ok_all,
                       diverged=diverged)


def evaluate(spec: ModelSpec, free: dict, dataset: Dataset,
             solver_cfg: SolverConfig | None = None) -> LossReport:
    """Test loss on a held-out dataset (default: dopri5 over its horizon)."""
    if solver_cfg is None:
        solver_cfg = SolverConfig(method="dopri5", rtol=1e-7, atol=1e-9,
                                  t_span=(0.0, dataset.t_end))
    exps = dataset.model_experiments(spec.dims.n)
    return mse_loss(spec, free, exps, solver_cfg)


# ---------------------------------------------------------------------------
# studies


@dataclass
class TubeResult:
    times: np.ndarray        # (k,)
    outputs: np.ndarray      # (count, k, p)
    states: np.ndarray       # (count, k, n)
    env_min: np.ndarray      # (k, p)
    env_max: np.ndarray      # (k, p)
    p_diameter: np.ndarray | None  # (k,) P-weighted bundle diameter


def tube_experiment(params: ExplicitParams, act: Activation, base_init: np.ndarray,
                    radius: float, count: int, horizon: float,
                    cert: Certificate | None = None, seed: int = 0,
                    n_samples: int = 120,
                    solver_cfg: SolverConfig | None = None) -> TubeResult:
    """Simulate a bundle of trajectories from perturbed initial states and
    report per-channel envelopes plus (for certified models) the P-weighted
    diameter of the bundle over time."""
    if count < 2:
        raise ValidationError("tube needs at least two trajectories")
    rng = np.random.default_rng(seed)
    n = params.A.shape[0]
    base = np.asarray(base_init, dtype=float)
    inits = [base]
    for _ in range(count - 1):
        direction = rng.standard_normal(n)
        direction /= np.linalg.norm(direction)
        inits.append(base + radius * direction)
    if solver_cfg is None:
        solver_cfg = SolverConfig(method="dopri5", rtol=1e-8, atol=1e-10,
                                  t_span=(0.0, horizon))
    samples = np.linspace(0.0, horizon, n_samples)
    rhs = make_rhs(params, act)
    out = make_output(params, act)
    trajs = [integrate(rhs, x0, solver_cfg, samples, output_fn=out) for x0 in inits]
    states = np.stack([t.states for t in trajs])
    outputs = np.stack([t.outputs for t in trajs])
    p_diam = None
    if cert is not None:
        P = np.asarray(cert.P)
        k = states.shape[1]
        p_diam = np.zeros(k)
        for a in range(count):
            for b in range(a + 1, count):
                d = states[a] - states[b]
                p_diam = np.maximum(p_diam, np.sqrt(np.einsum("ki,ij,kj->k", d, P, d)))
    return TubeResult(times=samples, outputs=outputs, states=states,
                      env_min=outputs.min(axis=0), env_max=outputs.max(axis=0),
                      p_diameter=p_diam)


def write_tube_csv(res: TubeResult, path: str) -> None:
    p = res.env_min.shape[1]
    header = ["t"]
    for j in range(p):
        header += [f"y{j+1}_min", f"y{j+1}_max"]
    if res.p_diameter is not None:
        header.append("p_diameter")
    rows = [",".join(header)]
    for k, t in enumerate(res.times):
        vals = [f"{t:.17g}"]
        for j in range(p):
            vals += [f"{res.env_min[k, j]:.17g}", f"{res.env_max[k, j]:.17g}"]
        if res.p_diameter is not None:
            vals.append(f"{res.p_diameter[k]:.17g}")
        rows.append(",".join(vals))
    _atomic_write(path, "\n".join(rows) + "\n")


def irregular_sampling_study(pend: PendulumConfig, dims: Dims, n_exp: int,
                             t_end: float, noise_std: float,
                             solver_cfg: SolverConfig, optim: OptimConfig,
                             test_dataset: Dataset, n_datasets: int = 10,
                             seed: int = 0, mode: str = "contractive") -> list[dict]:
    """Train one model per dataset; datasets share initial conditions but
    differ in their random sample times. Returns per-run test losses."""
    base = generate_dataset(pend, n_exp, t_end, noise_std, "irregular", seed)
    ics = np.array([e.init for e in base.experiments])
    results = []
    for k in range(n_datasets):
        ds = generate_dataset(pend, n_exp, t_end, noise_std, "irregular",
                              seed=seed + 1 + k, initial_conditions=ics)
        try:
            run = train_sysid(mode, dims, ds, solver_cfg, optim, seed=seed)
            test = evaluate(run.spec, run.free, test_dataset)
            results.append({"dataset_seed": ds.seed, "test_loss": test.value,
                            "train_loss": run.metrics[-1]["train_loss"],
                            "certified": run.lmi_ok_every_epoch,
                            "diverged": run.diverged})
        except Exception as exc:  # aggregated per-run failure report
            results.append({"dataset_seed": ds.seed, "error": str(exc)})
    return results
