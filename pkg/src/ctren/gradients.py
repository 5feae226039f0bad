"""Loss evaluation and reverse-mode gradients through the discretized flow.

Gradients are exact derivatives of the computed (discretize-then-
differentiate) loss: the free parameters are mapped through the direct
parametrization and the fixed-step solver inside a jax trace, and jax
provides the vector-Jacobian products. A central finite-difference oracle
over the independent numpy pipeline (`grad_fd`) double-checks them in the
test suite. Adaptive (dopri5) integration is evaluation-only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp
from jax import lax

from .core import Activation, Certificate, CtrenError, Dims, ExplicitParams, SupplyRate
from .dynamics import make_output, make_rhs, vector_field
from .integrators import (FIXED_STEP_METHODS, SolverConfig, euler_step,
                          integrate, merged_grid, rk4_step)
from .parametrization import (DirectParamsC, DirectParamsIQC,
                              contractive_matrices, general_matrices,
                              iqc_matrices, _EXPLICIT_FIELDS)


class UnsupportedConfigError(CtrenError, ValueError):
    """Raised when reverse-mode gradients are requested for dopri5."""


GENERAL_FIELDS = _EXPLICIT_FIELDS


@dataclass(frozen=True)
class ModelSpec:
    """Static description of a trainable model: which parametrization, at
    which sizes, with which activation (and supply rate in iqc mode)."""

    mode: str                       # 'contractive' | 'iqc' | 'general'
    dims: Dims
    activation: Activation = Activation.TANH
    epsilon: float = 0.01
    epsilon_P: float = 0.01
    min_rate: float = 0.0
    sr: SupplyRate | None = None

    def __post_init__(self):
        if self.mode not in ("contractive", "iqc", "general"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "iqc" and self.sr is None:
            raise ValueError("iqc mode requires a supply rate")

    @property
    def free_fields(self) -> tuple[str, ...]:
        if self.mode == "contractive":
            return DirectParamsC.FREE_FIELDS
        if self.mode == "iqc":
            return DirectParamsIQC.FREE_FIELDS
        return GENERAL_FIELDS


def free_from_theta(theta) -> dict:
    return {k: np.asarray(getattr(theta, k), dtype=float) for k in theta.FREE_FIELDS}


def build_matrices(spec: ModelSpec, free: dict, xp=np) -> dict:
    """Explicit matrices (plus 'P'/'lam' in certified modes) from free params."""
    if spec.mode == "contractive":
        return contractive_matrices(free, spec.dims, spec.epsilon, spec.epsilon_P,
                                    spec.min_rate, xp)
    if spec.mode == "iqc":
        return iqc_matrices(free, spec.dims, spec.sr, spec.epsilon, spec.epsilon_P, xp)
    return general_matrices(free, spec.dims, xp)


def explicit_and_cert(spec: ModelSpec, free: dict) -> tuple[ExplicitParams, Certificate | None]:
    mats = build_matrices(spec, free, np)
    params = ExplicitParams(**{k: np.asarray(mats[k], dtype=float)
                               for k in _EXPLICIT_FIELDS})
    cert = None
    if "P" in mats:
        cert = Certificate(P=np.asarray(mats["P"]), Lambda=np.diag(np.asarray(mats["lam"])))
    return params, cert


def random_free(spec: ModelSpec, rng: np.random.Generator, zero_bias: bool = True) -> dict:
    if spec.mode == "contractive":
        return free_from_theta(DirectParamsC.random(spec.dims, rng, spec.epsilon,
                                                    spec.epsilon_P, spec.min_rate,
                                                    zero_bias=zero_bias))
    if spec.mode == "iqc":
        return free_from_theta(DirectParamsIQC.random(spec.dims, rng, spec.epsilon,
                                                      spec.epsilon_P, zero_bias=zero_bias))
    from .parametrization import random_explicit
    raw = random_explicit(spec.dims, rng, zero_bias=zero_bias)
    return {k: np.asarray(getattr(raw, k)) for k in GENERAL_FIELDS}


def flatten_free(free: dict) -> np.ndarray:
    return np.concatenate([np.asarray(free[k], dtype=float).ravel()
                           for k in sorted(free)])


def unflatten_free(template: dict, vec: np.ndarray) -> dict:
    out, ofs = {}, 0
    for k in sorted(template):
        shape = np.shape(template[k])
        size = int(np.prod(shape)) if shape else 1
        out[k] = np.asarray(vec[ofs:ofs + size], dtype=float).reshape(shape)
        ofs += size
    if ofs != vec.size:
        raise ValueError("flat vector length does not match template")
    return out


# ---------------------------------------------------------------------------
# datasets as seen by the loss


@dataclass(frozen=True)
class SampledExperiment:
    """One experiment: model initial state, strictly ascending sample times
    and the measured targets at those times (input held at zero)."""

    x0: np.ndarray       # (n,)
    times: np.ndarray    # (k,)
    targets: np.ndarray  # (k, p)


@dataclass
class LossReport:
    value: float
    grad: np.ndarray | None          # flat over sorted free-parameter names
    per_experiment: np.ndarray


def mse_loss(spec: ModelSpec, free: dict, experiments: list[SampledExperiment],
             cfg: SolverConfig) -> LossReport:
    """Mean over experiments of the per-experiment mean squared output error,
    simulated with the configured solver (numpy pipeline)."""
    params, _ = explicit_and_cert(spec, free)
    rhs = make_rhs(params, spec.activation)
    out = make_output(params, spec.activation)
    per = np.empty(len(experiments))
    for i, exp in enumerate(experiments):
        try:
            traj = integrate(rhs, exp.x0, cfg, exp.times, output_fn=out)
        except CtrenError as exc:
            raise type(exc)(f"experiment {i}: {exc}") from exc
        per[i] = np.mean(np.sum((traj.outputs - exp.targets) ** 2, axis=1))
    return LossReport(value=float(np.mean(per)), grad=None, per_experiment=per)


# ---------------------------------------------------------------------------
# jax reverse mode


def _prepare_batch(experiments, cfg: SolverConfig):
    """Pad per-experiment merged grids and sample indices to common shapes.

    Padding appends zero-length steps (no-ops for euler/rk4) and masked
    samples, so the padded batch computes exactly the unpadded loss.
    """
    grids, idxs = [], []
    for exp in experiments:
        grid = merged_grid(cfg.t_span, cfg.steps, exp.times)
        idx = np.searchsorted(grid, exp.times)
        # sample times are grid members by construction
        grids.append(grid)
        idxs.append(idx)
    L = max(len(g) for g in grids)
    K = max(len(i) for i in idxs)
    N = len(experiments)
    n = experiments[0].x0.size
    p = experiments[0].targets.shape[1]
    ts = np.empty((N, L))
    x0 = np.empty((N, n))
    idx_pad = np.zeros((N, K), dtype=np.int64)
    mask = np.zeros((N, K))
    z = np.zeros((N, K, p))
    inv_ni = np.empty(N)
    for i, (exp, grid, idx) in enumerate(zip(experiments, grids, idxs)):
        ts[i] = np.concatenate([grid, np.full(L - len(grid), grid[-1])])
        x0[i] = exp.x0
        idx_pad[i, :len(idx)] = idx
        mask[i, :len(idx)] = 1.0
        z[i, :len(idx)] = exp.targets
        inv_ni[i] = 1.0 / len(idx)
    return dict(ts=ts, x0=x0, idx=idx_pad, mask=mask, z=z, inv_ni=inv_ni)


_JIT_CACHE: dict = {}


def _spec_key(spec: ModelSpec) -> tuple:
    sr_key = None
    if spec.sr is not None:
        sr_key = (spec.sr.Q.tobytes(), spec.sr.S.tobytes(), spec.sr.R.tobytes(),
                  spec.sr.delta)
    return (spec.mode, spec.dims, spec.activation, spec.epsilon, spec.epsilon_P,
            spec.min_rate, sr_key)


def _get_grad_fn(spec: ModelSpec, method: str):
    key = (_spec_key(spec), method)
    if key in _JIT_CACHE:
        return _JIT_CACHE[key]

    act = spec.activation
    m = spec.dims.m
    step = euler_step if method == "euler" else rk4_step

    def loss_fn(free, batch):
        mats = build_matrices(spec, free, jnp)
        params = ExplicitParams(**{k: mats[k] for k in _EXPLICIT_FIELDS})
        zero_u = jnp.zeros(m)

        def rhs(t, x):
            return vector_field(params, act, x, zero_u, jnp)[0]

        def output(x):
            return vector_field(params, act, x, zero_u, jnp)[1]

        def one_exp(ts, x0, idx, mask, z, inv_ni):
            def body(x, th):
                t, h = th
                xn = step(rhs, t, x, h, jnp)
                return xn, xn

            _, xs = lax.scan(body, x0, (ts[:-1], ts[1:] - ts[:-1]))
            xs = jnp.concatenate([x0[None, :], xs], axis=0)
            ys = jax.vmap(output)(xs[idx])
            return jnp.sum(mask * jnp.sum((ys - z) ** 2, axis=-1)) * inv_ni

        per = jax.vmap(one_exp)(batch["ts"], batch["x0"], batch["idx"],
                                batch["mask"], batch["z"], batch["inv_ni"])
        return jnp.mean(per), per

    fn = jax.jit(jax.value_and_grad(loss_fn, has_aux=True))
    _JIT_CACHE[key] = fn
    return fn


def grad_reverse(spec: ModelSpec, free: dict, experiments: list[SampledExperiment],
                 cfg: SolverConfig) -> LossReport:
    """Exact gradient of the fixed-step loss w.r.t. the free parameters."""
    if cfg.method not in FIXED_STEP_METHODS:
        raise UnsupportedConfigError(
            "reverse-mode gradients support euler/rk4 only; dopri5 is "
            "evaluation-only")
    batch = _prepare_batch(experiments, cfg)
    fn = _get_grad_fn(spec, cfg.method)
    (value, per), grads = fn({k: jnp.asarray(v) for k, v in free.items()}, batch)
    grads = {k: np.asarray(v) for k, v in grads.items()}
    return LossReport(value=float(value), grad=flatten_free(grads),
                      per_experiment=np.asarray(per))


def value_and_grad_dict(spec: ModelSpec, free: dict,
                        experiments: list[SampledExperiment],
                        cfg: SolverConfig) -> tuple[float, dict, np.ndarray]:
    """Like grad_reverse but keeps the gradient as a named dict (training loop)."""
    if cfg.method not in FIXED_STEP_METHODS:
        raise UnsupportedConfigError("training requires euler or rk4")
    batch = _prepare_batch(experiments, cfg)
    fn = _get_grad_fn(spec, cfg.method)
    (value, per), grads = fn({k: jnp.asarray(v) for k, v in free.items()}, batch)
    return float(value), {k: np.asarray(v) for k, v in grads.items()}, np.asarray(per)


def grad_fd(spec: ModelSpec, free: dict, experiments: list[SampledExperiment],
            cfg: SolverConfig, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of the numpy loss, one coordinate at a
    time, with per-coordinate scale-adaptive steps. Test oracle / fallback."""
    vec = flatten_free(free)
    grad = np.empty_like(vec)
    for i in range(vec.size):
        h = step * (1.0 + abs(vec[i]))
        up, dn = vec.copy(), vec.copy()
        up[i] += h
        dn[i] -= h
        lu = mse_loss(spec, unflatten_free(free, up), experiments, cfg).value
        ld = mse_loss(spec, unflatten_free(free, dn), experiments, cfg).value
        grad[i] = (lu - ld) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    params: dict
    m: dict
    v: dict
    t: int = 0


def adam_init(params: dict) -> AdamState:
    zeros = {k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in params.items()}
    return AdamState(params={k: np.array(v, dtype=float) for k, v in params.items()},
                     m=zeros, v={k: z.copy() for k, z in zeros.items()})


def adam_step(state: AdamState, grad: dict, lr: float = 1e-2, beta1: float = 0.9,
              beta2: float = 0.999, eps_adam: float = 1e-8) -> AdamState:
    """Standard bias-corrected Adam update; purely deterministic."""
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    for k in state.params:
        g = np.asarray(grad[k], dtype=float)
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_p[k] = state.params[k] - lr * m_hat / (np.sqrt(v_hat) + eps_adam)
        new_m[k] = m
        new_v[k] = v
    return AdamState(params=new_p, m=new_m, v=new_v, t=t)
