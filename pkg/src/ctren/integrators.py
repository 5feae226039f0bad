"""ODE integration: fixed-step euler / rk4 on a merged grid (sample times
become step boundaries) and an adaptive Dormand-Prince 5(4) solver with
PI step control, FSAL, and 4th-order dense output for sampling at
arbitrary times. Every right-hand-side call is counted in Trajectory.nfe."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import CtrenError, ValidationError


class SolverError(CtrenError, RuntimeError):
    pass


class SolverDivergence(SolverError):
    """Adaptive solver exceeded max_steps; message carries last accepted t."""


class SolverBlowUp(SolverError):
    """State became non-finite during integration."""


FIXED_STEP_METHODS = ("euler", "rk4")
METHODS = FIXED_STEP_METHODS + ("dopri5",)


@dataclass(frozen=True)
class SolverConfig:
    method: str = "rk4"
    steps: int = 100
    rtol: float = 1e-6
    atol: float = 1e-9
    max_steps: int = 100_000
    t_span: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValidationError("rtol and atol must be positive")
        if self.t_span[1] <= self.t_span[0]:
            raise ValidationError("t_span must satisfy t1 > t0")


@dataclass
class Trajectory:
    times: np.ndarray    # (k,) strictly ascending
    states: np.ndarray   # (k, n)
    outputs: np.ndarray  # (k, p)
    nfe: int

    def __post_init__(self):
        if len(self.times) != len(self.states) or len(self.times) != len(self.outputs):
            raise ValidationError("times/states/outputs length mismatch")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValidationError("times must be strictly ascending")
        if self.nfe <= 0:
            raise ValidationError("nfe must be positive")


# --- fixed-step machinery ---------------------------------------------------


def euler_step(rhs, t, x, h, xp=np):
    return x + h * rhs(t, x)


def rk4_step(rhs, t, x, h, xp=np):
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = rhs(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def merged_grid(t_span: tuple[float, float], steps: int,
                sample_times: np.ndarray) -> np.ndarray:
    """Uniform grid over t_span with every sample time inserted as a step
    boundary, so fixed-step methods hit samples exactly."""
    base = np.linspace(t_span[0], t_span[1], steps + 1)
    grid = np.union1d(base, np.asarray(sample_times, dtype=float))
    return grid


def _check_samples(cfg: SolverConfig, sample_times) -> np.ndarray:
    st = np.atleast_1d(np.asarray(sample_times, dtype=float))
    if st.size and (st.min() < cfg.t_span[0] - 1e-12 or st.max() > cfg.t_span[1] + 1e-12):
        raise ValidationError("sample_times must lie within t_span")
    if st.size > 1 and not np.all(np.diff(st) > 0):
        raise ValidationError("sample_times must be strictly ascending")
    return st


def _fixed_step(rhs, x0, cfg, sample_times):
    grid = merged_grid(cfg.t_span, cfg.steps, sample_times)
    step = euler_step if cfg.method == "euler" else rk4_step
    per_step = 1 if cfg.method == "euler" else 4
    sample_set = {float(t) for t in sample_times}
    x = np.asarray(x0, dtype=float)
    nfe = 0
    ts, xs = [], []
    if float(grid[0]) in sample_set:
        ts.append(grid[0]); xs.append(x.copy())
    for k in range(len(grid) - 1):
        h = grid[k + 1] - grid[k]
        x = step(rhs, grid[k], x, h)
        nfe += per_step
        if not np.all(np.isfinite(x)):
            raise SolverBlowUp(f"non-finite state at t = {grid[k + 1]:.6g}")
        if float(grid[k + 1]) in sample_set:
            ts.append(grid[k + 1]); xs.append(x.copy())
    return np.asarray(ts), np.asarray(xs), nfe


# --- Dormand-Prince 5(4) ----------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Dense-output polynomial coefficients (4th-order interpolant).
_DP_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
# PI controller exponents for an order-5 error estimate.
_PI_ALPHA = 0.7 / 5.0
_PI_BETA = 0.4 / 5.0


def _error_norm(e, x_old, x_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(x_old), np.abs(x_new))
    return float(np.sqrt(np.mean((e / scale) ** 2)))


def _initial_step(f0, x0, t_span, rtol, atol):
    # Single-evaluation heuristic (only f(t0, x0) is used) so that
    # nfe = 1 + 6 * attempts holds exactly.
    scale = atol + rtol * np.abs(x0)
    d0 = np.sqrt(np.mean((x0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    return min(h, t_span[1] - t_span[0])


def _dense_eval(x_old, h, K, theta):
    # x(t_old + theta h) = x_old + h K^T P [theta, theta^2, theta^3, theta^4]
    powers = theta ** np.arange(1, 5)
    return x_old + h * (K.T @ (_DP_P @ powers))


def _dopri5(rhs, x0, cfg, sample_times):
    t0, t1 = cfg.t_span
    x = np.asarray(x0, dtype=float)
    t = t0
    f = rhs(t, x)
    nfe = 1
    h = _initial_step(f, x, cfg.t_span, cfg.rtol, cfg.atol)
    err_prev = 1.0
    ts, xs = [], []
    idx = 0
    if idx < len(sample_times) and sample_times[idx] <= t0 + 1e-14:
        ts.append(sample_times[idx]); xs.append(x.copy())
        idx += 1
    attempts = 0
    K = np.empty((7, x.size))
    while t < t1 - 1e-14 * max(1.0, abs(t1)):
        if attempts >= cfg.max_steps:
            raise SolverDivergence(
                f"exceeded max_steps = {cfg.max_steps}; last accepted t = {t:.6g}")
        h = min(h, t1 - t)
        K[0] = f
        for i in range(1, 7):
            xi = x + h * (_DP_A[i] @ K[:i])
            K[i] = rhs(t + _DP_C[i] * h, xi)
        nfe += 6
        attempts += 1
        x_new = x + h * (_DP_B @ K)
        if not np.all(np.isfinite(x_new)):
            raise SolverBlowUp(f"non-finite state near t = {t:.6g}")
        err = _error_norm(h * (_DP_E @ K), x, x_new, cfg.rtol, cfg.atol)
        if err <= 1.0:
            t_new = t + h
            while idx < len(sample_times) and sample_times[idx] <= t_new + 1e-14:
                theta = np.clip((sample_times[idx] - t) / h, 0.0, 1.0)
                ts.append(sample_times[idx])
                xs.append(_dense_eval(x, h, K, theta))
                idx += 1
            factor = _SAFETY * err_prev ** _PI_BETA * (err ** -_PI_ALPHA if err > 0 else _MAX_FACTOR)
            h *= float(np.clip(factor, _MIN_FACTOR, _MAX_FACTOR))
            err_prev = max(err, 1e-4)
            x = x_new
            t = t_new
            f = K[6]  # FSAL: last stage is f(t_new, x_new)
        else:
            h *= float(np.clip(_SAFETY * err ** -_PI_ALPHA, _MIN_FACTOR, 1.0))
    return np.asarray(ts), np.asarray(xs), nfe


# --- public entry points ------------------------------------------------------


def integrate(rhs, x0, cfg: SolverConfig, sample_times, output_fn=None) -> Trajectory:
    """Integrate xdot = rhs(t, x) over cfg.t_span and report state/output at
    exactly the requested sample times.

    Fixed-step methods insert the sample times as step boundaries; dopri5
    evaluates its dense output without disturbing step control. outputs are
    output_fn(t, x) per sample (states copied when output_fn is None).
    """
    st = _check_samples(cfg, sample_times)
    if cfg.method in FIXED_STEP_METHODS:
        ts, xs, nfe = _fixed_step(rhs, x0, cfg, st)
    else:
        ts, xs, nfe = _dopri5(rhs, x0, cfg, st)
    if output_fn is None:
        ys = np.array(xs, copy=True)
    else:
        ys = np.asarray([output_fn(t, x) for t, x in zip(ts, xs)])
    return Trajectory(times=ts, states=np.asarray(xs), outputs=ys, nfe=nfe)


def order_probe(method: str, rhs, exact, x0, t_span, step_counts) -> float:
    """Least-squares slope of log(error at t1) against log(h) for a fixed-step
    method, given the analytic solution `exact(t)`."""
    errs, hs = [], []
    for steps in step_counts:
        cfg = SolverConfig(method=method, steps=int(steps), t_span=t_span)
        traj = integrate(rhs, x0, cfg, sample_times=[t_span[1]])
        errs.append(np.linalg.norm(traj.states[-1] - exact(t_span[1])))
        hs.append((t_span[1] - t_span[0]) / steps)
    slope, _ = np.polyfit(np.log(hs), np.log(errs), 1)
    return float(slope)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV export: header t,x1..xn,y1..yp, full double precision."""
    n = traj.states.shape[1]
    p = traj.outputs.shape[1]
    header = ["t"] + [f"x{i+1}" for i in range(n)] + [f"y{i+1}" for i in range(p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, x, y in zip(traj.times, traj.states, traj.outputs):
            w.writerow([f"{v:.17g}" for v in (t, *x, *y)])
