"""Certificate checking: assemble the contraction / dissipation LMIs, compute
the certified convergence rate, and validate the incremental properties
empirically on simulated trajectory pairs."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import (Activation, Certificate, ExplicitParams, SupplyRate,
                   ValidationError, storage, supply_eval)
from .dynamics import vector_field, vector_field_batch
from .integrators import SolverConfig, integrate

EMPIRICAL_RTOL = 1e-9
EMPIRICAL_ATOL = 1e-9


def lmi_w(params: ExplicitParams, cert: Certificate) -> np.ndarray:
    """W = 2 Lambda - Lambda D11 - D11^T Lambda."""
    L = np.asarray(cert.Lambda, dtype=float)
    D11 = np.asarray(params.D11, dtype=float)
    return 2.0 * L - L @ D11 - D11.T @ L


def assemble_contractivity_lmi(params: ExplicitParams, cert: Certificate,
                               rate: float = 0.0) -> np.ndarray:
    """[[-A^T P - P A - 2 rate P, -C1^T Lambda - P B1], [*, W]]."""
    P = np.asarray(cert.P, dtype=float)
    A, B1, C1 = params.A, params.B1, params.C1
    top_left = -A.T @ P - P @ A - 2.0 * rate * P
    off = -C1.T @ cert.Lambda - P @ B1
    M = np.block([[top_left, off], [off.T, lmi_w(params, cert)]])
    return 0.5 * (M + M.T)


def assemble_iqc_lmi(params: ExplicitParams, cert: Certificate,
                     sr: SupplyRate) -> np.ndarray:
    """The full dissipation LMI including the Q-quadratic output term."""
    P = np.asarray(cert.P, dtype=float)
    A, B1, B2 = params.A, params.B1, params.B2
    C1, C2 = params.C1, params.C2
    D12, D21, D22 = params.D12, params.D21, params.D22
    Q, S, R = sr.Q, sr.S, sr.R
    r_script = R + S @ D22 + D22.T @ S.T
    b12 = -C1.T @ cert.Lambda - P @ B1
    b13 = -P @ B2 + C2.T @ S.T
    b23 = -cert.Lambda @ D12 + D21.T @ S.T
    M = np.block([
        [-A.T @ P - P @ A, b12, b13],
        [b12.T, lmi_w(params, cert), b23],
        [b13.T, b23.T, r_script],
    ])
    out_stack = np.concatenate([C2.T, D21.T, D22.T], axis=0)
    M = M + out_stack @ Q @ out_stack.T
    return 0.5 * (M + M.T)


def pd_check(M: np.ndarray, tol: float = 0.0) -> tuple[bool, float]:
    """(lambda_min > tol, lambda_min) of the symmetrized input."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValidationError("pd_check input contains non-finite entries")
    lam_min = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
    return lam_min > tol, lam_min


def certified_rate(params: ExplicitParams, cert: Certificate) -> float:
    """Guaranteed exponential rate c = lambda_min(Phi) / (2 lambda_max(P)),
    Phi the Schur complement of the contraction LMI."""
    P = np.asarray(cert.P, dtype=float)
    W = lmi_w(params, cert)
    off = params.C1.T @ cert.Lambda + P @ params.B1
    try:
        sol = np.linalg.solve(W, off.T)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("W is singular; model is not certified") from exc
    Phi = (-params.A.T @ P - P @ params.A) - off @ sol
    Phi = 0.5 * (Phi + Phi.T)
    return float(np.linalg.eigvalsh(Phi).min() / (2.0 * np.linalg.eigvalsh(P).max()))


# ---------------------------------------------------------------------------
# empirical validation on trajectory pairs


class PiecewiseConstant:
    """Right-continuous piecewise-constant signal on a uniform segment grid."""

    def __init__(self, t_end: float, values: np.ndarray):
        self.values = np.atleast_2d(np.asarray(values, dtype=float))
        self.t_end = float(t_end)
        self.n_seg = self.values.shape[0]

    @classmethod
    def random(cls, t_end: float, m: int, rng: np.random.Generator,
               n_seg: int = 20, amplitude: float = 1.0) -> "PiecewiseConstant":
        return cls(t_end, amplitude * rng.uniform(-1.0, 1.0, size=(n_seg, m)))

    @classmethod
    def zero(cls, t_end: float, m: int) -> "PiecewiseConstant":
        return cls(t_end, np.zeros((1, m)))

    def breakpoints(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_seg + 1)

    def __call__(self, t: float) -> np.ndarray:
        i = min(int(np.floor(t / self.t_end * self.n_seg)), self.n_seg - 1)
        return self.values[max(i, 0)]


@dataclass(frozen=True)
class PairSpec:
    """Two initial states and two input signals driving a trajectory pair."""

    a: np.ndarray
    b: np.ndarray
    u1: PiecewiseConstant
    u2: PiecewiseConstant
    t_end: float
    n_samples: int = 60


@dataclass
class ContractionReport:
    kappa_fit: float
    rate_fit: float
    certified_rate: float
    monotone_V: bool


def _simulate_pair_batch(params: ExplicitParams, act: Activation,
                         pairs: list[PairSpec], sr: SupplyRate | None):
    """Integrate a batch of trajectory pairs jointly (one augmented state),
    restarting at input breakpoints; when sr is given also accumulate per
    pair the running supply integral and the L2 norms of du and dy.

    Returns (times, X1, X2, extras) with X1/X2 of shape (n_pairs, T, n) and
    extras of shape (n_pairs, T, 3) holding
    [supply_integral, int |du|^2, int |dy|^2] (zeros when sr is None).

    Step control is shared across the batch, which only tightens the
    tolerance seen by each individual pair.
    """
    n = params.A.shape[0]
    k = len(pairs)
    t_end = pairs[0].t_end
    if any(p.t_end != t_end for p in pairs):
        raise ValidationError("batched pairs must share t_end")

    def rhs_for(U1, U2):
        dU = U1 - U2

        def rhs(t, state):
            X1 = state[:k * n].reshape(k, n).T
            X2 = state[k * n:2 * k * n].reshape(k, n).T
            D1, Y1 = vector_field_batch(params, act, X1, U1)
            D2, Y2 = vector_field_batch(params, act, X2, U2)
            out = [D1.T.ravel(), D2.T.ravel()]
            if sr is not None:
                dY = Y1 - Y2
                supply = (np.einsum("ik,ij,jk->k", dY, sr.Q, dY)
                          + 2.0 * np.einsum("ik,ij,jk->k", dU, sr.S, dY)
                          + np.einsum("ik,ij,jk->k", dU, sr.R, dU))
                out.append(np.column_stack([supply, np.sum(dU * dU, axis=0),
                                            np.sum(dY * dY, axis=0)]).ravel())
            return np.concatenate(out)
        return rhs

    bks = np.zeros(0)
    for p in pairs:
        bks = np.union1d(bks, np.union1d(p.u1.breakpoints(), p.u2.breakpoints()))
    bks = bks[(bks >= 0) & (bks <= t_end)]
    if bks[-1] < t_end:
        bks = np.append(bks, t_end)
    samples = np.linspace(0.0, t_end, pairs[0].n_samples)

    n_extra = 3 * k if sr is not None else 0
    state = np.concatenate([np.concatenate([p.a for p in pairs]),
                            np.concatenate([p.b for p in pairs]),
                            np.zeros(n_extra)])
    ts = [0.0]
    traj = [state.copy()]
    for lo, hi in zip(bks[:-1], bks[1:]):
        mid = 0.5 * (lo + hi)
        seg_samples = samples[(samples > lo + 1e-12) & (samples <= hi + 1e-12)]
        seg_samples = np.union1d(seg_samples, [hi])
        cfg = SolverConfig(method="dopri5", rtol=EMPIRICAL_RTOL, atol=EMPIRICAL_ATOL,
                           t_span=(float(lo), float(hi)))
        U1 = np.column_stack([p.u1(mid) for p in pairs])
        U2 = np.column_stack([p.u2(mid) for p in pairs])
        out = integrate(rhs_for(U1, U2), state, cfg, seg_samples)
        for t, s in zip(out.times, out.states):
            if t > ts[-1] + 1e-13:
                ts.append(float(t))
                traj.append(s)
        state = out.states[-1]
    traj = np.asarray(traj)
    T = len(ts)
    X1 = traj[:, :k * n].reshape(T, k, n).transpose(1, 0, 2)
    X2 = traj[:, k * n:2 * k * n].reshape(T, k, n).transpose(1, 0, 2)
    if n_extra:
        extras = traj[:, 2 * k * n:].reshape(T, k, 3).transpose(1, 0, 2)
    else:
        extras = np.zeros((k, T, 3))
    return np.asarray(ts), X1, X2, extras


def _simulate_pair(params: ExplicitParams, act: Activation, pair: PairSpec,
                   sr: SupplyRate | None):
    ts, X1, X2, extras = _simulate_pair_batch(params, act, [pair], sr)
    return ts, X1[0], X2[0], extras[0]


def _contraction_report(params, cert, pair, ts, X1, X2) -> ContractionReport:
    dx = X1 - X2
    V = np.einsum("ki,ij,kj->k", dx, cert.P, dx)
    slack = 1e-9 * (1.0 + V.max(initial=0.0))
    monotone = bool(np.all(np.diff(V) <= slack))

    norms = np.linalg.norm(dx, axis=1)
    d0 = np.linalg.norm(pair.a - pair.b)
    if d0 == 0.0 or norms.max() == 0.0:
        kappa_fit, rate_fit = 0.0, 0.0
    else:
        keep = norms > max(1e-12 * norms.max(), 1e-300)
        coef = np.polyfit(ts[keep], np.log(norms[keep]), 1)
        rate_fit = float(-coef[0])
        kappa_fit = float(np.exp(coef[1]) / d0)
    return ContractionReport(kappa_fit=kappa_fit, rate_fit=rate_fit,
                             certified_rate=certified_rate(params, cert),
                             monotone_V=monotone)


def empirical_contraction_batch(params: ExplicitParams, act: Activation,
                                cert: Certificate,
                                pairs: list[PairSpec]) -> list[ContractionReport]:
    """Batched variant of empirical_contraction: all pairs are integrated in
    one augmented system (shared, hence tighter, step control)."""
    for pair in pairs:
        if pair.u1.values.shape != pair.u2.values.shape or \
                np.any(pair.u1.values != pair.u2.values):
            raise ValidationError("empirical contraction requires identical inputs")
    ts, X1, X2, _ = _simulate_pair_batch(params, act, pairs, None)
    return [_contraction_report(params, cert, pair, ts, X1[i], X2[i])
            for i, pair in enumerate(pairs)]


def empirical_contraction(params: ExplicitParams, act: Activation,
                          cert: Certificate, pair: PairSpec) -> ContractionReport:
    """Simulate an equal-input pair and check the storage V(dx) decays
    monotonically; fit |dx(t)| ~ kappa e^{-ct} |a - b| by least squares."""
    return empirical_contraction_batch(params, act, cert, [pair])[0]


@dataclass
class DissipationReport:
    max_slack: float
    scale: float
    du_l2: float
    dy_l2: float

    @property
    def tolerance(self) -> float:
        return 1e-7 * (1.0 + self.scale)

    @property
    def satisfied(self) -> bool:
        return self.max_slack <= self.tolerance


def _dissipation_report(cert, ts, X1, X2, extras, n_windows) -> DissipationReport:
    dx = X1 - X2
    V = np.einsum("ki,ij,kj->k", dx, cert.P, dx)
    s_int = extras[:, 0]
    k = len(ts)
    max_slack = -np.inf
    for w in range(n_windows):
        lo = int(round(w * (k - 1) / (2.0 * n_windows)))
        hi = k - 1 - lo
        if hi <= lo:
            break
        slack = (V[hi] - V[lo]) - (s_int[hi] - s_int[lo])
        max_slack = max(max_slack, float(slack))
    scale = float(np.abs(V).max(initial=0.0) + np.abs(s_int).max(initial=0.0))
    return DissipationReport(max_slack=float(max_slack), scale=scale,
                             du_l2=float(np.sqrt(extras[-1, 1])),
                             dy_l2=float(np.sqrt(extras[-1, 2])))


def empirical_dissipation_batch(params: ExplicitParams, act: Activation,
                                cert: Certificate, sr: SupplyRate,
                                pairs: list[PairSpec],
                                n_windows: int = 5) -> list[DissipationReport]:
    """Batched variant of empirical_dissipation (one joint integration)."""
    ts, X1, X2, extras = _simulate_pair_batch(params, act, pairs, sr)
    return [_dissipation_report(cert, ts, X1[i], X2[i], extras[i], n_windows)
            for i in range(len(pairs))]


def empirical_dissipation(params: ExplicitParams, act: Activation,
                          cert: Certificate, sr: SupplyRate, pair: PairSpec,
                          n_windows: int = 5) -> DissipationReport:
    """Worst-case violation of V(dx(t1)) - V(dx(t0)) <= int_{t0}^{t1} s_delta
    over nested (t0, t1) windows sampled from the simulation grid."""
    return empirical_dissipation_batch(params, act, cert, sr, [pair], n_windows)[0]


def verification_report(mode: str, params: ExplicitParams, cert: Certificate,
                        sr: SupplyRate | None = None,
                        act: Activation = Activation.TANH,
                        empirical_pairs: int = 0, t_end: float = 4.0,
                        seed: int = 0) -> dict:
    """JSON-ready summary: LMI margin, certified rate, optional empirical
    contraction/dissipation over randomized pairs."""
    if mode == "iqc" and sr is not None:
        lmi = assemble_iqc_lmi(params, cert, sr)
    else:
        lmi = assemble_contractivity_lmi(params, cert)
    ok, lam_min = pd_check(lmi)
    report = {
        "mode": mode,
        "lmi_lambda_min": lam_min,
        "lmi_pass": ok,
        "certified_rate": certified_rate(params, cert) if ok else None,
    }
    if empirical_pairs > 0:
        rng = np.random.default_rng(seed)
        n = params.A.shape[0]
        m = params.B2.shape[1]
        monotone, rates, kappas, slacks = [], [], [], []
        for _ in range(empirical_pairs):
            a = rng.normal(size=n)
            b = rng.normal(size=n)
            u = PiecewiseConstant.random(t_end, m, rng)
            rep = empirical_contraction(params, act, cert,
                                        PairSpec(a, b, u, u, t_end))
            monotone.append(rep.monotone_V)
            rates.append(rep.rate_fit)
            kappas.append(rep.kappa_fit)
            if sr is not None:
                u2 = PiecewiseConstant.random(t_end, m, rng)
                drep = empirical_dissipation(params, act, cert, sr,
                                             PairSpec(a, b, u, u2, t_end))
                slacks.append(drep.max_slack)
        report["empirical"] = {
            "monotone_V": bool(all(monotone)),
            "kappa_fit": float(np.median(kappas)),
            "rate_fit": float(np.median(rates)),
            "dissipation_slack": float(max(slacks)) if slacks else None,
        }
    return report
