"""Unconstrained direct parametrizations.

Maps free parameter sets onto explicit model matrices plus a certificate
(P, Lambda) such that the contraction LMI (contractive mode) or the
dissipation LMI for a prescribed supply rate (iqc mode) holds for *every*
finite input. No feasibility check is ever needed at call sites.

The `*_matrices` helpers are written against a pluggable array namespace
`xp` so the gradient engine can trace them with jax; the public functions
wrap them with numpy containers and validation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import (Certificate, ConstructionError, Dims, ExplicitParams,
                   SupplyRate, ValidationError, validate_explicit)

DEFAULT_EPSILON = 0.01
DEFAULT_EPSILON_P = 0.01


# ---------------------------------------------------------------------------
# free-parameter containers


@dataclass(frozen=True)
class DirectParamsC:
    """Free parameters of the contractive parametrization.

    Every entry of every matrix is unconstrained; epsilon / epsilon_P are
    the positive floors of the two quadratic liftings, min_rate is an
    optional prescribed contraction rate (0 reproduces the plain map).
    """

    X: np.ndarray        # (n+q, n+q)
    B2: np.ndarray       # (n, m)
    C2: np.ndarray       # (p, n)
    D12: np.ndarray      # (q, m)
    D21: np.ndarray      # (p, q)
    D22: np.ndarray      # (p, m)
    b_tilde: np.ndarray  # (n+q+p,)
    U: np.ndarray        # (n, q)
    Y1: np.ndarray       # (n, n)
    X_P: np.ndarray      # (n, n)
    epsilon: float = DEFAULT_EPSILON
    epsilon_P: float = DEFAULT_EPSILON_P
    min_rate: float = 0.0

    FREE_FIELDS = ("X", "B2", "C2", "D12", "D21", "D22", "b_tilde", "U", "Y1", "X_P")

    def __post_init__(self):
        if self.epsilon <= 0 or self.epsilon_P <= 0:
            raise ValidationError("epsilon and epsilon_P must be positive")
        if self.min_rate < 0:
            raise ValidationError("min_rate must be nonnegative")

    @property
    def dims(self) -> Dims:
        return Dims(n=int(self.Y1.shape[0]), q=int(self.U.shape[1]),
                    m=int(self.B2.shape[1]), p=int(self.C2.shape[0]))

    @classmethod
    def random(cls, dims: Dims, rng: np.random.Generator,
               epsilon: float = DEFAULT_EPSILON, epsilon_P: float = DEFAULT_EPSILON_P,
               min_rate: float = 0.0, zero_bias: bool = True) -> "DirectParamsC":
        n, q, m, p = dims.n, dims.q, dims.m, dims.p
        std = 1.0 / np.sqrt(n + q)
        g = lambda *s: std * rng.standard_normal(s)
        b = np.zeros(n + q + p) if zero_bias else g(n + q + p)
        return cls(X=g(n + q, n + q), B2=g(n, m), C2=g(p, n), D12=g(q, m),
                   D21=g(p, q), D22=g(p, m), b_tilde=b, U=g(n, q), Y1=g(n, n),
                   X_P=g(n, n), epsilon=epsilon, epsilon_P=epsilon_P, min_rate=min_rate)


@dataclass(frozen=True)
class DirectParamsIQC:
    """Free parameters of the dissipative (supply-rate constrained)
    parametrization. D22 and D12 are *derived* here (from X3 and T)."""

    X_R: np.ndarray      # (n+q, n+q)
    B2: np.ndarray       # (n, m)
    C2: np.ndarray       # (p, n)
    D21: np.ndarray      # (p, q)
    b_tilde: np.ndarray  # (n+q+p,)
    X3: np.ndarray       # (s, s) with s = max(p, m)
    T: np.ndarray        # (q, m)
    U: np.ndarray        # (n, q)
    Y1: np.ndarray       # (n, n)
    X_P: np.ndarray      # (n, n)
    epsilon: float = DEFAULT_EPSILON
    epsilon_P: float = DEFAULT_EPSILON_P

    FREE_FIELDS = ("X_R", "B2", "C2", "D21", "b_tilde", "X3", "T", "U", "Y1", "X_P")

    def __post_init__(self):
        if self.epsilon <= 0 or self.epsilon_P <= 0:
            raise ValidationError("epsilon and epsilon_P must be positive")
        s = max(self.C2.shape[0], self.B2.shape[1])
        if self.X3.shape != (s, s):
            raise ValidationError(f"X3 must be ({s}, {s}) = max(p, m) square")

    @property
    def dims(self) -> Dims:
        return Dims(n=int(self.Y1.shape[0]), q=int(self.U.shape[1]),
                    m=int(self.B2.shape[1]), p=int(self.C2.shape[0]))

    @classmethod
    def random(cls, dims: Dims, rng: np.random.Generator,
               epsilon: float = DEFAULT_EPSILON, epsilon_P: float = DEFAULT_EPSILON_P,
               zero_bias: bool = True) -> "DirectParamsIQC":
        n, q, m, p = dims.n, dims.q, dims.m, dims.p
        s = max(p, m)
        std = 1.0 / np.sqrt(n + q)
        g = lambda *sh: std * rng.standard_normal(sh)
        b = np.zeros(n + q + p) if zero_bias else g(n + q + p)
        return cls(X_R=g(n + q, n + q), B2=g(n, m), C2=g(p, n), D21=g(p, q),
                   b_tilde=b, X3=g(s, s), T=g(q, m), U=g(n, q), Y1=g(n, n),
                   X_P=g(n, n), epsilon=epsilon, epsilon_P=epsilon_P)


# ---------------------------------------------------------------------------
# backend-agnostic construction cores


def cayley_matrices(M, xp=np):
    """F = (I - M)(I + M)^-1 for symmetric positive definite M."""
    s = M.shape[0]
    eye = xp.eye(s)
    # M symmetric, so F^T = (I + M)^-1 (I - M) and F = solve(I + M, I - M)^T.
    return xp.linalg.solve(eye + M, eye - M).T


def cayley_contract(M: np.ndarray, p: int, m: int) -> np.ndarray:
    """Top-left p x m block of the symmetric Cayley transform of M; the
    result F~ always satisfies I - F~^T F~ > 0."""
    M = np.asarray(M, dtype=float)
    s = M.shape[0]
    if M.ndim != 2 or M.shape != (s, s) or p > s or m > s:
        raise ValidationError("M must be s x s with p, m <= s")
    if np.abs(M - M.T).max() > 1e-10 * max(1.0, np.abs(M).max()):
        raise ConstructionError("Cayley input must be symmetric")
    if np.linalg.eigvalsh(0.5 * (M + M.T)).min() <= 0:
        raise ConstructionError("Cayley input must be positive definite")
    return cayley_matrices(0.5 * (M + M.T))[:p, :m]


def _split_h(H, P, U, Y1, min_rate, n, xp):
    """From H > 0 recover (A, B1, C1, D11, Lambda) via the block split."""
    H = 0.5 * (H + H.T)
    H11 = H[:n, :n]
    H12 = H[:n, n:]
    H22 = H[n:, n:]
    Y = -0.5 * (H11 + 2.0 * min_rate * P + Y1 - Y1.T)
    W = H22
    Z = -H12 - U
    lam = 0.5 * xp.diagonal(W)          # diagonal of Lambda; > 0 since W > 0
    W_low = xp.tril(W, -1)
    D11 = -W_low / lam[:, None]
    C1 = U.T / lam[:, None]
    A = xp.linalg.solve(P, Y)
    B1 = xp.linalg.solve(P, Z)
    return A, B1, C1, D11, lam, W


def _split_bias(b_tilde, n, q):
    return b_tilde[:n], b_tilde[n:n + q], b_tilde[n + q:]


def contractive_matrices(free: dict, dims: Dims, epsilon: float, epsilon_P: float,
                         min_rate: float = 0.0, xp=np) -> dict:
    """Contractive construction on a dict of free arrays; returns a dict of
    explicit matrices plus 'P' and 'lam' (diagonal of Lambda)."""
    n, q = dims.n, dims.q
    X = free["X"]
    H = X.T @ X + epsilon * xp.eye(n + q)
    P = free["X_P"].T @ free["X_P"] + epsilon_P * xp.eye(n)
    A, B1, C1, D11, lam, _ = _split_h(H, P, free["U"], free["Y1"], min_rate, n, xp)
    b_x, b_v, b_y = _split_bias(free["b_tilde"], n, q)
    return dict(A=A, B1=B1, B2=free["B2"], C1=C1, C2=free["C2"], D11=D11,
                D12=free["D12"], D21=free["D21"], D22=free["D22"],
                b_x=b_x, b_v=b_v, b_y=b_y, P=P, lam=lam)


def iqc_matrices(free: dict, dims: Dims, sr: SupplyRate, epsilon: float,
                 epsilon_P: float, xp=np) -> dict:
    """Dissipative construction for the supply rate (Q, S, R, delta)."""
    n, q, m, p = dims.n, dims.q, dims.m, dims.p
    Q = xp.asarray(sr.Q)
    S = xp.asarray(sr.S)
    R = xp.asarray(sr.R)
    q_cal = Q - sr.delta * xp.eye(p)
    # Upper-triangular factors: L^T L equals the target.
    L_Q = xp.linalg.cholesky(-q_cal).T
    L_R = xp.linalg.cholesky(R - S @ xp.linalg.solve(q_cal, S.T)).T

    s = max(p, m)
    M = free["X3"].T @ free["X3"] + epsilon * xp.eye(s)
    F_t = cayley_matrices(M, xp)[:p, :m]
    D22 = -xp.linalg.solve(q_cal, S.T) + xp.linalg.solve(L_Q, F_t) @ L_R

    r_cal = R + S @ D22 + D22.T @ S.T + D22.T @ Q @ D22
    r_cal = 0.5 * (r_cal + r_cal.T)

    P = free["X_P"].T @ free["X_P"] + epsilon_P * xp.eye(n)
    C2, D21, B2, T = free["C2"], free["D21"], free["B2"], free["T"]
    T_t = -T + D21.T @ S.T + D21.T @ Q @ D22
    V = -P @ B2 + C2.T @ S.T + C2.T @ Q @ D22
    VT = xp.concatenate([V, T_t], axis=0)          # (n+q, m)
    CD = xp.concatenate([C2.T, D21.T], axis=0)     # (n+q, p)
    Psi = VT @ xp.linalg.solve(r_cal, VT.T) - CD @ Q @ CD.T

    X_R = free["X_R"]
    H = X_R.T @ X_R + epsilon * xp.eye(n + q) + Psi
    A, B1, C1, D11, lam, _ = _split_h(H, P, free["U"], free["Y1"], 0.0, n, xp)
    D12 = T / lam[:, None]
    b_x, b_v, b_y = _split_bias(free["b_tilde"], n, q)
    return dict(A=A, B1=B1, B2=B2, C1=C1, C2=C2, D11=D11, D12=D12, D21=D21,
                D22=D22, b_x=b_x, b_v=b_v, b_y=b_y, P=P, lam=lam, r_cal=r_cal)


def general_matrices(free: dict, dims: Dims, xp=np) -> dict:
    """Unconstrained mode: raw matrices, with D11 masked strictly lower."""
    out = dict(free)
    out["D11"] = xp.tril(free["D11"], -1)
    return out


_EXPLICIT_FIELDS = ("A", "B1", "B2", "C1", "C2", "D11", "D12", "D21", "D22",
                    "b_x", "b_v", "b_y")


def _pack(mats: dict) -> ExplicitParams:
    return ExplicitParams(**{k: np.asarray(mats[k], dtype=float) for k in _EXPLICIT_FIELDS})


# ---------------------------------------------------------------------------
# public maps


def contractive_from_direct(theta: DirectParamsC) -> tuple[ExplicitParams, Certificate]:
    """Total map: any finite theta yields a model certified contracting
    (with rate >= min_rate when min_rate > 0) by the returned (P, Lambda)."""
    free = {k: np.asarray(getattr(theta, k), dtype=float) for k in theta.FREE_FIELDS}
    for k, v in free.items():
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"theta.{k} contains non-finite entries")
    mats = contractive_matrices(free, theta.dims, theta.epsilon, theta.epsilon_P,
                                theta.min_rate)
    cert = Certificate(P=mats["P"], Lambda=np.diag(mats["lam"]))
    return _pack(mats), cert


def iqc_from_direct(theta: DirectParamsIQC, sr: SupplyRate) -> tuple[ExplicitParams, Certificate]:
    """Total map onto models satisfying the incremental IQC for (Q, S, R)."""
    dims = theta.dims
    if sr.p != dims.p or sr.m != dims.m:
        raise ValidationError(f"supply rate sized ({sr.p}, {sr.m}) does not match "
                              f"model (p, m) = ({dims.p}, {dims.m})")
    free = {k: np.asarray(getattr(theta, k), dtype=float) for k in theta.FREE_FIELDS}
    for k, v in free.items():
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"theta.{k} contains non-finite entries")
    mats = iqc_matrices(free, dims, sr, theta.epsilon, theta.epsilon_P)
    try:
        np.linalg.cholesky(mats["r_cal"])
    except np.linalg.LinAlgError as exc:
        raise ConstructionError(
            "R + S D22 + D22^T S^T + D22^T Q D22 lost positive definiteness "
            "numerically (ill-conditioned supply rate)") from exc
    cert = Certificate(P=mats["P"], Lambda=np.diag(mats["lam"]))
    return _pack(mats), cert


def explicit_from_general(raw: ExplicitParams) -> ExplicitParams:
    """Identity pass-through with invariant validation (unconstrained mode)."""
    return validate_explicit(raw)


def random_explicit(dims: Dims, rng: np.random.Generator,
                    zero_bias: bool = True) -> ExplicitParams:
    """Gaussian init of a raw (uncertified) model, D11 masked strictly lower."""
    n, q, m, p = dims.n, dims.q, dims.m, dims.p
    std = 1.0 / np.sqrt(n + q)
    g = lambda *s: std * rng.standard_normal(s)
    zb = (lambda k: np.zeros(k)) if zero_bias else (lambda k: g(k))
    return ExplicitParams(
        A=g(n, n), B1=g(n, q), B2=g(n, m), C1=g(q, n), C2=g(p, n),
        D11=np.tril(g(q, q), -1), D12=g(q, m), D21=g(p, q), D22=g(p, m),
        b_x=zb(n), b_v=zb(q), b_y=zb(p))
