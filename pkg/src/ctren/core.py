"""Shared domain types: dimensions, model matrices, activations, supply rates.

All containers are plain frozen dataclasses holding numpy (or, inside the
gradient engine, jax) arrays. Validation lives in explicit `validate_*`
helpers so that traced arrays can flow through the same containers.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np


class CtrenError(Exception):
    """Base class for library errors."""


class ValidationError(CtrenError, ValueError):
    """A container violates one of its structural invariants."""


class ParameterRangeError(CtrenError, ValueError):
    """A supply-rate property parameter admits no valid regularizer."""


class ConstructionError(CtrenError, RuntimeError):
    """A parametrization map failed numerically (conditioning pathology)."""


@dataclass(frozen=True)
class Dims:
    """Problem sizes: state n, nonlinearity channels q, inputs m, outputs p."""

    n: int
    q: int
    m: int
    p: int

    def __post_init__(self):
        for name in ("n", "q", "m", "p"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValidationError(f"dimension {name} must be a positive integer, got {v!r}")


@dataclass(frozen=True)
class ExplicitParams:
    """The full matrix/bias set of one model.

    State equation   xdot = A x + B1 w + B2 u + b_x
    Implicit channel v    = C1 x + D11 w + D12 u + b_v,  w = sigma(v)
    Output           y    = C2 x + D21 w + D22 u + b_y

    D11 must be strictly lower-triangular so the implicit channel resolves
    by forward substitution.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: np.ndarray
    b_x: np.ndarray
    b_v: np.ndarray
    b_y: np.ndarray

    @property
    def dims(self) -> Dims:
        return Dims(n=int(self.A.shape[0]), q=int(self.C1.shape[0]),
                    m=int(self.B2.shape[1]), p=int(self.C2.shape[0]))

    @classmethod
    def zeros(cls, dims: Dims) -> "ExplicitParams":
        n, q, m, p = dims.n, dims.q, dims.m, dims.p
        return cls(A=np.zeros((n, n)), B1=np.zeros((n, q)), B2=np.zeros((n, m)),
                   C1=np.zeros((q, n)), C2=np.zeros((p, n)),
                   D11=np.zeros((q, q)), D12=np.zeros((q, m)),
                   D21=np.zeros((p, q)), D22=np.zeros((p, m)),
                   b_x=np.zeros(n), b_v=np.zeros(q), b_y=np.zeros(p))


_EXPLICIT_SHAPES = {
    "A": ("n", "n"), "B1": ("n", "q"), "B2": ("n", "m"),
    "C1": ("q", "n"), "C2": ("p", "n"),
    "D11": ("q", "q"), "D12": ("q", "m"), "D21": ("p", "q"), "D22": ("p", "m"),
    "b_x": ("n",), "b_v": ("q",), "b_y": ("p",),
}


def validate_explicit(params: ExplicitParams, dims: Dims | None = None) -> ExplicitParams:
    """Check shapes, finiteness and the strict lower-triangularity of D11."""
    if dims is None:
        dims = params.dims
    sizes = {"n": dims.n, "q": dims.q, "m": dims.m, "p": dims.p}
    for name, spec in _EXPLICIT_SHAPES.items():
        arr = np.asarray(getattr(params, name), dtype=float)
        want = tuple(sizes[s] for s in spec)
        if arr.shape != want:
            raise ValidationError(f"{name} has shape {arr.shape}, expected {want}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{name} contains non-finite entries")
    upper = np.triu(np.asarray(params.D11, dtype=float))
    if np.any(upper != 0.0):
        raise ValidationError("D11 must be strictly lower-triangular "
                              "(entries on/above the diagonal exactly zero)")
    return params


class Activation(enum.Enum):
    """Pointwise nonlinearities with incremental slope in [0, 1].

    `xp` selects the array backend (numpy by default, jax.numpy when the
    gradient engine traces through the model).
    """

    TANH = "tanh"
    RELU = "relu"
    LOGISTIC = "logistic"

    def apply(self, v, xp=np):
        if self is Activation.TANH:
            return xp.tanh(v)
        if self is Activation.RELU:
            return xp.maximum(v, 0.0)
        s = 1.0 / (1.0 + xp.exp(-v))
        return s

    def slope(self, v, xp=np):
        """Pointwise derivative; relu uses the subgradient 0 at the kink."""
        if self is Activation.TANH:
            t = xp.tanh(v)
            return 1.0 - t * t
        if self is Activation.RELU:
            return xp.where(v > 0, 1.0, 0.0)
        s = 1.0 / (1.0 + xp.exp(-v))
        return s * (1.0 - s)


DEFAULT_ACTIVATION = Activation.TANH

_SYM_WARN_TOL = 1e-12


def _symmetrize(name: str, mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.size:
        asym = np.abs(mat - mat.T).max()
        scale = max(np.abs(mat).max(), 1.0)
        if asym > _SYM_WARN_TOL * scale:
            warnings.warn(f"{name} symmetrized; relative asymmetry {asym / scale:.3e}")
    return 0.5 * (mat + mat.T)


@dataclass(frozen=True)
class SupplyRate:
    """Quadratic supply rate (Q, S, R) with Q <= 0, R = R^T, plus the
    regularizer delta used by the dissipative parametrization."""

    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    delta: float = 1e-3
    property_name: str = "custom"
    property_param: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "Q", _symmetrize("Q", self.Q))
        object.__setattr__(self, "R", _symmetrize("R", self.R))
        object.__setattr__(self, "S", np.asarray(self.S, dtype=float))
        p = self.Q.shape[0]
        m = self.R.shape[0]
        if self.S.shape != (m, p):
            raise ValidationError(f"S has shape {self.S.shape}, expected {(m, p)}")
        if self.delta <= 0:
            raise ValidationError("delta must be positive")
        if np.linalg.eigvalsh(self.Q).max() > 1e-10:
            raise ValidationError("Q must be negative semidefinite")
        # Hypothesis of the dissipative construction: R - S (Q - delta I)^-1 S^T > 0.
        if np.linalg.eigvalsh(self.schur_r()).min() <= 0:
            raise ParameterRangeError(
                "R - S (Q - delta I)^-1 S^T is not positive definite; "
                "no valid construction for this (Q, S, R, delta)")

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def q_cal(self) -> np.ndarray:
        """Q - delta I (negative definite by construction)."""
        return self.Q - self.delta * np.eye(self.p)

    def schur_r(self) -> np.ndarray:
        return self.R - self.S @ np.linalg.solve(self.q_cal(), self.S.T)


def supply_rate_for(prop: str, p: int, m: int, param: float | None = None,
                    delta: float | None = None) -> SupplyRate:
    """Build the (Q, S, R) triple for a named incremental property.

    prop: 'l2_gain' (param = gain bound gamma > 0), 'passivity',
    'input_passivity' (param = nu >= 0), 'output_passivity' (param = eps >= 0).
    """
    eye_sp = 0.5 * np.eye(m, p)
    if prop == "l2_gain":
        if param is None or param <= 0:
            raise ParameterRangeError("l2_gain requires gamma > 0")
        Q = -(1.0 / param) * np.eye(p)
        R = param * np.eye(m)
        S = np.zeros((m, p))
        d = 1e-3 if delta is None else delta
    elif prop == "passivity":
        Q = np.zeros((p, p))
        R = np.zeros((m, m))
        S = eye_sp
        d = 1e-3 if delta is None else delta
    elif prop == "input_passivity":
        nu = 0.0 if param is None else param
        if nu < 0:
            raise ParameterRangeError("input_passivity requires nu >= 0")
        Q = np.zeros((p, p))
        R = -2.0 * nu * np.eye(m)
        S = np.eye(m, p)
        # delta < 1/(2 nu) keeps the construction hypothesis alive; the
        # midpoint 1/(4 nu) leaves a 2 nu I margin.
        d = delta if delta is not None else (1.0 / (4.0 * nu) if nu > 0 else 1e-3)
    elif prop == "output_passivity":
        eps_op = 0.0 if param is None else param
        if eps_op < 0:
            raise ParameterRangeError("output_passivity requires eps >= 0")
        Q = -2.0 * eps_op * np.eye(p)
        R = np.zeros((m, m))
        S = np.eye(m, p)
        d = 1e-3 if delta is None else delta
    else:
        raise ParameterRangeError(f"unknown property {prop!r}")
    return SupplyRate(Q=Q, S=S, R=R, delta=d, property_name=prop, property_param=param)


def supply_eval(sr: SupplyRate, du: np.ndarray, dy: np.ndarray) -> float:
    """Quadratic form [dy; du]^T [[Q, S^T], [S, R]] [dy; du]."""
    du = np.asarray(du, dtype=float)
    dy = np.asarray(dy, dtype=float)
    if dy.shape != (sr.p,) or du.shape != (sr.m,):
        raise ValidationError(f"expected dy of shape ({sr.p},) and du of shape ({sr.m},), "
                              f"got {dy.shape} and {du.shape}")
    return float(dy @ sr.Q @ dy + 2.0 * (du @ sr.S @ dy) + du @ sr.R @ du)


def gamma_form(Lambda: np.ndarray, dv: np.ndarray, dw: np.ndarray) -> float:
    """Multiplier form 2 dw^T Lambda (dv - dw); nonnegative for any slope-
    restricted increment pair and diagonal Lambda > 0."""
    Lambda = np.asarray(Lambda, dtype=float)
    dv = np.asarray(dv, dtype=float)
    dw = np.asarray(dw, dtype=float)
    if Lambda.shape != (dv.size, dv.size) or dw.shape != dv.shape:
        raise ValidationError("gamma_form dimension mismatch")
    diag = np.diag(Lambda)
    if np.any(diag <= 0) or np.any(Lambda - np.diag(diag) != 0.0):
        raise ValidationError("Lambda must be diagonal with positive diagonal")
    return float(2.0 * dw @ (diag * (dv - dw)))


@dataclass(frozen=True)
class Certificate:
    """Storage-function pair: P > 0 (quadratic storage metric) and the
    diagonal multiplier Lambda > 0."""

    P: np.ndarray
    Lambda: np.ndarray

    def lambda_diag(self) -> np.ndarray:
        return np.diag(np.asarray(self.Lambda))


def validate_certificate(cert: Certificate) -> Certificate:
    P = np.asarray(cert.P, dtype=float)
    L = np.asarray(cert.Lambda, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValidationError("P must be square")
    if np.abs(P - P.T).max() > 1e-10 * max(1.0, np.abs(P).max()):
        raise ValidationError("P must be symmetric")
    if np.linalg.eigvalsh(0.5 * (P + P.T)).min() <= 0:
        raise ValidationError("P must be positive definite")
    diag = np.diag(L)
    if np.any(L - np.diag(diag) != 0.0) or np.any(diag <= 0):
        raise ValidationError("Lambda must be diagonal with strictly positive diagonal")
    return cert


def storage(cert: Certificate, dx: np.ndarray) -> float:
    """V(dx) = dx^T P dx."""
    dx = np.asarray(dx, dtype=float)
    return float(dx @ cert.P @ dx)
