"""Vector-field evaluation: forward substitution through the implicit
nonlinearity channel, the output map, and the global Lipschitz bound that
guarantees existence/uniqueness of trajectories."""
from __future__ import annotations

import numpy as np

from .core import Activation, ExplicitParams


def solve_w(params: ExplicitParams, act: Activation, x, u, xp=np):
    """Resolve v = C1 x + D11 w + D12 u + b_v, w = sigma(v) by forward
    substitution (D11 strictly lower-triangular makes this exact)."""
    base = params.C1 @ x + params.D12 @ u + params.b_v
    q = params.C1.shape[0]
    vs, ws = [], []
    for r in range(q):
        vr = base[r]
        if r:
            vr = vr + params.D11[r, :r] @ xp.stack(ws)
        vs.append(vr)
        ws.append(act.apply(vr, xp))
    return xp.stack(vs), xp.stack(ws)


def vector_field(params: ExplicitParams, act: Activation, x, u, xp=np):
    """(xdot, y) of the model at state x and input u."""
    _, w = solve_w(params, act, x, u, xp)
    xdot = params.A @ x + params.B1 @ w + params.b_x
    y = params.C2 @ x + params.D21 @ w + params.b_y
    if params.B2.shape[1]:
        xdot = xdot + params.B2 @ u
        y = y + params.D22 @ u
    return xdot, y


def solve_w_batch(params: ExplicitParams, act: Activation, X, U):
    """Column-batched forward substitution: X is (n, k), U is (m, k)."""
    base = params.C1 @ X + params.D12 @ U + params.b_v[:, None]
    q = params.C1.shape[0]
    ws = np.empty((q, X.shape[1]))
    for r in range(q):
        vr = base[r]
        if r:
            vr = vr + params.D11[r, :r] @ ws[:r]
        ws[r] = act.apply(vr)
    return ws


def vector_field_batch(params: ExplicitParams, act: Activation, X, U):
    """(Xdot, Y) for a column batch of states/inputs; shapes (n, k)/(m, k)."""
    W = solve_w_batch(params, act, X, U)
    Xdot = params.A @ X + params.B1 @ W + params.B2 @ U + params.b_x[:, None]
    Y = params.C2 @ X + params.D21 @ W + params.D22 @ U + params.b_y[:, None]
    return Xdot, Y


def make_rhs(params: ExplicitParams, act: Activation, u_fn=None):
    """Time-domain right-hand side f(t, x) with input signal u_fn(t)."""
    m = params.B2.shape[1]
    zero_u = np.zeros(m)

    def rhs(t, x):
        u = zero_u if u_fn is None else u_fn(t)
        xdot, _ = vector_field(params, act, x, u)
        return xdot

    return rhs


def make_output(params: ExplicitParams, act: Activation, u_fn=None):
    """Output map y(t, x) consistent with make_rhs."""
    m = params.B2.shape[1]
    zero_u = np.zeros(m)

    def output(t, x):
        u = zero_u if u_fn is None else u_fn(t)
        _, y = vector_field(params, act, x, u)
        return y

    return output


def _spectral_norm(A: np.ndarray, iters: int = 50, rtol: float = 1e-8) -> float:
    """Largest singular value by power iteration on A^T A."""
    A = np.asarray(A, dtype=float)
    if not A.size or not np.any(A):
        return 0.0
    v = np.ones(A.shape[1]) / np.sqrt(A.shape[1])
    est = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        new = np.sqrt(nrm)
        if abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    return float(est)


def lipschitz_bound(params: ExplicitParams) -> float:
    """Global Lipschitz constant of x -> xdot at fixed input.

    Channel constants: kappa_r = |C1 row r| + sum_{l<r} |D11[r,l]| kappa_l,
    then kappa_tot = |A| + sum_r |B1 column r| kappa_r (spectral norm for A,
    Euclidean norms for the rows/columns).
    """
    C1 = np.asarray(params.C1, dtype=float)
    D11 = np.asarray(params.D11, dtype=float)
    B1 = np.asarray(params.B1, dtype=float)
    q = C1.shape[0]
    kappa = np.zeros(q)
    for r in range(q):
        kappa[r] = np.linalg.norm(C1[r]) + np.abs(D11[r, :r]) @ kappa[:r]
    return _spectral_norm(params.A) + float(np.linalg.norm(B1, axis=0) @ kappa)
