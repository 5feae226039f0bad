"""Vector-field evaluation, implicit-channel resolution, Lipschitz bound."""
import numpy as np
import pytest
from dataclasses import replace

from ctren.core import Activation, Dims, ExplicitParams
from ctren.dynamics import (lipschitz_bound, make_rhs, solve_w, vector_field,
                            vector_field_batch)
from ctren.parametrization import random_explicit

DIMS = Dims(4, 5, 2, 2)


def reference_vector_field(params, act, x, u, iters=200):
    """Literal transcription of the model equations: solve the implicit
    channel by plain fixed-point iteration instead of forward substitution."""
    w = np.zeros(params.C1.shape[0])
    for _ in range(iters):
        v = params.C1 @ x + params.D11 @ w + params.D12 @ u + params.b_v
        w = act.apply(v)
    xdot = params.A @ x + params.B1 @ w + params.B2 @ u + params.b_x
    y = params.C2 @ x + params.D21 @ w + params.D22 @ u + params.b_y
    return xdot, y


class TestSolveW:
    def test_no_recursion_when_d11_zero(self, rng):
        params = random_explicit(DIMS, rng, zero_bias=False)
        params = replace(params, D11=np.zeros((DIMS.q, DIMS.q)))
        x, u = rng.normal(size=DIMS.n), rng.normal(size=DIMS.m)
        v, w = solve_w(params, Activation.TANH, x, u)
        direct = params.C1 @ x + params.D12 @ u + params.b_v
        assert np.allclose(v, direct)
        assert np.allclose(w, np.tanh(direct))

    def test_manual_two_channel_recursion(self):
        params = ExplicitParams.zeros(Dims(1, 2, 1, 1))
        params = replace(params, C1=np.array([[1.0], [0.0]]),
                         D11=np.array([[0.0, 0.0], [1.0, 0.0]]))
        v, w = solve_w(params, Activation.RELU, np.array([2.0]), np.zeros(1))
        assert np.allclose(v, [2.0, 2.0])
        assert np.allclose(w, [2.0, 2.0])

    def test_zero_fixed_point(self):
        params = ExplicitParams.zeros(Dims(2, 3, 1, 1))
        v, w = solve_w(params, Activation.TANH, np.zeros(2), np.zeros(1))
        assert np.all(v == 0) and np.all(w == 0)

    @pytest.mark.parametrize("act", list(Activation))
    def test_residual_of_implicit_equation(self, act, rng):
        params = random_explicit(DIMS, rng, zero_bias=False)
        for _ in range(20):
            x, u = rng.normal(size=DIMS.n), rng.normal(size=DIMS.m)
            v, w = solve_w(params, act, x, u)
            residual = v - (params.C1 @ x + params.D11 @ w
                            + params.D12 @ u + params.b_v)
            assert np.abs(residual).max() < 1e-12
            assert np.allclose(w, act.apply(v))


class TestVectorField:
    def test_constant_drift(self):
        params = ExplicitParams.zeros(Dims(2, 2, 1, 1))
        params = replace(params, b_x=np.array([1.0, -2.0]), b_y=np.array([3.0]))
        xdot, y = vector_field(params, Activation.TANH, np.zeros(2), np.zeros(1))
        assert np.allclose(xdot, [1.0, -2.0])
        assert np.allclose(y, [3.0])

    def test_pure_linear_when_channels_off(self, rng):
        params = random_explicit(DIMS, rng)
        params = replace(params, B1=np.zeros((DIMS.n, DIMS.q)), b_x=np.zeros(DIMS.n))
        x = rng.normal(size=DIMS.n)
        xdot, _ = vector_field(params, Activation.TANH, x, np.zeros(DIMS.m))
        assert np.allclose(xdot, params.A @ x)

    def test_against_fixed_point_oracle(self, rng):
        # contractive implicit channel so plain iteration converges
        params = random_explicit(Dims(3, 4, 2, 2), rng, zero_bias=False)
        params = replace(params, D11=0.3 * params.D11)
        for _ in range(10):
            x, u = rng.normal(size=3), rng.normal(size=2)
            got = vector_field(params, Activation.TANH, x, u)
            want = reference_vector_field(params, Activation.TANH, x, u)
            assert np.abs(got[0] - want[0]).max() < 1e-13
            assert np.abs(got[1] - want[1]).max() < 1e-13

    def test_batch_matches_loop(self, rng):
        params = random_explicit(DIMS, rng, zero_bias=False)
        X = rng.normal(size=(DIMS.n, 7))
        U = rng.normal(size=(DIMS.m, 7))
        Xd, Y = vector_field_batch(params, Activation.TANH, X, U)
        for j in range(7):
            xd, y = vector_field(params, Activation.TANH, X[:, j], U[:, j])
            assert np.allclose(Xd[:, j], xd)
            assert np.allclose(Y[:, j], y)


class TestLipschitzBound:
    def test_b1_zero_collapses_to_spectral_norm(self, rng):
        params = random_explicit(DIMS, rng)
        params = replace(params, B1=np.zeros((DIMS.n, DIMS.q)))
        assert lipschitz_bound(params) == pytest.approx(
            np.linalg.norm(params.A, 2), rel=1e-6)

    def test_c1_zero_collapses_to_spectral_norm(self, rng):
        params = random_explicit(DIMS, rng)
        params = replace(params, C1=np.zeros((DIMS.q, DIMS.n)))
        assert lipschitz_bound(params) == pytest.approx(
            np.linalg.norm(params.A, 2), rel=1e-6)

    @pytest.mark.parametrize("act", list(Activation))
    def test_monte_carlo_difference_quotients(self, act, rng):
        params = random_explicit(Dims(3, 4, 1, 1), rng, zero_bias=False)
        kappa = lipschitz_bound(params)
        u = rng.normal(size=1)
        quotients = []
        for _ in range(10_000 // 10):
            x1 = rng.normal(scale=2.0, size=3)
            x2 = x1 + rng.normal(scale=0.1, size=3)
            d1, _ = vector_field(params, act, x1, u)
            d2, _ = vector_field(params, act, x2, u)
            quotients.append(np.linalg.norm(d1 - d2) / np.linalg.norm(x1 - x2))
        assert max(quotients) <= kappa * (1 + 1e-10)


class TestUniqueness:
    def test_trajectories_from_distinct_states_never_meet(self, rng):
        from ctren.integrators import SolverConfig, integrate
        params = random_explicit(Dims(3, 3, 1, 1), rng)
        rhs = make_rhs(params, Activation.TANH)
        cfg = SolverConfig(method="rk4", steps=200, t_span=(0.0, 2.0))
        samples = np.linspace(0.0, 2.0, 50)
        x0a = rng.normal(size=3)
        x0b = x0a + 1e-3 * rng.normal(size=3)
        ta = integrate(rhs, x0a, cfg, samples)
        tb = integrate(rhs, x0b, cfg, samples)
        gaps = np.linalg.norm(ta.states - tb.states, axis=1)
        assert np.all(gaps > 0)
