"""Loss, reverse-mode gradients vs the finite-difference oracle, Adam."""
import numpy as np
import pytest

from conftest import draw_tame_free, make_experiments
from ctren.core import Dims, supply_rate_for
from ctren.gradients import (ModelSpec, SampledExperiment, UnsupportedConfigError,
                             adam_init, adam_step, explicit_and_cert,
                             flatten_free, grad_fd, grad_reverse, mse_loss,
                             random_free, unflatten_free, value_and_grad_dict)
from ctren.integrators import SolverConfig

DIMS = Dims(3, 3, 1, 2)
SR = supply_rate_for("l2_gain", DIMS.p, DIMS.m, param=2.0)


def spec_for(mode):
    return ModelSpec(mode=mode, dims=DIMS, sr=SR if mode == "iqc" else None)


class TestMseLoss:
    def test_zero_residual(self):
        spec = spec_for("general")
        free = {k: np.zeros_like(v)
                for k, v in random_free(spec, np.random.default_rng(0)).items()}
        exp = SampledExperiment(x0=np.zeros(DIMS.n), times=np.array([0.5]),
                                targets=np.zeros((1, DIMS.p)))
        cfg = SolverConfig(method="rk4", steps=10, t_span=(0.0, 1.0))
        assert mse_loss(spec, free, [exp], cfg).value == 0.0

    def test_single_sample_squared_norm(self):
        spec = spec_for("general")
        free = {k: np.zeros_like(v)
                for k, v in random_free(spec, np.random.default_rng(0)).items()}
        exp = SampledExperiment(x0=np.zeros(DIMS.n), times=np.array([0.5]),
                                targets=np.array([[1.0, 1.0]]))
        cfg = SolverConfig(method="rk4", steps=10, t_span=(0.0, 1.0))
        assert mse_loss(spec, free, [exp], cfg).value == pytest.approx(2.0)

    def test_value_is_mean_of_per_experiment(self, rng):
        spec = spec_for("contractive")
        free = random_free(spec, rng, zero_bias=False)
        exps = make_experiments(rng, DIMS.n, DIMS.p, n_exp=3)
        cfg = SolverConfig(method="rk4", steps=10, t_span=(0.0, 0.5))
        rep = mse_loss(spec, free, exps, cfg)
        assert rep.value == pytest.approx(np.mean(rep.per_experiment))


class TestFlattenRoundTrip:
    def test_unflatten_inverts_flatten(self, rng):
        spec = spec_for("iqc")
        free = random_free(spec, rng, zero_bias=False)
        back = unflatten_free(free, flatten_free(free))
        for k in free:
            assert np.array_equal(free[k], back[k])

    def test_length_mismatch_rejected(self, rng):
        free = random_free(spec_for("general"), rng)
        with pytest.raises(ValueError):
            unflatten_free(free, flatten_free(free)[:-1])


class TestGradReverse:
    def test_scalar_linear_hand_chain_rule(self):
        # xdot = a x, loss = x(T)^2, one euler step: dL/da = 2 x(T) h x0
        dims = Dims(1, 1, 1, 1)
        spec = ModelSpec(mode="general", dims=dims)
        a, x0, h = -0.7, 1.3, 0.5
        free = {k: np.zeros_like(v)
                for k, v in random_free(spec, np.random.default_rng(0)).items()}
        free["A"] = np.array([[a]])
        free["C2"] = np.array([[1.0]])
        exp = SampledExperiment(x0=np.array([x0]), times=np.array([h]),
                                targets=np.zeros((1, 1)))
        cfg = SolverConfig(method="euler", steps=1, t_span=(0.0, h))
        rep = grad_reverse(spec, free, [exp], cfg)
        xT = x0 * (1 + h * a)
        assert rep.value == pytest.approx(xT ** 2)
        # free keys sort A first, so grad[0] is dL/da
        assert rep.grad[0] == pytest.approx(2 * xT * h * x0)

    def test_zero_residual_zero_gradient(self):
        spec = spec_for("general")
        free = {k: np.zeros_like(v)
                for k, v in random_free(spec, np.random.default_rng(0)).items()}
        exp = SampledExperiment(x0=np.zeros(DIMS.n), times=np.array([0.3, 0.6]),
                                targets=np.zeros((2, DIMS.p)))
        cfg = SolverConfig(method="euler", steps=6, t_span=(0.0, 1.0))
        rep = grad_reverse(spec, free, [exp], cfg)
        assert rep.value == 0.0
        assert np.abs(rep.grad).max() < 1e-8

    @pytest.mark.parametrize("mode", ["contractive", "iqc", "general"])
    @pytest.mark.parametrize("method", ["euler", "rk4"])
    def test_matches_finite_differences(self, mode, method, rng):
        spec = spec_for(mode)
        cfg = SolverConfig(method=method, steps=10, t_span=(0.0, 0.5))
        free = draw_tame_free(spec, rng, h=0.05)
        exps = make_experiments(rng, DIMS.n, DIMS.p)
        rev = grad_reverse(spec, free, exps, cfg)
        fd = grad_fd(spec, free, exps, cfg)
        rel = np.abs(rev.grad - fd).max() / max(1.0, np.abs(fd).max())
        assert rel < 1e-5

    @pytest.mark.parametrize("mode", ["contractive", "iqc", "general"])
    def test_value_matches_numpy_pipeline(self, mode, rng):
        spec = spec_for(mode)
        cfg = SolverConfig(method="rk4", steps=12, t_span=(0.0, 0.5))
        free = draw_tame_free(spec, rng, h=0.5 / 12)
        exps = make_experiments(rng, DIMS.n, DIMS.p)
        rev = grad_reverse(spec, free, exps, cfg)
        ref = mse_loss(spec, free, exps, cfg)
        assert rev.value == pytest.approx(ref.value, rel=1e-12)
        assert np.allclose(rev.per_experiment, ref.per_experiment, rtol=1e-12)

    def test_dopri5_unsupported(self, rng):
        spec = spec_for("contractive")
        free = random_free(spec, rng)
        exps = make_experiments(rng, DIMS.n, DIMS.p)
        cfg = SolverConfig(method="dopri5", t_span=(0.0, 0.5))
        with pytest.raises(UnsupportedConfigError):
            grad_reverse(spec, free, exps, cfg)
        with pytest.raises(UnsupportedConfigError):
            value_and_grad_dict(spec, free, exps, cfg)

    def test_irregular_grids_per_experiment(self, rng):
        # experiments with different sample counts share one padded batch
        spec = spec_for("contractive")
        cfg = SolverConfig(method="euler", steps=8, t_span=(0.0, 0.5))
        free = draw_tame_free(spec, rng, h=0.5 / 8)
        exps = [SampledExperiment(x0=rng.normal(size=DIMS.n),
                                  times=np.sort(rng.uniform(0.05, 0.5, k)),
                                  targets=rng.normal(size=(k, DIMS.p)))
                for k in (2, 5, 3)]
        rev = grad_reverse(spec, free, exps, cfg)
        ref = mse_loss(spec, free, exps, cfg)
        assert np.allclose(rev.per_experiment, ref.per_experiment, rtol=1e-12)
        fd = grad_fd(spec, free, exps, cfg)
        assert np.abs(rev.grad - fd).max() / max(1.0, np.abs(fd).max()) < 1e-5


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        params = {"a": np.array([1.0, -2.0]), "b": np.array([[3.0]])}
        state = adam_init(params)
        new = adam_step(state, {"a": np.zeros(2), "b": np.zeros((1, 1))})
        for k in params:
            assert np.array_equal(new.params[k], params[k])

    def test_first_step_sign_scaled(self):
        g = np.array([0.3, -2.0, 0.0])
        state = adam_init({"w": np.array([1.0, 1.0, 1.0])})
        lr, eps = 1e-2, 1e-8
        new = adam_step(state, {"w": g}, lr=lr, eps_adam=eps)
        expected = 1.0 - lr * g / (np.abs(g) + eps)
        assert np.allclose(new.params["w"], expected)

    def test_replay_determinism(self, rng):
        g1, g2 = rng.normal(size=4), rng.normal(size=4)
        s = adam_init({"w": np.zeros(4)})
        a = adam_step(adam_step(s, {"w": g1}), {"w": g2})
        s2 = adam_init({"w": np.zeros(4)})
        b = adam_step(adam_step(s2, {"w": g1}), {"w": g2})
        assert np.array_equal(a.params["w"], b.params["w"])
        assert a.t == 2


class TestCertifiedDuringOptimization:
    @pytest.mark.parametrize("mode", ["contractive", "iqc"])
    def test_lmi_holds_after_every_step(self, mode, rng):
        from ctren.verification import (assemble_contractivity_lmi,
                                        assemble_iqc_lmi, pd_check)
        spec = spec_for(mode)
        cfg = SolverConfig(method="euler", steps=8, t_span=(0.0, 0.5))
        free = random_free(spec, rng, zero_bias=False)
        exps = make_experiments(rng, DIMS.n, DIMS.p)
        state = adam_init(free)
        for _ in range(10):
            _, grads, _ = value_and_grad_dict(spec, state.params, exps, cfg)
            state = adam_step(state, grads, lr=0.05)
            params, cert = explicit_and_cert(spec, state.params)
            lmi = (assemble_iqc_lmi(params, cert, SR) if mode == "iqc"
                   else assemble_contractivity_lmi(params, cert))
            ok, _ = pd_check(lmi)
            assert ok
