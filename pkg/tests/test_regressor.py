import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaemir.errors import ConfigError, NumericalError, ShapeError
from vaemir.nn import numerical_gradient
from vaemir.regressor import (
    MlpRegressor,
    RegressorTrainConfig,
    fit,
    fit_arrays,
    mse_loss_and_grad,
    predict,
    training_mse,
)

from conftest import max_rel_err


def cfg(**kw):
    base = dict(epochs=100, batch_size=16, hidden_dims=(16, 8), seed=0)
    base.update(kw)
    return RegressorTrainConfig(**base)


class TestOracles:
    def test_constant_target(self, rng):
        x = rng.normal(size=(50, 3))
        model = fit_arrays(x, np.full(50, 7.0), cfg())
        preds = predict(model, rng.normal(size=(20, 3)))
        assert np.all(np.abs(preds - 7.0) < 0.05)

    def test_linear_function(self, rng):
        x = rng.uniform(-1, 1, size=(200, 1))
        y = 2 * x[:, 0] + 1
        model = fit_arrays(x, y, RegressorTrainConfig(seed=0))
        assert np.sqrt(training_mse(model, x, y)) < 0.1

    def test_identity_interpolates(self, rng):
        x = rng.uniform(0, 1, size=(100, 1))
        model = fit_arrays(x, x[:, 0], cfg(epochs=200))
        assert 0.3 <= predict(model, [0.5]) <= 0.7

    def test_pairs_interface(self):
        pairs = [([float(i)], 3.0 * i) for i in range(10)]
        a = fit(pairs, cfg(epochs=5))
        b = fit_arrays(np.arange(10.0)[:, None], 3.0 * np.arange(10.0), cfg(epochs=5))
        np.testing.assert_array_equal(a.network.params, b.network.params)


class TestTraining:
    def test_deterministic(self, rng):
        x, y = rng.normal(size=(40, 4)), rng.normal(size=40)
        a, b = fit_arrays(x, y, cfg(seed=5)), fit_arrays(x, y, cfg(seed=5))
        np.testing.assert_array_equal(a.network.params, b.network.params)
        assert a.loss_trace == b.loss_trace

    def test_seed_matters(self, rng):
        x, y = rng.normal(size=(40, 4)), rng.normal(size=40)
        a, b = fit_arrays(x, y, cfg(seed=1)), fit_arrays(x, y, cfg(seed=2))
        assert not np.array_equal(a.network.params, b.network.params)

    def test_loss_does_not_increase_overall(self, rng):
        x = rng.normal(size=(60, 3))
        y = np.sin(x[:, 0]) + x[:, 1] ** 2
        model = fit_arrays(x, y, cfg())
        assert model.loss_trace[-1] <= model.loss_trace[0]

    def test_gradient_matches_numerical(self, rng):
        model = fit_arrays(rng.normal(size=(10, 3)), rng.normal(size=10), cfg(epochs=1))
        net = model.network
        xb, yb = rng.normal(size=(5, 3)), rng.normal(size=5)
        _, grads = mse_loss_and_grad(net, xb, yb)
        num = numerical_gradient(lambda: mse_loss_and_grad(net, xb, yb)[0], net.params)
        assert max_rel_err(grads, num) < 1e-4

    @settings(max_examples=8)
    @given(st.floats(0.1, 100), st.floats(-100, 100))
    def test_affine_target_equivariance(self, c, d):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(30, 2)), rng.normal(size=30)
        probe = rng.normal(size=(5, 2))
        base = predict(fit_arrays(x, y, cfg(epochs=10)), probe)
        moved = predict(fit_arrays(x, c * y + d, cfg(epochs=10)), probe)
        np.testing.assert_allclose(moved, c * base + d, atol=1e-6 * max(1.0, abs(c), abs(d)))

    def test_constant_input_column(self, rng):
        x = rng.normal(size=(30, 3))
        x[:, 2] = 5.0
        model = fit_arrays(x, x[:, 0], cfg(epochs=5))
        assert np.isfinite(predict(model, x)).all()

    def test_divergence_raises(self, rng):
        x, y = rng.normal(size=(40, 3)), rng.normal(size=40)
        with pytest.raises(NumericalError, match="epoch"):
            fit_arrays(x * 1e150, y, cfg(learning_rate=1e300))


class TestErrors:
    def test_too_few_pairs(self):
        with pytest.raises(ConfigError):
            fit([([1.0], 1.0)], cfg())

    def test_mixed_dims(self):
        with pytest.raises(ShapeError):
            fit([([1.0], 1.0), ([1.0, 2.0], 2.0)], cfg())

    def test_nan_label(self):
        with pytest.raises(ShapeError):
            fit_arrays(np.zeros((3, 1)), [1.0, np.nan, 2.0], cfg())

    def test_predict_wrong_dim(self, rng):
        model = fit_arrays(rng.normal(size=(5, 2)), rng.normal(size=5), cfg(epochs=1))
        with pytest.raises(ShapeError):
            predict(model, np.zeros(3))

    @pytest.mark.parametrize("kw", [{"epochs": 0}, {"batch_size": 0}, {"learning_rate": 0.0}, {"seed": -1}])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            cfg(**kw)


class TestPersistence:
    def test_round_trip(self, rng):
        model = fit_arrays(rng.normal(size=(20, 3)), rng.normal(size=20), cfg(epochs=3))
        back = MlpRegressor.from_json(model.to_json())
        probe = rng.normal(size=(7, 3))
        np.testing.assert_array_equal(predict(back, probe), predict(model, probe))

    def test_scalar_vs_batch(self, rng):
        model = fit_arrays(rng.normal(size=(20, 3)), rng.normal(size=20), cfg(epochs=3))
        x = rng.normal(size=3)
        assert isinstance(predict(model, x), float)
        assert predict(model, x[None])[0] == pytest.approx(predict(model, x), rel=1e-12)
