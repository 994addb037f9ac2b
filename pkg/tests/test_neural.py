import math

import numpy as np
import numpy.testing as npt
import pytest

from minehaul.errors import DimensionError, DomainError, InvalidInputError, TrainingDivergenceError
from minehaul.neural.gradcheck import check_gradients
from minehaul.neural.layers import MLP, Dense, activate, activate_grad, softplus
from minehaul.neural.optim import adam_step, cosine_lr
from minehaul.neural.params import ParamStore
from minehaul.neural.special import digamma, log_gamma


def test_dense_forward_matches_matmul(rng):
    store = ParamStore()
    layer = Dense(store, "fc", 3, 2, rng)
    store.params["fc.w"][...] = np.eye(3, 2)
    store.params["fc.b"][...] = [0.5, -0.5]
    x = rng.normal(size=(4, 3))
    y, _ = layer.forward(x)
    npt.assert_allclose(y, x[:, :2] + [0.5, -0.5])


def test_dense_rejects_wrong_width(rng):
    layer = Dense(ParamStore(), "scan_encoder.0", 16, 4, rng)
    with pytest.raises(DimensionError) as info:
        layer.forward(np.zeros((2, 10)))
    assert info.value.layer == "scan_encoder.0"


def test_duplicate_parameter_names(rng):
    store = ParamStore()
    Dense(store, "fc", 2, 2, rng)
    with pytest.raises(KeyError):
        Dense(store, "fc", 2, 2, rng)


def test_backward_accumulates(rng):
    store = ParamStore()
    layer = Dense(store, "fc", 3, 2, rng)
    x = rng.normal(size=(5, 3))
    dy = rng.normal(size=(5, 2))
    _, cache = layer.forward(x)
    layer.backward(dy, cache)
    layer.backward(dy, cache)
    npt.assert_allclose(store.grads["fc.w"], 2.0 * x.T @ dy)
    npt.assert_allclose(store.grads["fc.b"], 2.0 * dy.sum(axis=0))
    store.zero_grad()
    assert not store.grads["fc.w"].any()


def test_softplus_values():
    assert softplus(np.array(0.0)) == pytest.approx(math.log(2.0))
    assert activate_grad("softplus", np.array(0.0)) == pytest.approx(0.5)
    assert softplus(np.array(800.0)) == pytest.approx(800.0)
    assert np.all(np.isfinite(softplus(np.array([-800.0, 800.0]))))


@pytest.mark.parametrize("kind", ["relu", "tanh", "sigmoid", "softplus", "identity"])
def test_activation_derivatives(kind):
    x = np.array([-1.3, -0.2, 0.4, 2.1])
    h = 1e-6
    numeric = (activate(kind, x + h) - activate(kind, x - h)) / (2.0 * h)
    npt.assert_allclose(activate_grad(kind, x), numeric, atol=1e-6)


def test_unknown_activation():
    with pytest.raises(ValueError):
        activate("gelu", np.zeros(2))


def test_mlp_shapes_and_relu_pattern(rng):
    store = ParamStore()
    net = MLP(store, "trunk", [6, 8, 3], rng, final_activation="identity")
    y, caches = net.forward(rng.normal(size=(4, 6)))
    assert y.shape == (4, 3)
    assert len(net.relu_pattern(caches)) == 4 * 8
    assert store.size == 6 * 8 + 8 + 8 * 3 + 3


def test_mlp_gradients_match_finite_differences(rng):
    store = ParamStore()
    net = MLP(store, "mlp", [4, 5, 2], rng, activation="tanh", final_activation="identity")
    x = rng.normal(size=(3, 4))
    c = rng.normal(size=(3, 2))
    _, caches = net.forward(x)
    net.backward(c, caches)
    worst, probes, skipped = check_gradients(
        lambda: float(np.sum(c * net.forward(x)[0])), store.params, dict(store.grads), rng, n_probes=32
    )
    assert probes > 0
    assert skipped == 0
    assert worst < 1e-5


def test_kink_straddling_draws_are_skipped(rng):
    params = {"w": np.array([0.0, 1.0, -1.0])}
    # Wrong on purpose: any evaluated entry would fail.
    grads = {"w": np.array([5.0, 5.0, 5.0])}
    flips = iter(range(10_000))
    worst, probes, skipped = check_gradients(
        lambda: float(np.sum(np.abs(params["w"]))),
        params,
        grads,
        rng,
        n_probes=6,
        signature=lambda: next(flips),
        max_redraws=3,
    )
    assert (worst, probes, skipped) == (0.0, 0, 6)


def test_adam_first_step_moves_by_lr():
    store = ParamStore()
    store.add("w", np.array([1.0, -2.0]))
    store.grads["w"][...] = [0.3, -7.0]
    adam_step(store, lr=0.1)
    # Bias correction makes the first step lr * sign(g).
    npt.assert_allclose(store.params["w"], [0.9, -1.9], atol=1e-6)
    assert store.step == 1
    assert not store.grads["w"].any()


def test_adam_zero_lr_is_identity():
    store = ParamStore()
    store.add("w", np.array([[1.0, 2.0]]))
    store.grads["w"][...] = 5.0
    adam_step(store, lr=0.0)
    npt.assert_array_equal(store.params["w"], [[1.0, 2.0]])


def test_adam_refuses_non_finite_gradients():
    store = ParamStore()
    store.add("w", np.zeros(2))
    store.grads["w"][...] = [np.nan, 0.0]
    with pytest.raises(TrainingDivergenceError):
        adam_step(store, lr=0.1)
    npt.assert_array_equal(store.params["w"], [0.0, 0.0])
    assert store.step == 0


def test_cosine_schedule():
    assert cosine_lr(0, 100) == pytest.approx(2e-4)
    assert cosine_lr(50, 100) == pytest.approx(1e-4)
    assert cosine_lr(100, 100) == pytest.approx(0.0)
    with pytest.raises(InvalidInputError):
        cosine_lr(101, 100)


def test_log_gamma():
    assert log_gamma(1.0) == pytest.approx(0.0, abs=1e-12)
    assert log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi))
    assert log_gamma(10.0) == pytest.approx(math.log(362880.0))
    assert digamma(1.0) == pytest.approx(-0.5772156649015329)
    with pytest.raises(DomainError):
        log_gamma(0.0)
    with pytest.raises(DomainError):
        log_gamma(np.array([1.0, -2.0]))
