import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from padloop.dbn import (
    DbnParams,
    FineTuneHistory,
    MinMaxScaler,
    RbmLayer,
    TrainConfig,
    cd1_statistics,
    fine_tune,
    forward,
    free_energy_ratio,
    init_layer,
    loo_loss_and_grad,
    pretrain_dbn,
    rbm_cd1_update,
    reconstruction_error,
)
from padloop.errors import InvalidInputError
from padloop.kernels import KernelParams


def _random_dbn(widths, rng, scale=1.0):
    layers = [
        RbmLayer(rng.normal(0, scale, (a, b)), rng.normal(0, 0.1, a), rng.normal(0, scale, b))
        for a, b in zip(widths, widths[1:])
    ]
    return DbnParams(tuple(layers))


def _toy_problem(seed, n=5, widths=(4, 3, 3)):
    rng = np.random.default_rng(seed)
    dbn = _random_dbn(widths, rng)
    E = rng.random((n, widths[0]))
    F = rng.uniform(1, 9, (n, 3))
    kernels = [KernelParams(rng.uniform(0.5, 2), rng.uniform(0.2, 1.0), rng.uniform(0.05, 0.3)) for _ in range(3)]
    return dbn, kernels, E, F


# ---- CD-1 ----

def test_zero_rbm_hidden_probs_are_half():
    layer = RbmLayer(np.zeros((5, 4)), np.zeros(5), np.zeros(4))
    batch = np.random.default_rng(0).random((7, 5))
    assert np.all(layer.hidden_probs(batch) == 0.5)


def test_positive_phase_matches_enumeration():
    rng = np.random.default_rng(3)
    layer = RbmLayer(rng.normal(0, 1, (2, 2)), rng.normal(0, 1, 2), rng.normal(0, 1, 2))
    data = np.array([[0.0, 1.0], [1.0, 1.0], [0.3, 0.8], [1.0, 0.0]])
    stats = cd1_statistics(layer, data, np.random.default_rng(0))
    # brute force: enumerate every hidden configuration for each data row
    expected = np.zeros((2, 2))
    for v in data:
        configs = np.array(list(itertools.product([0, 1], repeat=2)), dtype=float)
        logits = configs @ (v @ layer.weights + layer.hidden_bias)
        p = np.exp(logits - logits.max())
        p /= p.sum()
        expected += np.outer(v, p @ configs)
    expected /= len(data)
    assert np.abs(stats["pos_vh"] - expected).max() < 1e-12


def test_cd1_update_rejects_wrong_width():
    layer = init_layer(3, 2, np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        rbm_cd1_update(layer, np.zeros((4, 5)), TrainConfig(), np.random.default_rng(0))


def test_cd1_update_is_deterministic():
    layer = init_layer(6, 4, np.random.default_rng(0), std=0.5)
    batch = np.random.default_rng(1).random((10, 6))
    a, _ = rbm_cd1_update(layer, batch, TrainConfig(), np.random.default_rng(9))
    b, _ = rbm_cd1_update(layer, batch, TrainConfig(), np.random.default_rng(9))
    assert a.weights.tobytes() == b.weights.tobytes()


def test_reconstruction_error_decreases():
    data = np.array([[1, 1, 0, 0, 1, 0], [0, 0, 1, 1, 0, 1], [1, 0, 1, 0, 1, 0], [0, 1, 0, 1, 0, 1]], dtype=float)
    cfg = TrainConfig(lr_first_layer=0.1, minibatch_size=4)
    rng = np.random.default_rng(0)
    layer = init_layer(6, 8, rng)
    velocity = None
    errors = []
    for _ in range(200):
        layer, velocity = rbm_cd1_update(layer, data, cfg, rng, velocity=velocity)
        errors.append(reconstruction_error(layer, data))
    assert errors[-1] < errors[0]


# ---- pretraining and forward pass ----

@pytest.mark.parametrize("arch", [(14, 20, 20, 20, 20), (56, 80, 80, 80, 80)])
def test_pretrain_architectures(arch):
    X = np.random.default_rng(0).uniform(1, 2, (40, arch[0]))
    dbn = pretrain_dbn(X, arch, TrainConfig(epochs=2))
    assert dbn.architecture == arch
    assert len(dbn.layers) == 4


def test_pretrain_zero_epochs_returns_initialization():
    X = np.random.default_rng(0).uniform(1, 2, (10, 14))
    cfg = TrainConfig(epochs=0, seed=5)
    dbn = pretrain_dbn(X, (14, 20), cfg)
    expected = init_layer(14, 20, np.random.default_rng(5), cfg.init_std)
    assert np.array_equal(dbn.layers[0].weights, expected.weights)
    assert np.all(dbn.layers[0].hidden_bias == 0) and np.all(dbn.layers[0].visible_bias == 0)


def test_pretrain_rejects_empty_and_mismatched():
    with pytest.raises(InvalidInputError):
        pretrain_dbn(np.empty((0, 14)), (14, 20), TrainConfig())
    with pytest.raises(InvalidInputError):
        pretrain_dbn(np.ones((5, 13)), (14, 20), TrainConfig())


def test_pretrain_is_reproducible():
    X = np.random.default_rng(2).uniform(1, 2, (30, 14))
    a = pretrain_dbn(X, (14, 20, 20), TrainConfig(epochs=3, seed=4))
    b = pretrain_dbn(X, (14, 20, 20), TrainConfig(epochs=3, seed=4))
    for la, lb in zip(a.layers, b.layers):
        assert la.weights.tobytes() == lb.weights.tobytes()


def test_forward_zero_network_gives_half():
    dbn = DbnParams((RbmLayer(np.zeros((4, 3)), np.zeros(4), np.zeros(3)),))
    assert np.all(forward(dbn, np.array([0.3, 9.0, -2.0, 1.0])) == 0.5)


def test_forward_one_unit_closed_form():
    dbn = DbnParams((RbmLayer([[1.7]], [0.0], [0.0]),))
    assert forward(dbn, np.array([0.6]))[0] == pytest.approx(expit(1.7 * 0.6), abs=1e-15)


def test_forward_rejects_wrong_length():
    dbn = DbnParams((RbmLayer(np.zeros((4, 3)), np.zeros(4), np.zeros(3)),))
    with pytest.raises(InvalidInputError):
        forward(dbn, np.ones(5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_forward_outputs_in_open_unit_interval(seed):
    rng = np.random.default_rng(seed)
    dbn = _random_dbn((6, 5, 4), rng, scale=3.0)
    out = forward(dbn, rng.normal(0, 3, (8, 6)))
    assert np.all((out > 0) & (out < 1))


def test_scaler_clips_to_unit_interval():
    s = MinMaxScaler.fit(np.array([[0.0, 5.0], [2.0, 5.0]]))
    out = s.transform(np.array([[-1.0, 5.0], [1.0, 7.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out, [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])


def test_layer_shape_validation():
    with pytest.raises(InvalidInputError):
        RbmLayer(np.zeros((3, 2)), np.zeros(2), np.zeros(2))
    with pytest.raises(InvalidInputError):
        DbnParams((init_layer(3, 2, np.random.default_rng(0)), init_layer(3, 2, np.random.default_rng(0))))


# ---- free energy ----

def test_free_energy_ratio_identical_sets():
    rng = np.random.default_rng(0)
    dbn = _random_dbn((5, 4, 3), rng)
    X = rng.random((12, 5))
    assert free_energy_ratio(dbn, X, X) == 1.0


def test_free_energy_ratio_zero_weights_depends_on_bias_only():
    layer = RbmLayer(np.zeros((3, 2)), np.array([0.5, -0.2, 1.0]), np.array([0.1, 0.3]))
    dbn = DbnParams((layer,))
    a = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    b = np.array([[0.5, 0.0, 0.5], [0.5, 0.0, 0.5]])
    assert free_energy_ratio(dbn, a, b) == pytest.approx(1.0, abs=1e-15)


def test_free_energy_ratio_same_distribution_is_near_one():
    rng = np.random.default_rng(1)
    X = rng.normal(1.5, 0.1, (400, 14))
    dbn = pretrain_dbn(X[:200], (14, 20, 20), TrainConfig(epochs=10))
    ratio = free_energy_ratio(dbn, X[:200], X[200:])
    assert 0.8 <= ratio <= 1.25


def test_free_energy_ratio_rejects_empty():
    dbn = _random_dbn((3, 2), np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        free_energy_ratio(dbn, np.empty((0, 3)), np.ones((2, 3)))


# ---- fine-tuning ----

def _numeric_grad(fn, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = fn()
        x[idx] = old - h
        down = fn()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(3))
def test_loo_gradient_matches_finite_differences(seed):
    dbn, kernels, E, F = _toy_problem(seed)
    _, grads = loo_loss_and_grad(dbn, kernels, E, F)
    for k, layer in enumerate(dbn.layers):
        W = layer.weights.copy()
        c = layer.hidden_bias.copy()

        def loss():
            layers = list(dbn.layers)
            layers[k] = RbmLayer(W, layer.visible_bias, c)
            return loo_loss_and_grad(DbnParams(tuple(layers)), kernels, E, F)[0]

        for analytic, numeric in ((grads["weights"][k], _numeric_grad(loss, W)),
                                  (grads["hidden_bias"][k], _numeric_grad(loss, c))):
            rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
            assert rel.max() < 1e-4


def test_loo_gradient_hyperparameters():
    dbn, kernels, E, F = _toy_problem(7)
    _, grads = loo_loss_and_grad(dbn, kernels, E, F)
    h = 1e-6
    for ell in range(3):
        for name, key in (("alpha", "log_alpha"), ("beta", "log_beta")):
            vals = []
            for sign in (1, -1):
                ks = list(kernels)
                kp = ks[ell]
                kw = kp.to_dict()
                kw[name] = getattr(kp, name) * np.exp(sign * h)
                ks[ell] = KernelParams(**kw)
                vals.append(loo_loss_and_grad(dbn, ks, E, F)[0])
            numeric = (vals[0] - vals[1]) / (2 * h)
            assert grads[key][ell] == pytest.approx(numeric, rel=1e-5, abs=1e-10)


def test_loo_loss_matches_explicit_refits():
    dbn, kernels, E, F = _toy_problem(2, n=6)
    phi = forward(dbn, E)
    errs = []
    for ell, kp in enumerate(kernels):
        for i in range(len(E)):
            keep = np.arange(len(E)) != i
            d = ((phi[keep][:, None] - phi[keep][None]) ** 2).sum(-1)
            K = kp.alpha * np.exp(-d / (2 * kp.beta)) + kp.noise_var * np.eye(keep.sum())
            ks = kp.alpha * np.exp(-((phi[keep] - phi[i]) ** 2).sum(-1) / (2 * kp.beta))
            errs.append(F[i, ell] - ks @ np.linalg.solve(K, F[keep, ell]))
    assert loo_loss_and_grad(dbn, kernels, E, F)[0] == pytest.approx(np.mean(np.square(errs)), rel=1e-10)


def test_fine_tune_zero_epochs_is_noop():
    dbn, kernels, E, F = _toy_problem(0)
    out_dbn, out_k = fine_tune(dbn, kernels, E, F, TrainConfig(), epochs=0)
    assert out_dbn is dbn and out_k == kernels


def test_fine_tune_does_not_increase_training_loss():
    rng = np.random.default_rng(4)
    E = rng.random((20, 4))
    F = np.column_stack([1 + 8 * E[:, 0], 1 + 8 * E[:, 1] * E[:, 2], 5 + 3 * np.sin(3 * E[:, 3])])
    dbn = _random_dbn((4, 6, 5), rng, scale=0.5)
    kernels = [KernelParams(10.0, 0.5, 0.5)] * 3
    history = FineTuneHistory()
    new_dbn, new_k = fine_tune(dbn, kernels, E, F, TrainConfig(finetune_lr_start=0.01), epochs=50, history=history)
    assert loo_loss_and_grad(new_dbn, new_k, E, F)[0] <= loo_loss_and_grad(dbn, kernels, E, F)[0]
    assert len(history.train_loss) == 50


def test_fine_tune_rejects_empty_labels():
    dbn, kernels, _, _ = _toy_problem(0)
    with pytest.raises(InvalidInputError):
        fine_tune(dbn, kernels, np.empty((0, 4)), np.empty((0, 3)), TrainConfig(), epochs=1)


def test_kernel_params_reject_nonpositive():
    with pytest.raises(InvalidInputError):
        KernelParams(0.0, 1.0)
    with pytest.raises(InvalidInputError):
        KernelParams(1.0, -1.0)


def test_train_config_validation():
    with pytest.raises(InvalidInputError):
        TrainConfig(finetune_lr_start=1e-6, finetune_lr_end=1e-3)
    with pytest.raises(InvalidInputError):
        TrainConfig(lr_first_layer=0.0)
