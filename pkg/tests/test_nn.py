import json
from pathlib import Path

import numpy as np
import pytest

from rankgan import autodiff as ad
from rankgan.nn import (
    AdamState,
    ConfigError,
    EncoderOutput,
    FrozenParamsError,
    MlpSpec,
    ModelParams,
    adam_step,
    encoder_forward,
    init_mlp,
    mlp_forward,
    param_grads,
    sample_latent,
    vae_loss,
)

GOLDEN = json.loads((Path(__file__).parent / "golden" / "nn_golden.json").read_text())


def zero_params(spec):
    items = []
    for i, (a, b) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        items += [(f"W{i}", np.zeros((a, b))), (f"b{i}", np.zeros(b))]
    return ModelParams(items)


def test_spec_validation():
    with pytest.raises(ConfigError):
        MlpSpec((3,))
    with pytest.raises(ConfigError):
        MlpSpec((2, 2), slope=1.5)
    with pytest.raises(ConfigError):
        MlpSpec((2, 2), hidden="relu6")


def test_zero_weights_give_zero_output():
    spec = MlpSpec((3, 5, 2))
    out = mlp_forward(zero_params(spec), spec, np.random.default_rng(0).normal(size=(4, 3)))
    np.testing.assert_array_equal(out.value, np.zeros((4, 2)))


def test_identity_layer():
    spec = MlpSpec((2, 2))
    p = ModelParams([("W0", np.eye(2)), ("b0", np.zeros(2))])
    x = np.array([[0.3, -1.2], [2.0, 5.0]])
    np.testing.assert_array_equal(mlp_forward(p, spec, x).value, x)


def test_width_mismatch():
    spec = MlpSpec((3, 2))
    with pytest.raises(ad.ShapeError):
        mlp_forward(zero_params(spec), spec, np.ones((1, 4)))


def test_golden_seed0_mlp_and_hand_first_layer():
    g = GOLDEN["mlp_2_8_1_seed0"]
    spec = MlpSpec((2, 8, 1))
    p = init_mlp(spec, np.random.default_rng(0))
    x = np.array([g["input"]])
    out = mlp_forward(p, spec, x).item()
    assert out == g["output"]
    # hand computation: h = leaky(x W0 + b0), y = h W1 + b1
    h = np.array([sum(x[0, i] * p["W0"][i, j] for i in range(2)) for j in range(8)])
    h = np.array([v if v > 0 else 0.2 * v for v in h])
    assert sum(h[j] * p["W1"][j, 0] for j in range(8)) == pytest.approx(out, abs=1e-14)


def test_glorot_bounds_and_zero_bias():
    spec = MlpSpec((10, 30, 1))
    p = init_mlp(spec, np.random.default_rng(1))
    assert np.abs(p["W0"]).max() <= np.sqrt(6 / 40)
    assert np.abs(p["W1"]).max() <= np.sqrt(6 / 31)
    assert not p["b0"].any() and not p["b1"].any()


def test_encoder_zero_params():
    spec = MlpSpec((4, 8, 6))
    enc = encoder_forward(zero_params(spec), spec, np.ones((2, 4)))
    np.testing.assert_array_equal(enc.mu.value, 0)
    np.testing.assert_array_equal(enc.logvar.value, 0)


def test_encoder_identical_rows():
    spec = MlpSpec((4, 8, 6))
    p = init_mlp(spec, np.random.default_rng(2))
    enc = encoder_forward(p, spec, np.tile([[0.1, 0.2, -0.3, 0.4]], (2, 1)))
    assert enc.mu.value[0].tobytes() == enc.mu.value[1].tobytes()
    assert enc.logvar.value[0].tobytes() == enc.logvar.value[1].tobytes()


def test_encoder_odd_width():
    spec = MlpSpec((4, 8, 5))
    with pytest.raises(ConfigError):
        encoder_forward(zero_params(spec), spec, np.ones((1, 4)))


def test_encoder_golden():
    g = GOLDEN["encoder_4_8_4_seed0"]
    spec = MlpSpec((4, 8, 4))
    enc = encoder_forward(init_mlp(spec, np.random.default_rng(0)), spec, np.array([g["input"]]))
    assert enc.mu.value[0].tolist() == g["mu"]
    assert enc.logvar.value[0].tolist() == g["logvar"]


def _enc(mu, logvar):
    return EncoderOutput(ad.constant(np.atleast_2d(mu)), ad.constant(np.atleast_2d(logvar)))


def test_sample_latent_examples():
    mu = np.array([[0.3, -0.7]])
    z = sample_latent(_enc(mu, np.full((1, 2), -100.0)), np.array([[1.0, -2.0]])).value
    np.testing.assert_allclose(z, mu, atol=1e-15)
    n = np.array([[0.4, 1.1]])
    np.testing.assert_array_equal(sample_latent(_enc(np.zeros((1, 2)), np.zeros((1, 2))), n).value, n)
    z = sample_latent(_enc([[1.0]], [[np.log(4.0)]]), np.array([[0.5]])).value
    assert z[0, 0] == pytest.approx(2.0, abs=1e-15)


def test_sample_latent_moments():
    n = 100_000
    mu, var = 0.7, 2.5
    noise = np.random.default_rng(0).normal(size=(n, 1))
    z = sample_latent(_enc(np.full((n, 1), mu), np.full((n, 1), np.log(var))), noise).value.ravel()
    assert abs(z.mean() - mu) < 3 * np.sqrt(var / n)
    # standard error of the sample variance for a normal: var * sqrt(2 / (n - 1))
    assert abs(z.var(ddof=1) - var) < 3 * var * np.sqrt(2 / (n - 1))


def test_sample_latent_shape_check():
    with pytest.raises(ad.ShapeError):
        sample_latent(_enc(np.zeros((1, 2)), np.zeros((1, 2))), np.zeros((1, 3)))


@pytest.mark.parametrize("mu,logvar,expected", [
    (0.0, 0.0, 0.0),
    (1.0, 0.0, 0.5),
    (0.0, np.log(4.0), 0.5 * (4 - np.log(4.0) - 1)),
])
def test_vae_loss_analytic(mu, logvar, expected):
    x = np.array([[0.2, -0.1]])
    loss = vae_loss(x, x.copy(), _enc([[mu]], [[logvar]])).item()
    assert loss == pytest.approx(expected, abs=1e-12)


def test_vae_loss_gradient_fd():
    rng = np.random.default_rng(4)
    e_spec, g_spec = MlpSpec((4, 8, 2), hidden="tanh"), MlpSpec((1, 8, 4), hidden="tanh")
    pe, pg = init_mlp(e_spec, rng), init_mlp(g_spec, rng)
    x = rng.normal(size=(5, 4))
    noise = rng.normal(size=(5, 1))
    names = pe.names() + pg.names()
    values = [pe[k] for k in pe.names()] + [pg[k] for k in pg.names()]
    ne = len(pe)

    def f(ps):
        en = dict(zip(names[:ne], ps[:ne]))
        gn = dict(zip(names[ne:], ps[ne:]))
        enc = encoder_forward(en, e_spec, x)
        return vae_loss(x, mlp_forward(gn, g_spec, sample_latent(enc, noise)), enc)

    assert ad.finite_difference_check(f, values) < 1e-5


# -- parameters and Adam -----------------------------------------------------

def test_frozen_params_reject_updates():
    p = ModelParams([("w", np.zeros(2))]).freeze()
    with pytest.raises(FrozenParamsError):
        p.set("w", np.ones(2))
    with pytest.raises(FrozenParamsError):
        adam_step(AdamState(lr=0.1), p, {"w": np.ones(2)})
    assert all(not n.requires_grad for n in p.nodes().values())


def test_clone_is_independent():
    p = ModelParams([("w", np.zeros(2))])
    q = p.clone()
    q.set("w", np.ones(2))
    assert not p["w"].any()
    assert p.digest() != q.digest()


def test_duplicate_names():
    with pytest.raises(ConfigError):
        ModelParams([("w", 1.0), ("w", 2.0)])


def test_adam_first_step():
    p = ModelParams([("t", np.array(0.0))])
    adam_step(AdamState(lr=0.1), p, {"t": np.array(1.0)})
    assert p["t"] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_zero_gradient_no_change():
    p = ModelParams([("t", np.array([0.5, -2.0]))])
    s = AdamState(lr=0.1)
    for _ in range(5):
        adam_step(s, p, {"t": np.zeros(2)})
    np.testing.assert_array_equal(p["t"], [0.5, -2.0])
    assert s.step == 5


def test_adam_two_steps_hand_recurrence():
    p = ModelParams([("t", np.array(0.0))])
    s = AdamState(lr=0.1)
    adam_step(s, p, {"t": np.array(1.0)})
    adam_step(s, p, {"t": np.array(1.0)})
    # beta1 = 0: m_hat = g; v_2 = 0.99*0.01 + 0.01 = 0.0199, v_hat = 0.0199 / (1 - 0.99^2) = 1
    assert p["t"] == pytest.approx(-0.2, abs=1e-6)


def test_adam_beta1_zero_is_rmsprop_with_bias_correction():
    rng = np.random.default_rng(0)
    p = ModelParams([("t", rng.normal(size=3))])
    s = AdamState(lr=0.05)
    v = np.zeros(3)
    theta = p["t"].copy()
    for t in range(1, 6):
        g = rng.normal(size=3)
        v = 0.99 * v + (1 - 0.99) * g * g
        theta = theta - 0.05 * g / (np.sqrt(v / (1 - 0.99**t)) + 1e-8)
        adam_step(s, p, {"t": g})
        np.testing.assert_array_equal(p["t"], theta)


def test_adam_missing_grad():
    p = ModelParams([("a", 0.0), ("b", 0.0)])
    with pytest.raises(KeyError):
        adam_step(AdamState(lr=0.1), p, {"a": np.array(1.0)})


def test_param_grads_names():
    spec = MlpSpec((2, 3, 1))
    p = init_mlp(spec, np.random.default_rng(0))
    nodes = p.nodes()
    g = param_grads(ad.sum_(mlp_forward(nodes, spec, np.ones((2, 2)))), nodes)
    assert list(g) == p.names()
    assert all(g[k].shape == p[k].shape for k in g)


def test_vae_loss_kl_weight():
    x = np.array([[0.2, -0.1]])
    assert vae_loss(x, x.copy(), _enc([[1.0]], [[0.0]]), kl_weight=0.1).item() == pytest.approx(0.05, abs=1e-15)
    assert vae_loss(x, x + 1.0, _enc([[1.0]], [[0.0]]), kl_weight=0.0).item() == pytest.approx(2.0, abs=1e-15)
