"""GRU network: hand-worked cell oracle, mask invariance, gradient checks."""

import numpy as np
import pytest

from pianodiff.errors import DataError, ParseError, TrainingError
from pianodiff.deepgru import (
    DESK_WIDTHS,
    FULL_WIDTHS,
    GruNetConfig,
    GruNetModel,
    corpus_nll,
    forward,
    global_attention,
    gradient_check,
    gru_forward,
    init_params,
    nll_and_grads,
    train_deepgru,
)


def tiny_config(**kw):
    base = dict(layer_widths=(4, 3), fc_width=5, epochs=3, batch=4, seed=0)
    base.update(kw)
    return GruNetConfig(**base)


def tiny_model(input_width=6, seed=0, **kw):
    config = tiny_config(seed=seed, **kw)
    return GruNetModel(init_params(config, input_width), config, input_width)


def test_config_profiles():
    assert GruNetConfig().layer_widths == FULL_WIDTHS
    desk = GruNetConfig.desk()
    assert desk.layer_widths == DESK_WIDTHS and desk.fc_width == 32
    assert GruNetConfig.desk(seed=5).seed == 5
    with pytest.raises(DataError):
        GruNetConfig(layer_widths=(0,))
    with pytest.raises(DataError):
        GruNetConfig(dropout=1.0)


def test_init_shapes_and_determinism():
    config = tiny_config()
    params = init_params(config, 10)
    assert params["l0_Wz"].shape == (10, 4)
    assert params["l1_Uh"].shape == (3, 3)
    assert params["attn_P"].shape == (3, 3)
    assert params["ln_gamma"].shape == (6,)
    assert params["fc1_W"].shape == (6, 5)
    assert params["fc2_W"].shape == (5, 3)
    assert np.all(params["l0_bz"] == 0) and np.all(params["ln_beta"] == 0)
    again = init_params(config, 10)
    assert all(np.array_equal(params[k], again[k]) for k in params)


def test_gru_cell_hand_worked():
    # One layer of width 1, one step: with all weights W=U=1, b=0, h0=0 and
    # x=0.5 the update is z = r = sigmoid(0.5), c = tanh(0.5), h = z*c.
    config = GruNetConfig(layer_widths=(1,), fc_width=1, epochs=1)
    params = {
        "l0_Wz": np.array([[1.0]]), "l0_Uz": np.array([[1.0]]), "l0_bz": np.zeros(1),
        "l0_Wr": np.array([[1.0]]), "l0_Ur": np.array([[1.0]]), "l0_br": np.zeros(1),
        "l0_Wh": np.array([[1.0]]), "l0_Uh": np.array([[1.0]]), "l0_bh": np.zeros(1),
    }
    X = np.array([[[0.5]]])
    mask = np.ones((1, 1))
    top, caches = gru_forward(params, config, X, mask)
    sig = 1.0 / (1.0 + np.exp(-0.5))
    expected_h = sig * np.tanh(0.5)  # (1 - z) * 0 + z * c
    assert top[0, 0, 0] == pytest.approx(expected_h, abs=1e-12)
    # second step on the same input, by hand:
    X2 = np.array([[[0.5], [0.5]]])
    mask2 = np.ones((1, 2))
    top2, _ = gru_forward(params, config, X2, mask2)
    h1 = expected_h
    z2 = 1.0 / (1.0 + np.exp(-(0.5 + h1)))
    r2 = z2
    c2 = np.tanh(0.5 + r2 * h1)
    assert top2[0, 1, 0] == pytest.approx((1 - z2) * h1 + z2 * c2, abs=1e-12)


def test_attention_weights_valid():
    rng = np.random.default_rng(0)
    hiddens = rng.normal(size=(2, 5, 3))
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=float)
    last = hiddens[[0, 1], [4, 2]]
    proj = rng.normal(size=(3, 3))
    context, alpha = global_attention(hiddens, last, proj, mask)
    assert np.allclose(alpha.sum(axis=1), 1.0)
    assert np.all(alpha >= 0)
    assert np.all(alpha[1, 3:] == 0)  # padded steps get zero weight
    assert np.allclose(context[0], (alpha[0][:, None] * hiddens[0]).sum(axis=0))


def test_attention_uniform_when_query_orthogonal():
    hiddens = np.zeros((1, 4, 2))
    hiddens[0, :, 0] = 1.0  # identical states -> identical scores
    last = hiddens[0, -1][None]
    _, alpha = global_attention(hiddens, last, np.eye(2), np.ones((1, 4)))
    assert np.allclose(alpha, 0.25)


def test_forward_padding_invariance():
    # a batch-padded run must match the single-sequence run exactly
    model = tiny_model(input_width=4)
    rng = np.random.default_rng(1)
    short = rng.random((3, 4))
    long = rng.random((7, 4))
    X = np.zeros((2, 7, 4))
    X[0, :3], X[1] = short, long
    mask = np.zeros((2, 7))
    mask[0, :3] = 1.0
    mask[1] = 1.0
    top, _ = gru_forward(model.params, model.config, X, mask)
    probs_single, alpha_single = forward(model, short)
    from pianodiff.deepgru import _head_forward

    probs_batch, alpha_batch, _ = _head_forward(model.params, model.config, top, mask)
    assert np.allclose(probs_batch[0], probs_single, atol=1e-12)
    assert np.allclose(alpha_batch[0, :3], alpha_single, atol=1e-12)
    assert np.all(alpha_batch[0, 3:] == 0)


def test_forward_checks_width():
    model = tiny_model(input_width=4)
    with pytest.raises(DataError):
        forward(model, np.zeros((3, 5)))


def test_forward_outputs_probabilities():
    model = tiny_model(input_width=6)
    probs, alpha = forward(model, np.random.default_rng(2).random((5, 6)))
    assert probs.shape == (3,) and alpha.shape == (5,)
    assert probs.sum() == pytest.approx(1.0)
    assert alpha.sum() == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


def test_gradient_check_small_net():
    model = GruNetModel(
        init_params(tiny_config(layer_widths=(3, 2), fc_width=3, seed=4), 3),
        tiny_config(layer_widths=(3, 2), fc_width=3, seed=4),
        3,
    )
    example = (np.random.default_rng(5).random((4, 3)), 2)
    assert gradient_check(model, example) < 1e-4


def test_gradient_check_single_layer_longer_sequence():
    config = tiny_config(layer_widths=(4,), fc_width=4, seed=9)
    model = GruNetModel(init_params(config, 2), config, 2)
    example = (np.random.default_rng(6).random((9, 2)), 3)
    assert gradient_check(model, example) < 1e-4


def test_gradients_cover_every_parameter():
    config = tiny_config(layer_widths=(3,), fc_width=3, seed=1)
    params = init_params(config, 2)
    X = np.random.default_rng(7).random((2, 4, 2))
    mask = np.ones((2, 4))
    labels = np.array([1, 3])
    loss, grads, probs = nll_and_grads(params, config, X, mask, labels)
    assert set(grads) == set(params)
    assert all(grads[k].shape == params[k].shape for k in params)
    assert loss > 0 and probs.shape == (2, 3)
    # at least the head gradients must be nonzero for a generic input
    assert np.abs(grads["fc2_W"]).max() > 0
    assert np.abs(grads["attn_P"]).max() > 0


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def toy_corpus(n_per_class=8, seed=0):
    """Sequences whose mean level encodes the class; easily separable."""
    rng = np.random.default_rng(seed)
    corpus = []
    for c in (1, 2, 3):
        for _ in range(n_per_class):
            T = int(rng.integers(4, 9))
            corpus.append((rng.normal(0.3 * c, 0.05, size=(T, 4)), c))
    return corpus


def test_train_learns_toy_problem():
    config = tiny_config(layer_widths=(8,), fc_width=8, epochs=25, batch=6, seed=0)
    corpus = toy_corpus()
    model = train_deepgru(corpus, config)
    correct = sum(
        int(np.argmax(forward(model, m)[0]) + 1 == label) for m, label in corpus
    )
    assert correct / len(corpus) >= 0.95
    assert corpus_nll(model, corpus) < 0.45


def test_train_deterministic():
    config = tiny_config(epochs=2, seed=3)
    corpus = toy_corpus(n_per_class=3)
    a = train_deepgru(corpus, config).to_json()
    b = train_deepgru(corpus, config).to_json()
    assert a == b


def test_train_validation_errors():
    with pytest.raises(TrainingError, match="empty"):
        train_deepgru([], tiny_config())
    only_two = [(np.zeros((3, 4)), c) for c in (1, 2)]
    with pytest.raises(TrainingError, match="every class"):
        train_deepgru(only_two, tiny_config())
    ragged = [(np.zeros((3, 4)), 1), (np.zeros((3, 5)), 2), (np.zeros((3, 4)), 3)]
    with pytest.raises(DataError, match="width"):
        train_deepgru(ragged, tiny_config())


def test_dropout_training_still_learns():
    config = tiny_config(
        layer_widths=(8,), fc_width=8, epochs=25, batch=6, seed=0, dropout=0.2
    )
    corpus = toy_corpus()
    model = train_deepgru(corpus, config)
    correct = sum(
        int(np.argmax(forward(model, m)[0]) + 1 == label) for m, label in corpus
    )
    assert correct / len(corpus) >= 0.9


def test_model_json_roundtrip():
    model = tiny_model(input_width=5, seed=8)
    again = GruNetModel.from_json(model.to_json())
    x = np.random.default_rng(3).random((4, 5))
    p1, a1 = forward(model, x)
    p2, a2 = forward(again, x)
    assert np.allclose(p1, p2) and np.allclose(a1, a2)
    assert again.config == model.config
    with pytest.raises(ParseError):
        GruNetModel.from_json('{"version": 2}')
