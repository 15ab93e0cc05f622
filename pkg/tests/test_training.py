import math

import numpy as np
import pytest

from oracles import central_difference, ridge_by_gradient_descent
from vir.errors import FormatError, NumericError, ShapeError
from vir.patches import ImageBatch, extract_patches
from vir.reservoir import DeepConfig
from vir.topology import ReservoirSpec
from vir.training import (
    PARAM_NAMES,
    ModelConfig,
    TrainConfig,
    build_model,
    count_parameters,
    evaluate,
    fit_ridge,
    forward_tail,
    init_tail,
    load_checkpoint,
    loss_and_grad,
    one_hot,
    predict_logits,
    read_checkpoint_header,
    save_checkpoint,
    softmax_cross_entropy,
    train,
)


def micro_config(mode="parallel", L=1, D=4, N=6, T=3, Q=3, ff=5, activation="tanh"):
    spec = ReservoirSpec(n=N, jump=2, input_dim=D, input_sparsity=1.0, alpha=0.8)
    return ModelConfig(
        deep=DeepConfig.uniform(mode, L, spec),
        patch=1,
        image_shape=(T, 1, 2),
        ff_dim=ff,
        classes=Q,
        embed_scale=1.0,
        activation=activation,
    )


def micro_batch(cfg, B=4, seed=0):
    rng = np.random.default_rng(seed)
    h, w, c = cfg.image_shape
    return ImageBatch(rng.random((B, h, w, c)), rng.integers(0, cfg.classes, B), cfg.classes)


def randomize_tail(model, seed=1):
    # move gains and biases off their trivial initial values so every path is exercised
    rng = np.random.default_rng(seed)
    for name in PARAM_NAMES:
        p = getattr(model.tail, name)
        if name.endswith("_b") or name.endswith("_g") or name.startswith("ff_b"):
            p += rng.normal(0, 0.3, p.shape)


def test_zero_path_logits_equal_head_bias():
    cfg = ModelConfig(deep=DeepConfig.uniform("parallel", 1, ReservoirSpec(n=5, jump=2, input_dim=2)), patch=1, image_shape=(2, 1, 1), ff_dim=3, classes=2)
    tail = init_tail(cfg, 1, 14, 0)
    for name in ("LL", "ff_w1", "ff_w2", "ff_b1", "ff_b2"):
        getattr(tail, name)[...] = 0
    tail.head_b[...] = [0.7, -1.2]
    logits, _ = forward_tail(tail, np.random.default_rng(0).normal(size=(1, 3, 14)))
    np.testing.assert_allclose(logits, np.tile([0.7, -1.2], (3, 1)), atol=1e-12)


def _scalar_forward(tail, f):
    def ln(v, g, b):
        mu = sum(v) / len(v)
        var = sum((a - mu) ** 2 for a in v) / len(v)
        return [(a - mu) / math.sqrt(var + 1e-5) * gg + bb for a, gg, bb in zip(v, g, b)]

    def mat(v, M):
        return [sum(v[i] * M[i][j] for i in range(len(v))) for j in range(len(M[0]))]

    yr = mat(f, tail.LL[0])
    h1 = ln(yr, tail.ln1_g, tail.ln1_b)
    a = [s + b for s, b in zip(mat(h1, tail.ff_w1), tail.ff_b1)]
    act = [x * 0.5 * (1 + math.erf(x / math.sqrt(2))) for x in a]
    yc = [s + b + r for s, b, r in zip(mat(act, tail.ff_w2), tail.ff_b2, yr)]
    h2 = ln(yc, tail.ln2_g, tail.ln2_b)
    return [s + b for s, b in zip(mat(h2, tail.head_w), tail.head_b)]


def test_forward_matches_scalar_hand_computation():
    cfg = ModelConfig(deep=DeepConfig.uniform("parallel", 1, ReservoirSpec(n=3, jump=2, input_dim=2)), patch=1, image_shape=(2, 1, 1), ff_dim=3, classes=2)
    tail = init_tail(cfg, 1, 10, 4)
    rng = np.random.default_rng(4)
    for name in ("ln1_g", "ln1_b", "ff_b1", "ff_b2", "ln2_g", "ln2_b", "head_b"):
        getattr(tail, name)[...] = rng.normal(size=getattr(tail, name).shape)
    f = rng.normal(size=10)
    logits, _ = forward_tail(tail, f[None, None, :])
    np.testing.assert_allclose(logits[0], _scalar_forward(tail, list(f)), atol=1e-12)


def test_mean_pooling_of_constant_sequence_equals_last_step():
    cfg = micro_config()
    model = build_model(cfg)
    # a zero-weight reservoir makes every step see the same state
    m = model.stack.layers[0]
    m.W[...] = 0
    patches = np.repeat(np.random.default_rng(0).random((2, 1, 2)), 3, axis=1)
    np.testing.assert_allclose(
        predict_logits(model, patches, "mean_over_steps"), predict_logits(model, patches, "last_step"), atol=1e-12
    )


def test_uniform_logits_loss():
    loss, _ = softmax_cross_entropy(np.zeros((3, 10)), np.array([0, 4, 9]))
    assert loss == pytest.approx(math.log(10), abs=1e-12)


@pytest.mark.parametrize(
    "mode,L,activation",
    [("parallel", 1, "tanh"), ("parallel", 2, "tanh"), ("series", 2, "tanh"), ("parallel", 1, "identity")],
)
def test_gradients_match_finite_differences(mode, L, activation):
    cfg = micro_config(mode, L, activation=activation)
    model = build_model(cfg, seed=3)
    randomize_tail(model)
    data = micro_batch(cfg)
    patches = extract_patches(data.images, 1)
    _, grads, _ = loss_and_grad(model, patches, data.labels)
    for name in PARAM_NAMES:
        p = getattr(model.tail, name)
        num = central_difference(lambda: loss_and_grad(model, patches, data.labels)[0], p)
        err = np.abs(grads[name] - num).max() / max(np.abs(num).max(), 1e-8)
        assert err < 1e-4, name


def test_duplicated_sample_same_gradient():
    cfg = micro_config()
    model = build_model(cfg, seed=1)
    data = micro_batch(cfg, B=1)
    p = extract_patches(data.images, 1)
    l1, g1, _ = loss_and_grad(model, p, data.labels)
    l2, g2, _ = loss_and_grad(model, np.concatenate([p, p]), np.concatenate([data.labels, data.labels]))
    assert l1 == pytest.approx(l2, rel=1e-12)
    for name in PARAM_NAMES:
        np.testing.assert_allclose(g1[name], g2[name], rtol=1e-10, atol=1e-14)


def test_nan_loss_raises_numeric_error():
    cfg = micro_config()
    model = build_model(cfg)
    model.tail.head_b[0] = np.nan
    data = micro_batch(cfg)
    with pytest.raises(NumericError, match="batch 7"):
        loss_and_grad(model, extract_patches(data.images, 1), data.labels, batch_index=7)


def test_shape_error_on_feature_mismatch():
    cfg = micro_config()
    model = build_model(cfg)
    with pytest.raises(ShapeError):
        forward_tail(model.tail, np.zeros((1, 2, 5)))


def test_ridge_separable_toy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 30))
    labels = (X[:, 0] > 0).astype(int)
    W = fit_ridge(X, one_hot(labels, 2), 1e-8)
    assert ((X @ W).argmax(axis=1) == labels).all()
    exact = np.linalg.lstsq(X, one_hot(labels, 2), rcond=None)[0]
    np.testing.assert_allclose(W, exact, atol=1e-6)


def test_ridge_limits_and_duplication():
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(30, 5)), rng.normal(size=(30, 2))
    assert np.abs(fit_ridge(X, Y, 1e12)).max() < 1e-9
    W = fit_ridge(X, Y, 0.3)
    W2 = fit_ridge(np.vstack([X, X]), np.vstack([Y, Y]), 0.6)
    np.testing.assert_allclose(W, W2, rtol=1e-10)


def test_ridge_equals_gradient_descent_on_squared_error():
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(100, 20)), one_hot(rng.integers(0, 3, 100), 3)
    np.testing.assert_allclose(fit_ridge(X, Y, 0.5), ridge_by_gradient_descent(X, Y, 0.5), atol=1e-3)


def test_lr_zero_leaves_parameters_unchanged():
    cfg = micro_config()
    model = build_model(cfg, seed=0)
    data = micro_batch(cfg, B=10)
    tcfg = TrainConfig(mode="gradient", lr=0.0, epochs=1, batch_size=4, standardize=False)
    before = {k: v.copy() for k, v in model.tail.params().items()}
    train(model, data, tcfg)
    for k, v in model.tail.params().items():
        np.testing.assert_array_equal(v, before[k])


def test_gradient_training_is_deterministic_and_loss_decreases():
    cfg = micro_config(Q=2)
    data = micro_batch(cfg, B=64, seed=5)
    tcfg = TrainConfig(mode="gradient", lr=0.05, epochs=5, batch_size=16, standardize_samples=64)
    runs = []
    for _ in range(2):
        model = build_model(cfg, seed=0)
        recs = train(model, data, tcfg, data)
        runs.append(([(r.loss, r.train_acc, r.test_acc) for r in recs], model.tail.params()))
    assert runs[0][0] == runs[1][0]
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(runs[0][1][k], runs[1][1][k])
    losses = [r[0] for r in runs[0][0]]
    assert losses[-1] < losses[0]


def test_empty_dataset_rejected():
    cfg = micro_config()
    model = build_model(cfg)
    empty = ImageBatch(np.zeros((0, 3, 1, 2)), np.zeros(0, dtype=int), 3)
    with pytest.raises(ValueError):
        train(model, empty, TrainConfig())


def test_ridge_mode_mnist_sanity(mnist_train):
    spec = ReservoirSpec().resized(200)
    cfg = ModelConfig(deep=DeepConfig.uniform("parallel", 1, spec))
    model = build_model(cfg, seed=0)
    # 912 features for 500 images: some regularization is needed, and a
    # 2000-image held-out split keeps the sampling error near 1%
    train_set, test_set = mnist_train.head(500), mnist_train.subset(slice(500, 2500))
    (rec,) = train(model, train_set, TrainConfig(mode="ridge", ridge_k=1e-3), test_set)
    assert rec.train_acc > rec.test_acc > 0.7


def test_count_parameters_micro():
    cfg = ModelConfig(deep=DeepConfig.uniform("parallel", 1, ReservoirSpec(n=3, jump=2, input_dim=2)), patch=1, image_shape=(2, 1, 1), ff_dim=4, classes=2)
    model = build_model(cfg)
    c = count_parameters(model)
    F = 2 * (2 + 3)
    assert c["embedding"] == 1 * 2
    assert c["readout"] == F * 2
    assert c["layernorm"] == 4 * 2
    assert c["feedforward"] == 2 * 4 + 4 + 4 * 2 + 2
    assert c["head"] == 2 * 2 + 2
    assert c["total"] == 2 + 20 + 8 + 22 + 6


def test_parameter_bands_cifar():
    one = count_parameters(build_model(ModelConfig(image_shape=(32, 32, 3))))
    assert 0.3e6 <= one["total"] <= 1.2e6
    three = count_parameters(build_model(ModelConfig(deep=DeepConfig.uniform("parallel", 3), image_shape=(32, 32, 3))))
    assert 1.0e6 <= three["total"] <= 2.5e6


def test_checkpoint_round_trip(tmp_path):
    cfg = micro_config("series", 2)
    model = build_model(cfg, seed=2)
    data = micro_batch(cfg, B=8)
    train(model, data, TrainConfig(mode="gradient", lr=0.01, epochs=1, batch_size=4))
    save_checkpoint(model, tmp_path / "m.ckpt", extra={"note": 1})
    back, header = load_checkpoint(tmp_path / "m.ckpt")
    assert header["extra"] == {"note": 1} and header["shape_hash"] == cfg.shape_hash()
    p = extract_patches(data.images, 1)
    np.testing.assert_array_equal(predict_logits(back, p), predict_logits(model, p))
    assert evaluate(back, data) == evaluate(model, data)


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"not a checkpoint at all")
    with pytest.raises(FormatError):
        read_checkpoint_header(tmp_path / "x")
