import numpy as np
import pytest
from sklearn.base import clone

from jointscene.estimator import CRNNTagger
from jointscene.nn.checkpoint import file_digest, read_checkpoint, write_checkpoint
from jointscene.nn.gradcheck import gradient_check, relative_error
from jointscene.nn.layers import MaxPool2D, ReLU
from jointscene.nn.losses import sigmoid_bce_loss
from jointscene.nn.network import CRNN, NetworkConfig
from jointscene.pipeline import cmd_gradient_check

REDUCED = NetworkConfig(n_mels=16, n_outputs=5, conv_filters=(4, 6),
                        conv_kernels=((3, 3), (2, 2)), pool_kernels=((3, 3), (2, 2)),
                        batchnorm_blocks=(True, True), lstm_units=5, dense_units=6)
TINY = NetworkConfig.desk(n_mels=8, n_outputs=4, conv_filters=(3, 4, 5), lstm_units=6,
                          dense_units=7)


def reduced_problem(seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 16, 16, 2))
    y = (rng.random((2, 16, 5)) < 0.3).astype(np.float64)
    return CRNN(REDUCED, seed=seed, dtype=np.float64), x, y


# -- configuration

def test_default_config_matches_layer_table():
    cfg = NetworkConfig()
    assert cfg.conv_filters == (64, 128, 256)
    assert cfg.conv_kernels == ((3, 3), (3, 3), (2, 2))
    assert cfg.pool_kernels == ((3, 3), (3, 3), (2, 2))
    assert cfg.batchnorm_blocks == (True, False, True)
    assert (cfg.conv_dropout, cfg.hidden_dropout) == (0.25, 0.5)
    assert (cfg.lstm_units, cfg.dense_units, cfg.n_outputs) == (256, 256, 43)
    assert cfg.pooled_mels() == 16


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        NetworkConfig(conv_filters=(4, 8))
    with pytest.raises(ValueError):
        NetworkConfig(conv_activation="tanh")
    assert NetworkConfig.from_dict(TINY.to_dict()) == TINY
    assert NetworkConfig.from_dict(TINY.to_dict()).digest() == TINY.digest()


def test_layer_order_follows_table():
    names = [type(layer).__name__ for layer in CRNN(NetworkConfig.desk()).layers]
    assert names == ["Conv2D", "ReLU", "MaxPool2D", "BatchNorm", "Dropout",
                     "Conv2D", "ReLU", "MaxPool2D", "Dropout",
                     "Conv2D", "ReLU", "MaxPool2D", "BatchNorm", "Dropout",
                     "Flatten", "LSTM", "Dense", "ReLU", "Dropout", "BatchNorm", "Dense"]


# -- forward

def test_full_scale_dims_give_1292_by_43():
    net = CRNN(NetworkConfig(), seed=0)
    x = np.random.default_rng(0).standard_normal((1, 1292, 128, 2)).astype(np.float32)
    p = net.predict_proba(x)
    assert p.shape == (1, 1292, 43)
    assert np.all((p > 0) & (p < 1)) and np.all(np.isfinite(p))


def test_eval_forward_is_bitwise_deterministic(rng):
    net = CRNN(TINY, seed=3)
    x = rng.standard_normal((2, 12, 8, 2))
    assert np.array_equal(net.forward(x), net.forward(x))
    assert np.array_equal(CRNN(TINY, seed=3).forward(x), net.forward(x))
    assert not np.array_equal(CRNN(TINY, seed=4).forward(x), net.forward(x))


def test_training_forward_uses_dropout(rng):
    net = CRNN(TINY, seed=3)
    x = rng.standard_normal((2, 12, 8, 2))
    assert not np.array_equal(net.forward(x, training=True), net.forward(x, training=True))


def test_shape_mismatch_raises(rng):
    with pytest.raises(ValueError, match="expected input"):
        CRNN(TINY).forward(rng.standard_normal((1, 10, 9, 2)))


@pytest.mark.parametrize("frames", [7, 16, 33])
def test_time_strided_variant_preserves_frame_count(frames, rng):
    cfg = NetworkConfig.desk(n_mels=8, n_outputs=4, conv_filters=(3, 4, 5), lstm_units=6,
                             dense_units=7, pool_time_stride=2)
    out = CRNN(cfg).forward(rng.standard_normal((1, frames, 8, 2)))
    assert out.shape == (1, frames, 4)


def test_parameters_are_float32_for_training_builds():
    assert all(p.dtype == np.float32 for p in CRNN(TINY).parameters().values())


# -- whole-network gradient check

def test_reduced_network_passes_gradient_check():
    net, x, y = reduced_problem()
    report = gradient_check(net, x, y, epsilon=1e-6, tolerance=1e-4)
    assert report.passed, report.summary()
    assert set(report.per_group) == set(net.parameters())


def test_corrupted_gradient_fails():
    net, x, y = reduced_problem()

    def corrupt(grads):
        key = next(k for k in grads if k.endswith("lstm.Wh"))
        grads[key] = grads[key] * 1.01

    report = gradient_check(net, x, y, grad_hook=corrupt)
    assert not report.passed


def _switch_pattern(net):
    # which side of every ReLU kink and which max-pool winner the last forward used
    parts = []
    for layer in net.layers:
        if isinstance(layer, ReLU):
            parts.append(layer._mask.tobytes())
        elif isinstance(layer, MaxPool2D):
            parts.append(layer._cache[0].tobytes())
    return b"".join(parts)


@pytest.mark.parametrize("eps", [1e-4, 1e-5, 1e-6])
def test_epsilon_sweep_is_stable(eps):
    """Entries whose +-eps probe crosses a ReLU kink or a pooling switch are skipped.

    Across such a point the loss is not differentiable, so no step size can
    agree with the one-sided analytic gradient there.
    """
    net, x, y = reduced_problem(1)
    for d in net.dropout_layers():
        d.enabled = False
    buffers = {k: v.copy() for k, v in net.buffers().items()}

    def loss():
        net.set_buffers(buffers)
        return sigmoid_bce_loss(net.forward(x, training=True), y)

    _, dlogits = loss()
    base = _switch_pattern(net)
    net.backward(dlogits)
    analytic = {k: np.array(v) for k, v in net.gradients().items()}
    rng = np.random.default_rng(0)
    errors, skipped, total = [], 0, 0
    for name, arr in net.parameters().items():
        flat, g = arr.reshape(-1), analytic[name].reshape(-1)
        for idx in rng.choice(flat.size, size=min(flat.size, 25), replace=False):
            orig = flat[idx]
            flat[idx] = orig + eps
            plus, _ = loss()
            smooth = _switch_pattern(net) == base
            flat[idx] = orig - eps
            minus, _ = loss()
            smooth = smooth and _switch_pattern(net) == base
            flat[idx] = orig
            total += 1
            if not smooth:
                skipped += 1
                continue
            errors.append(relative_error(g[idx], (plus - minus) / (2 * eps)))
    assert skipped <= 0.2 * total, f"{skipped}/{total} probes crossed a switch point"
    assert max(errors) < 1e-4, f"max relative error {max(errors):.3e} ({skipped} skipped)"


def test_gradient_check_restores_state():
    net, x, y = reduced_problem()
    before = {k: v.copy() for k, v in net.buffers().items()}
    params = {k: v.copy() for k, v in net.parameters().items()}
    gradient_check(net, x, y)
    assert all(np.array_equal(before[k], v) for k, v in net.buffers().items())
    assert all(np.array_equal(params[k], v) for k, v in net.parameters().items())
    assert all(d.enabled for d in net.dropout_layers())


def test_gradient_check_command_writes_report(tmp_path):
    doc = cmd_gradient_check(out_path=tmp_path / "g.json")
    assert doc["passed"] and doc["max_relative_error"] < 1e-4
    assert (tmp_path / "g.json").exists()


# -- checkpoints

def test_checkpoint_round_trip(tmp_path, rng):
    net = CRNN(TINY, seed=5)
    net.forward(rng.standard_normal((2, 6, 8, 2)), training=True)   # move BN statistics
    path = write_checkpoint(tmp_path / "a.ckpt", net, {"task": "joint"})
    back, header = read_checkpoint(path)
    x = rng.standard_normal((1, 9, 8, 2))
    assert np.array_equal(back.forward(x), net.forward(x))
    assert header["metadata"] == {"task": "joint"}
    assert header["config_hash"] == TINY.digest()
    # dropout stream resumes where it was saved
    assert np.array_equal(back.forward(x, training=True), net.forward(x, training=True))
    again = write_checkpoint(tmp_path / "b.ckpt", back, {"task": "joint"})
    assert file_digest(again) != "" and (tmp_path / "b.ckpt").stat().st_size == path.stat().st_size


def test_identical_models_write_identical_files(tmp_path):
    a = write_checkpoint(tmp_path / "a.ckpt", CRNN(TINY, seed=1))
    b = write_checkpoint(tmp_path / "b.ckpt", CRNN(TINY, seed=1))
    assert file_digest(a) == file_digest(b)


def test_checkpoint_rejects_other_files(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError, match="not a checkpoint"):
        read_checkpoint(p)


def test_set_parameters_checks_shapes():
    net = CRNN(TINY)
    params = net.parameters()
    key = next(iter(params))
    params = {k: v.copy() for k, v in params.items()}
    params[key] = np.zeros((1, 1))
    with pytest.raises(ValueError, match="shape"):
        net.set_parameters(params)


# -- estimator wrapper

def _toy_data(rng, n=4, frames=12, n_mels=8, n_out=4):
    X = rng.standard_normal((n, frames, n_mels, 2)).astype(np.float32)
    Y = (rng.random((n, frames, n_out)) < 0.3).astype(np.uint8)
    return X, Y


def test_estimator_params_and_clone():
    est = CRNNTagger(conv_filters=(3, 4, 5), lstm_units=6, max_epochs=2)
    params = est.get_params()
    assert params["conv_filters"] == (3, 4, 5) and params["learning_rate"] == 1e-3
    assert clone(est).get_params() == params


def test_estimator_fit_predict_save_load(tmp_path, rng):
    X, Y = _toy_data(rng)
    est = CRNNTagger(conv_filters=(3, 4, 5), lstm_units=6, dense_units=7, max_epochs=3,
                     batch_size=2, random_state=2)
    est.fit(X[:3], Y[:3], X[3:], Y[3:])
    assert len(est.history_) == 3
    P = est.predict_proba(X)
    assert P.shape == Y.shape and np.all((P > 0) & (P < 1))
    assert set(np.unique(est.predict(X, threshold=0.5))) <= {0, 1}
    back = CRNNTagger.load(est.save(tmp_path / "m.ckpt"))
    assert np.array_equal(back.predict_proba(X), P)
    assert back.get_params() == est.get_params()


def test_estimator_rejects_bad_input(rng):
    X, Y = _toy_data(rng)
    with pytest.raises(ValueError):
        CRNNTagger(max_epochs=1).fit(X, Y[:3])
    with pytest.raises(Exception):
        CRNNTagger().predict_proba(X)
