import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eegsz import models, nn
from eegsz.errors import ConfigError, DivergenceError, ParameterError

SZHNN_D1_CHAIN = [(5, 6236), (5, 3118), (10, 3109), (10, 1554), (32,), (64,), (2,)]


def test_szhnn_shape_chain_dataset1():
    assert models.build_szhnn((19, 6250)).shape_chain() == SZHNN_D1_CHAIN


def test_szhnn_dataset2_input_accepted():
    chain = models.build_szhnn((16, 7680)).shape_chain()
    assert chain[0] == (5, 7666) and chain[-1] == (2,)


def test_szhnn_layer_spec():
    layers = models.build_szhnn((19, 6250)).layers
    assert [l["type"] for l in layers] == ["conv1d", "maxpool1d", "conv1d", "maxpool1d",
                                          "lstm", "dense", "dropout", "dense"]
    assert layers[0]["filters"] == 5 and layers[0]["kernel_size"] == 15
    assert layers[2]["filters"] == 10 and layers[2]["kernel_size"] == 10
    assert layers[4]["units"] == 32 and layers[5]["units"] == 64
    assert layers[6]["p"] == 0.5


def test_cnn_shape_chain():
    chain = models.build_cnn((19, 6250)).shape_chain()
    assert chain == [(5, 6236), (5, 3118), (10, 3109), (10, 1554), (10, 1545), (10, 772),
                     (7720,), (64,), (32,), (2,)]
    assert 6250 / chain[5][1] == pytest.approx(8, rel=0.02)
    drops = [l["p"] for l in models.build_cnn((19, 6250)).layers if l["type"] == "dropout"]
    assert drops == [0.5, 0.2]


def test_lstm_shape_chain():
    config = models.build_lstm((19, 6250))
    assert config.shape_chain() == [(32, 6250), (64,), (32,), (2,)]
    assert config.layers[0]["return_sequences"] and not config.layers[1]["return_sequences"]


def test_lstm_model_single_step_sequence():
    net = models.build_network(models.build_lstm((3, 1)))
    assert net.predict_proba(np.ones((2, 3, 1))).shape == (2, 2)


def test_parameter_count_closed_form():
    # conv 5*(19*15+1) + conv 10*(5*10+1) + lstm 4*32*(10+32+1)+3*32 + 64*33 + 2*65
    assert models.count_parameters(models.build_szhnn((19, 6250))) == 9782
    for config in (models.build_szhnn((4, 256)), models.build_cnn((4, 256)),
                   models.build_lstm((4, 16))):
        assert models.count_parameters(config) == models.build_network(config).n_parameters()


def test_config_errors():
    with pytest.raises(ConfigError):
        models.build_szhnn((19, 20))
    with pytest.raises(ConfigError):
        models.ModelConfig("bad", (2, 10), [{"type": "flatten"}, {"type": "dense", "units": 3}])
    with pytest.raises(ConfigError):
        models.build_model_config("transformer", (2, 10))


def test_config_dict_round_trip():
    config = models.build_szhnn((4, 256), filters=(5, 10, 15), kernels=(15, 10, 5))
    again = models.ModelConfig.from_dict(json.loads(json.dumps(config.to_dict())))
    assert again.to_dict() == config.to_dict()


def test_checkpoint_round_trip_predictions(tmp_path, rng):
    config = models.build_szhnn((2, 60))
    net = models.build_network(config, seed=5)
    path = tmp_path / "ck.json"
    models.save_checkpoint(path, net, seed=5, step=7)
    back, seed, step = models.load_checkpoint(path)
    x = rng.normal(size=(3, 2, 60))
    assert (seed, step) == (5, 7)
    assert np.array_equal(back.predict_proba(x), net.predict_proba(x))


def separable(n=40, T=128, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    t = np.arange(T)
    X = rng.normal(scale=0.3, size=(n, 2, T))
    X[y == 1] += np.sin(2 * np.pi * t / 8)
    return X, y


def test_training_separable_reaches_095():
    X, y = separable()
    run = models.TrainRun(epochs=50, batch_size=8, lr=1e-3, seed=0)
    net, run = models.train(models.build_cnn((2, 128)), X, y, run)
    assert max(run.train_acc) >= 0.95
    assert models.accuracy(net, X, y) >= 0.95
    assert run.steps == 50 * 5


def test_training_loss_decreases_single_batch():
    X, y = separable(8)
    config = models.build_szhnn((2, 128), kernels=(5, 5))
    before = nn.softmax_xent(models.build_network(config, 0).forward(X), y)[0]
    net, _ = models.train(config, X, y, models.TrainRun(epochs=5, batch_size=8, lr=1e-3))
    assert nn.softmax_xent(net.forward(X), y)[0] < before


def test_training_deterministic():
    X, y = separable(16)
    config = models.build_szhnn((2, 128), kernels=(5, 5))
    a = models.train(config, X, y, models.TrainRun(epochs=3, batch_size=4, seed=9))[1]
    b = models.train(config, X, y, models.TrainRun(epochs=3, batch_size=4, seed=9))[1]
    assert a.loss_curve == b.loss_curve and a.train_acc == b.train_acc


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_reports_epoch():
    X, y = separable(8)
    X[0, 0, 0] = np.inf
    with pytest.raises(DivergenceError) as exc:
        models.train(models.build_cnn((2, 128)), X, y, models.TrainRun(epochs=2))
    assert exc.value.epoch == 1


def test_training_needs_both_classes():
    X, _ = separable(8)
    with pytest.raises(ParameterError):
        models.train(models.build_cnn((2, 128)), X, np.zeros(8, int), models.TrainRun(epochs=1))


def test_train_defaults():
    run = models.TrainRun()
    assert (run.epochs, run.batch_size, run.lr) == (100, 32, 1e-4)


def test_untrained_model_near_chance(synth_manifest):
    X = synth_manifest.stacked()
    y = synth_manifest.labels
    accs = [models.accuracy(models.build_network(models.build_szhnn(X.shape[1:]), seed=s),
                            X, y) for s in range(5)]
    assert abs(np.mean(accs) - 0.5) <= 0.1


def test_svm_separable_toy():
    X = np.array([[0.0, 0.0], [1.0, 0.2], [0.2, 1.0], [3.0, 3.0], [4.0, 3.2], [3.1, 4.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    svm = models.svm_train(X, y, C=10.0, epochs=200)
    assert models.accuracy(svm, X, y) == 1.0


def test_svm_label_flip_negates_weights(rng):
    X = rng.normal(size=(30, 3))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    a = models.svm_train(X, y, seed=4)
    b = models.svm_train(X, 1 - y, seed=4)
    assert np.allclose(a.weights, -b.weights, atol=1e-12)
    assert a.bias == pytest.approx(-b.bias, abs=1e-12)


def test_svm_xor_linear_limit():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([0, 0, 1, 1])
    assert models.accuracy(models.svm_train(X, y, epochs=100), X, y) <= 0.75


def test_svm_single_class():
    with pytest.raises(ParameterError):
        models.svm_train(np.zeros((3, 2)), [1, 1, 1])


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 1000))
def test_svm_scale_invariance(scale, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, 3))
    y = np.repeat([0, 1], 10)
    a = models.svm_train(X, y, seed=1)
    b = models.svm_train(scale * X, y, seed=1)
    assert np.array_equal(models.predict_batch(a, X), models.predict_batch(b, scale * X))


def test_svm_dict_round_trip(rng):
    X = rng.normal(size=(10, 2))
    svm = models.svm_train(X, np.repeat([0, 1], 5))
    back = models.SvmModel.from_dict(json.loads(json.dumps(svm.to_dict())))
    assert np.array_equal(back.decision_function(X), svm.decision_function(X))


def test_predict_tie_rules():
    svm = models.SvmModel(np.array([1.0]), 0.0, 1.0, np.zeros(1), np.ones(1))
    p = models.predict(svm, [0.0])
    assert p.label == 0 and p.tie
    assert models.predict(svm, [0.5]).label == 1
    q = models.predict_from_scores([0.9, 0.1])
    assert q.label == 0 and not q.tie
    assert models.predict_from_scores([0.5, 0.5]).tie


def test_predict_eval_mode_repeatable(rng):
    net = models.build_network(models.build_szhnn((2, 60)), seed=0)
    x = rng.normal(size=(2, 60))
    assert np.array_equal(models.predict(net, x).scores, models.predict(net, x).scores)
