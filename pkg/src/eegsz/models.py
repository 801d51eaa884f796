"""The three network architectures, the PSD+SVM baseline, and training loops."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import nn
from .errors import ConfigError, DivergenceError, ParameterError, ShapeError

log = logging.getLogger(__name__)

MODEL_KINDS = ("szhnn", "cnn", "lstm", "svm")
CHECKPOINT_FORMAT = "eegsz-checkpoint"


@dataclass
class ModelConfig:
    """Declarative layer list; ``input_shape`` is ``(channels, samples)``."""

    name: str
    input_shape: tuple
    layers: list

    def __post_init__(self):
        shape = tuple(int(v) for v in self.input_shape)
        if len(shape) != 2 or min(shape) < 1:
            raise ConfigError(f"input shape must be (channels, samples), got {self.input_shape}")
        self.input_shape = shape
        try:
            chain = _shape_chain(self)
        except ShapeError as exc:
            raise ConfigError(f"{self.name}: input {shape} incompatible with layers: {exc}") \
                from None
        if chain[-1] != (2,):
            raise ConfigError(f"{self.name}: final layer must emit 2 logits, got {chain[-1]}")

    def shape_chain(self):
        """Output shape after every layer except dropout."""
        return [s for s, spec in zip(_shape_chain(self)[1:], self.layers)
                if spec["type"] != "dropout"]

    def to_dict(self):
        return {"name": self.name, "input_shape": list(self.input_shape),
                "layers": copy.deepcopy(self.layers)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], tuple(d["input_shape"]), copy.deepcopy(d["layers"]))


def _shape_chain(config):
    shapes = [tuple(config.input_shape)]
    for spec in config.layers:
        shapes.append(_layer_output_shape(spec, shapes[-1]))
    return shapes


def _layer_output_shape(spec, shape):
    kind = spec["type"]
    if kind == "conv1d":
        c, t = shape
        if t < spec["kernel_size"]:
            raise ShapeError(f"length {t} shorter than kernel {spec['kernel_size']}")
        return (spec["filters"], t - spec["kernel_size"] + 1)
    if kind == "maxpool1d":
        c, t = shape
        if t < spec["size"]:
            raise ShapeError(f"cannot pool length {t}")
        return (c, t // spec["size"])
    if kind == "lstm":
        if len(shape) != 2:
            raise ShapeError(f"LSTM needs a (features, steps) input, got {shape}")
        return (spec["units"], shape[1]) if spec.get("return_sequences") else (spec["units"],)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "dense":
        if len(shape) != 1:
            raise ShapeError(f"dense needs a flat input, got {shape}")
        return (spec["units"],)
    if kind == "dropout":
        return shape
    raise ConfigError(f"unknown layer type {kind!r}")


def _conv(filters, kernel):
    return {"type": "conv1d", "filters": filters, "kernel_size": kernel, "activation": "relu"}


_POOL = {"type": "maxpool1d", "size": 2}


def build_szhnn(input_shape, filters=(5, 10), kernels=(15, 10), lstm_units=32,
                peephole=True) -> ModelConfig:
    """Conv/pool blocks, one LSTM returning its final state, Dense(64) head."""
    if len(filters) != len(kernels) or not filters:
        raise ConfigError("filters and kernels must be non-empty and equally long")
    layers = []
    for f, k in zip(filters, kernels):
        layers += [_conv(int(f), int(k)), dict(_POOL)]
    layers += [
        {"type": "lstm", "units": int(lstm_units), "return_sequences": False,
         "peephole": peephole},
        {"type": "dense", "units": 64, "activation": "relu"},
        {"type": "dropout", "p": 0.5},
        {"type": "dense", "units": 2, "activation": None},
    ]
    return ModelConfig("SzHNN", tuple(input_shape), layers)


def build_cnn(input_shape) -> ModelConfig:
    layers = [
        _conv(5, 15), dict(_POOL), _conv(10, 10), dict(_POOL), _conv(10, 10), dict(_POOL),
        {"type": "flatten"},
        {"type": "dense", "units": 64, "activation": "relu"},
        {"type": "dropout", "p": 0.5},
        {"type": "dense", "units": 32, "activation": "relu"},
        {"type": "dropout", "p": 0.2},
        {"type": "dense", "units": 2, "activation": None},
    ]
    return ModelConfig("CNN", tuple(input_shape), layers)


def build_lstm(input_shape, peephole=True) -> ModelConfig:
    layers = [
        {"type": "lstm", "units": 32, "return_sequences": True, "peephole": peephole},
        {"type": "lstm", "units": 64, "return_sequences": False, "peephole": peephole},
        {"type": "dense", "units": 32, "activation": "relu"},
        {"type": "dropout", "p": 0.5},
        {"type": "dense", "units": 2, "activation": None},
    ]
    return ModelConfig("LSTM", tuple(input_shape), layers)


def build_model_config(kind, input_shape, **kwargs) -> ModelConfig:
    builders = {"szhnn": build_szhnn, "cnn": build_cnn, "lstm": build_lstm}
    if kind not in builders:
        raise ConfigError(f"no network builder for model kind {kind!r}")
    return builders[kind](input_shape, **kwargs)


def build_network(config: ModelConfig, seed: int = 0) -> nn.Network:
    """Instantiate ``config`` with Glorot-uniform weights drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    shape = config.input_shape
    layers = []
    for spec in config.layers:
        kind = spec["type"]
        if kind == "conv1d":
            layer = nn.Conv1D(shape[0], spec["filters"], spec["kernel_size"],
                              spec.get("activation", "relu"), rng=rng)
        elif kind == "maxpool1d":
            layer = nn.MaxPool1D(spec["size"])
        elif kind == "lstm":
            layer = nn.LSTM(shape[0], spec["units"], spec.get("return_sequences", False),
                            spec.get("peephole", True), spec.get("forget_bias", 1.0), rng=rng)
        elif kind == "flatten":
            layer = nn.Flatten()
        elif kind == "dense":
            layer = nn.Dense(shape[0], spec["units"], spec.get("activation"), rng=rng)
        elif kind == "dropout":
            layer = nn.Dropout(spec["p"])
        else:
            raise ConfigError(f"unknown layer type {kind!r}")
        shape = layer.output_shape(shape)
        layers.append(layer)
    net = nn.Network(layers, config.input_shape)
    net.set_rng(rng)
    net.config = config
    return net


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def checkpoint_dict(net: nn.Network, seed: int, step: int = 0) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "config": net.config.to_dict(),
        "seed": int(seed),
        "step": int(step),
        "parameters": {name: {"shape": list(p.shape), "values": p.value.reshape(-1).tolist()}
                       for name, p in net.named_parameters()},
    }


def save_checkpoint(path, net: nn.Network, seed: int, step: int = 0):
    text = json.dumps(checkpoint_dict(net, seed, step), sort_keys=True, separators=(",", ":"))
    with open(path, "w") as fh:
        fh.write(text + "\n")


def load_checkpoint(path_or_dict):
    """Rebuild a network from a checkpoint; returns ``(net, seed, step)``."""
    if isinstance(path_or_dict, dict):
        d = path_or_dict
    else:
        with open(path_or_dict) as fh:
            d = json.load(fh)
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError("not a network checkpoint")
    net = build_network(ModelConfig.from_dict(d["config"]), d["seed"])
    for name, p in net.named_parameters():
        entry = d["parameters"][name]
        p.value[...] = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
    return net, d["seed"], d["step"]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainRun:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-4
    decay: float = 1e-4
    seed: int = 0
    loss_curve: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    steps: int = 0

    def params(self):
        return {"epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
                "decay": self.decay, "seed": self.seed}

    def fresh(self, **overrides):
        d = self.params()
        d.update(overrides)
        return TrainRun(**d)

    def log_rows(self):
        rows = []
        for e, loss in enumerate(self.loss_curve):
            val = self.val_acc[e] if e < len(self.val_acc) else None
            rows.append((e + 1, loss, self.train_acc[e], val))
        return rows


def _check_training_data(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0 or len(X) != len(y):
        raise ParameterError("training data must be non-empty with one label per example")
    if set(np.unique(y).tolist()) != {0, 1}:
        raise ParameterError("training data must contain both classes")
    return X, y


def train(config: ModelConfig, X, y, run: TrainRun, X_val=None, y_val=None,
          net: nn.Network | None = None):
    """Mini-batch Adam on mean cross-entropy.

    Batches are drawn from a permutation seeded by ``run.seed``. Training
    accuracy per epoch is measured on the training-mode logits seen during
    the epoch. Returns ``(net, run)`` with the curves filled in.
    """
    X, y = _check_training_data(X, y)
    if net is None:
        net = build_network(config, run.seed)
    rng = np.random.default_rng([run.seed, 1])
    net.set_rng(np.random.default_rng([run.seed, 2]))
    state = nn.TrainState(net.parameters(), run.lr, run.decay)
    n = len(X)
    for epoch in range(run.epochs):
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, run.batch_size):
            idx = order[start:start + run.batch_size]
            loss, logits = net.loss_and_grads(X[idx], y[idx], train=True)
            if not np.isfinite(loss):
                raise DivergenceError(epoch + 1, loss)
            nn.adam_step(state)
            total_loss += loss * len(idx)
            correct += int(np.sum(logits.argmax(axis=1) == y[idx]))
        run.loss_curve.append(total_loss / n)
        run.train_acc.append(correct / n)
        if X_val is not None and len(X_val):
            run.val_acc.append(accuracy(net, X_val, y_val))
        log.debug("epoch %d loss %.5f acc %.3f", epoch + 1, run.loss_curve[-1],
                  run.train_acc[-1])
    run.steps = state.step
    return net, run


# ---------------------------------------------------------------------------
# SVM baseline
# ---------------------------------------------------------------------------

@dataclass
class SvmModel:
    """Linear soft-margin SVM on standardized features."""

    weights: np.ndarray
    bias: float
    C: float
    mean: np.ndarray
    scale: np.ndarray
    trained: bool = True

    def decision_function(self, features):
        z = (np.asarray(features, dtype=np.float64) - self.mean) / self.scale
        return z @ self.weights + self.bias

    def to_dict(self):
        return {"format": "eegsz-svm", "C": self.C, "bias": float(self.bias),
                "weights": self.weights.tolist(), "mean": self.mean.tolist(),
                "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["weights"]), d["bias"], d["C"], np.array(d["mean"]),
                   np.array(d["scale"]))


def svm_train(features, labels, C: float = 1.0, epochs: int = 50, seed: int = 0) -> SvmModel:
    """Pegasos-style stochastic subgradient descent on the L2-regularized hinge loss.

    The objective is ``lambda/2 |w|^2 + mean(max(0, 1 - y (w.x + b)))`` with
    ``lambda = 1 / (C n)``. The bias rides along as a constant feature. The
    returned weights are the average of the iterates over the final epoch.
    """
    X = np.asarray(features, dtype=np.float64)
    y01 = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y01) or len(X) == 0:
        raise ParameterError("features must be [n x d] with one label per row")
    if len(np.unique(y01)) < 2:
        raise ParameterError("SVM training needs both classes")
    if not np.all(np.isfinite(X)):
        raise ParameterError("SVM features contain non-finite values")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = np.hstack([(X - mean) / scale, np.ones((len(X), 1))])
    y = np.where(y01 == 1, 1.0, -1.0)
    n, d = Z.shape
    lam = 1.0 / (C * n)
    rng = np.random.default_rng(seed)
    w = np.zeros(d)
    avg = np.zeros(d)
    t = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        if epoch == epochs - 1:
            avg[:] = 0.0
        for i in order:
            t += 1
            eta = 1.0 / (lam * t)
            margin = y[i] * (Z[i] @ w)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * y[i] * Z[i]
            if epoch == epochs - 1:
                avg += w
    w = avg / n
    return SvmModel(w[:-1].copy(), float(w[-1]), C, mean, scale)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

class Prediction(NamedTuple):
    label: int
    scores: np.ndarray  # class probabilities (network) or the margin (SVM)
    tie: bool


def predict(model, x) -> Prediction:
    """Classify one segment (network) or one feature vector (SVM).

    Ties resolve to class 0 and set ``tie``.
    """
    if isinstance(model, SvmModel):
        margin = float(model.decision_function(np.asarray(x, dtype=np.float64)[None])[0])
        return Prediction(1 if margin > 0 else 0, np.array([margin]), margin == 0.0)
    if isinstance(model, nn.Network):
        proba = model.predict_proba(np.asarray(x, dtype=np.float64)[None])[0]
        return predict_from_scores(proba)
    raise ParameterError(f"cannot predict with {type(model).__name__}")


def predict_from_scores(proba) -> Prediction:
    proba = np.asarray(proba, dtype=np.float64)
    label = int(np.argmax(proba))
    tie = bool(np.sum(proba == proba[label]) > 1)
    return Prediction(label, proba, tie)


def predict_batch(model, X):
    """Labels for a batch of segments (network) or feature rows (SVM)."""
    if isinstance(model, SvmModel):
        return (model.decision_function(X) > 0).astype(np.int64)
    return model.predict_proba(X).argmax(axis=1)


def accuracy(model, X, y):
    return float(np.mean(predict_batch(model, X) == np.asarray(y)))


def count_parameters(config: ModelConfig) -> int:
    """Closed-form trainable parameter count of a network config."""
    total = 0
    shape = config.input_shape
    for spec in config.layers:
        kind = spec["type"]
        if kind == "conv1d":
            total += spec["filters"] * (shape[0] * spec["kernel_size"] + 1)
        elif kind == "lstm":
            H, D = spec["units"], shape[0]
            total += 4 * H * (D + H + 1) + (3 * H if spec.get("peephole", True) else 0)
        elif kind == "dense":
            total += spec["units"] * (shape[0] + 1)
        shape = _layer_output_shape(spec, shape)
    return total


def config_summary(config: ModelConfig):
    return {"config": config.to_dict(), "shape_chain": [list(s) for s in config.shape_chain()],
            "n_parameters": count_parameters(config)}


__all__ = [
    "ModelConfig", "TrainRun", "SvmModel", "Prediction", "build_szhnn", "build_cnn",
    "build_lstm", "build_model_config", "build_network", "train", "svm_train", "predict",
    "predict_batch", "accuracy", "save_checkpoint", "load_checkpoint", "checkpoint_dict",
    "count_parameters",
]
