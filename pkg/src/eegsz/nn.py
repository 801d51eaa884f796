"""Small numpy network engine with hand-written backward passes.

Activations are batched and channel-first, ``(N, C, T)``. Recurrent layers
read such an array as ``T`` steps of ``C``-dimensional vectors. Everything is
float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError


class Tensor:
    """A trainable array with a same-shape gradient buffer."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation in (None, "none", "linear"):
        return z
    raise ConfigError(f"unknown activation {activation!r}")


def _activation_grad(grad, out, activation):
    if activation == "relu":
        return grad * (out > 0)
    return grad


class Layer:
    """Base layer. ``params`` maps names to :class:`Tensor`."""

    kind = "layer"

    def __init__(self):
        self.params = {}

    def output_shape(self, input_shape):
        raise NotImplementedError

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def spec(self):
        return {"type": self.kind}


class Conv1D(Layer):
    """Valid-padding, stride-1 convolution spanning all input channels.

    ``out[n, f, t] = b[f] + sum_{c, k} W[f, c, k] * x[n, c, t + k]``
    """

    kind = "conv1d"

    def __init__(self, in_channels, filters, kernel_size, activation="relu", rng=None):
        super().__init__()
        self.in_channels, self.filters, self.kernel_size = in_channels, filters, kernel_size
        self.activation = activation
        rng = rng or np.random.default_rng(0)
        fan_in, fan_out = in_channels * kernel_size, filters * kernel_size
        self.params["W"] = Tensor(glorot_uniform(rng, (filters, in_channels, kernel_size),
                                                 fan_in, fan_out))
        self.params["b"] = Tensor(np.zeros(filters))

    def output_shape(self, input_shape):
        c, t = input_shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} channels, got {c}")
        if t < self.kernel_size:
            raise ShapeError(f"input length {t} shorter than kernel {self.kernel_size}")
        return (self.filters, t - self.kernel_size + 1)

    def forward(self, x, train=False):
        n, c, t = x.shape
        self.output_shape((c, t))
        k = self.kernel_size
        windows = sliding_window_view(x, k, axis=2)  # (N, C, M, K)
        m = t - k + 1
        cols = windows.transpose(0, 2, 1, 3).reshape(n * m, c * k)
        w = self.params["W"].value.reshape(self.filters, c * k)
        z = (cols @ w.T).reshape(n, m, self.filters).transpose(0, 2, 1)
        z = z + self.params["b"].value[None, :, None]
        out = _activate(z, self.activation)
        self._cache = (x.shape, cols, out)
        return out

    def backward(self, grad):
        (n, c, t), cols, out = self._cache
        k, f = self.kernel_size, self.filters
        m = t - k + 1
        dz = _activation_grad(grad, out, self.activation)
        self.params["b"].grad += dz.sum(axis=(0, 2))
        dz_rows = dz.transpose(0, 2, 1).reshape(n * m, f)
        self.params["W"].grad += (dz_rows.T @ cols).reshape(f, c, k)
        w = self.params["W"].value
        dx = np.zeros((n, c, t))
        for j in range(k):
            dx[:, :, j:j + m] += np.einsum("nfm,fc->ncm", dz, w[:, :, j])
        return dx

    def spec(self):
        return {"type": self.kind, "filters": self.filters, "kernel_size": self.kernel_size,
                "activation": self.activation}


class MaxPool1D(Layer):
    """Non-overlapping max pooling; an odd tail is dropped.

    Gradient goes to the first maximal element of each window.
    """

    kind = "maxpool1d"

    def __init__(self, size=2):
        super().__init__()
        self.size = size

    def output_shape(self, input_shape):
        c, t = input_shape
        if t < self.size:
            raise ShapeError(f"cannot pool length {t} with window {self.size}")
        return (c, t // self.size)

    def forward(self, x, train=False):
        n, c, t = x.shape
        self.output_shape((c, t))
        m = t // self.size
        blocks = x[:, :, :m * self.size].reshape(n, c, m, self.size)
        idx = blocks.argmax(axis=3)
        self._cache = (x.shape, idx)
        return np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]

    def backward(self, grad):
        (n, c, t), idx = self._cache
        m = t // self.size
        blocks = np.zeros((n, c, m, self.size))
        np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=3)
        dx = np.zeros((n, c, t))
        dx[:, :, :m * self.size] = blocks.reshape(n, c, m * self.size)
        return dx

    def spec(self):
        return {"type": self.kind, "size": self.size}


class LSTM(Layer):
    """LSTM with diagonal peephole connections.

    Stacked weights use gate order (i, f, o, c): ``P`` is ``[4H x D]`` (input),
    ``Q`` is ``[4H x H]`` (recurrent), ``b`` is ``[4H]``, and ``R`` is
    ``[3H]`` holding the peephole diagonals for (i, f, o). Input and forget
    gates look at the previous cell state, the output gate at the new one:

        i = sig(P_i x + Q_i h + R_i * c_prev + b_i)
        f = sig(P_f x + Q_f h + R_f * c_prev + b_f)
        g = tanh(P_c x + Q_c h + b_c)
        c = f * c_prev + i * g
        o = sig(P_o x + Q_o h + R_o * c + b_o)
        h = o * tanh(c)
    """

    kind = "lstm"

    def __init__(self, input_dim, units, return_sequences=False, peephole=True,
                 forget_bias=1.0, rng=None):
        super().__init__()
        self.input_dim, self.units = input_dim, units
        self.return_sequences, self.peephole = return_sequences, peephole
        self.forget_bias = forget_bias
        rng = rng or np.random.default_rng(0)
        H, D = units, input_dim
        P = np.concatenate([glorot_uniform(rng, (H, D), D, H) for _ in range(4)])
        Q = np.concatenate([glorot_uniform(rng, (H, H), H, H) for _ in range(4)])
        b = np.zeros(4 * H)
        b[H:2 * H] = forget_bias
        self.params["P"] = Tensor(P)
        self.params["Q"] = Tensor(Q)
        self.params["b"] = Tensor(b)
        if peephole:
            self.params["R"] = Tensor(np.zeros(3 * H))

    def gate_weights(self):
        """Split stacked weights into a dict keyed like ``P_i``, ``Q_c``, ``R_o``."""
        H = self.units
        out = {}
        for j, g in enumerate("ifoc"):
            out[f"P_{g}"] = self.params["P"].value[j * H:(j + 1) * H]
            out[f"Q_{g}"] = self.params["Q"].value[j * H:(j + 1) * H]
            out[f"b_{g}"] = self.params["b"].value[j * H:(j + 1) * H]
        R = self.params["R"].value if self.peephole else np.zeros(3 * H)
        for j, g in enumerate("ifo"):
            out[f"R_{g}"] = R[j * H:(j + 1) * H]
        return out

    def output_shape(self, input_shape):
        d, t = input_shape
        if d != self.input_dim:
            raise ShapeError(f"LSTM expects {self.input_dim}-dim steps, got {d}")
        if t < 1:
            raise ShapeError("LSTM needs a sequence of at least one step")
        return (self.units, t) if self.return_sequences else (self.units,)

    def step(self, x_t, h_prev, c_prev):
        """One time step for a batch; returns ``(h, c)``."""
        H = self.units
        P, Q, b = (self.params[k].value for k in "PQb")
        R = self.params["R"].value if self.peephole else np.zeros(3 * H)
        a = x_t @ P.T + h_prev @ Q.T + b
        i = sigmoid(a[:, :H] + R[:H] * c_prev)
        f = sigmoid(a[:, H:2 * H] + R[H:2 * H] * c_prev)
        g = np.tanh(a[:, 3 * H:])
        c = f * c_prev + i * g
        o = sigmoid(a[:, 2 * H:3 * H] + R[2 * H:] * c)
        return o * np.tanh(c), c

    def forward(self, x, train=False):
        n, d, t = x.shape
        self.output_shape((d, t))
        H = self.units
        P, Q, b = (self.params[k].value for k in "PQb")
        R = self.params["R"].value if self.peephole else np.zeros(3 * H)
        R_i, R_f, R_o = R[:H], R[H:2 * H], R[2 * H:]
        xs = np.ascontiguousarray(x.transpose(2, 0, 1))  # (T, N, D)
        proj = xs @ P.T + b  # (T, N, 4H)
        QT = Q.T

        hs = np.zeros((t + 1, n, H))
        cs = np.zeros((t + 1, n, H))
        gates = np.empty((t, n, 4 * H))  # activated i, f, o, g
        tanh_c = np.empty((t, n, H))
        for s in range(t):
            h_prev, c_prev = hs[s], cs[s]
            a = proj[s] + h_prev @ QT
            gi = sigmoid(a[:, :H] + R_i * c_prev)
            gf = sigmoid(a[:, H:2 * H] + R_f * c_prev)
            gg = np.tanh(a[:, 3 * H:])
            c = gf * c_prev + gi * gg
            go = sigmoid(a[:, 2 * H:3 * H] + R_o * c)
            tc = np.tanh(c)
            cs[s + 1] = c
            hs[s + 1] = go * tc
            gates[s, :, :H] = gi
            gates[s, :, H:2 * H] = gf
            gates[s, :, 2 * H:3 * H] = go
            gates[s, :, 3 * H:] = gg
            tanh_c[s] = tc
        self._cache = (xs, hs, cs, gates, tanh_c)
        if self.return_sequences:
            return hs[1:].transpose(1, 2, 0)
        return hs[t].copy()

    def backward(self, grad):
        xs, hs, cs, gates, tanh_c = self._cache
        t, n, _ = xs.shape
        H = self.units
        P, Q = self.params["P"].value, self.params["Q"].value
        R = self.params["R"].value if self.peephole else np.zeros(3 * H)
        R_i, R_f, R_o = R[:H], R[H:2 * H], R[2 * H:]

        if self.return_sequences:
            dh_out = grad.transpose(2, 0, 1)
        else:
            dh_out = np.zeros((t, n, H))
            dh_out[-1] = grad
        da = np.empty((t, n, 4 * H))
        dR = np.zeros(3 * H)
        dh_next = np.zeros((n, H))
        dc_next = np.zeros((n, H))
        for s in range(t - 1, -1, -1):
            gi, gf = gates[s, :, :H], gates[s, :, H:2 * H]
            go, gg = gates[s, :, 2 * H:3 * H], gates[s, :, 3 * H:]
            c_prev, c, tc = cs[s], cs[s + 1], tanh_c[s]
            dh = dh_out[s] + dh_next
            da_o = dh * tc * go * (1.0 - go)
            dc = dh * go * (1.0 - tc * tc) + da_o * R_o + dc_next
            da_i = dc * gg * gi * (1.0 - gi)
            da_f = dc * c_prev * gf * (1.0 - gf)
            da_g = dc * gi * (1.0 - gg * gg)
            da[s, :, :H] = da_i
            da[s, :, H:2 * H] = da_f
            da[s, :, 2 * H:3 * H] = da_o
            da[s, :, 3 * H:] = da_g
            dR[:H] += np.sum(da_i * c_prev, axis=0)
            dR[H:2 * H] += np.sum(da_f * c_prev, axis=0)
            dR[2 * H:] += np.sum(da_o * c, axis=0)
            dc_next = dc * gf + da_i * R_i + da_f * R_f
            dh_next = da[s] @ Q

        flat_da = da.reshape(t * n, 4 * H)
        self.params["P"].grad += flat_da.T @ xs.reshape(t * n, -1)
        self.params["Q"].grad += flat_da.T @ hs[:-1].reshape(t * n, H)
        self.params["b"].grad += flat_da.sum(axis=0)
        if self.peephole:
            self.params["R"].grad += dR
        dx = da @ P  # (T, N, D)
        return dx.transpose(1, 2, 0)

    def spec(self):
        return {"type": self.kind, "units": self.units,
                "return_sequences": self.return_sequences, "peephole": self.peephole,
                "forget_bias": self.forget_bias}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, units, activation=None, rng=None):
        super().__init__()
        self.in_features, self.units, self.activation = in_features, units, activation
        rng = rng or np.random.default_rng(0)
        self.params["W"] = Tensor(glorot_uniform(rng, (units, in_features), in_features, units))
        self.params["b"] = Tensor(np.zeros(units))

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.in_features,):
            raise ShapeError(f"dense expects ({self.in_features},), got {tuple(input_shape)}")
        return (self.units,)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense expects (N, {self.in_features}), got {x.shape}")
        out = _activate(x @ self.params["W"].value.T + self.params["b"].value, self.activation)
        self._cache = (x, out)
        return out

    def backward(self, grad):
        x, out = self._cache
        dz = _activation_grad(grad, out, self.activation)
        self.params["W"].grad += dz.T @ x
        self.params["b"].grad += dz.sum(axis=0)
        return dz @ self.params["W"].value

    def spec(self):
        return {"type": self.kind, "units": self.units, "activation": self.activation}


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1 / (1 - p)`` while training."""

    kind = "dropout"

    def __init__(self, p, rng=None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng or np.random.default_rng(0)
        self._mask = None

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x, train=False):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask

    def spec(self):
        return {"type": self.kind, "p": self.p}


def dropout(x, p=0.5, mode="train", rng=None):
    """Functional inverted dropout."""
    if mode == "eval" or p == 0.0:
        return x
    rng = rng or np.random.default_rng()
    return x * ((rng.random(np.shape(x)) >= p) / (1.0 - p))


def conv1d_forward(x, weights, bias):
    """Single-example convolution: ``x`` is ``[C_in x T]``, weights ``[F x C_in x K]``."""
    layer = Conv1D(x.shape[0], weights.shape[0], weights.shape[2], activation=None)
    layer.params["W"].value[...] = weights
    layer.params["b"].value[...] = bias
    return layer.forward(np.asarray(x, dtype=np.float64)[None])[0]


def maxpool1d(x, size=2):
    return MaxPool1D(size).forward(np.asarray(x, dtype=np.float64)[None])[0]


def dense_forward(x, W, b, activation=None):
    W = np.asarray(W, dtype=np.float64)
    layer = Dense(W.shape[1], W.shape[0], activation)
    layer.params["W"].value[...] = W
    layer.params["b"].value[...] = b
    return layer.forward(np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]


def lstm_step(cell: LSTM, x_t, h_prev=None, c_prev=None):
    """Advance ``cell`` one step for a single input vector; returns ``(h, c)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (cell.input_dim,):
        raise ShapeError(f"expected input of shape ({cell.input_dim},), got {x_t.shape}")
    H = cell.units
    h_prev = np.zeros(H) if h_prev is None else np.asarray(h_prev, dtype=np.float64)
    c_prev = np.zeros(H) if c_prev is None else np.asarray(c_prev, dtype=np.float64)
    h, c = cell.step(x_t[None], h_prev[None], c_prev[None])
    return h[0], c[0]


def lstm_sequence(cell: LSTM, X):
    """Run ``cell`` over ``X`` shaped ``[T x D]`` from zero state; returns ``h_T``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ShapeError(f"expected a non-empty [T x D] sequence, got shape {X.shape}")
    out = cell.forward(X.T[None])
    return out[0, :, -1] if cell.return_sequences else out[0]


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean sparse categorical cross-entropy and its gradient w.r.t. the logits.

    Accepts a single logit vector with an integer label, or a batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    if single:
        logits = logits[None]
        labels = np.array([labels])
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(z).sum(axis=1))
    log_p = z - log_z[:, None]
    loss = -np.mean(log_p[np.arange(n), labels])
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)


class Network:
    """A sequential stack of layers ending in class logits."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(layer.output_shape(self.shapes[-1]))

    def parameters(self):
        return [p for layer in self.layers for _, p in sorted(layer.params.items())]

    def named_parameters(self):
        return [(f"{i}.{layer.kind}.{name}", p)
                for i, layer in enumerate(self.layers)
                for name, p in sorted(layer.params.items())]

    def n_parameters(self):
        return sum(p.value.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"network expects inputs of shape {self.input_shape}, "
                             f"got {x.shape[1:]}")
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def loss_and_grads(self, x, y, train=True):
        """Forward, mean cross-entropy, backward. Gradients overwrite ``.grad``."""
        self.zero_grad()
        logits = self.forward(x, train=train)
        loss, dlogits = softmax_xent(logits, y)
        self.backward(dlogits)
        return loss, logits

    def predict_proba(self, x, batch_size=256):
        x = np.asarray(x, dtype=np.float64)
        out = [softmax(self.forward(x[i:i + batch_size], train=False))
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, 2))

    def set_rng(self, rng):
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng


@dataclass
class TrainState:
    """Adam optimizer state; learning rate decays as ``lr / (1 + decay * step)``."""

    parameters: list
    learning_rate: float = 1e-4
    decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    step: int = 0
    m: list = field(default=None)
    v: list = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = [np.zeros_like(p.value) for p in self.parameters]
        if self.v is None:
            self.v = [np.zeros_like(p.value) for p in self.parameters]

    def current_lr(self):
        return self.learning_rate / (1.0 + self.decay * self.step)


def adam_step(state: TrainState, grads=None) -> TrainState:
    """Apply one Adam update in place (and return ``state``).

    ``grads`` defaults to each parameter's ``.grad``.
    """
    if grads is None:
        grads = [p.grad for p in state.parameters]
    lr = state.current_lr()
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(state.parameters, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state


def _pattern(net):
    """Piecewise-linear regime of the last forward pass (ReLU masks, pool argmaxes)."""
    parts = []
    for layer in net.layers:
        cache = getattr(layer, "_cache", None)
        if isinstance(layer, (Conv1D, Dense)) and layer.activation == "relu":
            parts.append(np.packbits(cache[-1] > 0).tobytes())
        elif isinstance(layer, MaxPool1D):
            parts.append(cache[1].tobytes())
    return b"|".join(parts)


def gradcheck(net: Network, x, y, eps=1e-3, max_shrink=6):
    """Largest relative error between analytic and central-difference gradients.

    Runs in eval mode (dropout off). Each parameter tensor contributes
    ``|a - n| / (|a| + |n|)`` in the 2-norm; tensors whose gradients are both
    zero count as exact. When a probe at ``+-eps`` lands on a different ReLU or
    max-pool regime than the unperturbed point, the step is shrunk tenfold
    (up to ``max_shrink`` times) so the difference is not taken across a kink.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    net.loss_and_grads(x, y, train=False)
    base = _pattern(net)

    def probe():
        loss = softmax_xent(net.forward(x, train=False), y)[0]
        return loss, _pattern(net)

    worst = 0.0
    for _, p in net.named_parameters():
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.value)
        flat, nflat = p.value.reshape(-1), numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            h = eps
            for _ in range(max_shrink + 1):
                flat[j] = orig + h
                plus, sig_p = probe()
                flat[j] = orig - h
                minus, sig_m = probe()
                flat[j] = orig
                if sig_p == base and sig_m == base:
                    break
                h /= 10.0
            nflat[j] = (plus - minus) / (2.0 * h)
        denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        if denom == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
    return worst
