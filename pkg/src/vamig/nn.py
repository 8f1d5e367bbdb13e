"""Minimal dense-network kit: forward, exact reverse-mode gradients, Adam.

Everything runs in float64. Networks are plain value objects; ``apply`` is a
pure function returning a cache so several forward passes can coexist (the
denoising chain needs one cache per step), while ``forward``/``backward``
keep the usual stateful convenience API.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DivergenceError

ACTIVATIONS = ("tanh", "identity")

CHECKPOINT_VERSION = 1


class DenseNet:
    """Fully connected network with tanh hidden layers.

    ``widths`` lists the input, hidden, and output sizes. The output layer is
    linear unless ``output_activation="tanh"``.
    """

    def __init__(self, widths, output_activation: str = "identity", rng=None):
        if len(widths) < 2:
            raise ValueError("widths needs at least input and output sizes")
        if output_activation not in ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {ACTIVATIONS}")
        self.widths = [int(w) for w in widths]
        self.output_activation = output_activation
        if rng is None:
            rng = np.random.default_rng()
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))
        self._cache = None

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        """Flat copy of all weights and biases, layer by layer."""
        return np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.param_count,):
            raise ValueError(f"expected {self.param_count} parameters, got {flat.shape}")
        offset = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[offset:offset + w.size].reshape(w.shape).copy()
            offset += w.size
            self.biases[i] = flat[offset:offset + b.size].copy()
            offset += b.size

    def clone(self) -> "DenseNet":
        out = DenseNet.__new__(DenseNet)
        out.widths = list(self.widths)
        out.output_activation = self.output_activation
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        out._cache = None
        return out

    def apply(self, x):
        """Pure forward pass; returns (output, cache) without touching state."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        a = np.atleast_2d(x)
        if a.shape[1] != self.input_dim:
            raise ValueError(f"input dim {a.shape[1]} != expected {self.input_dim}")
        activations = [a]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            if i < last or self.output_activation == "tanh":
                a = np.tanh(z)
            else:
                a = z
            activations.append(a)
        out = a[0] if squeeze else a
        return out, (activations, squeeze)

    def forward(self, x):
        out, self._cache = self.apply(x)
        return out

    def backward(self, grad_out, cache=None):
        """Gradients of a scalar loss given its gradient at the output.

        Returns ``(flat parameter gradient, input gradient)``. Uses the most
        recent ``forward`` cache unless an ``apply`` cache is given.
        """
        if cache is None:
            cache = self._cache
        if cache is None:
            raise RuntimeError("backward requires a preceding forward pass")
        activations, squeeze = cache
        g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        if g.shape != activations[-1].shape:
            raise ValueError(
                f"output gradient shape {g.shape} != {activations[-1].shape}")
        if self.output_activation == "tanh":
            g = g * (1.0 - activations[-1] ** 2)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = g.T @ activations[i]
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i]
            if i > 0:
                g = g * (1.0 - activations[i] ** 2)
        flat = np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(grads_w, grads_b)])
        grad_in = g[0] if squeeze else g
        return flat, grad_in


class Adam:
    """Bias-corrected adaptive first-order optimizer over a flat vector."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.size = int(size)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(self.size)
        self.v = np.zeros(self.size)
        self.t = 0

    def step(self, params, grad) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != (self.size,) or params.shape != (self.size,):
            raise ValueError("parameter/gradient size mismatch")
        if not np.all(np.isfinite(grad)):
            raise DivergenceError("non-finite gradient")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def timestep_embedding(steps, dim: int) -> np.ndarray:
    """Sinusoidal embedding of (possibly per-row) denoising step indices."""
    steps = np.atleast_1d(np.asarray(steps, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    angles = steps[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if emb.shape[1] < dim:  # odd dim: pad with a zero column
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


def save_checkpoint(path, nets: dict, optimizers: dict | None = None,
                    extra: dict | None = None) -> None:
    """Write networks and optimizer moments to a versioned ``.npz`` file.

    Keys: ``format_version``; per net ``<name>.widths``, ``<name>.params``,
    ``<name>.output_activation``; per optimizer ``<name>.m``, ``<name>.v``,
    ``<name>.t``, ``<name>.lr``; plus an ``extra`` JSON blob.
    """
    payload = {"format_version": np.array(CHECKPOINT_VERSION)}
    for name, net in nets.items():
        payload[f"{name}.widths"] = np.asarray(net.widths)
        payload[f"{name}.params"] = net.get_params()
        payload[f"{name}.output_activation"] = np.array(net.output_activation)
    for name, opt in (optimizers or {}).items():
        payload[f"opt.{name}.m"] = opt.m
        payload[f"opt.{name}.v"] = opt.v
        payload[f"opt.{name}.t"] = np.array(opt.t)
        payload[f"opt.{name}.lr"] = np.array(opt.lr)
    payload["extra"] = np.array(json.dumps(extra or {}))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    """Read back nets, optimizers, and the extra blob from a checkpoint."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        nets = {}
        optimizers = {}
        names = {key.split(".")[0] for key in data.files
                 if key.endswith(".widths")}
        for name in names:
            net = DenseNet(data[f"{name}.widths"].tolist(),
                           output_activation=str(data[f"{name}.output_activation"]))
            net.set_params(data[f"{name}.params"])
            nets[name] = net
        opt_names = {key.split(".")[1] for key in data.files
                     if key.startswith("opt.") and key.endswith(".m")}
        for name in opt_names:
            opt = Adam(data[f"opt.{name}.m"].size, lr=float(data[f"opt.{name}.lr"]))
            opt.m = data[f"opt.{name}.m"].copy()
            opt.v = data[f"opt.{name}.v"].copy()
            opt.t = int(data[f"opt.{name}.t"])
            optimizers[name] = opt
        extra = json.loads(str(data["extra"]))
    return nets, optimizers, extra
