"""Feed-forward models: architecture descriptors, parameters, forward and gradients."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from grasplab.nn import autograd as ag

LOSS_KINDS = ("cross_entropy", "square")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelCheckpoint:
    """Immutable network: ordered layer descriptors plus one array per parameter.

    ``arch`` entries are dicts with a ``type`` of ``dense``, ``conv2d``,
    ``relu`` or ``flatten``. Dense weights are stored (out, in); conv
    weights (out_channels, in_channels, k, k).
    """

    arch: tuple
    params: tuple
    num_classes: int
    input_shape: tuple

    def __post_init__(self):
        expected = param_shapes(self.arch)
        if len(expected) != len(self.params):
            raise ShapeError(f"arch needs {len(expected)} parameter arrays, got {len(self.params)}")
        frozen = []
        for i, (shape, p) in enumerate(zip(expected, self.params)):
            p = np.array(p, copy=True)
            if p.shape != shape:
                raise ShapeError(f"parameter {i}: expected shape {shape}, got {p.shape}")
            p.flags.writeable = False
            frozen.append(p)
        object.__setattr__(self, "params", tuple(frozen))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        out = output_shape(self.arch, self.input_shape)
        if out != (self.num_classes,):
            raise ShapeError(f"arch produces output {out}, expected ({self.num_classes},)")

    @property
    def dtype(self):
        return self.params[0].dtype if self.params else np.dtype(np.float32)

    def with_params(self, params):
        return ModelCheckpoint(self.arch, tuple(params), self.num_classes, self.input_shape)

    def astype(self, dtype):
        return self.with_params([p.astype(dtype) for p in self.params])

    def arch_json(self):
        return json.dumps({"arch": list(self.arch), "num_classes": self.num_classes,
                           "input_shape": list(self.input_shape)}, sort_keys=True)

    def layer_param_index(self):
        """Map layer position -> index of its first parameter array (dense/conv only)."""
        idx = {}
        k = 0
        for i, layer in enumerate(self.arch):
            if layer["type"] in ("dense", "conv2d"):
                idx[i] = k
                k += 2
        return idx


def _conv_out(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def param_shapes(arch):
    shapes = []
    for layer in arch:
        t = layer["type"]
        if t == "dense":
            shapes += [(layer["out"], layer["in"]), (layer["out"],)]
        elif t == "conv2d":
            k = layer["kernel"]
            shapes += [(layer["out_channels"], layer["in_channels"], k, k), (layer["out_channels"],)]
        elif t not in ("relu", "flatten"):
            raise ShapeError(f"unknown layer type {t!r}")
    return shapes


def output_shape(arch, input_shape):
    shape = tuple(input_shape)
    for layer in arch:
        t = layer["type"]
        if t == "dense":
            if shape != (layer["in"],):
                raise ShapeError(f"dense layer expects ({layer['in']},), got {shape}")
            shape = (layer["out"],)
        elif t == "conv2d":
            if len(shape) != 3 or shape[0] != layer["in_channels"]:
                raise ShapeError(f"conv2d expects {layer['in_channels']} channels, got {shape}")
            k, s, p = layer["kernel"], layer.get("stride", 1), layer.get("padding", 0)
            shape = (layer["out_channels"], _conv_out(shape[1], k, s, p), _conv_out(shape[2], k, s, p))
        elif t == "flatten":
            shape = (int(np.prod(shape)),)
    return shape


def init_params(arch, seed, dtype=np.float32):
    """Uniform(-s, s) with s = 1/sqrt(fan_in), for weights and biases alike."""
    rng = np.random.default_rng(seed)
    params = []
    for layer in arch:
        if layer["type"] == "dense":
            fan_in = layer["in"]
            wshape, bshape = (layer["out"], layer["in"]), (layer["out"],)
        elif layer["type"] == "conv2d":
            k = layer["kernel"]
            fan_in = layer["in_channels"] * k * k
            wshape, bshape = (layer["out_channels"], layer["in_channels"], k, k), (layer["out_channels"],)
        else:
            continue
        s = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-s, s, size=wshape).astype(dtype))
        params.append(rng.uniform(-s, s, size=bshape).astype(dtype))
    return params


def mlp_arch(in_features, num_classes, hidden=128):
    return (
        {"type": "dense", "in": in_features, "out": hidden},
        {"type": "relu"},
        {"type": "dense", "in": hidden, "out": num_classes},
    )


def cnn_arch(in_channels, height, width, num_classes, channels=(8, 16), hidden=64):
    c1, c2 = channels
    h1, w1 = _conv_out(height, 3, 2, 1), _conv_out(width, 3, 2, 1)
    h2, w2 = _conv_out(h1, 3, 2, 1), _conv_out(w1, 3, 2, 1)
    return (
        {"type": "conv2d", "in_channels": in_channels, "out_channels": c1, "kernel": 3, "stride": 2, "padding": 1},
        {"type": "relu"},
        {"type": "conv2d", "in_channels": c1, "out_channels": c2, "kernel": 3, "stride": 2, "padding": 1},
        {"type": "relu"},
        {"type": "flatten"},
        {"type": "dense", "in": c2 * h2 * w2, "out": hidden},
        {"type": "relu"},
        {"type": "dense", "in": hidden, "out": num_classes},
    )


PRESETS = ("mlp", "cnn")


def build_model(preset, input_shape, num_classes, seed, dtype=np.float32):
    input_shape = tuple(input_shape)
    if preset == "mlp":
        arch = mlp_arch(int(np.prod(input_shape)), num_classes)
        if len(input_shape) != 1:
            arch = ({"type": "flatten"},) + arch
    elif preset == "cnn":
        if len(input_shape) != 3:
            raise ShapeError("cnn preset needs a (channels, height, width) input shape")
        arch = cnn_arch(*input_shape, num_classes)
    else:
        raise ValueError(f"unknown architecture preset {preset!r}")
    return ModelCheckpoint(arch, tuple(init_params(arch, seed, dtype)), num_classes, input_shape)


def _check_batch(model, batch):
    batch = np.asarray(batch)
    if batch.shape[1:] != model.input_shape:
        raise ShapeError(f"batch sample shape {batch.shape[1:]} does not match model input {model.input_shape}")
    return batch


def forward_graph(model, x, params=None, capture=None):
    """Build the autograd graph of the network on tensor ``x``.

    ``params`` defaults to constant tensors wrapping the checkpoint arrays.
    When ``capture`` is a list, post-activation tensors of every hidden
    layer are appended to it (used by the weight-gradient analysis).
    """
    if params is None:
        params = [ag.Tensor(p) for p in model.params]
    h = x
    k = 0
    for layer in model.arch:
        t = layer["type"]
        if t == "dense":
            h = ag.dense(h, params[k], params[k + 1])
            k += 2
        elif t == "conv2d":
            h = ag.conv2d(h, params[k], params[k + 1], layer.get("stride", 1), layer.get("padding", 0))
            k += 2
        elif t == "relu":
            h = ag.relu(h)
            if capture is not None:
                capture.append(h)
        elif t == "flatten":
            h = ag.reshape(h, (h.shape[0], -1))
    return h


def forward(model, batch):
    """Logits (batch x K) for a batch of inputs."""
    batch = _check_batch(model, batch).astype(model.dtype, copy=False)
    return forward_graph(model, ag.Tensor(batch)).data


def predict(model, batch, chunk=1024):
    batch = _check_batch(model, batch)
    out = [forward(model, batch[i:i + chunk]).argmax(axis=1) for i in range(0, len(batch), chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def _targets(logits_shape, labels, num_classes):
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != logits_shape:
            raise ShapeError(f"target array shape {labels.shape} != logits shape {logits_shape}")
        return labels
    check_labels(labels, num_classes)
    onehot = np.zeros(logits_shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return onehot


def check_labels(labels, num_classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes - 1}]")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("class labels must be integers")


def loss_graph(logits, labels, kind):
    if kind == "cross_entropy":
        check_labels(labels, logits.shape[1])
        return ag.cross_entropy(logits, labels)
    if kind == "square":
        return ag.square_loss(logits, _targets(logits.shape, labels, logits.shape[1]))
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def loss(logits, labels, kind="cross_entropy"):
    """Scalar loss of raw logits.

    ``square`` compares against one-hot targets, or against a real-valued
    target array of the same shape as ``logits`` when one is passed.
    """
    return float(loss_graph(ag.Tensor(np.asarray(logits)), labels, kind).data)


def gradients(model, batch, labels, kind="cross_entropy"):
    """Gradient of the mean batch loss with respect to every parameter array."""
    batch = _check_batch(model, batch).astype(model.dtype, copy=False)
    params = [ag.Tensor(p, requires_grad=True) for p in model.params]
    out = forward_graph(model, ag.Tensor(batch), params)
    loss_graph(out, labels, kind).backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def input_gradient(model, batch, labels, kind="cross_entropy"):
    """Gradient of the mean loss with respect to the inputs."""
    batch = _check_batch(model, batch).astype(model.dtype, copy=False)
    x = ag.Tensor(batch, requires_grad=True)
    loss_graph(forward_graph(model, x), labels, kind).backward()
    return x.grad


def logit_input_gradient(model, batch, weights):
    """Gradient of ``sum_i weights[i] . logits_i`` with respect to the inputs."""
    batch = _check_batch(model, batch).astype(model.dtype, copy=False)
    x = ag.Tensor(batch, requires_grad=True)
    out = forward_graph(model, x)
    out.backward(np.asarray(weights, dtype=out.data.dtype))
    return x.grad
