"""Small 1D CNN written directly in numpy (float64).

Public tensors use the ``height x channel x batch`` layout (height = bus
index). Inside the model, activations are kept as ``height x batch x
channel`` so each kernel tap is one contiguous matrix product.

Convolutions are cross-correlations with zero padding ``(k - 1) / 2`` and
stride 1, so every layer preserves the height. The dense head flattens a
feature map bus by bus, with the channels of one bus contiguous
(``flat[h * C + c]``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import ShapeMismatch

N_INPUT_CHANNELS = 4
HIDDEN_CHANNELS = 8


def elu(x, alpha: float = 1.0):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def elu_grad(x, alpha: float = 1.0):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, 1.0, alpha * np.exp(np.minimum(x, 0.0)))


# -- layers -------------------------------------------------------------------


@dataclass
class Conv1dLayer:
    weights: np.ndarray  # kernel x in_ch x out_ch
    bias: np.ndarray  # out_ch

    def __post_init__(self):
        k = self.weights.shape[0]
        if k % 2 != 1:
            raise ShapeMismatch("kernel size must be odd to preserve height")
        if self.bias.shape != (self.weights.shape[2],):
            raise ShapeMismatch("bias length must equal out_ch")

    @classmethod
    def zeros(cls, kernel: int, in_ch: int, out_ch: int) -> "Conv1dLayer":
        return cls(np.zeros((kernel, in_ch, out_ch)), np.zeros(out_ch))

    @property
    def kernel(self) -> int:
        return self.weights.shape[0]

    @property
    def pad(self) -> int:
        return (self.kernel - 1) // 2

    @property
    def stride(self) -> int:
        return 1

    @property
    def in_ch(self) -> int:
        return self.weights.shape[1]

    @property
    def out_ch(self) -> int:
        return self.weights.shape[2]

    def params(self):
        return [self.weights, self.bias]

    # internal layout: H x B x C
    def _forward(self, x):
        h, b, _ = x.shape
        p = self.pad
        xp = np.zeros((h + 2 * p, b, self.in_ch))
        xp[p:p + h] = x
        out = np.empty((h, b, self.out_ch))
        out[...] = self.bias
        flat_out = out.reshape(h * b, self.out_ch)
        for t in range(self.kernel):
            flat_out += xp[t:t + h].reshape(h * b, self.in_ch) @ self.weights[t]
        return out, xp

    def _backward(self, xp, g):
        h, b, _ = g.shape
        p = self.pad
        g2 = g.reshape(h * b, self.out_ch)
        gw = np.empty_like(self.weights)
        gxp = np.zeros_like(xp)
        for t in range(self.kernel):
            gw[t] = xp[t:t + h].reshape(h * b, self.in_ch).T @ g2
            gxp[t:t + h] += (g2 @ self.weights[t].T).reshape(h, b, self.in_ch)
        gb = g2.sum(axis=0)
        return gxp[p:p + h], gw, gb


@dataclass
class DenseLayer:
    weights: np.ndarray  # (C * L) x L
    bias: np.ndarray  # L

    def params(self):
        return [self.weights, self.bias]


def _check_hcb(x, channels):
    if x.ndim != 3 or x.shape[1] != channels:
        raise ShapeMismatch(f"expected H x {channels} x B input, got {x.shape}")


def conv1d_forward(layer: Conv1dLayer, x: np.ndarray) -> np.ndarray:
    """H x in_ch x B -> H x out_ch x B."""
    _check_hcb(x, layer.in_ch)
    out, _ = layer._forward(np.ascontiguousarray(x.transpose(0, 2, 1)))
    return out.transpose(0, 2, 1)


def conv1d_backward(layer: Conv1dLayer, x: np.ndarray, grad_out: np.ndarray):
    """Return ``(grad_input, grad_weights, grad_bias)`` for :func:`conv1d_forward`."""
    _check_hcb(x, layer.in_ch)
    if grad_out.shape != (x.shape[0], layer.out_ch, x.shape[2]):
        raise ShapeMismatch("grad_out does not match the forward output shape")
    xi = np.ascontiguousarray(x.transpose(0, 2, 1))
    h, b, _ = xi.shape
    p = layer.pad
    xp = np.zeros((h + 2 * p, b, layer.in_ch))
    xp[p:p + h] = xi
    gx, gw, gb = layer._backward(xp, np.ascontiguousarray(grad_out.transpose(0, 2, 1)))
    return gx.transpose(0, 2, 1), gw, gb


def flatten(fmap: np.ndarray) -> np.ndarray:
    """H x C x B feature map -> (H*C) x B, channels of a bus contiguous."""
    h, c, b = fmap.shape
    return fmap.reshape(h * c, b)


def unflatten(flat: np.ndarray, channels: int) -> np.ndarray:
    n, b = flat.shape
    return flat.reshape(n // channels, channels, b)


def dense_forward(layer: DenseLayer, flat: np.ndarray) -> np.ndarray:
    if flat.ndim != 2 or flat.shape[0] != layer.weights.shape[0]:
        raise ShapeMismatch(f"dense input must be {layer.weights.shape[0]} x B")
    return layer.weights.T @ flat + layer.bias[:, None]


def dense_backward(layer: DenseLayer, flat: np.ndarray, grad_out: np.ndarray):
    """Return ``(grad_input, grad_weights, grad_bias)``."""
    if grad_out.shape != (layer.weights.shape[1], flat.shape[1]):
        raise ShapeMismatch("grad_out does not match the dense output shape")
    return layer.weights @ grad_out, flat @ grad_out.T, grad_out.sum(axis=1)


# -- model --------------------------------------------------------------------


class Arch(enum.Enum):
    SMALL = "small"  # 3 x conv(k=3)
    DEEP = "deep"  # conv(k=7) + 4 x conv(k=3)


class Target(enum.Enum):
    V = "v"
    THETA = "theta"


ARCH_KERNELS = {Arch.SMALL: (3, 3, 3), Arch.DEEP: (7, 3, 3, 3, 3)}


@dataclass
class CnnModel:
    arch: Arch
    l: int
    target: Target
    convs: list[Conv1dLayer]
    dense: DenseLayer
    seed: int | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def build(cls, arch: Arch | str, l: int, target: Target | str = Target.V) -> "CnnModel":
        """Zero-initialised model; see :func:`xavier_init`."""
        arch, target = Arch(arch), Target(target)
        convs = []
        in_ch = N_INPUT_CHANNELS
        for k in ARCH_KERNELS[arch]:
            convs.append(Conv1dLayer.zeros(k, in_ch, HIDDEN_CHANNELS))
            in_ch = HIDDEN_CHANNELS
        dense = DenseLayer(np.zeros((HIDDEN_CHANNELS * l, l)), np.zeros(l))
        return cls(arch, l, target, convs, dense)

    @property
    def layers(self):
        return [*self.convs, self.dense]

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def copy(self) -> "CnnModel":
        convs = [Conv1dLayer(c.weights.copy(), c.bias.copy()) for c in self.convs]
        dense = DenseLayer(self.dense.weights.copy(), self.dense.bias.copy())
        return CnnModel(self.arch, self.l, self.target, convs, dense, self.seed)

    # internal-layout passes (x: H x B x 4)
    def _forward_hbc(self, x, keep=False):
        acts = []
        a = x
        for conv in self.convs:
            z, xp = conv._forward(a)
            if keep:
                acts.append((xp, z))
            a = elu(z)
        h, b, c = a.shape
        flat = a.transpose(1, 0, 2).reshape(b, h * c)
        out = flat @ self.dense.weights + self.dense.bias
        if keep:
            acts.append(flat)
        return out.T, acts

    def _backward_hbc(self, acts, grad_out):
        flat = acts[-1]
        g_t = grad_out.T  # B x L
        grads_dense = [flat.T @ g_t, g_t.sum(axis=0)]
        b = flat.shape[0]
        g = (g_t @ self.dense.weights.T).reshape(b, self.l, HIDDEN_CHANNELS).transpose(1, 0, 2)
        grads = []
        for conv, (xp, z) in zip(reversed(self.convs), reversed(acts[:-1])):
            g = g * elu_grad(z)
            g = np.ascontiguousarray(g)
            g, gw, gb = conv._backward(xp, g)
            grads.append((gw, gb))
        out = []
        for gw, gb in reversed(grads):
            out += [gw, gb]
        return out + grads_dense


def _to_hbc(x_batch, l):
    if x_batch.ndim != 3 or x_batch.shape[0] != l or x_batch.shape[1] != N_INPUT_CHANNELS:
        raise ShapeMismatch(f"expected {l} x {N_INPUT_CHANNELS} x B input, got {x_batch.shape}")
    return np.ascontiguousarray(x_batch.transpose(0, 2, 1))


def model_forward(model: CnnModel, x_batch: np.ndarray) -> np.ndarray:
    """L x 4 x B input -> L x B prediction (ELU after every conv, linear head)."""
    out, _ = model._forward_hbc(_to_hbc(x_batch, model.l))
    return out


def model_backward(model: CnnModel, x_batch: np.ndarray, grad_out: np.ndarray) -> list[np.ndarray]:
    """Gradients for every parameter, ordered as :meth:`CnnModel.params`."""
    if grad_out.shape != (model.l, x_batch.shape[2]):
        raise ShapeMismatch("grad_out must be L x B")
    _, acts = model._forward_hbc(_to_hbc(x_batch, model.l), keep=True)
    return model._backward_hbc(acts, grad_out)


def forward_backward(model: CnnModel, x_hbc: np.ndarray, grad_fn):
    """One pass in the internal layout; ``grad_fn(pred) -> (loss, dloss/dpred)``."""
    pred, acts = model._forward_hbc(x_hbc, keep=True)
    loss, g = grad_fn(pred)
    return loss, model._backward_hbc(acts, g)


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


_TARGET_KEY = {Target.V: 0, Target.THETA: 1}


def xavier_init(model: CnnModel, seed: int) -> CnnModel:
    """Glorot-uniform weights and zero biases, drawn in layer order.

    The stream is keyed on ``(seed, target)`` so the V and theta models built
    from one seed get different weights.
    """
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(_TARGET_KEY[model.target],))))
    for conv in model.convs:
        k, cin, cout = conv.weights.shape
        a = xavier_bound(k * cin, k * cout)
        conv.weights[...] = rng.uniform(-a, a, size=conv.weights.shape)
        conv.bias[...] = 0.0
    fan_in, fan_out = model.dense.weights.shape
    a = xavier_bound(fan_in, fan_out)
    model.dense.weights[...] = rng.uniform(-a, a, size=model.dense.weights.shape)
    model.dense.bias[...] = 0.0
    model.seed = seed
    return model


def param_count(model: CnnModel) -> int:
    return int(sum(p.size for p in model.params()))


# -- persistence ---------------------------------------------------------------


def save_weights(model: CnnModel, path) -> None:
    header = {
        "kind": "cnn_weights",
        "arch": model.arch.value,
        "L": model.l,
        "target": model.target.value,
        "seed": model.seed,
    }
    arrays = {}
    for i, conv in enumerate(model.convs):
        arrays[f"conv{i}.weights"] = conv.weights
        arrays[f"conv{i}.bias"] = conv.bias
    arrays["dense.weights"] = model.dense.weights
    arrays["dense.bias"] = model.dense.bias
    binio.write(path, header, arrays)


def load_weights(path) -> CnnModel:
    h, a = binio.read(path)
    model = CnnModel.build(h["arch"], h["L"], h["target"])
    for i, conv in enumerate(model.convs):
        conv.weights[...] = a[f"conv{i}.weights"]
        conv.bias[...] = a[f"conv{i}.bias"]
    model.dense.weights[...] = a["dense.weights"]
    model.dense.bias[...] = a["dense.bias"]
    model.seed = h["seed"]
    return model
