"""Dense numeric kernel: MLP forward/backward, first-order updates, and a
finite-difference gradient oracle.

Everything is float64 and purely functional: updates return fresh parameter
and state structures, so identical inputs give bit-identical outputs no
matter which actor calls them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .taskrt import framing


class ShapeMismatch(Exception):
    pass


@dataclass(frozen=True)
class Layer:
    w: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)


@dataclass(frozen=True)
class MlpParams:
    """Tanh-hidden, linear-output multilayer perceptron weights."""

    layers: tuple[Layer, ...]

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[1]

    def size(self) -> int:
        return sum(l.w.size + l.b.size for l in self.layers)


@dataclass(frozen=True)
class AdamState:
    m: tuple[Layer, ...]
    v: tuple[Layer, ...]
    t: int


def init_mlp(sizes, seed: int) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append(Layer(w, np.zeros(fan_out)))
    return MlpParams(tuple(layers))


def zeros_like_params(params: MlpParams) -> tuple[Layer, ...]:
    return tuple(Layer(np.zeros_like(l.w), np.zeros_like(l.b))
                 for l in params.layers)


def init_adam(params: MlpParams) -> AdamState:
    return AdamState(zeros_like_params(params), zeros_like_params(params), 0)


def _check_grads(params: MlpParams, grads) -> None:
    if len(grads) != len(params.layers):
        raise ShapeMismatch(
            f"{len(grads)} gradient layers for {len(params.layers)} param layers")
    for g, l in zip(grads, params.layers):
        if g.w.shape != l.w.shape or g.b.shape != l.b.shape:
            raise ShapeMismatch(f"gradient shape {g.w.shape} vs {l.w.shape}")


def mlp_forward(params: MlpParams, inputs: np.ndarray):
    """Forward pass. Returns (outputs, cache) where the cache holds the
    per-layer activations needed for an exact backward pass."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.in_dim:
        raise ShapeMismatch(f"input dim {x.shape[1]} != {params.in_dim}")
    activations = [x]
    n = len(params.layers)
    for i, layer in enumerate(params.layers):
        z = activations[-1] @ layer.w + layer.b
        a = z if i == n - 1 else np.tanh(z)
        activations.append(a)
    return activations[-1], (params, activations)


def mlp_backward(cache, upstream: np.ndarray) -> tuple[Layer, ...]:
    """Exact reverse-mode gradients of sum(outputs * upstream) w.r.t. params."""
    params, activations = cache
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != activations[-1].shape:
        raise ShapeMismatch(f"upstream {up.shape} vs outputs {activations[-1].shape}")
    grads = [None] * len(params.layers)
    delta = up
    for i in range(len(params.layers) - 1, -1, -1):
        a_in = activations[i]
        grads[i] = Layer(a_in.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ params.layers[i].w.T) * (1.0 - activations[i] ** 2)
    return tuple(grads)


def sgd_step(params: MlpParams, grads, stepsize: float) -> MlpParams:
    _check_grads(params, grads)
    return MlpParams(tuple(
        Layer(l.w - stepsize * g.w, l.b - stepsize * g.b)
        for l, g in zip(params.layers, grads)))


def adam_step(params: MlpParams, grads, state: AdamState, stepsize: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              l2_coeff: float = 0.0):
    """Bias-corrected Adam; an L2 term l2_coeff * theta is added to the
    gradient before the moment updates."""
    _check_grads(params, grads)
    t = state.t + 1
    new_layers, new_m, new_v = [], [], []
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for l, g, m, v in zip(params.layers, grads, state.m, state.v):
        gw = g.w + l2_coeff * l.w
        gb = g.b + l2_coeff * l.b
        mw = beta1 * m.w + (1 - beta1) * gw
        mb = beta1 * m.b + (1 - beta1) * gb
        vw = beta2 * v.w + (1 - beta2) * gw ** 2
        vb = beta2 * v.b + (1 - beta2) * gb ** 2
        new_layers.append(Layer(
            l.w - stepsize * (mw / c1) / (np.sqrt(vw / c2) + eps),
            l.b - stepsize * (mb / c1) / (np.sqrt(vb / c2) + eps)))
        new_m.append(Layer(mw, mb))
        new_v.append(Layer(vw, vb))
    return MlpParams(tuple(new_layers)), AdamState(tuple(new_m), tuple(new_v), t)


def finite_diff_grad(loss_fn, params: MlpParams, epsilon: float) -> tuple[Layer, ...]:
    """Central differences per coordinate; the independent gradient oracle."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")

    def perturbed(layer_idx, attr, flat_idx, delta):
        layers = []
        for i, l in enumerate(params.layers):
            w, b = l.w.copy(), l.b.copy()
            if i == layer_idx:
                target = w if attr == "w" else b
                target.flat[flat_idx] += delta
            layers.append(Layer(w, b))
        return MlpParams(tuple(layers))

    grads = []
    for i, l in enumerate(params.layers):
        gw = np.zeros_like(l.w)
        gb = np.zeros_like(l.b)
        for j in range(l.w.size):
            hi = loss_fn(perturbed(i, "w", j, epsilon))
            lo = loss_fn(perturbed(i, "w", j, -epsilon))
            gw.flat[j] = (hi - lo) / (2 * epsilon)
        for j in range(l.b.size):
            hi = loss_fn(perturbed(i, "b", j, epsilon))
            lo = loss_fn(perturbed(i, "b", j, -epsilon))
            gb.flat[j] = (hi - lo) / (2 * epsilon)
        grads.append(Layer(gw, gb))
    return tuple(grads)


def flatten_layers(layers) -> np.ndarray:
    parts = []
    for l in layers:
        parts.append(l.w.ravel())
        parts.append(l.b.ravel())
    return np.concatenate(parts)


def flatten_params(params: MlpParams) -> np.ndarray:
    return flatten_layers(params.layers)


def unflatten_params(template: MlpParams, vec: np.ndarray) -> MlpParams:
    if vec.size != template.size():
        raise ShapeMismatch(f"vector size {vec.size} != {template.size()}")
    layers, pos = [], 0
    for l in template.layers:
        w = vec[pos:pos + l.w.size].reshape(l.w.shape).copy()
        pos += l.w.size
        b = vec[pos:pos + l.b.size].copy()
        pos += l.b.size
        layers.append(Layer(w, b))
    return MlpParams(tuple(layers))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax, stabilized by subtracting the row max."""
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def scale_grads(grads, factor: float) -> tuple[Layer, ...]:
    return tuple(Layer(g.w * factor, g.b * factor) for g in grads)


def add_grads(a, b) -> tuple[Layer, ...]:
    return tuple(Layer(x.w + y.w, x.b + y.b) for x, y in zip(a, b))


def mean_grads(grad_sets) -> tuple[Layer, ...]:
    grad_sets = list(grad_sets)
    total = grad_sets[0]
    for g in grad_sets[1:]:
        total = add_grads(total, g)
    return scale_grads(total, 1.0 / len(grad_sets))


# -- weight checkpoints -------------------------------------------------------

def params_to_bytes(params: MlpParams) -> bytes:
    """Checkpoint encoding: layer dims plus row-major float64 data, wrapped
    in the runtime's binary framing."""
    body = bytearray(struct.pack("<I", len(params.layers)))
    for l in params.layers:
        body += struct.pack("<II", l.w.shape[0], l.w.shape[1])
        body += np.ascontiguousarray(l.w, dtype="<f8").tobytes()
        body += np.ascontiguousarray(l.b, dtype="<f8").tobytes()
    return framing.HEADER.pack(len(body), framing.TAG_MLP) + bytes(body)


def params_from_bytes(data: bytes) -> MlpParams:
    payload, tag = framing._split(data)
    if tag != framing.TAG_MLP:
        raise ShapeMismatch(f"not a weight checkpoint (tag {tag})")
    (n_layers,) = struct.unpack_from("<I", payload, 0)
    pos = 4
    layers = []
    for _ in range(n_layers):
        rows, cols = struct.unpack_from("<II", payload, pos)
        pos += 8
        w = np.frombuffer(payload, dtype="<f8", count=rows * cols,
                          offset=pos).reshape(rows, cols).copy()
        pos += rows * cols * 8
        b = np.frombuffer(payload, dtype="<f8", count=cols, offset=pos).copy()
        pos += cols * 8
        layers.append(Layer(w, b))
    return MlpParams(tuple(layers))


def save_params(path: str, params: MlpParams) -> None:
    with open(path, "wb") as f:
        f.write(params_to_bytes(params))


def load_params(path: str) -> MlpParams:
    with open(path, "rb") as f:
        return params_from_bytes(f.read())
