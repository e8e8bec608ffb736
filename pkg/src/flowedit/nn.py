"""MLP forward/backward, layer normalization, Adam, and Polyak blending.

Everything is float64 and deterministic: identical inputs give bit-identical
outputs, and all stochastic initialization takes an explicit generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import NonFiniteError

LAYER_NORM_EPS = 1e-5

_ACTIVATIONS = {
    "relu": ag.relu,
    "tanh": ag.tanh,
    "linear": lambda x: x,
}


class ShapeError(ValueError):
    pass


@dataclass
class Layer:
    w: object  # (n_in, n_out) ndarray, or Node when traced
    b: object  # (n_out,)
    ln_gain: object | None = None
    ln_offset: object | None = None


@dataclass
class MlpParams:
    layers: list
    activations: tuple  # one of "relu" | "tanh" | "linear" per layer


def init_mlp(
    rng: np.random.Generator,
    sizes: list[int],
    activation: str = "relu",
    layer_norm: bool = False,
    final_scale: float = 1.0,
) -> MlpParams:
    """He-style init; hidden layers use `activation`, the last is linear.

    `layer_norm=True` adds a learnable normalization after each hidden
    linear map (the critic configuration).
    """
    layers = []
    acts = []
    n = len(sizes) - 1
    for i in range(n):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        last = i == n - 1
        scale = np.sqrt(2.0 / fan_in)
        w = rng.standard_normal((fan_in, fan_out)) * scale
        if last:
            w *= final_scale
        b = np.zeros(fan_out)
        use_ln = layer_norm and not last
        layers.append(
            Layer(
                w=w,
                b=b,
                ln_gain=np.ones(fan_out) if use_ln else None,
                ln_offset=np.zeros(fan_out) if use_ln else None,
            )
        )
        acts.append("linear" if last else activation)
    return MlpParams(layers=layers, activations=tuple(acts))


def layer_norm(x, gain, offset, eps: float = LAYER_NORM_EPS):
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    mu = ag.mean_(x, axis=-1, keepdims=True)
    xc = ag.sub(x, mu)
    var = ag.mean_(ag.mul(xc, xc), axis=-1, keepdims=True)
    inv = ag.power_const(ag.add(var, eps), -0.5)
    xhat = ag.mul(xc, inv)
    return ag.add(ag.mul(xhat, gain), offset)


def _is_traced(params: MlpParams, x) -> bool:
    return ag.is_node(x) or any(ag.is_node(layer.w) for layer in params.layers)


def _forward_plain(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Inference path: identical math to the traced path, but with in-place
    updates (large float64 temporaries are expensive to allocate)."""
    h = x
    for i, (layer, act) in enumerate(zip(params.layers, params.activations)):
        if layer.w.shape[0] != h.shape[-1]:
            raise ShapeError(f"layer {i}: input width {h.shape[-1]} != expected {layer.w.shape[0]}")
        z = h @ layer.w
        z += layer.b
        if layer.ln_gain is not None:
            mu = z.mean(axis=-1, keepdims=True)
            z -= mu
            var = np.einsum("...i,...i->...", z, z)[..., None] / z.shape[-1]
            var += LAYER_NORM_EPS
            np.power(var, -0.5, out=var)
            z *= var
            z *= layer.ln_gain
            z += layer.ln_offset
        if act == "relu":
            np.maximum(z, 0.0, out=z)
        elif act == "tanh":
            np.tanh(z, out=z)
        h = z
    return h


def forward_mlp(params: MlpParams, x):
    """Forward pass; accepts (batch, n_in) or (n_in,), arrays or Nodes."""
    squeeze = False
    if ag.value_of(x).ndim == 1:
        x = ag.reshape(x, (1, -1))
        squeeze = True
    if not _is_traced(params, x):
        out = _forward_plain(params, np.asarray(ag.value_of(x), dtype=np.float64))
        if not np.all(np.isfinite(out)):
            raise NonFiniteError("non-finite MLP output")
        return out.reshape(-1) if squeeze else out
    h = x
    for i, (layer, act) in enumerate(zip(params.layers, params.activations)):
        want = ag.value_of(layer.w).shape[0]
        got = ag.value_of(h).shape[-1]
        if want != got:
            raise ShapeError(f"layer {i}: input width {got} != expected {want}")
        z = ag.add(ag.matmul(h, layer.w), layer.b)
        if layer.ln_gain is not None:
            z = layer_norm(z, layer.ln_gain, layer.ln_offset)
        h = _ACTIVATIONS[act](z)
    out_value = ag.value_of(h)
    if not np.all(np.isfinite(out_value)):
        raise NonFiniteError("non-finite MLP output")
    if squeeze:
        h = ag.reshape(h, (-1,))
    return h


def mlp_arrays(params: MlpParams) -> list[np.ndarray]:
    """Flatten to an ordered array list: per layer w, b, [ln_gain, ln_offset]."""
    out = []
    for layer in params.layers:
        out.append(ag.value_of(layer.w))
        out.append(ag.value_of(layer.b))
        if layer.ln_gain is not None:
            out.append(ag.value_of(layer.ln_gain))
            out.append(ag.value_of(layer.ln_offset))
    return out


def mlp_from_arrays(template: MlpParams, arrays: list[np.ndarray]) -> MlpParams:
    it = iter(arrays)
    layers = []
    for layer in template.layers:
        w = next(it)
        b = next(it)
        if layer.ln_gain is not None:
            g = next(it)
            o = next(it)
        else:
            g = o = None
        layers.append(Layer(w=w, b=b, ln_gain=g, ln_offset=o))
    return MlpParams(layers=layers, activations=template.activations)


def trace_mlp(params: MlpParams) -> tuple[MlpParams, list[ag.Node]]:
    """Wrap every parameter array as a tape leaf.

    Returns the traced params plus the leaves in mlp_arrays order, so
    gradients can be collected positionally.
    """
    leaves = []
    layers = []
    for layer in params.layers:
        w = ag.leaf(layer.w)
        b = ag.leaf(layer.b)
        leaves.extend([w, b])
        if layer.ln_gain is not None:
            g = ag.leaf(layer.ln_gain)
            o = ag.leaf(layer.ln_offset)
            leaves.extend([g, o])
        else:
            g = o = None
        layers.append(Layer(w=w, b=b, ln_gain=g, ln_offset=o))
    return MlpParams(layers=layers, activations=params.activations), leaves


def grad(loss_fn, params: MlpParams) -> list[np.ndarray]:
    """Reverse-mode gradients of a scalar loss w.r.t. MLP parameters.

    `loss_fn` receives the traced params and must return a scalar Node.
    Gradients come back in mlp_arrays order.
    """
    traced, leaves = trace_mlp(params)
    loss = loss_fn(traced)
    grads = ag.backward(loss)
    return [ag.grad_for(grads, leaf) for leaf in leaves]


def collect_grads(grads: dict, leaves: list[ag.Node]) -> list[np.ndarray]:
    return [ag.grad_for(grads, leaf) for leaf in leaves]


@dataclass
class AdamState:
    step: int
    m: list
    v: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(arrays: list[np.ndarray]) -> AdamState:
    return AdamState(
        step=0,
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
    )


def adam_step(
    state: AdamState, params: list[np.ndarray], grads: list[np.ndarray], lr: float
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update.  Non-finite gradients are rejected."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: params/grads/state length mismatch")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("adam_step: non-finite gradient rejected")
    t = state.step + 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    new_params, new_m, new_v = [], [], []
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * g * g
        update = (m2 / c1) / (np.sqrt(v2 / c2) + eps)
        new_params.append(p - lr * update)
        new_m.append(m2)
        new_v.append(v2)
    return new_params, AdamState(step=t, m=new_m, v=new_v, beta1=b1, beta2=b2, eps=eps)


def polyak_blend(target, online, tau: float):
    """target' = tau * online + (1 - tau) * target, element-exact.

    Accepts a single array or a list of arrays.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    if isinstance(target, (list, tuple)):
        if len(target) != len(online):
            raise ShapeError("polyak_blend: list length mismatch")
        return [polyak_blend(t, o, tau) for t, o in zip(target, online)]
    t = np.asarray(target, dtype=np.float64)
    o = np.asarray(online, dtype=np.float64)
    if t.shape != o.shape:
        raise ShapeError(f"polyak_blend: shape {t.shape} != {o.shape}")
    return tau * o + (1.0 - tau) * t


def polyak_mlp(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    blended = polyak_blend(mlp_arrays(target), mlp_arrays(online), tau)
    return mlp_from_arrays(target, blended)


def directional_derivative_fd(loss_fn, arrays: list[np.ndarray], direction: list[np.ndarray], h: float = 1e-6) -> float:
    """Central finite difference of loss along a direction in parameter space."""
    plus = [a + h * d for a, d in zip(arrays, direction)]
    minus = [a - h * d for a, d in zip(arrays, direction)]
    return (float(loss_fn(plus)) - float(loss_fn(minus))) / (2.0 * h)
