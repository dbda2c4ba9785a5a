"""Small deterministic numerical core.

Dense feedforward networks with hand-written backpropagation, an Adam
optimizer, a finite-difference gradient checker and seeded RNG helpers.
Everything runs in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericError, ShapeError

ACTIVATIONS = ("tanh", "relu", "identity")

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """PCG64 stream; identical draws for identical seeds on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def sub_seed(seed: int, stage: int) -> int:
    """Derive an independent 64-bit seed for a pipeline stage."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stage)])
    return int(ss.generate_state(1, np.uint64)[0])


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    return np.ones_like(z)


@dataclass
class DenseNet:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.layer_dims) < 2 or any(int(d) < 1 for d in self.layer_dims):
            raise ShapeError(f"bad layer dims {self.layer_dims}")
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.weights) != self.n_layers or len(self.biases) != self.n_layers:
            raise ShapeError("parameter count does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != expect or b.shape != (expect[0],):
                raise ShapeError(
                    f"layer {i}: weight {w.shape} / bias {b.shape}, expected {expect}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def d_out(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        """Parameters interleaved as [W0, b0, W1, b1, ...] (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def param_names(self) -> list[str]:
        names = []
        for i in range(self.n_layers):
            names += [f"layer {i} weights", f"layer {i} biases"]
        return names

    def copy(self) -> "DenseNet":
        return DenseNet(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    @classmethod
    def zeros(cls, layer_dims: Sequence[int], activation: str = "tanh") -> "DenseNet":
        dims = [int(d) for d in layer_dims]
        return cls(
            dims,
            [np.zeros((dims[i + 1], dims[i])) for i in range(len(dims) - 1)],
            [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)],
            activation,
        )

    @classmethod
    def init(cls, layer_dims: Sequence[int], rng: Rng, activation: str = "tanh") -> "DenseNet":
        """Glorot-uniform weights, zero biases."""
        dims = [int(d) for d in layer_dims]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(dims, weights, biases, activation)


def _as_batch(net: DenseNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.d_in:
        raise ShapeError(f"input has shape {x.shape}, net expects width {net.d_in}")
    return x, single


def _forward_cache(net: DenseNet, x: np.ndarray):
    zs, acts = [], [x]
    a = x
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if i == last else _act(net.activation, z)
        zs.append(z)
        acts.append(a)
    return zs, acts


def net_forward(net: DenseNet, x) -> np.ndarray:
    """Evaluate the net on a vector or on a batch of row vectors."""
    xb, single = _as_batch(net, x)
    _, acts = _forward_cache(net, xb)
    out = acts[-1]
    return out[0] if single else out


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def net_backward(net: DenseNet, x, grad_out) -> Gradients:
    """Gradients of sum_i <grad_out_i, net(x_i)> w.r.t. parameters and inputs.

    For a batch, parameter gradients are summed over rows and the input
    gradient keeps one row per sample.
    """
    xb, single = _as_batch(net, x)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (xb.shape[0], net.d_out):
        raise ShapeError(f"grad_out has shape {g.shape}, expected {(xb.shape[0], net.d_out)}")
    zs, acts = _forward_cache(net, xb)
    gw = [None] * net.n_layers
    gb = [None] * net.n_layers
    delta = g
    for i in range(net.n_layers - 1, -1, -1):
        if i != net.n_layers - 1:
            delta = delta * _act_grad(net.activation, zs[i], acts[i + 1])
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        delta = delta @ net.weights[i]
    return Gradients(gw, gb, delta[0] if single else delta)


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 1e-3, **kw) -> "AdamState":
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            lr=lr,
            **kw,
        )


def adam_step(
    state: AdamState,
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    names: Optional[Sequence[str]] = None,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("params, grads and optimizer state have different lengths")
    for i, (p, g, m) in enumerate(zip(params, grads, state.first_moment)):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"parameter {i}: shape {p.shape} vs grad {g.shape} vs state {m.shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names is not None else f"parameter {i}"
            raise NumericError(f"non-finite gradient in {label}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_stab)
    return list(params), state


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst: str
    tolerance: float
    checked: int = 0
    errors: dict = field(default_factory=dict)


def grad_check(
    net: DenseNet,
    x,
    probe: Callable[[np.ndarray], tuple[float, np.ndarray]],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    analytic: Optional[Gradients] = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare backprop gradients with central differences on every parameter.

    ``probe`` maps the net output to ``(loss, dloss/doutput)``. Relative error
    is ``|a - n| / max(|a|, |n|, floor)``. Passing ``analytic`` checks a
    previously captured gradient against the current parameters.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if analytic is None:
        _, gy = probe(net_forward(net, x))
        analytic = net_backward(net, x, gy)
    worst, worst_name, count = 0.0, "", 0
    per_param = {}
    for name, p, ga in zip(net.param_names(), net.params(), analytic.params()):
        flat = p.reshape(-1)
        gflat = ga.reshape(-1)
        local = 0.0
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            lp, _ = probe(net_forward(net, x))
            flat[j] = old - h
            lm, _ = probe(net_forward(net, x))
            flat[j] = old
            num = (lp - lm) / (2.0 * h)
            err = abs(gflat[j] - num) / max(abs(gflat[j]), abs(num), floor)
            count += 1
            local = max(local, err)
            if err > worst:
                worst, worst_name = err, f"{name}[{j}]"
        per_param[name] = local
    return GradCheckReport(worst <= tolerance, worst, worst_name, tolerance, count, per_param)
