"""Minimal feed-forward network machinery sized for fixed small MLPs.

Forward pass, exact reverse-mode gradients, bias-corrected Adam updates, and
a central-difference gradient checker.  Everything is plain float64 numpy;
inputs may be single vectors (shape (d,)) or row batches (shape (n, d)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigurationError

ACTIVATIONS = ("tanh", "relu", "sigmoid", "linear")


class NonFiniteError(ArithmeticError):
    """Gradients or parameters stopped being finite."""


def _apply(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        # |z| capped at 60 where the sigmoid is already saturated, so the
        # exp cannot overflow in float32
        return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))
    if name == "linear":
        return z
    raise ConfigurationError(f"unknown activation {name!r}")


def _grad_from_output(name: str, a: np.ndarray) -> np.ndarray:
    # derivative of the activation expressed through its own output
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (a > 0.0).astype(float)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "linear":
        return np.ones_like(a)
    raise ConfigurationError(f"unknown activation {name!r}")


@dataclass
class Layer:
    w: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)
    activation: str

    def __post_init__(self):
        dtype = self.w.dtype if getattr(self.w, "dtype", None) in (np.float32, np.float64) else np.float64
        self.w = np.asarray(self.w, dtype=dtype)
        self.b = np.asarray(self.b, dtype=dtype).reshape(-1)
        if self.w.ndim != 2 or self.w.shape[1] != self.b.shape[0]:
            raise ConfigurationError(
                f"layer shape mismatch: w {self.w.shape}, b {self.b.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")


@dataclass
class Mlp:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("Mlp needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.w.shape[1] != nxt.w.shape[0]:
                raise ConfigurationError(
                    f"adjacent layer dims do not chain: {prev.w.shape} -> {nxt.w.shape}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].w.shape[1]

    @property
    def dtype(self):
        return self.layers[0].w.dtype

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.w.copy(), l.b.copy(), l.activation) for l in self.layers])

    def n_params(self) -> int:
        return sum(l.w.size + l.b.size for l in self.layers)

    def is_finite(self) -> bool:
        return all(
            np.all(np.isfinite(l.w)) and np.all(np.isfinite(l.b)) for l in self.layers
        )


def mlp(dims: list[int], activations: list[str], seed: int = 0, dtype=np.float64) -> Mlp:
    """Build an MLP with weights uniform in +/- sqrt(1/fan_in), zero biases.

    float32 storage halves the memory traffic of training on small machines;
    gradient checking always runs its math in float64 either way.
    """
    if len(activations) != len(dims) - 1:
        raise ConfigurationError("need one activation per weight layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims, dims[1:], activations):
        bound = math.sqrt(1.0 / fan_in)
        layers.append(
            Layer(
                rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype),
                np.zeros(fan_out, dtype=dtype),
                act,
            )
        )
    return Mlp(layers)


def _as_batch(x: np.ndarray, dim: int, dtype=np.float64) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x)
    if arr.dtype != dtype:
        arr = arr.astype(dtype)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ConfigurationError(f"input shape {arr.shape} does not match dim {dim}")
    return arr, single


def forward_trace(net: Mlp, x: np.ndarray) -> list[np.ndarray]:
    """All post-activation values, starting with the input batch itself."""
    a, _ = _as_batch(x, net.input_dim, net.dtype)
    trace = [a]
    for layer in net.layers:
        a = _apply(layer.activation, a @ layer.w + layer.b)
        trace.append(a)
    return trace


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Network output; (d,) input gives (out,) output, (n, d) gives (n, out)."""
    a, single = _as_batch(x, net.input_dim, net.dtype)
    for layer in net.layers:
        a = _apply(layer.activation, a @ layer.w + layer.b)
    return a[0] if single else a


Grads = list  # per layer: (dw, db), shaped like the layer parameters


def backward_from_trace(
    net: Mlp, trace: list[np.ndarray], output_grad: np.ndarray, pre_activation: bool = False
) -> Grads:
    """Reverse-mode gradients reusing the activations of a forward_trace call.

    With `pre_activation=True` the gradient is taken with respect to the last
    layer's pre-activation instead of its output, for losses fused with the
    output nonlinearity (cross-entropy with a sigmoid head stays exact where
    the separate sigmoid derivative would underflow).
    """
    g = np.asarray(output_grad)
    if g.dtype != net.dtype:
        g = g.astype(net.dtype)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != trace[-1].shape:
        raise ConfigurationError(
            f"output_grad shape {g.shape} does not match output {trace[-1].shape}"
        )
    grads: Grads = [None] * len(net.layers)
    delta = g
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if not (pre_activation and i == len(net.layers) - 1):
            delta = delta * _grad_from_output(layer.activation, trace[i + 1])
        grads[i] = (trace[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = delta @ layer.w.T
    return grads


def backward(net: Mlp, x: np.ndarray, output_grad: np.ndarray) -> Grads:
    """Gradients of sum(output * output_grad) with respect to every parameter."""
    return backward_from_trace(net, forward_trace(net, x), output_grad)


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators shaped like one network's parameters."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Grads = field(default_factory=list)
    v: Grads = field(default_factory=list)
    scratch: Grads = field(default_factory=list)  # update workspace, not state

    @classmethod
    def for_net(cls, net: Mlp, lr: float) -> "AdamState":
        state = cls(lr=lr)
        state.m = [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in net.layers]
        state.v = [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in net.layers]
        state.scratch = [(np.empty_like(l.w), np.empty_like(l.b)) for l in net.layers]
        return state


def _adam_update(param, g, m, v, s, state: AdamState, c1: float, c2: float) -> None:
    # fused in-place update; s is scratch shaped like param
    np.multiply(g, 1.0 - state.beta1, out=s)
    m *= state.beta1
    m += s
    np.multiply(g, g, out=s)
    s *= 1.0 - state.beta2
    v *= state.beta2
    v += s
    np.divide(v, c2, out=s)
    np.sqrt(s, out=s)
    s += state.eps
    np.divide(m, s, out=s)
    s *= state.lr / c1
    param -= s


def adam_step(net: Mlp, grads: Grads, state: AdamState) -> tuple[Mlp, AdamState]:
    """One in-place Adam update.  Non-finite gradients skip the update and raise."""
    if len(grads) != len(net.layers):
        raise ConfigurationError("gradient/layer count mismatch")
    for (gw, gb), layer in zip(grads, net.layers):
        if gw.shape != layer.w.shape or gb.shape != layer.b.shape:
            raise ConfigurationError("gradient shape mismatch")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NonFiniteError("non-finite gradient, update skipped")

    if not state.scratch:
        state.scratch = [(np.empty_like(l.w), np.empty_like(l.b)) for l in net.layers]
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, ((gw, gb), layer) in enumerate(zip(grads, net.layers)):
        _adam_update(layer.w, gw, state.m[i][0], state.v[i][0], state.scratch[i][0], state, c1, c2)
        _adam_update(layer.b, gb, state.m[i][1], state.v[i][1], state.scratch[i][1], state, c1, c2)
    return net, state


def clip_grad_norm(grads: Grads, max_norm: float, extra: float = 0.0) -> tuple[Grads, float]:
    """Scale gradients so their joint global norm is at most max_norm.

    `extra` folds a scalar parameter's gradient into the norm; the returned
    factor applies to it as well.  Returns (scaled grads, scale factor).
    """
    total = extra * extra
    for gw, gb in grads:
        total += float((gw * gw).sum()) + float((gb * gb).sum())
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return grads, 1.0
    factor = max_norm / norm
    return [(gw * factor, gb * factor) for gw, gb in grads], factor


@dataclass
class ScalarAdam:
    """Adam for a single scalar parameter (the Gaussian head's log_std)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: float = 0.0
    v: float = 0.0

    def step(self, value: float, grad: float) -> float:
        if not math.isfinite(grad):
            raise NonFiniteError("non-finite scalar gradient, update skipped")
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.step_count)
        vhat = self.v / (1 - self.beta2**self.step_count)
        return value - self.lr * mhat / (math.sqrt(vhat) + self.eps)


@dataclass
class GaussianHead:
    """Deterministic mean network plus one shared learnable log standard deviation."""

    mean_net: Mlp
    log_std: float = -1.0

    @property
    def std(self) -> float:
        return math.exp(self.log_std)

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> float:
        mean = float(forward(self.mean_net, x)[0])
        return mean + self.std * float(rng.standard_normal())

    @staticmethod
    def log_prob_parts(mean, log_std: float, y):
        """Log density of y under N(mean, exp(log_std)^2); vectorized."""
        z = (np.asarray(y) - np.asarray(mean)) / math.exp(log_std)
        return -0.5 * z * z - log_std - 0.5 * math.log(2.0 * math.pi)


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    n_excluded: int  # coordinates whose perturbation crossed a ReLU kink


def _relu_pattern(net: Mlp, x: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Scalar probe loss sum(output) plus the ReLU on/off masks along the way."""
    a, _ = _as_batch(x, net.input_dim)
    masks = []
    for layer in net.layers:
        a = _apply(layer.activation, a @ layer.w + layer.b)
        if layer.activation == "relu":
            masks.append(a > 0.0)
    return float(a.sum()), masks


def grad_check(
    net: Mlp,
    x: np.ndarray,
    h: float = 1e-5,
    max_coords: int | None = 400,
    seed: int = 0,
) -> GradCheckResult:
    """Compare backward() against central finite differences of sum(output).

    Checks every parameter coordinate, or a random sample of `max_coords` of
    them for large nets.  Coordinates whose +/-h evaluations land on different
    ReLU activity patterns straddle a kink where the derivative is undefined;
    they are excluded from the error and reported separately.  Relative error
    uses a 1e-6 floor in the denominator so roundoff on near-zero gradients
    does not register as disagreement.  The check always runs in float64
    (central differences at h=1e-5 are meaningless in single precision).
    """
    if h <= 0:
        raise ConfigurationError("h must be positive")
    if net.dtype != np.float64:
        net = Mlp(
            [Layer(l.w.astype(np.float64), l.b.astype(np.float64), l.activation)
             for l in net.layers]
        )
    analytic = backward(net, x, np.ones((1, net.output_dim)))

    flat: list[tuple[int, int, tuple]] = []  # (layer, 0 for w / 1 for b, index)
    for li, layer in enumerate(net.layers):
        for idx in np.ndindex(layer.w.shape):
            flat.append((li, 0, idx))
        for idx in np.ndindex(layer.b.shape):
            flat.append((li, 1, idx))
    if max_coords is not None and len(flat) > max_coords:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(flat), size=max_coords, replace=False)
        flat = [flat[i] for i in picks]

    worst = 0.0
    excluded = 0
    for li, which, idx in flat:
        arr = net.layers[li].w if which == 0 else net.layers[li].b
        orig = arr[idx]
        arr[idx] = orig + h
        f_plus, mask_plus = _relu_pattern(net, x)
        arr[idx] = orig - h
        f_minus, mask_minus = _relu_pattern(net, x)
        arr[idx] = orig

        if any(not np.array_equal(a, b) for a, b in zip(mask_plus, mask_minus)):
            excluded += 1
            continue
        numeric = (f_plus - f_minus) / (2.0 * h)
        ana = analytic[li][which][idx]
        rel = abs(numeric - ana) / max(abs(numeric), abs(ana), 1e-6)
        worst = max(worst, rel)
    return GradCheckResult(worst, len(flat) - excluded, excluded)
