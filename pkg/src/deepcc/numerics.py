"""Dense MLP machinery: forward/backward passes, Adam, seeded RNG, gradient checks.

All values are float64 and all matrices are row-major with instances as rows.
Gradients are hand-derived per loss; there is no autodiff graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, NumericError

Array = np.ndarray

RELU = "relu"
LINEAR = "linear"


def as_matrix(values) -> Array:
    """Coerce to a contiguous 2-D float64 array."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def check_finite(name: str, arr: Array) -> Array:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator with a platform-stable stream."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """n independent, reproducible child generators derived from one seed."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class Layer:
    """One affine layer. weight is (out, in); bias is (out,).

    activation applies to this layer's output: "relu" or "linear".
    """

    weight: Array
    bias: Array
    activation: str = RELU

    def __post_init__(self):
        self.weight = as_matrix(self.weight)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(-1)
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} does not match weight rows {self.weight.shape[0]}"
            )
        if self.activation not in (RELU, LINEAR):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_width(self) -> int:
        return self.weight.shape[1]

    @property
    def out_width(self) -> int:
        return self.weight.shape[0]


@dataclass
class MlpParams:
    """A rectifier MLP: by construction, ReLU on internal layers, identity on the last."""

    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an MLP needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].in_width != self.layers[i - 1].out_width:
                raise ValueError(
                    f"layer {i} expects input width {self.layers[i].in_width} "
                    f"but layer {i - 1} outputs {self.layers[i - 1].out_width}"
                )

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].in_width] + [l.out_width for l in self.layers]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


def make_mlp(dims: list[int], rng: np.random.Generator, activations: list[str] | None = None) -> MlpParams:
    """Glorot-uniform MLP over the given widths; ReLU everywhere but the last layer."""
    if len(dims) < 2:
        raise ValueError("dims must list at least input and output widths")
    if activations is None:
        activations = [RELU] * (len(dims) - 2) + [LINEAR]
    if len(activations) != len(dims) - 1:
        raise ValueError("one activation per layer required")
    layers = []
    for i, act in enumerate(activations):
        fan_in, fan_out = dims[i], dims[i + 1]
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpParams(layers)


@dataclass
class ForwardStack:
    """Everything mlp_backward needs: the input plus per-layer pre/post activations."""

    params: MlpParams
    x: Array
    pre: list[Array] = field(default_factory=list)
    post: list[Array] = field(default_factory=list)

    @property
    def output(self) -> Array:
        return self.post[-1]


def mlp_forward(params: MlpParams, X) -> ForwardStack:
    """Run the MLP on a batch (rows are instances) and retain the activation stack."""
    X = as_matrix(X)
    if X.shape[1] != params.layers[0].in_width:
        raise ValueError(
            f"input width {X.shape[1]} does not match layer 0 input width "
            f"{params.layers[0].in_width}"
        )
    stack = ForwardStack(params=params, x=X)
    a = X
    for i, layer in enumerate(params.layers):
        pre = a @ layer.weight.T + layer.bias
        post = np.maximum(pre, 0.0) if layer.activation == RELU else pre
        stack.pre.append(pre)
        stack.post.append(post)
        a = post
    check_finite("mlp_forward output", a)
    return stack


def mlp_backward(params: MlpParams, stack: ForwardStack, grad_output) -> tuple[list[Layer], Array]:
    """Backpropagate grad_output through the stack.

    Returns per-layer parameter gradients (same shapes as params) and the
    gradient with respect to the input batch. The ReLU subgradient at 0 is 0.
    """
    if stack.params is not params:
        raise ConsistencyError("forward stack was built for different parameters")
    grad_output = as_matrix(grad_output)
    out = stack.post[-1]
    if grad_output.shape != out.shape:
        raise ValueError(
            f"grad_output shape {grad_output.shape} does not match output shape {out.shape}"
        )
    grads: list[Layer] = [None] * len(params.layers)  # type: ignore[list-item]
    delta = grad_output
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        if layer.activation == RELU:
            delta = np.where(stack.pre[i] > 0.0, delta, 0.0)
        a_prev = stack.x if i == 0 else stack.post[i - 1]
        grads[i] = Layer(delta.T @ a_prev, delta.sum(axis=0), layer.activation)
        delta = delta @ layer.weight
    return grads, delta


def params_to_arrays(params: MlpParams) -> list[Array]:
    out: list[Array] = []
    for l in params.layers:
        out.append(l.weight)
        out.append(l.bias)
    return out


def arrays_to_params(arrays: list[Array], template: MlpParams) -> MlpParams:
    if len(arrays) != 2 * len(template.layers):
        raise ValueError("array count does not match the template layer count")
    layers = []
    for i, l in enumerate(template.layers):
        w, b = arrays[2 * i], arrays[2 * i + 1]
        if w.shape != l.weight.shape or b.shape != l.bias.shape:
            raise ValueError(f"array shapes for layer {i} do not match the template")
        layers.append(Layer(w, b, l.activation))
    return MlpParams(layers)


def grads_to_arrays(grads: list[Layer]) -> list[Array]:
    out: list[Array] = []
    for g in grads:
        out.append(g.weight)
        out.append(g.bias)
    return out


@dataclass
class AdamState:
    """Adam moments for a flat list of parameter arrays."""

    step: int
    first_moment: list[Array]
    second_moment: list[Array]
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 0.001


def adam_init(params: list[Array], learning_rate: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        step=0,
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        learning_rate=learning_rate,
    )


def adam_step(state: AdamState, params: list[Array], grads: list[Array]) -> tuple[list[Array], AdamState]:
    """One bias-corrected Adam update. Returns new parameters and state."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("params, grads and moments must have matching lengths")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; update step aborted")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * g * g
        m_hat = m2 / (1.0 - b1 ** t)
        v_hat = v2 / (1.0 - b2 ** t)
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_m.append(m2)
        new_v.append(v2)
    new_state = AdamState(t, new_m, new_v, b1, b2, state.epsilon, state.learning_rate)
    return new_params, new_state


def finite_diff_grad(loss_fn, params, h: float = 1e-5):
    """Central-difference gradient of loss_fn at params.

    params may be a single array or a list of arrays; the result mirrors the
    structure. loss_fn must be deterministic.
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    single = isinstance(params, np.ndarray)
    plist = [params] if single else list(params)

    def eval_at(pl):
        val = float(loss_fn(pl[0] if single else pl))
        if not math.isfinite(val):
            raise NumericError("loss is non-finite at a perturbed point")
        return val

    grads = [np.zeros_like(p, dtype=np.float64) for p in plist]
    for gi, p in enumerate(plist):
        flat = p.reshape(-1)
        gflat = grads[gi].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = eval_at(plist)
            flat[j] = orig - h
            down = eval_at(plist)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * h)
    return grads[0] if single else grads
