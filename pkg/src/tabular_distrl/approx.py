"""Small critic networks with hand-written forward/backward passes and Adam.

Parameters live in one flat float vector; the per-layer arrays are views into
it, so optimizers and finite-difference checks can work on the flat vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DAIF_OFFSET = 10.0


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dim: int
    output_dim: int

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or self.hidden_dim < 0:
            raise ValueError(f"invalid layer sizes {self}")

    @property
    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        if self.hidden_dim == 0:
            return [("W", (self.input_dim, self.output_dim)), ("b", (self.output_dim,))]
        return [
            ("W1", (self.input_dim, self.hidden_dim)),
            ("b1", (self.hidden_dim,)),
            ("W2", (self.hidden_dim, self.output_dim)),
            ("b2", (self.output_dim,)),
        ]

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes)


class MlpParams:
    def __init__(self, spec: MlpSpec, flat: np.ndarray | None = None):
        self.spec = spec
        self.flat = np.zeros(spec.num_params) if flat is None else np.asarray(flat, dtype=float)
        if self.flat.shape != (spec.num_params,):
            raise ValueError(f"expected {spec.num_params} parameters, got {self.flat.shape}")
        self.views = _split(spec, self.flat)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.views[name]

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, self.flat.copy())


def _split(spec: MlpSpec, flat: np.ndarray) -> dict[str, np.ndarray]:
    views, start = {}, 0
    for name, shape in spec.shapes:
        size = int(np.prod(shape))
        views[name] = flat[start : start + size].reshape(shape)
        start += size
    return views


def init_params(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    params = MlpParams(spec)
    for name, shape in spec.shapes:
        if name.startswith("W"):
            bound = 1.0 / np.sqrt(shape[0])
            params[name][...] = rng.uniform(-bound, bound, size=shape)
    return params


@dataclass(frozen=True)
class OneHotBatch:
    """Batch of (state, action, tau) inputs in index form.

    Equivalent to stacking ``encode_input`` rows but never materializes the
    one-hot matrix.
    """

    states: np.ndarray
    actions: np.ndarray
    taus: np.ndarray
    num_states: int
    num_actions: int

    @property
    def input_dim(self) -> int:
        return self.num_states + self.num_actions + 1

    def dense(self) -> np.ndarray:
        out = np.zeros((len(self.taus), self.input_dim))
        rows = np.arange(len(self.taus))
        out[rows, self.states] = 1.0
        out[rows, self.num_states + self.actions] = 1.0
        out[:, -1] = self.taus
        return out


def encode_input(state: int, action: int, tau: float, num_states: int, num_actions: int) -> np.ndarray:
    if not (0 <= state < num_states and 0 <= action < num_actions):
        raise ValueError("state or action index out of range")
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    vec = np.zeros(num_states + num_actions + 1)
    vec[state] = 1.0
    vec[num_states + action] = 1.0
    vec[-1] = tau
    return vec


@dataclass
class ForwardCache:
    inputs: np.ndarray | OneHotBatch
    pre: np.ndarray | None = None
    hidden: np.ndarray | None = None


def _first_layer(W: np.ndarray, b: np.ndarray, inputs) -> np.ndarray:
    if isinstance(inputs, OneHotBatch):
        ns = inputs.num_states
        return W[inputs.states] + W[ns + inputs.actions] + inputs.taus[:, None] * W[-1] + b
    return inputs @ W + b


def forward(params: MlpParams, inputs) -> tuple[np.ndarray, ForwardCache]:
    """Outputs of shape (batch, output_dim) plus the activations needed by ``backward``."""
    spec = params.spec
    dim = inputs.input_dim if isinstance(inputs, OneHotBatch) else np.shape(inputs)[-1]
    if dim != spec.input_dim:
        raise ValueError(f"input width {dim} does not match spec {spec.input_dim}")
    if not isinstance(inputs, OneHotBatch):
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if spec.hidden_dim == 0:
        return _first_layer(params["W"], params["b"], inputs), ForwardCache(inputs)
    pre = _first_layer(params["W1"], params["b1"], inputs)
    hidden = np.maximum(pre, 0.0)
    out = hidden @ params["W2"] + params["b2"]
    return out, ForwardCache(inputs, pre, hidden)


def _first_layer_grad(grad_W: np.ndarray, inputs, delta: np.ndarray) -> None:
    if isinstance(inputs, OneHotBatch):
        ns = inputs.num_states
        np.add.at(grad_W, inputs.states, delta)
        np.add.at(grad_W, ns + inputs.actions, delta)
        grad_W[-1] += inputs.taus @ delta
    else:
        grad_W += inputs.T @ delta


def backward(params: MlpParams, cache: ForwardCache, grad_out: np.ndarray) -> np.ndarray:
    """Flat gradient of sum(grad_out * forward(params, inputs)) w.r.t. the parameters."""
    spec = params.spec
    grad = MlpParams(spec)
    grad_out = np.atleast_2d(grad_out)
    if spec.hidden_dim == 0:
        _first_layer_grad(grad["W"], cache.inputs, grad_out)
        grad["b"][...] = grad_out.sum(axis=0)
        return grad.flat
    grad["W2"][...] = cache.hidden.T @ grad_out
    grad["b2"][...] = grad_out.sum(axis=0)
    delta = (grad_out @ params["W2"].T) * (cache.pre > 0)
    _first_layer_grad(grad["W1"], cache.inputs, delta)
    grad["b1"][...] = delta.sum(axis=0)
    return grad.flat


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0


def adam_step(params: MlpParams, grads: np.ndarray, state: AdamState) -> MlpParams:
    """Bias-corrected Adam update, applied in place to ``params.flat``."""
    if grads.shape != params.flat.shape:
        raise ValueError("gradient shape does not match parameters")
    if state.m is None:
        state.m = np.zeros_like(params.flat)
        state.v = np.zeros_like(params.flat)
    state.t += 1
    state.m *= state.beta1
    state.m += (1 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1 - state.beta2) * grads * grads
    m_hat = state.m / (1 - state.beta1**state.t)
    v_hat = state.v / (1 - state.beta2**state.t)
    params.flat -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-np.logaddexp(0.0, -x))


def head_transform_daif(raw, offset: float = DAIF_OFFSET):
    """Map raw network outputs (..., 3) to (mu, alpha, beta) with alpha, beta > offset."""
    raw = np.asarray(raw, dtype=float)
    return raw[..., 0], offset + softplus(raw[..., 1]), offset + softplus(raw[..., 2])


@dataclass
class QuantileCritic:
    """Network, optimizer state and head variant ("iqql" or "daif")."""

    spec: MlpSpec
    params: MlpParams
    opt: AdamState = field(default_factory=AdamState)
    variant: str = "iqql"
    num_states: int = 0
    num_actions: int = 0
    daif_offset: float = DAIF_OFFSET

    @classmethod
    def create(
        cls,
        variant: str,
        num_states: int,
        num_actions: int,
        hidden_dim: int,
        rng: np.random.Generator,
        lr: float = 1e-3,
        daif_offset: float = DAIF_OFFSET,
    ) -> "QuantileCritic":
        if variant not in ("iqql", "daif"):
            raise ValueError(f"unknown critic variant {variant!r}")
        spec = MlpSpec(num_states + num_actions + 1, hidden_dim, 1 if variant == "iqql" else 3)
        return cls(spec, init_params(spec, rng), AdamState(lr=lr), variant, num_states, num_actions, daif_offset)

    def batch(self, states, actions, taus) -> OneHotBatch:
        return OneHotBatch(
            np.asarray(states, dtype=int),
            np.asarray(actions, dtype=int),
            np.asarray(taus, dtype=float),
            self.num_states,
            self.num_actions,
        )

    def value_grid(self, states, taus) -> np.ndarray:
        """Location head for every (state in ``states``, action, tau in ``taus``): shape (S, A, K)."""
        states = np.asarray(states, dtype=int)
        taus = np.asarray(taus, dtype=float)
        p, ns = self.params, self.num_states
        W = p["W"] if self.spec.hidden_dim == 0 else p["W1"]
        b = p["b"] if self.spec.hidden_dim == 0 else p["b1"]
        pre = (
            W[states][:, None, None, :]
            + W[ns : ns + self.num_actions][None, :, None, :]
            + (taus[:, None] * W[-1])[None, None, :, :]
            + b
        )
        if self.spec.hidden_dim == 0:
            return pre[..., 0]
        return np.maximum(pre, 0.0) @ p["W2"][:, 0] + p["b2"][0]

    def value(self, states, actions, taus) -> np.ndarray:
        """Location head: the quantile value (IQQL) or mu (DAIF)."""
        out, _ = forward(self.params, self.batch(states, actions, taus))
        return out[:, 0]
