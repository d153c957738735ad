"""Differentiable kernels for the two per-agent networks.

Everything here is plain float64 numpy over flat parameter vectors: an MLP
with tanh hidden layers and a softmax head (the action policy), and a
single-cell LSTM with a scalar linear head (the intrinsic reward). Analytic
gradients are written by hand and checked against central finite
differences in the test suite.

Parameters live in one contiguous float64 array per network; a layout
object maps named blocks (weight matrices, biases) to slices of it, so
gradient buffers are plain arrays congruent with the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NumericError, ProtocolError, ShapeError


@dataclass(frozen=True)
class _BlockSpec:
    name: str
    shape: tuple[int, ...]
    start: int
    stop: int
    init: str                     # "xavier" | "zero" | "one"
    fans: tuple[int, int] = (0, 0)

    @property
    def xavier_bound(self) -> float:
        fan_in, fan_out = self.fans
        return math.sqrt(6.0 / (fan_in + fan_out))


class _Layout:
    """Named blocks over one flat parameter vector."""

    def __init__(self, name: str, dims: Sequence[int]) -> None:
        self.name = name
        self.dims = tuple(dims)
        self.specs: list[_BlockSpec] = []
        self.n_params = 0

    def _add(self, name: str, shape: tuple[int, ...], init: str,
             fans: tuple[int, int] = (0, 0)) -> None:
        size = int(np.prod(shape))
        self.specs.append(_BlockSpec(name, shape, self.n_params,
                                     self.n_params + size, init, fans))
        self.n_params += size

    def view(self, flat: np.ndarray, name: str) -> np.ndarray:
        spec = next(s for s in self.specs if s.name == name)
        return flat[spec.start:spec.stop].reshape(spec.shape)

    def check(self, flat: np.ndarray) -> None:
        if flat.shape != (self.n_params,):
            raise ShapeError(f"{self.name}: expected {self.n_params} "
                             f"parameters, got array of shape {flat.shape}")


class MlpLayout(_Layout):
    """tanh MLP ending in a softmax over the joint actions."""

    def __init__(self, input_dim: int, hidden: Sequence[int] = (64, 64),
                 n_actions: int = 6) -> None:
        super().__init__("policy-mlp", (input_dim, *hidden, n_actions))
        self.input_dim = input_dim
        self.n_actions = n_actions
        for layer, (d_in, d_out) in enumerate(zip(self.dims, self.dims[1:])):
            self._add(f"W{layer}", (d_out, d_in), "xavier", (d_in, d_out))
            self._add(f"b{layer}", (d_out,), "zero")

    def weights(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.view(flat, f"W{i}"), self.view(flat, f"b{i}"))
                for i in range(len(self.dims) - 1)]


class LstmLayout(_Layout):
    """Single LSTM cell plus a scalar output head.

    Gate blocks are stacked in i, f, g, o order inside the (4H, .) matrices
    and the (4H,) bias; the forget-gate bias initializes to 1 to keep early
    memory open.
    """

    def __init__(self, input_dim: int, hidden: int = 128,
                 head_activation: str = "identity") -> None:
        super().__init__("intrinsic-lstm", (input_dim, hidden, 1))
        if head_activation not in ("identity", "tanh"):
            raise ShapeError(f"unknown head activation {head_activation!r}")
        self.input_dim = input_dim
        self.hidden = hidden
        self.head_activation = head_activation
        h = hidden
        self._add("Wx", (4 * h, input_dim), "xavier", (input_dim, h))
        self._add("Wh", (4 * h, h), "xavier", (h, h))
        self._add("b_i", (h,), "zero")
        self._add("b_f", (h,), "one")
        self._add("b_g", (h,), "zero")
        self._add("b_o", (h,), "zero")
        self._add("w_head", (h,), "xavier", (h, 1))
        self._add("b_head", (1,), "zero")

    def bias(self, flat: np.ndarray) -> np.ndarray:
        # the four bias blocks are contiguous by construction
        start = next(s.start for s in self.specs if s.name == "b_i")
        return flat[start:start + 4 * self.hidden]


def init_params(layout: _Layout, init_seed, scale: float = 1.0) -> np.ndarray:
    """Fan-balanced uniform weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(init_seed)
    flat = np.zeros(layout.n_params)
    for spec in layout.specs:
        if spec.init == "xavier":
            bound = scale * spec.xavier_bound
            flat[spec.start:spec.stop] = rng.uniform(
                -bound, bound, spec.stop - spec.start)
        elif spec.init == "one":
            flat[spec.start:spec.stop] = 1.0
    return flat


# -- policy MLP --------------------------------------------------------------

class MlpCache:
    __slots__ = ("token", "activations", "probs")

    def __init__(self, token, activations, probs) -> None:
        self.token = token
        self.activations = activations  # [input, hidden..., last hidden]
        self.probs = probs


def mlp_forward(layout: MlpLayout, flat: np.ndarray,
                x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """Action probabilities for one observation encoding.

    The softmax is evaluated with max-subtraction so logits far into the
    hundreds stay finite.
    """
    layout.check(flat)
    if x.shape != (layout.input_dim,):
        raise ShapeError(f"input shape {x.shape}, expected "
                         f"({layout.input_dim},)")
    if not np.isfinite(x).all():
        raise NumericError("non-finite network input")
    acts = [x]
    h = x
    pairs = layout.weights(flat)
    for W, b in pairs[:-1]:
        h = np.tanh(W @ h + b)
        acts.append(h)
    W, b = pairs[-1]
    logits = W @ h + b
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    return probs, MlpCache(flat, acts, probs)


def mlp_logprob_grad(layout: MlpLayout, flat: np.ndarray, cache: MlpCache,
                     action: int) -> np.ndarray:
    """Gradient of log pi(action | input) w.r.t. every parameter."""
    if cache.token is not flat:
        raise ProtocolError("cache does not belong to these parameters")
    if not 0 <= action < layout.n_actions:
        raise ShapeError(f"action index {action} out of range")
    grad = np.zeros(layout.n_params)
    d = -cache.probs.copy()
    d[action] += 1.0
    n_layers = len(layout.dims) - 1
    for layer in range(n_layers - 1, -1, -1):
        a_in = cache.activations[layer]
        np.outer(d, a_in, out=layout.view(grad, f"W{layer}"))
        layout.view(grad, f"b{layer}")[:] = d
        if layer > 0:
            W = layout.view(flat, f"W{layer}")
            d = (1.0 - a_in * a_in) * (W.T @ d)
    return grad


# -- intrinsic LSTM ----------------------------------------------------------

class LstmCache:
    __slots__ = ("token", "x", "h_prev", "c_prev", "i", "f", "g", "o",
                 "tanh_c", "h_new", "r")

    def __init__(self, token, x, h_prev, c_prev, i, f, g, o, tanh_c,
                 h_new, r) -> None:
        self.token = token
        self.x = x
        self.h_prev = h_prev
        self.c_prev = c_prev
        self.i = i
        self.f = f
        self.g = g
        self.o = o
        self.tanh_c = tanh_c
        self.h_new = h_new
        self.r = r


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_step(layout: LstmLayout, flat: np.ndarray, x: np.ndarray,
              h: np.ndarray, c: np.ndarray
              ) -> tuple[float, np.ndarray, np.ndarray, LstmCache]:
    """One recurrent step; returns (scalar output, h', c', cache)."""
    layout.check(flat)
    if x.shape != (layout.input_dim,):
        raise ShapeError(f"input shape {x.shape}, expected "
                         f"({layout.input_dim},)")
    hid = layout.hidden
    pre = layout.view(flat, "Wx") @ x + layout.view(flat, "Wh") @ h \
        + layout.bias(flat)
    i = _sigmoid(pre[:hid])
    f = _sigmoid(pre[hid:2 * hid])
    g = np.tanh(pre[2 * hid:3 * hid])
    o = _sigmoid(pre[3 * hid:])
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    z = float(layout.view(flat, "w_head") @ h_new
              + layout.view(flat, "b_head")[0])
    r = math.tanh(z) if layout.head_activation == "tanh" else z
    cache = LstmCache(flat, x, h, c, i, f, g, o, tanh_c, h_new, r)
    return r, h_new, c_new, cache


def lstm_bptt(layout: LstmLayout, flat: np.ndarray,
              caches: Sequence[LstmCache], upstream: Sequence[float],
              state_grad_in: Optional[tuple[np.ndarray, np.ndarray]] = None
              ) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Reverse-time gradient of sum_t upstream[t] * r[t] w.r.t. parameters.

    ``caches`` must be one contiguous forward chain (each step fed the
    previous step's output state). ``state_grad_in`` lets a caller chain
    windows: it is the gradient arriving at the final (h, c) from steps
    after the window. Returns the parameter gradient and the gradient with
    respect to the window's initial (h, c).
    """
    layout.check(flat)
    if len(caches) != len(upstream):
        raise ShapeError("caches and upstream scalars differ in length")
    for k, cache in enumerate(caches):
        if cache.token is not flat:
            raise ProtocolError("cache does not belong to these parameters")
        if k > 0 and cache.h_prev is not caches[k - 1].h_new:
            raise ProtocolError("caches are not a contiguous forward chain")

    hid = layout.hidden
    grad = np.zeros(layout.n_params)
    g_wx = layout.view(grad, "Wx")
    g_wh = layout.view(grad, "Wh")
    g_bias = layout.bias(grad)
    g_whead = layout.view(grad, "w_head")
    g_bhead = layout.view(grad, "b_head")
    w_head = layout.view(flat, "w_head")
    wh_T = layout.view(flat, "Wh").T

    if state_grad_in is None:
        dh = np.zeros(hid)
        dc = np.zeros(hid)
    else:
        dh = state_grad_in[0].copy()
        dc = state_grad_in[1].copy()

    d_pre = np.empty(4 * hid)
    for cache, u in zip(reversed(caches), reversed(upstream)):
        if u != 0.0:
            dz = u * (1.0 - cache.r * cache.r) \
                if layout.head_activation == "tanh" else u
            g_whead += dz * cache.h_new
            g_bhead[0] += dz
            dh = dh + dz * w_head
        do = dh * cache.tanh_c
        dc = dc + dh * cache.o * (1.0 - cache.tanh_c * cache.tanh_c)
        d_pre[:hid] = dc * cache.g * cache.i * (1.0 - cache.i)
        d_pre[hid:2 * hid] = dc * cache.c_prev * cache.f * (1.0 - cache.f)
        d_pre[2 * hid:3 * hid] = dc * cache.i * (1.0 - cache.g * cache.g)
        d_pre[3 * hid:] = do * cache.o * (1.0 - cache.o)
        g_wx += np.outer(d_pre, cache.x)
        g_wh += np.outer(d_pre, cache.h_prev)
        g_bias += d_pre
        dh = wh_T @ d_pre
        dc = dc * cache.f
    return grad, (dh, dc)


# -- parameter updates -------------------------------------------------------

def clip_global_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale so the Euclidean norm is at most ``max_norm`` (0 disables)."""
    if max_norm <= 0.0:
        return grad
    norm = float(np.sqrt(grad @ grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def apply_ascent(params: np.ndarray, grad: np.ndarray, rate: float,
                 clip: float = 0.0) -> np.ndarray:
    """params + rate * grad, with optional global-norm clipping first."""
    if params.shape != grad.shape:
        raise ShapeError(f"parameter/gradient shape mismatch: "
                         f"{params.shape} vs {grad.shape}")
    if not np.isfinite(grad).all():
        raise NumericError("non-finite gradient; aborting update")
    return params + rate * clip_global_norm(grad, clip)


class AdamState:
    """First/second-moment accumulators for the adaptive-moment variant."""

    def __init__(self, n_params: int, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def ascent_step(self, grad: np.ndarray, rate: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return rate * m_hat / (np.sqrt(v_hat) + self.eps)


def sample_categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Inverse-CDF draw; assumes probs is a valid distribution."""
    r = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), r, side="right"))
    return min(idx, len(probs) - 1)
