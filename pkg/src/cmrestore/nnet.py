"""Dense residual network with hand-written reverse mode, time embedding and Adam.

The same :class:`DenseNet` backs both the consistency denoiser and the
condition-only prior. Parameters live in an ordered ``dict`` of float64
arrays; gradients use the same keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DimensionError, NumericError, UsageError
from .schedule import ScheduleConfig, skip_coefficients_array

Params = dict[str, np.ndarray]

TIME_BASE = 10000.0


def time_embed(t, dim: int = 32) -> np.ndarray:
    """Sinusoidal embedding of a time level.

    Entry ``2i`` is ``sin(t / B^(2i/dim))`` and entry ``2i+1`` the matching
    cosine, with ``B = 10000``. ``t`` may be a scalar (returns ``(dim,)``) or
    a 1-D array (returns ``(len(t), dim)``).
    """
    if dim <= 0 or dim % 2:
        raise ConfigurationError(f"time embedding dimension must be even and positive, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ConfigurationError("time level must be non-negative")
    freqs = TIME_BASE ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = t[..., None] * freqs
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def _silu(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = expit(a)
    return a * s, s


@dataclass
class DenseNet:
    """Residual MLP: ``h = silu(W0 u + b0)``, then ``h += silu(Wl h + bl)``, then a linear head.

    ``squash=True`` applies ``tanh`` to the head output.
    """

    n_in: int
    n_out: int
    width: int = 128
    depth: int = 3
    squash: bool = False
    params: Params = field(default_factory=dict)

    def __post_init__(self) -> None:
        if min(self.n_in, self.n_out, self.width, self.depth) < 1:
            raise ConfigurationError("network dimensions must be positive")
        if not self.params:
            self.params = {name: np.zeros(shape) for name, shape in self.shapes().items()}
        else:
            for name, shape in self.shapes().items():
                if self.params[name].shape != shape:
                    raise DimensionError(f"{name}: expected {shape}, got {self.params[name].shape}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {"W0": (self.n_in, self.width), "b0": (self.width,)}
        for layer in range(1, self.depth):
            shapes[f"W{layer}"] = (self.width, self.width)
            shapes[f"b{layer}"] = (self.width,)
        shapes["W_out"] = (self.width, self.n_out)
        shapes["b_out"] = (self.n_out,)
        return shapes

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def init(self, rng: np.random.Generator, out_scale: float = 1.0) -> "DenseNet":
        for name, shape in self.shapes().items():
            if name.startswith("b"):
                self.params[name] = np.zeros(shape)
            else:
                std = 1.0 / np.sqrt(shape[0])
                if name == "W_out":
                    std *= out_scale
                self.params[name] = rng.normal(0.0, std, size=shape)
        return self

    def copy(self) -> "DenseNet":
        return DenseNet(self.n_in, self.n_out, self.width, self.depth, self.squash,
                        {k: v.copy() for k, v in self.params.items()})

    def forward(self, u: np.ndarray) -> tuple[np.ndarray, list]:
        """Evaluate on a ``(batch, n_in)`` input. Returns output and a cache for :meth:`backward`."""
        if u.ndim != 2 or u.shape[1] != self.n_in:
            raise DimensionError(f"expected input of shape (B, {self.n_in}), got {u.shape}")
        p = self.params
        cache = [u]
        pre = u @ p["W0"] + p["b0"]
        h, s = _silu(pre)
        cache.append((pre, s, h))
        for layer in range(1, self.depth):
            pre = h @ p[f"W{layer}"] + p[f"b{layer}"]
            act, s = _silu(pre)
            h = h + act
            cache.append((pre, s, h))
        out = h @ p["W_out"] + p["b_out"]
        if self.squash:
            out = np.tanh(out)
        cache.append(out)
        return out, cache

    def backward(self, cache: list, grad_out: np.ndarray) -> tuple[Params, np.ndarray]:
        """Reverse pass. Returns parameter gradients and the gradient w.r.t. the input."""
        p = self.params
        grads: Params = {}
        if self.squash:
            grad_out = grad_out * (1.0 - cache[-1] ** 2)
        h_last = cache[-2][2]
        grads["W_out"] = h_last.T @ grad_out
        grads["b_out"] = grad_out.sum(axis=0)
        g_h = grad_out @ p["W_out"].T
        for layer in range(self.depth - 1, 0, -1):
            pre, s, _ = cache[layer + 1]
            h_prev = cache[layer][2]
            g_pre = g_h * (s * (1.0 + pre * (1.0 - s)))
            grads[f"W{layer}"] = h_prev.T @ g_pre
            grads[f"b{layer}"] = g_pre.sum(axis=0)
            g_h = g_h + g_pre @ p[f"W{layer}"].T
        pre, s, _ = cache[1]
        g_pre = g_h * (s * (1.0 + pre * (1.0 - s)))
        grads["W0"] = cache[0].T @ g_pre
        grads["b0"] = g_pre.sum(axis=0)
        g_in = g_pre @ p["W0"].T
        return {name: grads[name] for name in p}, g_in


@dataclass
class Denoiser:
    """Network ``F(x_t, cond, t)`` and its consistency parameterization.

    The noisy input is rescaled by ``1/sqrt(sigma_data^2 + t^2)`` before it
    enters the dense layers so that the network sees unit-scale inputs at
    every level.
    """

    x_shape: tuple[int, ...]
    cond_dim: int
    sigma_data: float = 0.5
    time_dim: int = 32
    width: int = 128
    depth: int = 3
    net: DenseNet | None = None

    def __post_init__(self) -> None:
        self.x_shape = tuple(int(s) for s in self.x_shape)
        if self.time_dim % 2:
            raise ConfigurationError("time_dim must be even")
        if self.net is None:
            self.net = DenseNet(self.x_dim + self.cond_dim + self.time_dim, self.x_dim,
                                self.width, self.depth)

    @property
    def x_dim(self) -> int:
        return int(np.prod(self.x_shape))

    @property
    def params(self) -> Params:
        return self.net.params

    def init(self, rng: np.random.Generator) -> "Denoiser":
        self.net.init(rng, out_scale=0.1)
        return self

    def copy(self) -> "Denoiser":
        return Denoiser(self.x_shape, self.cond_dim, self.sigma_data, self.time_dim,
                        self.width, self.depth, self.net.copy())

    def _inputs(self, x_t, cond, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x_t = np.asarray(x_t, dtype=np.float64)
        cond = np.asarray(cond, dtype=np.float64)
        if x_t.shape[1:] != self.x_shape:
            raise DimensionError(f"expected patches of shape {self.x_shape}, got {x_t.shape[1:]}")
        batch = x_t.shape[0]
        if cond.shape != (batch, self.cond_dim):
            raise DimensionError(f"expected conditions of shape {(batch, self.cond_dim)}, got {cond.shape}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        flat = x_t.reshape(batch, -1)
        if not (np.all(np.isfinite(flat)) and np.all(np.isfinite(cond)) and np.all(np.isfinite(t))):
            raise NumericError("non-finite denoiser input")
        scale = 1.0 / np.sqrt(self.sigma_data**2 + t**2)
        u = np.concatenate([flat * scale[:, None], cond, time_embed(t, self.time_dim)], axis=1)
        return u, flat, t

    def forward_raw(self, x_t, cond, t) -> np.ndarray:
        """Raw network output ``F(x_t, cond, t)`` with the shape of ``x_t``."""
        u, _, _ = self._inputs(x_t, cond, t)
        out, _ = self.net.forward(u)
        return out.reshape(np.shape(x_t))

    def consistency_forward(self, x_t, cond, t, cfg: ScheduleConfig) -> np.ndarray:
        """``c_skip(t) * x_t + c_out(t) * F(x_t, cond, t)``."""
        u, flat, t = self._inputs(x_t, cond, t)
        c_skip, c_out = skip_coefficients_array(t, cfg)
        raw, _ = self.net.forward(u)
        out = c_skip[:, None] * flat + c_out[:, None] * raw
        return out.reshape(np.shape(x_t))

    def backprop(self, x_t, cond, t, target, cfg: ScheduleConfig,
                 consistency: bool = True) -> tuple[float, Params]:
        """Loss ``mean_b ||target_b - f(x_t_b)||^2`` and its exact parameter gradient.

        With ``consistency=False`` the skip combination is dropped and the
        model output is the raw network output.
        """
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.ndim == 0 or x_t.shape[0] == 0:
            raise UsageError("backprop needs a non-empty batch")
        u, flat, t = self._inputs(x_t, cond, t)
        raw, cache = self.net.forward(u)
        if consistency:
            c_skip, c_out = skip_coefficients_array(t, cfg)
            pred = c_skip[:, None] * flat + c_out[:, None] * raw
        else:
            c_out = np.ones_like(t)
            pred = raw
        batch = flat.shape[0]
        resid = np.asarray(target, dtype=np.float64).reshape(batch, -1) - pred
        loss = float(np.sum(resid**2) / batch)
        grad_raw = (-2.0 / batch) * c_out[:, None] * resid
        grads, _ = self.net.backward(cache, grad_raw)
        return loss, grads


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)


def optimizer_step(params: Params, grads: Params, state: OptimizerState) -> tuple[Params, OptimizerState]:
    """Adam update, in place on ``params`` and ``state``.

    Raises:
        NumericError: if any gradient is non-finite; nothing is modified.
    """
    if grads.keys() != params.keys():
        raise DimensionError("gradient keys do not match parameters")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} != {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
