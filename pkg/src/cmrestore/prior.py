"""Condition-only prior regressor and the KL rule that picks the restore level k."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import DimensionError, DomainError, UsageError
from .nnet import DenseNet, OptimizerState, optimizer_step
from .schedule import NoiseSchedule


@dataclass
class PriorNet:
    """Maps a condition to a patch through a ``tanh``-squashed residual MLP."""

    x_shape: tuple[int, ...]
    cond_dim: int
    width: int = 128
    depth: int = 3
    net: DenseNet | None = None
    history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.x_shape = tuple(int(s) for s in self.x_shape)
        if self.net is None:
            self.net = DenseNet(self.cond_dim, int(np.prod(self.x_shape)), self.width, self.depth,
                                squash=True)

    @property
    def params(self):
        return self.net.params

    def init(self, rng: np.random.Generator) -> "PriorNet":
        self.net.init(rng)
        return self


@dataclass(frozen=True)
class PriorBridge:
    k: int
    ratio: float


def prior_predict(prior: PriorNet, cond) -> np.ndarray:
    cond = np.asarray(cond, dtype=np.float64)
    single = cond.ndim == 1
    cond = np.atleast_2d(cond)
    if cond.shape[1] != prior.cond_dim:
        raise DimensionError(f"expected conditions with {prior.cond_dim} entries, got {cond.shape[1]}")
    out, _ = prior.net.forward(cond)
    out = out.reshape((len(cond),) + prior.x_shape)
    return out[0] if single else out


def train_prior(dataset: Dataset, epochs: int, seed: int, width: int = 128, depth: int = 3,
                batch_size: int = 256, lr: float = 2e-3) -> PriorNet:
    """Fit the prior by minibatch Adam on the per-pixel squared error.

    ``history`` holds the mean training loss of every epoch.
    """
    if len(dataset) == 0:
        raise UsageError("cannot train a prior on an empty dataset")
    rng = np.random.default_rng(seed)
    prior = PriorNet(dataset.x.shape[1:], dataset.cond.shape[1], width, depth).init(rng)
    opt = OptimizerState(lr=lr)
    n = len(dataset)
    flat = dataset.x.reshape(n, -1)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            out, cache = prior.net.forward(dataset.cond[idx])
            resid = out - flat[idx]
            total += float(np.sum(resid**2))
            grads, _ = prior.net.backward(cache, (2.0 / resid.size) * resid)
            optimizer_step(prior.net.params, grads, opt)
        prior.history.append(total / flat.size)
    return prior


def kl_noised(x, x_tilde, t: float) -> float:
    """KL between ``N(x, t^2 I)`` and ``N(x_tilde, t^2 I)``: ``||x - x_tilde||^2 / (2 t^2)``."""
    if t <= 0:
        raise DomainError(f"noise level must be positive, got {t}")
    x = np.asarray(x, dtype=np.float64)
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if x.shape != x_tilde.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {x_tilde.shape}")
    return float(np.sum((x - x_tilde) ** 2) / (2.0 * t * t))


def select_k(residual_energy: float, data_energy: float, schedule: NoiseSchedule) -> int:
    """Smallest index ``n >= 2`` with ``E||x - x~||^2 / t_n^2 <= E||x||^2 / T^2``, else ``N``."""
    T = schedule.config.T
    for n in range(2, schedule.N + 1):
        t = schedule.level(n)
        if residual_energy * T * T <= data_energy * t * t:
            return n
    return schedule.N


def bridge_from_predictions(x, x_tilde, schedule: NoiseSchedule) -> PriorBridge:
    """:class:`PriorBridge` from ground-truth patches and matching prior outputs."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise UsageError("cannot compute k on an empty dataset")
    x = x.reshape(n, -1)
    x_tilde = np.asarray(x_tilde, dtype=np.float64).reshape(n, -1)
    residual_energy = float(np.mean(np.sum((x - x_tilde) ** 2, axis=1)))
    data_energy = float(np.mean(np.sum(x**2, axis=1)))
    if residual_energy == 0.0:
        ratio = 0.0
    else:
        ratio = residual_energy / data_energy if data_energy > 0 else float("inf")
    return PriorBridge(select_k(residual_energy, data_energy, schedule), ratio)


def compute_k(dataset: Dataset, prior: PriorNet, schedule: NoiseSchedule) -> PriorBridge:
    """Restore level at which the noised prior is no farther (in expected KL) than pure noise at T."""
    if len(dataset) == 0:
        raise UsageError("cannot compute k on an empty dataset")
    return bridge_from_predictions(dataset.x, prior_predict(prior, dataset.cond), schedule)
