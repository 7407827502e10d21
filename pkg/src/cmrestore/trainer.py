"""Isolated consistency training with a loss-table importance sampler over trajectory indices."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, NumericError, UsageError
from .nnet import Denoiser, OptimizerState, optimizer_step
from .prior import PriorBridge, PriorNet, prior_predict
from .schedule import NoiseSchedule
from .scorer import FeatureProjector, ScorerState, select_optimal_point

log = logging.getLogger(__name__)

MODES = ("v1", "v2", "v3")
MAX_REJECTED_FRACTION = 1e-3


@dataclass
class LossTable:
    """Running mean of the consistency loss and visit count per trajectory index 2..N."""

    N: int
    warmup: int = 10
    lam: float = 0.05
    means: np.ndarray = field(init=False)
    counts: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.warmup < 0:
            raise ConfigurationError("warmup visit count must be non-negative")
        # slot n holds index n; slots 0 and 1 stay unused
        self.means = np.zeros(self.N + 1)
        self.counts = np.zeros(self.N + 1, dtype=np.int64)


def update_loss_table(table: LossTable, n: int, loss: float) -> LossTable:
    table.counts[n] += 1
    table.means[n] += (loss - table.means[n]) / table.counts[n]
    return table


def index_probabilities(table: LossTable, upper: int, importance: bool = True) -> np.ndarray:
    """Sampling distribution over ``{2, ..., upper}`` as an array of length ``upper - 1``.

    Uniform until every index has ``warmup`` visits (or when ``importance``
    is off); afterwards ``(1 - lam) * L(n) / sum L + lam / (upper - 1)``.
    """
    if upper < 2 or upper > table.N:
        raise UsageError(f"upper index {upper} outside 2..{table.N}")
    size = upper - 1
    uniform = np.full(size, 1.0 / size)
    if not importance or np.any(table.counts[2:upper + 1] < table.warmup):
        return uniform
    losses = table.means[2:upper + 1]
    total = losses.sum()
    if not np.isfinite(total) or total <= 0:
        return uniform
    return (1.0 - table.lam) * losses / total + table.lam / size


def sample_index(table: LossTable, upper: int, rng: np.random.Generator, importance: bool = True) -> int:
    p = index_probabilities(table, upper, importance)
    # inverse-CDF draw with one uniform keeps the random stream layout fixed
    u = rng.random()
    pos = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return 2 + min(pos, len(p) - 1)


def sample_indices(table: LossTable, upper: int, rng: np.random.Generator, size: int,
                   importance: bool = True) -> np.ndarray:
    """Vectorized ``sample_index``: ``size`` draws, consuming ``size`` uniforms in order."""
    p = index_probabilities(table, upper, importance)
    u = rng.random(size)
    pos = np.searchsorted(np.cumsum(p), u * p.sum(), side="right")
    return 2 + np.minimum(pos, len(p) - 1)


def sampler_entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def consistency_loss(denoiser: Denoiser, x, cond, n: int, z, schedule: NoiseSchedule) -> float:
    """``||x - f(x + t_n z, cond, t_n)||^2`` for a single sample."""
    if not 2 <= n <= schedule.N:
        raise UsageError(f"trajectory index {n} outside 2..{schedule.N}")
    t = schedule.level(n)
    x = np.asarray(x, dtype=np.float64)
    out = denoiser.consistency_forward((x + t * np.asarray(z))[None], np.atleast_2d(cond), t,
                                       schedule.config)
    return float(np.sum((x - out[0]) ** 2))


@dataclass(frozen=True)
class TrainerConfig:
    mode: str = "v3"
    batch_size: int = 64
    steps: int = 20000
    seed: int = 0
    lr: float = 1e-3
    width: int = 128
    depth: int = 3
    time_dim: int = 32
    importance: bool = True
    consistency: bool = True
    warmup: int = 10
    lam: float = 0.05
    scorer_cadence: int = 2000
    eval_batch: int = 256
    candidate_stride: int = 1
    log_interval: int = 100

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("batch_size", "scorer_cadence", "eval_batch", "candidate_stride",
                     "log_interval", "width", "depth"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.steps < 0:
            raise ConfigurationError("steps must be non-negative")
        if not self.consistency and self.importance:
            raise ConfigurationError("the importance sampler requires the consistency constraint")
        if not self.consistency and self.mode == "v1":
            raise ConfigurationError("direct regression needs the prior (mode v2 or v3)")


@dataclass
class TrainerState:
    denoiser: Denoiser
    optimizer: OptimizerState
    table: LossTable
    bridge: PriorBridge | None
    scorer: ScorerState | None
    rng: np.random.Generator
    step: int = 0
    rejected: int = 0

    def restore_index(self, config: TrainerConfig) -> int:
        """Index generation starts from: N (v1), k (v2), op (v3)."""
        if config.mode == "v1":
            return self.table.N
        if config.mode == "v3" and self.scorer is not None:
            return self.scorer.op
        return self.bridge.k


def candidate_set(k: int, stride: int = 1) -> list[int]:
    """Indices ``2, 2 + stride, ...`` up to ``k``, always including ``k``."""
    cands = list(range(2, k + 1, stride))
    if cands[-1] != k:
        cands.append(k)
    return cands


def init_state(config: TrainerConfig, x_shape, cond_dim: int, schedule: NoiseSchedule,
               bridge: PriorBridge | None = None) -> TrainerState:
    if config.mode in ("v2", "v3") and bridge is None:
        raise UsageError(f"mode {config.mode} needs a PriorBridge from the trained prior")
    rng = np.random.default_rng(config.seed)
    denoiser = Denoiser(x_shape, cond_dim, schedule.config.sigma_data, config.time_dim,
                        config.width, config.depth).init(rng)
    scorer = None
    if config.mode == "v3" and config.consistency:
        cands = candidate_set(bridge.k, config.candidate_stride)
        scorer = ScorerState(bridge.k, cands, [], config.scorer_cadence)
    return TrainerState(denoiser, OptimizerState(lr=config.lr),
                        LossTable(schedule.N, config.warmup, config.lam),
                        bridge, scorer, rng)


def _upper_index(state: TrainerState, config: TrainerConfig) -> int:
    return state.table.N if config.mode == "v1" else state.bridge.k


def train_step(state: TrainerState, batch: Dataset, schedule: NoiseSchedule, config: TrainerConfig,
               prior: PriorNet | None = None, scorer_batch: Dataset | None = None,
               projector: FeatureProjector | None = None) -> float:
    """One optimizer step on ``batch``; returns the batch loss.

    One trajectory index is drawn per batch. A step whose loss or gradient
    is non-finite is rejected: parameters, optimizer and loss table stay as
    they were and ``state.rejected`` is incremented.
    """
    if len(batch) == 0:
        raise UsageError("empty training batch")
    cfg = schedule.config
    if config.consistency:
        n = sample_index(state.table, _upper_index(state, config), state.rng, config.importance)
        t = schedule.level(n)
        z = state.rng.standard_normal(batch.x.shape)
        x_in, t_in = batch.x + t * z, t
    else:
        if prior is None:
            raise UsageError("direct regression needs the prior")
        n = None
        x_in, t_in = prior_predict(prior, batch.cond), cfg.epsilon
    try:
        loss, grads = state.denoiser.backprop(x_in, batch.cond, t_in, batch.x, cfg,
                                              consistency=config.consistency)
        if not np.isfinite(loss):
            raise NumericError("non-finite loss")
        optimizer_step(state.denoiser.params, grads, state.optimizer)
    except NumericError as err:
        state.rejected += 1
        log.warning("rejected step %d: %s", state.step + 1, err)
        return float("nan")
    if n is not None:
        update_loss_table(state.table, n, loss)
    state.step += 1
    if state.scorer is not None and state.step % config.scorer_cadence == 0:
        if prior is None or scorer_batch is None or projector is None:
            raise UsageError("scorer refresh needs the prior, a scorer batch and a projector")
        state.scorer = select_optimal_point(state.denoiser, prior, schedule, scorer_batch,
                                            state.scorer.candidates, projector,
                                            seed=config.seed + 1, cadence=config.scorer_cadence)
        log.info("step %d: op=%d", state.step, state.scorer.op)
    return loss


@dataclass
class MetricsRow:
    step: int
    loss_mean: float
    op: int
    entropy: float


def split_scorer_batch(dataset: Dataset, config: TrainerConfig) -> tuple[Dataset, Dataset | None]:
    """Hold the last ``eval_batch`` training items out for the scorer (v3 only)."""
    if config.mode != "v3" or not config.consistency:
        return dataset, None
    if len(dataset) <= config.eval_batch:
        raise UsageError(f"need more than eval_batch={config.eval_batch} training items for the scorer")
    return dataset[: len(dataset) - config.eval_batch], dataset[len(dataset) - config.eval_batch:]


def train_loop(config: TrainerConfig, dataset: Dataset, schedule: NoiseSchedule,
               prior: PriorNet | None = None, bridge: PriorBridge | None = None,
               projector: FeatureProjector | None = None) -> tuple[TrainerState, list[MetricsRow]]:
    """Run ``config.steps`` training steps; one metrics row per ``log_interval`` steps."""
    if config.mode == "v1" and prior is not None:
        log.warning("mode v1 ignores the supplied prior")
        prior, bridge = None, None
    train, scorer_batch = split_scorer_batch(dataset, config)
    if scorer_batch is not None and projector is None:
        projector = FeatureProjector.create(int(np.prod(dataset.x.shape[1:])), seed=config.seed)
    state = init_state(config, dataset.x.shape[1:], dataset.cond.shape[1], schedule, bridge)
    metrics: list[MetricsRow] = []
    window: list[float] = []
    upper = _upper_index(state, config) if config.consistency else None
    while state.step < config.steps:
        if state.rejected > MAX_REJECTED_FRACTION * config.steps:
            raise NumericError(f"more than {MAX_REJECTED_FRACTION:.1%} of steps rejected")
        idx = state.rng.integers(0, len(train), size=min(config.batch_size, len(train)))
        loss = train_step(state, train[idx], schedule, config, prior, scorer_batch, projector)
        if np.isfinite(loss):
            window.append(loss)
        if state.step % config.log_interval == 0 and window and np.isfinite(loss):
            p = (index_probabilities(state.table, upper, config.importance)
                 if config.consistency else np.ones(1))
            metrics.append(MetricsRow(state.step, float(np.mean(window)),
                                      state.restore_index(config), sampler_entropy(p)))
            window = []
    return state, metrics
