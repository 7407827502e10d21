"""One-step generation for the three restore modes, with NFE accounting.

The three modes differ only in where restoration starts:

* ``v1`` -- pure noise at the top level, ``T * z``;
* ``v2`` -- the prior output noised to level ``t_k``;
* ``v3`` -- the prior output noised to the scorer-selected level ``t_op``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import UsageError
from .nnet import Denoiser
from .prior import PriorBridge, PriorNet, prior_predict
from .schedule import NoiseSchedule
from .scorer import FeatureProjector, ScorerState, restore_scores


@dataclass(frozen=True)
class SamplerMode:
    name: str
    restore_index: int | None = None

    def __post_init__(self) -> None:
        if self.name not in ("v1", "v2", "v3", "prior", "direct"):
            raise UsageError(f"unknown sampler mode {self.name!r}")


@dataclass
class GenerationReport:
    prior_calls: int
    denoiser_calls: int
    samples: int
    seconds: float
    outputs: np.ndarray

    @property
    def nfe(self) -> str:
        """Per-sample evaluations as ``"prior+denoiser"``."""
        if self.samples == 0:
            return "0+0"
        return f"{self.prior_calls // self.samples}+{self.denoiser_calls // self.samples}"

    @property
    def samples_per_second(self) -> float:
        return self.samples / self.seconds if self.seconds > 0 else float("inf")


def _check_params(model) -> None:
    if model is None:
        raise UsageError("model is missing")
    for name, p in model.params.items():
        if not np.all(np.isfinite(p)):
            raise UsageError(f"model parameter {name} is not finite")


def _noise(rng: np.random.Generator, shape, z):
    if z is None:
        return rng.standard_normal(shape)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != tuple(shape):
        raise UsageError(f"injected noise has shape {z.shape}, expected {tuple(shape)}")
    return z


def _restore(denoiser: Denoiser, start: np.ndarray, cond: np.ndarray, t: float,
             schedule: NoiseSchedule) -> np.ndarray:
    return denoiser.consistency_forward(start, cond, t, schedule.config)


def generate_v1(denoiser: Denoiser, cond, schedule: NoiseSchedule, rng: np.random.Generator,
                z=None) -> tuple[np.ndarray, GenerationReport]:
    _check_params(denoiser)
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    start_time = time.perf_counter()
    shape = (len(cond),) + denoiser.x_shape
    T = schedule.config.T
    out = _restore(denoiser, T * _noise(rng, shape, z), cond, T, schedule)
    return out, GenerationReport(0, len(cond), len(cond), time.perf_counter() - start_time, out)


def _generate_from_prior(denoiser, prior, n: int, cond, schedule, rng, z):
    _check_params(denoiser)
    _check_params(prior)
    if not 2 <= n <= schedule.N:
        raise UsageError(f"restore index {n} outside 2..{schedule.N}")
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    start_time = time.perf_counter()
    x_tilde = prior_predict(prior, cond)
    t = schedule.level(n)
    out = _restore(denoiser, x_tilde + t * _noise(rng, x_tilde.shape, z), cond, t, schedule)
    return out, GenerationReport(len(cond), len(cond), len(cond), time.perf_counter() - start_time, out)


def generate_v2(denoiser: Denoiser, prior: PriorNet, bridge: PriorBridge, cond,
                schedule: NoiseSchedule, rng: np.random.Generator, z=None):
    return _generate_from_prior(denoiser, prior, bridge.k, cond, schedule, rng, z)


def generate_v3(denoiser: Denoiser, prior: PriorNet, scorer_state: ScorerState, cond,
                schedule: NoiseSchedule, rng: np.random.Generator, z=None):
    if scorer_state is None:
        raise UsageError("v3 generation needs a scorer state with an optimal point")
    return _generate_from_prior(denoiser, prior, scorer_state.op, cond, schedule, rng, z)


def generate_prior_only(prior: PriorNet, cond) -> tuple[np.ndarray, GenerationReport]:
    """The prior output alone (no denoiser), NFE ``1+0``."""
    _check_params(prior)
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    start_time = time.perf_counter()
    out = prior_predict(prior, cond)
    return out, GenerationReport(len(cond), 0, len(cond), time.perf_counter() - start_time, out)


def generate_direct(denoiser: Denoiser, prior: PriorNet, cond, schedule: NoiseSchedule):
    """Consistency constraint ablated: raw network applied to the un-noised prior output."""
    _check_params(denoiser)
    _check_params(prior)
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    start_time = time.perf_counter()
    x_tilde = prior_predict(prior, cond)
    out = denoiser.forward_raw(x_tilde, cond, schedule.config.epsilon)
    return out, GenerationReport(len(cond), len(cond), len(cond), time.perf_counter() - start_time, out)


def sweep_restore_points(denoiser: Denoiser, prior: PriorNet, schedule: NoiseSchedule,
                         eval_batch: Dataset, indices, projector: FeatureProjector,
                         seed: int = 0) -> list[tuple[int, float, float]]:
    """Rows ``(index, t_index, frechet score)`` of one-step restoration from each index."""
    _check_params(denoiser)
    _check_params(prior)
    indices = list(indices)
    if not indices:
        raise UsageError("need at least one restore index")
    x_tilde = prior_predict(prior, eval_batch.cond)
    rows = restore_scores(denoiser, x_tilde, eval_batch.x, eval_batch.cond, indices, schedule,
                          projector, seed)
    return [(n, schedule.level(n), score) for n, score in rows]
