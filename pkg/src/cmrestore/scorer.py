"""Frechet distance between Gaussians fitted to fixed feature projections, and op selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, UsageError

RIDGE = 1e-6


@dataclass(frozen=True)
class FeatureProjector:
    """Fixed random projection of flattened patches, plus the patch mean and std."""

    matrix: np.ndarray

    @classmethod
    def create(cls, in_dim: int, out_dim: int = 16, seed: int = 0) -> "FeatureProjector":
        rng = np.random.default_rng(seed)
        matrix = rng.standard_normal((in_dim, out_dim)) / np.sqrt(in_dim)
        matrix.setflags(write=False)
        return cls(matrix)

    @property
    def feature_dim(self) -> int:
        return self.matrix.shape[1] + 2


def extract_features(projector: FeatureProjector, patches) -> np.ndarray:
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim == 0 or len(patches) == 0:
        raise UsageError("need at least one patch")
    flat = patches.reshape(len(patches), -1)
    if flat.shape[1] != projector.matrix.shape[0]:
        raise DimensionError(f"patch size {flat.shape[1]} != projector input {projector.matrix.shape[0]}")
    return np.concatenate([flat @ projector.matrix, flat.mean(axis=1, keepdims=True),
                           flat.std(axis=1, keepdims=True)], axis=1)


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray


def fit_gaussian(features, ridge: float = RIDGE) -> GaussianSummary:
    """Sample mean and unbiased covariance plus ``ridge * I``."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise UsageError("fit_gaussian needs at least two feature rows")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (features.shape[0] - 1)
    cov = 0.5 * (cov + cov.T) + ridge * np.eye(features.shape[1])
    return GaussianSummary(mean, cov)


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """``||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The trace of the product root is taken as ``Tr((A^½ B A^½)^½)`` over a
    symmetric eigendecomposition with negative eigenvalues clamped to zero.
    """
    if a.mean.shape != b.mean.shape or a.covariance.shape != b.covariance.shape:
        raise DimensionError("Gaussian summaries have different dimensions")
    for arr in (a.mean, b.mean, a.covariance, b.covariance):
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite Gaussian summary")
    root_a = _sqrt_psd(a.covariance)
    inner = root_a @ b.covariance @ root_a
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_root = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    diff = a.mean - b.mean
    value = float(diff @ diff) + float(np.trace(a.covariance) + np.trace(b.covariance)) - 2.0 * tr_root
    return max(value, 0.0)


def score_samples(projector: FeatureProjector, generated, reference) -> float:
    """Frechet distance between Gaussians fitted to the features of two sample sets."""
    return frechet_distance(fit_gaussian(extract_features(projector, generated)),
                            fit_gaussian(extract_features(projector, reference)))


@dataclass
class ScorerState:
    op: int
    candidates: list[int]
    scores: list[tuple[int, float]] = field(default_factory=list)
    cadence: int = 2000


def restore_scores(denoiser, x_tilde: np.ndarray, reference: np.ndarray, cond: np.ndarray,
                   indices, schedule, projector: FeatureProjector, seed: int) -> list[tuple[int, float]]:
    """Score one-step restoration from ``x_tilde + t_n z`` at each trajectory index ``n``.

    The same noise draw ``z`` (from ``seed``) is shared by every index.
    """
    indices = [int(n) for n in indices]
    if not indices:
        raise UsageError("need at least one candidate index")
    z = np.random.default_rng(seed).standard_normal(x_tilde.shape)
    ref = fit_gaussian(extract_features(projector, reference))
    rows = []
    for n in indices:
        t = schedule.level(n)
        restored = denoiser.consistency_forward(x_tilde + t * z, cond, t, schedule.config)
        rows.append((n, frechet_distance(fit_gaussian(extract_features(projector, restored)), ref)))
    return rows


def select_optimal_point(denoiser, prior, schedule, eval_batch, candidates,
                         projector: FeatureProjector, seed: int = 0, cadence: int = 2000) -> ScorerState:
    """Pick the candidate restore index whose one-step outputs best match the reference batch.

    Ties go to the smallest index.
    """
    from .prior import prior_predict

    candidates = sorted(int(n) for n in candidates)
    if not candidates:
        raise UsageError("candidate set is empty")
    x_tilde = prior_predict(prior, eval_batch.cond)
    scores = restore_scores(denoiser, x_tilde, eval_batch.x, eval_batch.cond, candidates,
                            schedule, projector, seed)
    best = min(scores, key=lambda row: (row[1], row[0]))
    return ScorerState(best[0], candidates, scores, cadence)
