"""Procedural conditional datasets.

``patches``: each condition ``c`` in ``[0, 1]^d_c`` fixes a smooth bump field
and the frequency/orientation of a sinusoidal texture; the texture phase is
drawn per sample and never exposed. The MSE-optimal condition-only
predictor therefore recovers the bump field but not the texture.

``gmm2d``: the condition rotates and shifts a ring of Gaussian components
in the plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

BASE_AMPLITUDE = 0.6


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "patches"
    count: int = 4000
    seed: int = 0
    d_c: int = 4
    H: int = 16
    W: int = 16
    detail: float = 0.3
    # gmm2d only
    n_components: int = 4
    component_std: float = 0.08
    radius: float = 0.6

    def __post_init__(self) -> None:
        if self.kind not in ("patches", "gmm2d"):
            raise ConfigurationError(f"unknown dataset kind {self.kind!r}")
        if min(self.count, self.d_c, self.H, self.W, self.n_components) < 1:
            raise ConfigurationError("dataset counts and dimensions must be positive")
        if self.kind == "patches" and self.d_c < 4:
            raise ConfigurationError("patch datasets need at least 4 condition entries")
        if not 0.0 <= self.detail <= 1.0:
            raise ConfigurationError(f"detail amplitude must lie in [0, 1], got {self.detail}")
        if self.component_std < 0 or self.radius < 0:
            raise ConfigurationError("gmm2d radius and component_std must be non-negative")


@dataclass
class Dataset:
    """Conditions ``(n, d_c)`` and targets ``(n, H, W)`` (``(n, 1, 2)`` for gmm2d)."""

    cond: np.ndarray
    x: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, idx) -> "Dataset":
        return Dataset(self.cond[idx], self.x[idx])

    def pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.cond, self.x))


def _grid(H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.meshgrid((np.arange(H) + 0.5) / H, (np.arange(W) + 0.5) / W, indexing="ij")
    return yy, xx


def base_field(cond: np.ndarray, H: int, W: int) -> np.ndarray:
    """Smooth bump component; centers and width are affine in the condition. Range ``[-0.6, 0.6]``."""
    cond = np.atleast_2d(cond)
    yy, xx = _grid(H, W)
    cy = 0.25 + 0.5 * cond[:, 0, None, None]
    cx = 0.25 + 0.5 * cond[:, 1, None, None]
    width = 0.16 + 0.14 * cond[:, 2, None, None]
    bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width**2))
    return BASE_AMPLITUDE * (2.0 * bump - 1.0)


def texture(cond: np.ndarray, phase: np.ndarray, H: int, W: int) -> np.ndarray:
    """Unit-amplitude plane wave; frequency affine in ``cond[3]``, phase per sample."""
    cond = np.atleast_2d(cond)
    yy, xx = _grid(H, W)
    freq = 2.0 + 1.0 * cond[:, 3, None, None]
    angle = np.pi / 4
    coord = np.cos(angle) * xx + np.sin(angle) * yy
    return np.sin(2.0 * np.pi * freq * coord + np.asarray(phase)[:, None, None])


def gen_patches(spec: DatasetSpec, phase: np.ndarray | None = None) -> Dataset:
    """Sample ``spec.count`` (condition, patch) pairs.

    ``phase`` overrides the per-sample texture phase (used by tests that
    hold the latent fixed).
    """
    if spec.kind != "patches":
        raise ConfigurationError(f"gen_patches needs kind='patches', got {spec.kind!r}")
    rng = np.random.default_rng(spec.seed)
    cond = rng.uniform(0.0, 1.0, size=(spec.count, spec.d_c))
    drawn = rng.uniform(0.0, 2.0 * np.pi, size=spec.count)
    phase = drawn if phase is None else np.broadcast_to(np.asarray(phase, dtype=np.float64), (spec.count,))
    x = base_field(cond, spec.H, spec.W) + spec.detail * texture(cond, phase, spec.H, spec.W)
    return Dataset(cond, np.clip(x, -1.0, 1.0))


def texture_variance(spec: DatasetSpec) -> float:
    """Per-pixel variance of the texture term over the phase, ``detail^2 / 2``.

    Exact for the unclipped field, which is the whole range whenever
    ``detail <= 0.4``.
    """
    return 0.5 * spec.detail**2


def gmm_means(spec: DatasetSpec, cond: np.ndarray) -> np.ndarray:
    """Component means ``(n, K, 2)`` for each condition row."""
    cond = np.atleast_2d(cond)
    k = np.arange(spec.n_components)
    angle = 2.0 * np.pi * k / spec.n_components + 0.5 * np.pi * cond[:, :1]
    return spec.radius * np.stack([np.cos(angle), np.sin(angle)], axis=-1)


def gen_gmm2d(spec: DatasetSpec, return_labels: bool = False):
    """Sample points from the condition-dependent mixture, clipped to ``[-1, 1]^2``."""
    if spec.kind != "gmm2d":
        raise ConfigurationError(f"gen_gmm2d needs kind='gmm2d', got {spec.kind!r}")
    rng = np.random.default_rng(spec.seed)
    cond = rng.uniform(0.0, 1.0, size=(spec.count, spec.d_c))
    labels = rng.integers(0, spec.n_components, size=spec.count)
    means = gmm_means(spec, cond)[np.arange(spec.count), labels]
    points = means + spec.component_std * rng.standard_normal((spec.count, 2))
    data = Dataset(cond, np.clip(points, -1.0, 1.0)[:, None, :])
    return (data, labels) if return_labels else data


def generate(spec: DatasetSpec) -> Dataset:
    return gen_patches(spec) if spec.kind == "patches" else gen_gmm2d(spec)


def train_test_split(data: Dataset, seed: int, test_fraction: float = 0.1) -> tuple[Dataset, Dataset]:
    """Split by index (last ``test_fraction`` held out), then shuffle the training part."""
    n_test = max(1, int(round(len(data) * test_fraction)))
    train, test = data[: len(data) - n_test], data[len(data) - n_test:]
    order = np.random.default_rng(seed).permutation(len(train))
    return train[order], test
