"""Analytic rewards and the diversity metric.

Rewards score finished samples (or x0 predictions mid-search) against the
clean condition; nothing here sees perturbed embeddings. The diversity
metric projects latents through a fixed seeded Gaussian map, a stand-in for
a learned feature embedder, and averages absolute-cosine dissimilarity over
sample pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .config import RewardConfig
from .core import RngStream
from .noiseshape import band_fractions
from .toymodel import ToyModel, log_density


def reward_loglik(model: ToyModel, x0, v) -> np.ndarray:
    """Clean-data log density of x0 under the model at condition v."""
    return log_density(model, x0, v)


def reward_band(x0, profile) -> np.ndarray:
    """Negative L1 distance between x0's radial energy fractions and a target.

    Maximal value 0 at an exact spectral match. The leading axes of x0 batch.
    """
    profile = np.asarray(profile, dtype=np.float64)
    if profile.ndim != 1:
        raise ValueError("band profile must be one-dimensional")
    if np.any(profile < 0) or abs(profile.sum() - 1.0) > 1e-9:
        raise ValueError("band profile must be non-negative and sum to 1")
    x0 = np.asarray(x0, dtype=np.float64)
    flat = x0.reshape((-1,) + x0.shape[-2:])
    for i in range(flat.shape[0]):
        if not np.any(flat[i]):
            raise ValueError("reward_band is undefined for a zero-energy grid")
    fractions = band_fractions(x0, profile.shape[0])
    return -np.abs(fractions - profile).sum(axis=-1)


def cosine_dissimilarity(e1, e2) -> float:
    """1 - |cos angle| between two feature vectors; in [0, 1]."""
    e1 = np.asarray(e1, dtype=np.float64).ravel()
    e2 = np.asarray(e2, dtype=np.float64).ravel()
    n1 = np.linalg.norm(e1)
    n2 = np.linalg.norm(e2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("cosine_dissimilarity is undefined for a zero vector")
    value = 1.0 - abs(float(np.dot(e1, e2))) / (n1 * n2)
    return float(min(max(value, 0.0), 1.0))


@dataclass(frozen=True)
class DiversityProjector:
    """Fixed seeded Gaussian projection from flattened latents to features."""

    matrix: np.ndarray
    seed: int

    @property
    def feature_dim(self) -> int:
        return self.matrix.shape[0]

    def project(self, latent) -> np.ndarray:
        flat = np.asarray(latent, dtype=np.float64).ravel()
        if flat.shape[0] != self.matrix.shape[1]:
            raise ValueError(
                f"latent size {flat.shape[0]} does not match projector "
                f"input size {self.matrix.shape[1]}"
            )
        return self.matrix @ flat

    def pair_stream(self):
        return RngStream(self.seed, ("diversity", "pairs")).generator()


def build_projector(
    height: int, width: int, feature_dim: int = 64, seed: int = 0
) -> DiversityProjector:
    """Gaussian projector with full row rank; feature_dim is clamped to the
    latent size so the rank requirement stays satisfiable on tiny grids."""
    n_in = height * width
    dim = min(feature_dim, n_in)
    rng = RngStream(seed, ("diversity", "projector")).generator()
    matrix = rng.standard_normal((dim, n_in))
    if np.linalg.matrix_rank(matrix) < dim:
        raise RuntimeError("diversity projector is rank-deficient; change seed")
    return DiversityProjector(matrix=matrix, seed=seed)


PAIR_EXHAUSTIVE_LIMIT = 64
PAIR_SUBSAMPLE = 1000


def diversity(
    samples: Sequence, projector: DiversityProjector, pair_rng=None
) -> float:
    """Mean pairwise cosine dissimilarity of projected samples.

    Exhaustive over unordered pairs below 64 samples; above that, 1000
    uniformly drawn pairs from a stream derived off the projector seed
    (or the supplied generator).
    """
    n = len(samples)
    if n < 2:
        raise ValueError("diversity needs at least 2 samples")
    features = [projector.project(s) for s in samples]
    if n < PAIR_EXHAUSTIVE_LIMIT:
        values = [
            cosine_dissimilarity(features[i], features[j])
            for i in range(n)
            for j in range(i + 1, n)
        ]
        return float(np.mean(values))
    rng = projector.pair_stream() if pair_rng is None else pair_rng
    total = 0.0
    for _ in range(PAIR_SUBSAMPLE):
        i = int(rng.integers(n))
        j = (i + 1 + int(rng.integers(n - 1))) % n
        total += cosine_dissimilarity(features[i], features[j])
    return total / PAIR_SUBSAMPLE


def diversity_by_condition(
    grouped_samples: Sequence[Sequence], projector: DiversityProjector
) -> float:
    """Average of per-condition diversity values."""
    if not grouped_samples:
        raise ValueError("need at least one condition group")
    return float(
        np.mean([diversity(group, projector) for group in grouped_samples])
    )


def default_band_profile(n_bands: int) -> np.ndarray:
    # uniform target: rewards broadband content, so high-frequency detail
    # carries weight instead of being free to vanish
    return np.full(n_bands, 1.0 / n_bands)


def make_reward(config: RewardConfig, model: ToyModel, v) -> Callable:
    """Bind a reward config to a model and clean condition vector.

    Returns a callable mapping x0 grids (batched or single) to float scores.
    """
    v = np.asarray(v, dtype=np.float64)
    profile = (
        np.asarray(config.band_profile, dtype=np.float64)
        if config.band_profile is not None
        else default_band_profile(config.n_bands)
    )
    if config.kind == "loglik":
        return lambda x0: reward_loglik(model, x0, v)
    if config.kind == "band_match":
        return lambda x0: reward_band(x0, profile)
    if config.kind == "composite":
        a, b = config.composite_weights

        def composite(x0):
            return a * reward_loglik(model, x0, v) + b * reward_band(x0, profile)

        return composite
    raise ValueError(f"unknown reward kind {config.kind!r}")
