"""Seeded synthetic Gaussian-blob datasets in the unit cube."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from alulab.errors import ConfigError


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "train"
    seed: int = 0

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ConfigError("features must be (n, d) with n labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigError("labels out of range")
        if self.split not in ("train", "test"):
            raise ConfigError(f"split must be 'train' or 'test', got {self.split!r}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def class_means(self) -> np.ndarray:
        return np.stack([self.features[self.labels == k].mean(axis=0) for k in range(self.n_classes)])

    def min_mean_distance(self) -> float:
        means = self.class_means().astype(np.float64)
        dists = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
        return float(dists[np.triu_indices(self.n_classes, 1)].min())


def signal_basis(d: int, k: int, seed: int) -> np.ndarray:
    """Orthonormal ``(d, k)`` basis of the subspace the clusters live in."""
    rng = np.random.default_rng([seed, 0])
    return np.linalg.qr(rng.standard_normal((d, k)))[0]


def cluster_directions(M: int, k: int, seed: int) -> np.ndarray:
    """``M`` orthonormal directions in ``R^k`` (rows)."""
    if M > k:
        raise ConfigError(f"need intrinsic_dim >= M for orthogonal centers, got M={M}, intrinsic_dim={k}")
    rng = np.random.default_rng([seed, 3])
    return np.linalg.qr(rng.standard_normal((k, M)))[0].T


def gen_synthetic(
    M: int,
    d: int,
    n: int,
    separation: float,
    seed: int,
    cluster_std: float = 0.05,
    intrinsic_dim: int | None = 4,
    off_manifold_std: float = 0.005,
    split: str = "train",
) -> Dataset:
    """Balanced Gaussian clusters squashed affinely into ``[0, 1]^d``.

    Clusters are isotropic with ``cluster_std`` inside a random
    ``intrinsic_dim``-dimensional subspace and carry ``off_manifold_std``
    noise in every ambient direction.  ``intrinsic_dim=None`` (or ``d``) with
    ``off_manifold_std=0`` gives fully isotropic clusters.  Every pair of
    cluster centers is ``separation`` apart.

    Geometry depends only on ``(M, d, intrinsic_dim, seed)``; noise also on
    ``split``, so train and test sets drawn with one seed share centers.  If
    the samples leave the unit cube the whole set is rescaled about 0.5 and
    the raw spread is enlarged until the rescaled centers are still
    ``separation`` apart; if no spread achieves that the request is
    infeasible.
    """
    k = d if intrinsic_dim is None else int(intrinsic_dim)
    if M < 2 or d < 2 or n < M:
        raise ConfigError(f"need M >= 2, d >= 2, n >= M; got M={M}, d={d}, n={n}")
    if not 1 <= k <= d:
        raise ConfigError(f"intrinsic_dim must be in [1, d], got {k}")
    if not separation > 0 or cluster_std < 0 or off_manifold_std < 0:
        raise ConfigError("separation must be positive and noise levels nonnegative")
    basis = signal_basis(d, k, seed)
    # rows are unit vectors; pairwise distance between centers is sqrt(2)
    unit = cluster_directions(M, k, seed) @ basis.T

    rng = np.random.default_rng([seed, 1 if split == "train" else 2])
    labels = rng.permutation(np.arange(n) % M)
    noise = cluster_std * rng.standard_normal((n, k)) @ basis.T
    noise = noise + off_manifold_std * rng.standard_normal((n, d))

    def squashed(spread):
        X = spread * unit[labels] + noise
        reach = float(np.max(np.abs(X)))
        scale = min(1.0, 0.5 / reach) if reach > 0 else 1.0
        return 0.5 + X * scale, spread * scale * np.sqrt(2.0)

    # the achieved center distance grows monotonically with the raw spread
    spread = separation / np.sqrt(2.0)
    X, achieved = squashed(spread)
    if achieved < separation:
        lo, hi = spread, spread
        for _ in range(60):
            hi *= 2.0
            if squashed(hi)[1] >= separation:
                break
        else:
            raise ConfigError(
                f"separation {separation} infeasible in [0,1]^{d} with cluster_std={cluster_std}"
            )
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if squashed(mid)[1] >= separation:
                hi = mid
            else:
                lo = mid
        X, achieved = squashed(hi)
    X = np.clip(X, 0.0, 1.0).astype(np.float32)
    return Dataset(X, labels, M, split=split, seed=seed)
