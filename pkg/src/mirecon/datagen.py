"""Training/evaluation sample construction: noise, holes, query points with
ground-truth targets, and (local patch, global subsample) pairs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError
from .gauss import ModifiedIndicatorParams, modified_indicator
from .geometry import KdTree, OrientedPointSet, TriangleMesh, sample_surface, signed_distance

DENSE_PRESET = {"n_d": 200, "n_s": 1000, "k": 10, "points": (20_000, 80_000)}
SPARSE_PRESET = {"n_d": 30, "n_s": 1000, "k": 5, "points": (1_000, 5_000)}


@dataclass(frozen=True)
class NoiseConfig:
    """Per-shape noise draw: fraction of noisy points and amplitude beta.

    A point displaced with amplitude beta gets Gaussian offsets of std
    beta / 3, clipped per coordinate to [-beta, beta].
    """

    alpha_p: float = 0.0
    beta: float = 0.0
    clean_shape_prob: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.alpha_p <= 1.0:
            raise ContractError("alpha_p must lie in [0, 1]")
        if self.beta < 0:
            raise ContractError("beta must be nonnegative")
        if not 0.0 <= self.clean_shape_prob <= 1.0:
            raise ContractError("clean_shape_prob must lie in [0, 1]")

    @classmethod
    def draw(cls, rng: np.random.Generator, beta_range=(0.02, 0.04), clean_shape_prob: float = 0.1):
        """Randomized per-shape configuration used when building training sets."""
        if rng.random() < clean_shape_prob:
            return cls(0.0, 0.0, clean_shape_prob)
        return cls(float(rng.random()), float(rng.uniform(*beta_range)), clean_shape_prob)


@dataclass(frozen=True, eq=False)
class QuerySample:
    """Network input for one query point, everything centered at the query."""

    patch: np.ndarray  # (n_d, 3)
    subsample: np.ndarray  # (n_s, 3)
    knn_features: np.ndarray  # (n_d, k, 3)
    target: float = float("nan")


@dataclass(eq=False)
class SampleBatch:
    """Stacked QuerySamples; float32 arrays with a leading query axis."""

    patch: np.ndarray  # (q, n_d, 3)
    subsample: np.ndarray  # (q, n_s, 3)
    knn_features: np.ndarray  # (q, n_d, k, 3)
    target: np.ndarray  # (q,)
    query: Optional[np.ndarray] = None  # (q, 3), not serialized

    def __len__(self):
        return len(self.target)

    @property
    def dims(self):
        return self.patch.shape[1], self.subsample.shape[1], self.knn_features.shape[2]

    def __getitem__(self, i) -> QuerySample:
        return QuerySample(self.patch[i], self.subsample[i], self.knn_features[i], float(self.target[i]))

    def take(self, index) -> "SampleBatch":
        return SampleBatch(self.patch[index], self.subsample[index], self.knn_features[index],
                           self.target[index], None if self.query is None else self.query[index])

    @staticmethod
    def concat(batches) -> "SampleBatch":
        batches = list(batches)
        return SampleBatch(*(np.concatenate([getattr(b, f) for b in batches])
                             for f in ("patch", "subsample", "knn_features", "target")))

    @staticmethod
    def stack(samples) -> "SampleBatch":
        samples = list(samples)
        return SampleBatch(
            np.stack([s.patch for s in samples]).astype(np.float32),
            np.stack([s.subsample for s in samples]).astype(np.float32),
            np.stack([s.knn_features for s in samples]).astype(np.float32),
            np.array([s.target for s in samples], dtype=np.float32),
        )


def apply_noise(points: OrientedPointSet, cfg: NoiseConfig, seed: int = 0) -> OrientedPointSet:
    rng = np.random.default_rng(seed)
    n = len(points)
    if cfg.beta == 0 or cfg.alpha_p == 0 or n == 0:
        return points
    selected = rng.random(n) < cfg.alpha_p
    offset = rng.normal(0.0, cfg.beta / 3.0, size=(n, 3))
    offset = np.clip(offset, -cfg.beta, cfg.beta)
    old = points.positions
    new = old + offset * selected[:, None]
    # rounding in the addition can push |new - old| a hair past beta; step back toward old
    over = np.abs(new - old) > cfg.beta
    while over.any():
        new[over] = np.nextafter(new[over], old[over])
        over = np.abs(new - old) > cfg.beta
    return points.with_positions(new)


def punch_holes(points: OrientedPointSet, radius_range=(0.0, 0.3), seed: int = 0,
                min_points: int = 200, return_radius: bool = False):
    """Remove every point within a random radius of one random point."""
    r_min, r_max = radius_range
    if r_min > r_max:
        raise ContractError("radius_range must satisfy r_min <= r_max")
    rng = np.random.default_rng(seed)
    center = points.positions[rng.integers(len(points))]
    radius = rng.uniform(r_min, r_max) if r_max > r_min else r_min
    if radius <= 0:
        return (points, 0.0) if return_radius else points
    keep = np.linalg.norm(points.positions - center, axis=1) >= radius
    if keep.sum() < min_points:
        raise ContractError(f"hole of radius {radius:.3f} leaves {int(keep.sum())} < {min_points} points")
    out = points.subset(keep)
    return (out, float(radius)) if return_radius else out


def generate_queries(mesh: TriangleMesh, n_near: int = 800, n_cube: int = 200,
                     params: ModifiedIndicatorParams = ModifiedIndicatorParams(), seed: int = 0):
    """Near-surface and unit-cube query points with modified-indicator targets.

    Near-surface points are surface samples pushed along the face normal by
    a Gaussian offset (std 2w, clipped to 4w). Returns (queries, targets).
    """
    rng = np.random.default_rng(seed)
    parts = []
    if n_near:
        surf = sample_surface(mesh, n_near, seed=int(rng.integers(2**63)))
        t = np.clip(rng.normal(0.0, 2.0 * params.w, n_near), -4.0 * params.w, 4.0 * params.w)
        parts.append(surf.positions + t[:, None] * surf.normals)
    if n_cube:
        parts.append(rng.random((n_cube, 3)))
    queries = np.concatenate(parts) if parts else np.zeros((0, 3))
    if len(queries) == 0:
        return queries, np.zeros(0)
    return queries, modified_indicator(signed_distance(mesh, queries), params)


def _knn_in_union(union: np.ndarray, n_d: int, k: int) -> np.ndarray:
    """For each of the first n_d points of each union set, coordinates of its
    k nearest other points in the union (ties by lower index)."""
    q, m, _ = union.shape
    if k > m - 1:
        raise ContractError(f"k={k} needs at least {k + 1} points per sample")
    out = np.empty((q, n_d, k, 3), dtype=union.dtype)
    self_idx = np.arange(n_d)[:, None]
    for i in range(q):
        _, idx = KdTree(union[i]).query(union[i, :n_d], k + 1)
        is_self = idx == self_idx
        # drop the point itself, or the farthest candidate if a duplicate outranked it
        drop = np.where(is_self.any(axis=1), is_self.argmax(axis=1), k)
        keep = np.ones_like(idx, dtype=bool)
        keep[np.arange(n_d), drop] = False
        out[i] = union[i][idx[keep].reshape(n_d, k)]
    return out


def _knn_shared(p: np.ndarray, u: np.ndarray, sub_nbrs: np.ndarray, k: int) -> np.ndarray:
    """Same result as _knn_in_union when every query shares one subsample.

    ``sub_nbrs`` (q, n_d, k) holds, for each patch point, its k nearest
    subsample indices; the only other candidates are the k nearest patch
    points, found by brute force.
    """
    q, n_d, _ = p.shape
    d_pp = np.linalg.norm(p[:, :, None, :] - p[:, None, :, :], axis=-1)
    d_pp[:, np.arange(n_d), np.arange(n_d)] = np.inf
    kp = min(k, n_d - 1)
    pp = np.argsort(d_pp, axis=-1, kind="stable")[..., :kp]
    cand = np.concatenate([pp, n_d + sub_nbrs], axis=-1)  # union indices, (q, n_d, kp + k)
    union = np.concatenate([p, u], axis=1)
    qi = np.arange(q)[:, None, None]
    pts = union[qi, cand]
    dist = np.linalg.norm(pts - p[:, :, None, :], axis=-1)
    dist[..., :kp][np.take_along_axis(d_pp, pp, axis=-1) == np.inf] = np.inf
    # sort by distance, then union index, to match the tree's tie rule
    order = np.lexsort((cand, dist), axis=-1)[..., :k]
    return np.take_along_axis(pts, order[..., None], axis=-2)


def build_samples(cloud: OrientedPointSet, queries, n_d: int = 200, n_s: int = 1000, k: int = 10,
                  seed: int = 0, targets=None, tree: Optional[KdTree] = None,
                  shared_subsample: bool = False) -> SampleBatch:
    """Vectorized build_sample over many query points.

    With ``shared_subsample`` one global draw is reused for every query
    (used for grid reconstruction); otherwise each query gets its own draw.
    """
    pts = cloud.positions
    n = len(pts)
    if n < n_d:
        raise ContractError(f"cloud has {n} points, fewer than n_d={n_d}")
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    q = len(queries)
    tree = tree or KdTree(pts)
    rng = np.random.default_rng(seed)
    replace = n_s > n

    if shared_subsample:
        shared = rng.choice(n, size=n_s, replace=replace)
        if k > n_s:
            raise ContractError(f"k={k} exceeds the subsample size {n_s}")
        _, sub_nbrs = KdTree(pts[shared]).query(pts, k)
    patch = np.empty((q, n_d, 3), dtype=np.float32)
    sub = np.empty((q, n_s, 3), dtype=np.float32)
    feats = np.empty((q, n_d, k, 3), dtype=np.float32)
    chunk = 256
    for s in range(0, q, chunk):
        x = queries[s : s + chunk]
        _, pidx = tree.query(x, n_d)
        if shared_subsample:
            sidx = np.broadcast_to(shared, (len(x), n_s))
        else:
            sidx = np.stack([rng.choice(n, size=n_s, replace=replace) for _ in range(len(x))])
        p = pts[pidx] - x[:, None, :]
        u = pts[sidx] - x[:, None, :]
        union = np.concatenate([p, u], axis=1)
        patch[s : s + chunk] = p
        sub[s : s + chunk] = u
        if shared_subsample:
            feats[s : s + chunk] = _knn_shared(p, u, sub_nbrs[pidx], k)
        else:
            feats[s : s + chunk] = _knn_in_union(union, n_d, k)
    if targets is None:
        targets = np.full(q, np.nan)
    return SampleBatch(patch, sub, feats, np.asarray(targets, dtype=np.float32).reshape(q), queries.copy())


def build_sample(cloud: OrientedPointSet, x, n_d: int = 200, n_s: int = 1000, k: int = 10,
                 seed: int = 0, target: float = float("nan"), tree: Optional[KdTree] = None) -> QuerySample:
    batch = build_samples(cloud, np.asarray(x).reshape(1, 3), n_d, n_s, k, seed, [target], tree)
    return batch[0]
