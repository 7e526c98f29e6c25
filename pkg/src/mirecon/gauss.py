"""Gauss-lemma kernel, discrete point-wise indicator integral and the
modified (ramped) indicator used as the learning target."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError
from .geometry import KdTree, OrientedPointSet

FOUR_PI = 4.0 * np.pi
DEFAULT_GRID_SIZE = 1.0 / 256.0
SINGULAR_CLAMP = 1e-6


@dataclass(frozen=True)
class ModifiedIndicatorParams:
    """Ramp half-width ``w`` and the grid size it was derived from."""

    grid_size: float = DEFAULT_GRID_SIZE
    w: float = None

    def __post_init__(self):
        if self.w is None:
            object.__setattr__(self, "w", 4.0 * self.grid_size)
        if not self.w > 0 or not self.grid_size > 0:
            raise ContractError("w and grid_size must be positive")


def kernel_derivative(x, y, n):
    """Normal derivative of the Laplace fundamental solution,
    -((x - y) . n) / (4 pi |x - y|^3)."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    r = np.linalg.norm(d, axis=-1)
    if np.any(r < 1e-12):
        raise NumericError("kernel evaluated at its singularity x == y")
    return -np.einsum("...k,...k->...", d, np.asarray(n, dtype=np.float64)) / (FOUR_PI * r ** 3)


def gauss_terms(samples: OrientedPointSet, x: np.ndarray, clamp: float = SINGULAR_CLAMP) -> np.ndarray:
    """Per-sample contributions (q, N) to the discrete indicator at points x."""
    d = x[:, None, :] - samples.positions[None, :, :]
    r = np.maximum(np.linalg.norm(d, axis=-1), clamp)
    return -np.einsum("qnk,nk->qn", d, samples.normals) * samples.areas / (FOUR_PI * r ** 3)


def _check(samples):
    if samples.normals is None or samples.areas is None:
        raise ContractError("discrete Gauss indicator needs oriented normals and area weights")


def discrete_gauss_indicator(samples: OrientedPointSet, x, clamp: float = SINGULAR_CLAMP,
                             compensated: bool = True, chunk: int = 4096):
    """Sum of kernel * area over oriented samples, per query point.

    Distances below ``clamp`` are clamped before cubing so the sum stays
    finite when a query lands on a sample.
    """
    _check(samples)
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    out = np.empty(len(pts))
    step = max(1, (chunk * 1024) // max(1, len(samples)))
    for s in range(0, len(pts), step):
        terms = gauss_terms(samples, pts[s : s + step], clamp)
        if compensated:
            # correctly rounded, hence independent of sample order
            out[s : s + step] = [math.fsum(row) for row in terms]
        else:
            out[s : s + step] = terms.sum(axis=1)
    return float(out[0]) if single else out


def discrete_gauss_field(samples: OrientedPointSet, clamp: float = SINGULAR_CLAMP):
    """Point -> indicator oracle over a batch, using plain (fast) summation."""
    _check(samples)
    y = samples.positions
    yy = np.einsum("nk,nk->n", y, y)
    yn = np.einsum("nk,nk->n", y, samples.normals)
    w = samples.areas / FOUR_PI

    def field(x, chunk: int = 2048):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        out = np.empty(len(x))
        for s in range(0, len(x), chunk):
            xs = x[s : s + chunk]
            # expanded squared distance: two matrix products instead of a (q, N, 3) difference
            r2 = np.einsum("qk,qk->q", xs, xs)[:, None] - 2.0 * xs @ y.T + yy
            r = np.maximum(np.sqrt(np.maximum(r2, 0.0)), clamp)
            num = xs @ samples.normals.T - yn
            out[s : s + chunk] = (-num / r ** 3) @ w
        return out

    return field


def estimate_areas(points, k: int = 10) -> np.ndarray:
    """Per-point area weights pi r_k^2 / k, with r_k the distance to the k-th
    nearest other point. For uniform sampling of density lambda the mean is 1 / lambda."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) <= k or k < 1:
        raise ContractError(f"need more than k={k} points to estimate areas")
    d, _ = KdTree(pts).query(pts, k + 1)
    return np.pi * d[:, k] ** 2 / k


def modified_indicator(d, params: ModifiedIndicatorParams):
    """Clamp 0.5 + d / (2w) to [0, 1]; d is the signed distance (positive inside)."""
    d = np.asarray(d, dtype=np.float64)
    w = params.w
    out = np.where(d < -w, 0.0, np.where(d > w, 1.0, 0.5 + d / (2.0 * w)))
    return float(out) if out.ndim == 0 else out
