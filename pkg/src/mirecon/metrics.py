"""Evaluation metrics: two-way chamfer distance, normal consistency error and
best-consistency rate, plus a small report container."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np

from .errors import ContractError
from .geometry import KdTree, MeshDistance, TriangleMesh, sample_surface

EVAL_SAMPLES = 10_000
EVAL_SEED = 20240101


def _nearest_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, idx = KdTree(b).query(a, 1)
    # recompute from coordinates so the value does not depend on the tree's arithmetic
    return np.sqrt(((a - b[idx[:, 0]]) ** 2).sum(axis=1))


def chamfer_distance(a, b) -> float:
    """Mean nearest-neighbour distance a->b plus mean b->a (unsquared)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ContractError("chamfer distance needs two nonempty point sets")
    return float(_nearest_dist(a, b).mean() + _nearest_dist(b, a).mean())


def chamfer_distance_brute(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ContractError("chamfer distance needs two nonempty point sets")
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def mesh_chamfer(recon: TriangleMesh, gt: TriangleMesh, n: int = EVAL_SAMPLES, seed: int = EVAL_SEED) -> float:
    """Chamfer distance between n area-weighted surface samples of each mesh,
    both drawn with the same seed; inf for an empty recon."""
    if recon.n_triangles == 0 or recon.area() == 0:
        return float("inf")
    return chamfer_distance(sample_surface(recon, n, seed).positions, sample_surface(gt, n, seed).positions)


def normal_consistency_error(recon: TriangleMesh, gt: TriangleMesh, n: int = EVAL_SAMPLES,
                             seed: int = EVAL_SEED) -> float:
    """1 - mean |n_gt . n_recon| with the recon normal taken from the face
    nearest to each ground-truth sample. An empty recon scores 1."""
    if recon.n_triangles == 0 or recon.area() == 0:
        return 1.0
    s = sample_surface(gt, n, seed)
    _, _, tri = MeshDistance(recon).nearest(s.positions)
    cos = np.abs(np.einsum("ij,ij->i", s.normals, recon.face_normals()[tri]))
    return float(np.clip(1.0 - cos.mean(), 0.0, 1.0))


def best_consistency_rate(nce_table: Mapping[str, Sequence[float]]) -> Dict[str, float]:
    """Share of shapes on which each method has the lowest NCE; ties split equally."""
    names = list(nce_table)
    if not names:
        raise ContractError("empty NCE table")
    m = np.array([np.asarray(nce_table[k], dtype=np.float64) for k in names])
    if m.ndim != 2 or m.shape[1] == 0:
        raise ContractError("NCE table must be a complete methods x shapes matrix with at least one shape")
    if np.isnan(m).any():
        raise ContractError("NaN in NCE table")
    best = m == m.min(axis=0, keepdims=True)
    credit = (best / best.sum(axis=0, keepdims=True)).sum(axis=1) / m.shape[1]
    return {k: float(c) for k, c in zip(names, credit)}


@dataclass
class EvalReport:
    """Per-shape CD (x100) and NCE for one method."""

    method: str = "ours"
    shapes: List[str] = field(default_factory=list)
    cd: List[float] = field(default_factory=list)  # raw chamfer distance
    nce: List[float] = field(default_factory=list)
    n_samples: int = EVAL_SAMPLES
    bcr: Dict[str, float] = field(default_factory=dict)

    def add(self, shape: str, cd: float, nce: float):
        if cd < 0 or not 0.0 <= nce <= 1.0:
            raise ContractError(f"metric out of range for {shape}: cd={cd}, nce={nce}")
        self.shapes.append(shape)
        self.cd.append(float(cd))
        self.nce.append(float(nce))

    @property
    def cd_times_100(self):
        return [100.0 * c for c in self.cd]

    def mean(self):
        if not self.shapes:
            return float("nan"), float("nan")
        return float(np.mean(self.cd_times_100)), float(np.mean(self.nce))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["shape", "cd_x100", "nce"])
        for s, c, n in zip(self.shapes, self.cd_times_100, self.nce):
            w.writerow([s, f"{c:.6f}", f"{n:.6f}"])
        cd, nce = self.mean()
        w.writerow(["mean", f"{cd:.6f}", f"{nce:.6f}"])
        for k, v in self.bcr.items():
            w.writerow([f"bcr:{k}", "", f"{v:.6f}"])
        return buf.getvalue()

    def pretty(self) -> str:
        width = max([5] + [len(s) for s in self.shapes])
        lines = [f"{'shape':<{width}}  {'cd_x100':>10}  {'nce':>8}", "-" * (width + 22)]
        for s, c, n in zip(self.shapes, self.cd_times_100, self.nce):
            lines.append(f"{s:<{width}}  {c:>10.4f}  {n:>8.4f}")
        cd, nce = self.mean()
        lines += ["-" * (width + 22), f"{'mean':<{width}}  {cd:>10.4f}  {nce:>8.4f}"]
        for k, v in self.bcr.items():
            lines.append(f"BCR {k}: {v:.3f}")
        return "\n".join(lines)
