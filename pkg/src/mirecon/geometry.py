"""Triangle meshes, oriented point sets, k-NN search, signed distance and
the exact solid-angle indicator.

Sign convention: the indicator is 1 inside and 0 outside, and signed
distances are *positive inside*. Many geometry libraries use the opposite
SDF sign; do not mix them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractError, ValidationError

MIN_TRIANGLE_AREA = 1e-12
ON_SURFACE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangle mesh; counter-clockwise triangles have outward normals."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValidationError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        """(m, 3, 3) array of triangle corner positions."""
        return self.vertices[self.triangles]

    def face_cross(self) -> np.ndarray:
        c = self.corners()
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        cr = self.face_cross()
        norm = np.linalg.norm(cr, axis=1, keepdims=True)
        return cr / np.where(norm > 0, norm, 1.0)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles[:, ::-1])

    def transformed(self, rotation=None, translation=None) -> "TriangleMesh":
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=np.float64).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=np.float64)
        return TriangleMesh(v, self.triangles)

    def euler_characteristic(self) -> int:
        edges = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        n_edges = len(np.unique(edges, axis=0)) if len(edges) else 0
        used = len(np.unique(self.triangles)) if self.n_triangles else 0
        return used - n_edges + self.n_triangles

    def first_bad_edge(self):
        """Return the first directed edge violating watertightness, or None."""
        t = self.triangles
        if len(t) == 0:
            return None
        directed = t[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        uniq, counts = np.unique(directed, axis=0, return_counts=True)
        dup = np.flatnonzero(counts > 1)
        if dup.size:
            return tuple(int(i) for i in uniq[dup[0]])
        # every directed edge must be matched by its reverse
        keys = uniq[:, 0] * len(self.vertices) + uniq[:, 1]
        rev = uniq[:, 1] * len(self.vertices) + uniq[:, 0]
        missing = np.flatnonzero(~np.isin(rev, keys))
        if missing.size:
            return tuple(int(i) for i in uniq[missing[0]])
        return None

    def is_watertight(self) -> bool:
        return self.n_triangles > 0 and self.first_bad_edge() is None

    def validate(self, watertight: bool = True) -> "TriangleMesh":
        """Check the ground-truth invariants; raise ValidationError on failure."""
        if self.n_triangles == 0:
            raise ValidationError("mesh has no triangles")
        if watertight:
            bad = self.first_bad_edge()
            if bad is not None:
                raise ValidationError(f"mesh is not watertight: edge {bad[0]}->{bad[1]}")
        areas = self.face_areas()
        if (areas <= MIN_TRIANGLE_AREA).any():
            i = int(np.argmax(areas <= MIN_TRIANGLE_AREA))
            raise ValidationError(f"triangle {i} has zero area ({areas[i]:.3g})")
        return self


@dataclass(frozen=True, eq=False)
class OrientedPointSet:
    """Surface samples with optional unit normals and area weights."""

    positions: np.ndarray
    normals: Optional[np.ndarray] = None
    areas: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "positions", p)
        if self.normals is not None:
            n = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(p):
                raise ContractError("normals and positions differ in length")
            lengths = np.linalg.norm(n, axis=1)
            if len(n) and np.abs(lengths - 1.0).max() > 1e-9:
                raise ValidationError("normals must be unit length")
            object.__setattr__(self, "normals", n)
        if self.areas is not None:
            a = np.ascontiguousarray(self.areas, dtype=np.float64).reshape(-1)
            if len(a) != len(p):
                raise ContractError("areas and positions differ in length")
            if (a < 0).any():
                raise ValidationError("area weights must be nonnegative")
            object.__setattr__(self, "areas", a)

    def __len__(self):
        return len(self.positions)

    def subset(self, index) -> "OrientedPointSet":
        return OrientedPointSet(
            self.positions[index],
            None if self.normals is None else self.normals[index],
            None if self.areas is None else self.areas[index],
        )

    def with_positions(self, positions) -> "OrientedPointSet":
        return OrientedPointSet(positions, self.normals, self.areas)


class KdTree:
    """k-d tree with deterministic k-NN: ties are broken by lower index."""

    def __init__(self, points, leaf_size: int = 16):
        if leaf_size < 1:
            raise ContractError("leaf_size must be positive")
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        self.leaf_size = leaf_size
        self._tree = cKDTree(self.points, leafsize=leaf_size) if len(self.points) else None

    def __len__(self):
        return len(self.points)

    def query(self, x, k: int):
        """k-NN for a batch of points; returns (distances, indices) of shape (q, min(k, n))."""
        if k < 1:
            raise ContractError("k must be >= 1")
        if self._tree is None:
            raise ContractError("k-NN query on an empty tree")
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        kk = min(k, n)
        extra = min(kk + 1, n)
        _, idx = self._tree.query(x, k=extra)
        idx = np.asarray(idx).reshape(len(x), extra)
        dist = np.sqrt(((self.points[idx] - x[:, None, :]) ** 2).sum(-1))
        order = np.lexsort((idx, dist), axis=-1)
        idx = np.take_along_axis(idx, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        if extra > kk:
            # a tie straddling the k-th slot may hide lower indices outside the k+1 set
            for row in np.flatnonzero(dist[:, kk - 1] == dist[:, kk]):
                cand = np.asarray(self._tree.query_ball_point(x[row], dist[row, kk - 1] * (1 + 1e-9) + 1e-300))
                d = np.sqrt(((self.points[cand] - x[row]) ** 2).sum(-1))
                o = np.lexsort((cand, d))[:kk]
                idx[row, :kk] = cand[o]
                dist[row, :kk] = d[o]
        return dist[:, :kk], idx[:, :kk]


def knn(tree: KdTree, x, k: int) -> np.ndarray:
    """Indices of the min(k, n) nearest points to a single 3D point."""
    return tree.query(np.asarray(x, dtype=np.float64).reshape(1, 3), k)[1][0]


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Scale the longest bbox side to 1 and center the bbox at (0.5, 0.5, 0.5)."""
    if mesh.n_vertices == 0:
        raise ValidationError("cannot normalize an empty mesh")
    lo, hi = mesh.bounds()
    extent = float((hi - lo).max())
    if not extent > 0:
        raise ValidationError("mesh has zero extent")
    center = 0.5 * (lo + hi)
    v = (mesh.vertices - center) / extent + 0.5
    return TriangleMesh(v, mesh.triangles)


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> OrientedPointSet:
    """Area-weighted uniform samples carrying face normals and area total/n."""
    if n < 1:
        raise ContractError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ValidationError("mesh has zero surface area")
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    c = mesh.corners()[face]
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    pts = np.einsum("ij,ijk->ik", bary, c)
    normals = mesh.face_normals()[face]
    return OrientedPointSet(pts, normals, np.full(n, total / n))


def triangle_solid_angles(corners: np.ndarray, x: np.ndarray):
    """Signed solid angles of triangles seen from points.

    corners: (m, 3, 3); x: (q, 3). Returns (omega (q, m), on_surface (q, m)).
    """
    # component-wise (q, m) arrays; much faster than cross/einsum over a trailing axis of 3
    A, B, C = corners[:, 0], corners[:, 1], corners[:, 2]
    ax, ay, az = (A[None, :, i] - x[:, i, None] for i in range(3))
    bx, by, bz = (B[None, :, i] - x[:, i, None] for i in range(3))
    cx, cy, cz = (C[None, :, i] - x[:, i, None] for i in range(3))
    la = np.sqrt(ax * ax + ay * ay + az * az)
    lb = np.sqrt(bx * bx + by * by + bz * bz)
    lc = np.sqrt(cx * cx + cy * cy + cz * cz)
    num = ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz) + az * (bx * cy - by * cx)
    scale = la * lb * lc
    den = (scale + (ax * bx + ay * by + az * bz) * lc + (ax * cx + ay * cy + az * cz) * lb
           + (bx * cx + by * cy + bz * cz) * la)
    on = (np.abs(num) <= ON_SURFACE_TOL * scale) & (den <= ON_SURFACE_TOL * scale)
    return 2.0 * np.arctan2(num, den), on


def solid_angle_winding(mesh: TriangleMesh, x, chunk: int = 64):
    """Exact indicator: total signed solid angle / 4 pi.

    Accepts one point (returns a float) or an (q, 3) array. Points lying on
    a triangle get the boundary value 0.5.
    """
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    corners = mesh.corners()
    out = np.empty(len(pts))
    step = max(1, chunk * 1024 // max(1, mesh.n_triangles))
    for s in range(0, len(pts), step):
        omega, on = triangle_solid_angles(corners, pts[s : s + step])
        w = omega.sum(axis=1) / (4.0 * np.pi)
        w[on.any(axis=1)] = 0.5
        out[s : s + step] = w
    return float(out[0]) if single else out


def closest_points_on_triangles(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Closest point on each triangle tri[i] (3, 3) to p[i]; region-based test."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def put(mask, value):
        m = mask & ~done
        out[m] = value[m] if np.ndim(value) == 2 else value
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        put((d1 <= 0) & (d2 <= 0), a)
        put((d3 >= 0) & (d4 <= d3), b)
        put((d6 >= 0) & (d5 <= d6), c)
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        put(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


class MeshDistance:
    """Exact nearest-triangle queries accelerated by a centroid k-d tree."""

    def __init__(self, mesh: TriangleMesh):
        if mesh.n_triangles == 0:
            raise ContractError("distance query against an empty mesh")
        self.mesh = mesh
        self.corners = mesh.corners()
        self.centroids = self.corners.mean(axis=1)
        self.radius = float(np.linalg.norm(self.corners - self.centroids[:, None], axis=-1).max())
        self.tree = cKDTree(self.centroids)

    def nearest(self, x):
        """(distance, closest point, triangle index) per query point."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        m = len(self.centroids)
        k0 = min(8, m)
        _, seed_idx = self.tree.query(x, k=k0)
        seed_idx = np.asarray(seed_idx).reshape(len(x), k0)
        rep = np.repeat(x, k0, axis=0)
        cp = closest_points_on_triangles(rep, self.corners[seed_idx.ravel()])
        d0 = np.linalg.norm(cp - rep, axis=1).reshape(len(x), k0).min(axis=1)
        # lower bound |x - tri| >= |x - centroid| - radius, so this ball holds the true nearest
        cand = self.tree.query_ball_point(x, d0 + self.radius + 1e-12)
        counts = np.fromiter((len(c) for c in cand), dtype=np.int64, count=len(x))
        flat = np.fromiter((i for c in cand for i in c), dtype=np.int64, count=int(counts.sum()))
        owner = np.repeat(np.arange(len(x)), counts)
        cp = closest_points_on_triangles(x[owner], self.corners[flat])
        d = np.linalg.norm(cp - x[owner], axis=1)
        order = np.lexsort((flat, d, owner))
        first = np.r_[0, np.cumsum(counts)[:-1]]
        pick = order[first]
        return d[pick], cp[pick], flat[pick]


def unsigned_distance(mesh: TriangleMesh, x) -> np.ndarray:
    return MeshDistance(mesh).nearest(x)[0]


def signed_distance(mesh: TriangleMesh, x):
    """Distance to the mesh, positive inside (winding > 0.5) and negative outside."""
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    d = MeshDistance(mesh).nearest(pts)[0]
    w = solid_angle_winding(mesh, pts)
    sd = np.where(w > 0.5, d, -d)
    return float(sd[0]) if single else sd


# ---------------------------------------------------------------------------
# primitive shapes used by tests, demos and the acceptance suite


def box_mesh(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TriangleMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    v = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=np.float64)
    v = lo + v * (hi - lo)
    t = np.array(
        [
            [0, 2, 1], [1, 2, 3],  # z = lo
            [4, 5, 6], [5, 7, 6],  # z = hi
            [0, 1, 4], [1, 5, 4],  # y = lo
            [2, 6, 3], [3, 6, 7],  # y = hi
            [0, 4, 2], [2, 4, 6],  # x = lo
            [1, 3, 5], [3, 7, 5],  # x = hi
        ]
    )
    return TriangleMesh(v, t)


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    phi = (1.0 + 5 ** 0.5) / 2.0
    v = [
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ]
    f = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    verts = [np.asarray(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return TriangleMesh(np.asarray(verts) * radius + np.asarray(center), np.asarray(faces))


def torus_mesh(major: float = 0.3, minor: float = 0.1, n_major: int = 48, n_minor: int = 24,
               center=(0.5, 0.5, 0.5)) -> TriangleMesh:
    u = np.linspace(0, 2 * np.pi, n_major, endpoint=False)
    v = np.linspace(0, 2 * np.pi, n_minor, endpoint=False)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    r = major + minor * np.cos(vv)
    pts = np.stack([r * np.cos(uu), r * np.sin(uu), minor * np.sin(vv)], axis=-1).reshape(-1, 3)
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    i2, j2 = (i + 1) % n_major, (j + 1) % n_minor
    a = i * n_minor + j
    b = i2 * n_minor + j
    c = i2 * n_minor + j2
    d = i * n_minor + j2
    tris = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    return TriangleMesh(pts + np.asarray(center), tris)
