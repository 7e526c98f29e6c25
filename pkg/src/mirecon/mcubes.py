"""Marching cubes with a generated case table.

The table is built from cube-face rules instead of being typed in: on each
face the iso-contour segments are fixed by the corner signs, segments are
chained across faces into closed loops, and loops are triangulated so
that no diagonal runs across a cube face.
Because every face is decided from its own four corners, neighbouring
cells always agree and the output is crack free.

Corners with value > iso count as inside. Triangles are wound so their
normals point from inside to outside (toward decreasing values).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .geometry import TriangleMesh

CORNERS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]
)
EDGES = [(0, 1), (1, 2), (3, 2), (0, 3), (4, 5), (5, 6), (7, 6), (4, 7), (0, 4), (1, 5), (2, 6), (3, 7)]
# corner cycles, counter-clockwise seen from outside the cube
FACES = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (3, 7, 6, 2), (0, 4, 7, 3), (1, 2, 6, 5)]
_EDGE_ID = {frozenset(e): i for i, e in enumerate(EDGES)}


def _face_segments(config: int, face: int, join_inside: bool):
    """Directed segments (enter edge -> exit edge) on one face."""
    cyc = FACES[face]
    inside = [(config >> c) & 1 for c in cyc]
    enter, leave = [], []  # (position in cycle, edge id)
    for j in range(4):
        a, b = inside[j], inside[(j + 1) % 4]
        if a != b:
            e = _EDGE_ID[frozenset((cyc[j], cyc[(j + 1) % 4]))]
            (enter if b else leave).append((j, e))
    if not enter:
        return []
    if len(enter) == 1:
        return [(enter[0][1], leave[0][1])]
    segs = []
    for j, e in enter:
        if join_inside:
            # pair with the exit just before: below corners get cut off
            k = max((x for x in leave if x[0] < j), default=max(leave), key=lambda x: x[0])
        else:
            # pair with the next exit: inside corners get cut off
            k = min((x for x in leave if x[0] > j), default=min(leave), key=lambda x: x[0])
        segs.append((e, k[1]))
    return segs


def face_is_ambiguous(config: int, face: int) -> bool:
    bits = [(config >> c) & 1 for c in FACES[face]]
    return bits in ([1, 0, 1, 0], [0, 1, 0, 1])


@lru_cache(maxsize=None)
def cell_loops(config: int, join_bits: int = 0):
    """Closed, oriented edge loops for a corner configuration.

    ``join_bits`` bit f set means: on ambiguous face f the two inside
    corners are connected across the face.
    """
    nxt = {}
    for f in range(6):
        for a, b in _face_segments(config, f, bool((join_bits >> f) & 1)):
            nxt[a] = b
    loops, seen = [], set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop, e = [], start
        while e not in seen:
            seen.add(e)
            loop.append(e)
            e = nxt[e]
        loops.append(tuple(loop))
    return tuple(loops)


_EDGE_FACES = [frozenset(f for f, cyc in enumerate(FACES) if a in cyc and b in cyc) for a, b in EDGES]


def _chord_ok(a, b) -> bool:
    """A diagonal may not run across a cube face: the neighbouring cell
    would see the same chord and the edge would become non-manifold."""
    return not (_EDGE_FACES[a] & _EDGE_FACES[b])


def _fan(loop):
    """Fan-triangulate a loop from the lowest valid apex, or return None."""
    n = len(loop)
    for apex in sorted(range(n), key=lambda i: loop[i]):
        r = loop[apex:] + loop[:apex]
        if all(_chord_ok(r[0], r[i]) for i in range(2, n - 1)):
            return [(r[0], r[i], r[i + 1]) for i in range(1, n - 1)]
    return None


def _triangulations(loop):
    """All triangulations of a polygon loop using only valid diagonals."""
    n = len(loop)

    def ok(i, j):
        return j - i == 1 or (i == 0 and j == n - 1) or _chord_ok(loop[i], loop[j])

    @lru_cache(maxsize=None)
    def sub(i, j):
        if j - i < 2:
            return [()]
        out = []
        for k in range(i + 1, j):
            if not (ok(i, k) and ok(k, j)):
                continue
            t = (loop[i], loop[k], loop[j])
            for left in sub(i, k):
                for right in sub(k, j):
                    out.append(left + (t,) + right)
        return out

    return sub(0, n - 1)


def _canonical(tris):
    return sorted(tuple(sorted(t)) for t in tris)


def _triangulate(loop, center):
    """Triangles for one loop and whether the extra ``center`` vertex is used."""
    fan = _fan(loop)
    if fan is not None:
        return fan, False
    # pick independently of loop direction so complemented fields match
    options = _triangulations(loop)
    if options:
        return list(min(options, key=_canonical)), False
    # no chord-free triangulation: fan around an extra vertex at the loop centroid
    return [(center, loop[i], loop[(i + 1) % len(loop)]) for i in range(len(loop))], True


@lru_cache(maxsize=None)
def cell_triangles(config: int, join_bits: int = 0):
    """Triangles over local ids: 0-11 are cube edges, 12 + j is the centroid
    of loop j. Returns (triangles, loops that need a centroid vertex)."""
    tris, centers = [], []
    for loop in cell_loops(config, join_bits):
        t, used = _triangulate(loop, 12 + len(centers))
        if used:
            centers.append(loop)
        tris.extend(t)
    return np.array(tris, dtype=np.int64).reshape(-1, 3), tuple(centers)


def _face_means(v):
    """Corner means of every lattice face, summed in one fixed global order."""
    fx = v[:, :-1, :-1] + v[:, 1:, :-1] + v[:, 1:, 1:] + v[:, :-1, 1:]  # x-normal faces
    fy = v[:-1, :, :-1] + v[1:, :, :-1] + v[1:, :, 1:] + v[:-1, :, 1:]
    fz = v[:-1, :-1, :] + v[1:, :-1, :] + v[1:, 1:, :] + v[:-1, 1:, :]
    return fx / 4.0, fy / 4.0, fz / 4.0


def marching_cubes(values, iso: float = 0.5, origin=(0.0, 0.0, 0.0), spacing=1.0) -> TriangleMesh:
    """Extract the iso-surface of a (nx, ny, nz) grid as a welded TriangleMesh."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 3 or min(v.shape) < 2:
        raise ValueError("grid needs at least 2 samples per axis")
    origin = np.asarray(origin, dtype=np.float64)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (3,))
    nx, ny, nz = v.shape
    inside = v > iso

    config = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(CORNERS):
        config |= inside[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz].astype(np.int64) << c
    active = (config != 0) & (config != 255)
    if not active.any():
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    ci, cj, ck = np.nonzero(active)
    cfg = config[ci, cj, ck]

    # face decisions taken once per lattice face so both neighbouring cells agree
    fx, fy, fz = _face_means(v)
    face_mean = [
        fz[ci, cj, ck], fz[ci, cj, ck + 1],
        fy[ci, cj, ck], fy[ci, cj + 1, ck],
        fx[ci, cj, ck], fx[ci + 1, cj, ck],
    ]
    join = np.zeros(len(cfg), dtype=np.int64)
    amb_table = np.array([[face_is_ambiguous(c, f) for f in range(6)] for c in range(256)])
    for f in range(6):
        join |= (amb_table[cfg, f] & (face_mean[f] > iso)).astype(np.int64) << f
    key = cfg | (join << 8)

    # global edge ids: axis * n + flat index of the edge's lower lattice point
    n = nx * ny * nz
    edge_axis = np.array([0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2])
    edge_base = CORNERS[[e[0] for e in EDGES]]
    cell_flat = np.stack([ci, cj, ck], axis=1)

    tri_ids, center_ids, center_loops = [], [], []
    order = np.argsort(key, kind="stable")
    keys_sorted = key[order]
    bounds = np.flatnonzero(np.r_[True, keys_sorted[1:] != keys_sorted[:-1], True])
    for s, e in zip(bounds[:-1], bounds[1:]):
        kval = int(keys_sorted[s])
        local, centers = cell_triangles(kval & 255, kval >> 8)
        if not len(local):
            continue
        cells = order[s:e]
        lo = cell_flat[cells][:, None, :] + edge_base[None, :, :]  # (c, 12, 3)
        gid = edge_axis[None, :] * n + (lo[..., 0] * ny + lo[..., 1]) * nz + lo[..., 2]
        if centers:
            # extra vertices get ids past all edge ids, numbered by (cell, loop)
            extra = 3 * n + cells[:, None] * 4 + np.arange(len(centers))[None, :]
            gid = np.concatenate([gid, extra], axis=1)
            for j, loop in enumerate(centers):
                center_ids.append(extra[:, j])
                center_loops.append(gid[:, list(loop)])
        tri_ids.append((cells, gid[:, local]))  # (c, t, 3)
    # restore cell order so output does not depend on key grouping
    cell_ids = np.concatenate([np.repeat(c, g.shape[1]) for c, g in tri_ids])
    within = np.concatenate([np.tile(np.arange(g.shape[1]), len(c)) for c, g in tri_ids])
    tris = np.concatenate([g.reshape(-1, 3) for _, g in tri_ids])
    tris = tris[np.lexsort((within, cell_ids))]

    uniq, inv = np.unique(tris.ravel(), return_inverse=True)

    def edge_points(ids):
        axis = ids // n
        flat = ids % n
        p0 = np.stack(np.unravel_index(flat, (nx, ny, nz)), axis=1)
        p1 = p0 + np.eye(3, dtype=np.int64)[axis]
        v0 = v[p0[:, 0], p0[:, 1], p0[:, 2]]
        v1 = v[p1[:, 0], p1[:, 1], p1[:, 2]]
        t = (iso - v0) / (v1 - v0)
        return origin + spacing * (p0 + t[:, None] * (p1 - p0))

    is_edge = uniq < 3 * n
    verts = np.empty((len(uniq), 3))
    verts[is_edge] = edge_points(uniq[is_edge])
    for ids, loops in zip(center_ids, center_loops):
        pos = edge_points(loops.ravel()).reshape(loops.shape + (3,)).mean(axis=1)
        verts[np.searchsorted(uniq, ids)] = pos
    return drop_degenerate(TriangleMesh(verts, inv.reshape(-1, 3)))


def drop_degenerate(mesh: TriangleMesh, min_area: float = 1e-12) -> TriangleMesh:
    """Remove triangles with area <= min_area and any vertices left unreferenced."""
    if mesh.n_triangles == 0:
        return mesh
    keep = mesh.face_areas() > min_area
    tris = mesh.triangles[keep]
    used, inv = np.unique(tris.ravel(), return_inverse=True)
    return TriangleMesh(mesh.vertices[used], inv.reshape(-1, 3))
