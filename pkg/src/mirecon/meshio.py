"""OBJ / PLY / XYZ readers and writers for meshes and point clouds."""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import MalformedFileError
from .geometry import OrientedPointSet, TriangleMesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_obj(path):
    verts, tris = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                try:
                    verts.append([float(s) for s in parts[1:4]])
                except ValueError:
                    raise MalformedFileError("bad vertex record", path, lineno) from None
                if len(verts[-1]) != 3:
                    raise MalformedFileError("vertex needs 3 coordinates", path, lineno)
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    try:
                        i = int(tok.split("/")[0])
                    except ValueError:
                        raise MalformedFileError(f"bad face index {tok!r}", path, lineno) from None
                    if i == 0:
                        raise MalformedFileError("face index 0 (OBJ indices are 1-based)", path, lineno)
                    i = i - 1 if i > 0 else len(verts) + i
                    if not 0 <= i < len(verts):
                        raise MalformedFileError(f"face index {tok} out of range", path, lineno)
                    idx.append(i)
                if len(idx) < 3:
                    raise MalformedFileError("face with fewer than 3 vertices", path, lineno)
                tris.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, len(idx) - 1))
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(tris, dtype=np.int64).reshape(-1, 3), None


def _parse_ply_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise MalformedFileError("missing 'ply' magic", path, 1)
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise MalformedFileError("unterminated header", path, lineno)
        parts = raw.decode("ascii", errors="replace").split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MalformedFileError("property before element", path, lineno)
            if parts[1] == "list":
                elements[-1][2].append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
            else:
                if parts[1] not in _PLY_TYPES:
                    raise MalformedFileError(f"unknown property type {parts[1]}", path, lineno)
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        elif parts[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise MalformedFileError(f"unsupported PLY format {fmt}", path, 2)
    return fmt, elements, lineno


def _read_ply(path):
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_ply_header(fh, path)
        body = fh.read()
    data = {}
    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        for name, count, props in elements:
            rows = []
            for r in range(count):
                row = []
                for pname, ptype in props:
                    try:
                        if isinstance(ptype, tuple):
                            n = int(tokens[pos])
                            row.append([float(t) for t in tokens[pos + 1 : pos + 1 + n]])
                            if len(row[-1]) != n:
                                raise IndexError
                            pos += 1 + n
                        else:
                            row.append(float(tokens[pos]))
                            pos += 1
                    except (IndexError, ValueError):
                        raise MalformedFileError(f"truncated {name} data (record {r})", path, header_lines + 1) from None
                rows.append(row)
            data[name] = (props, rows)
    else:
        off = 0
        for name, count, props in elements:
            if all(not isinstance(t, tuple) for _, t in props):
                dt = np.dtype([(p, "<" + t) for p, t in props])
                need = dt.itemsize * count
                if off + need > len(body):
                    raise MalformedFileError(f"truncated {name} block at byte {off}", path)
                arr = np.frombuffer(body, dtype=dt, count=count, offset=off)
                off += need
                data[name] = (props, arr)
                continue
            rows = []
            for r in range(count):
                row = []
                for pname, ptype in props:
                    try:
                        if isinstance(ptype, tuple):
                            _, ct, it = ptype
                            cdt, idt = np.dtype("<" + ct), np.dtype("<" + it)
                            n = int(np.frombuffer(body, cdt, 1, off)[0])
                            off += cdt.itemsize
                            row.append(np.frombuffer(body, idt, n, off).tolist())
                            off += idt.itemsize * n
                        else:
                            t = np.dtype("<" + ptype)
                            row.append(float(np.frombuffer(body, t, 1, off)[0]))
                            off += t.itemsize
                    except ValueError:
                        raise MalformedFileError(f"truncated {name} data at byte {off}", path) from None
                rows.append(row)
            data[name] = (props, rows)

    if "vertex" not in data:
        raise MalformedFileError("no vertex element", path)
    props, rows = data["vertex"]
    names = [p for p, _ in props]
    if isinstance(rows, np.ndarray):
        table = {p: rows[p].astype(np.float64) for p in names}
    else:
        arr = np.asarray(rows, dtype=np.float64).reshape(-1, len(names))
        table = {p: arr[:, i] for i, p in enumerate(names)}
    try:
        verts = np.stack([table["x"], table["y"], table["z"]], axis=1)
    except KeyError:
        raise MalformedFileError("vertex element lacks x/y/z", path) from None
    normals = None
    if all(k in table for k in ("nx", "ny", "nz")):
        normals = np.stack([table["nx"], table["ny"], table["nz"]], axis=1)
    tris = []
    if "face" in data:
        fprops, frows = data["face"]
        li = next((i for i, (_, t) in enumerate(fprops) if isinstance(t, tuple)), None)
        if li is None:
            raise MalformedFileError("face element has no index list", path)
        for row in frows:
            idx = [int(i) for i in row[li]]
            if len(idx) < 3 or min(idx) < 0 or max(idx) >= len(verts):
                raise MalformedFileError(f"bad face {idx}", path)
            tris.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, len(idx) - 1))
    return verts, np.asarray(tris, dtype=np.int64).reshape(-1, 3), normals


def _read_xyz(path):
    try:
        arr = np.loadtxt(path, ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise MalformedFileError(str(exc), path) from None
    if arr.shape[1] not in (3, 6):
        raise MalformedFileError(f"expected 3 or 6 columns, got {arr.shape[1]}", path)
    normals = arr[:, 3:6] if arr.shape[1] == 6 else None
    return arr[:, :3], np.zeros((0, 3), dtype=np.int64), normals


def _read_any(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        return _read_obj(path)
    if ext == ".ply":
        return _read_ply(path)
    if ext in (".xyz", ".txt", ".pts"):
        return _read_xyz(path)
    raise MalformedFileError(f"unsupported extension {ext!r}", path)


def load_mesh(path, watertight: bool = False) -> TriangleMesh:
    """Read an OBJ or PLY mesh; with ``watertight=True`` also validate it."""
    verts, tris, _ = _read_any(path)
    mesh = TriangleMesh(verts, tris)
    if watertight:
        mesh.validate(watertight=True)
    return mesh


def load_cloud(path) -> OrientedPointSet:
    """Read a point cloud (PLY or whitespace XYZ with optional normal columns)."""
    verts, _, normals = _read_any(path)
    if normals is not None:
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        if (lengths == 0).any():
            normals = None
        else:
            normals = normals / lengths
    return OrientedPointSet(verts, normals)


def save_obj(path, mesh: TriangleMesh):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v %r %r %r\n" % (float(v[0]), float(v[1]), float(v[2])))
        for t in mesh.triangles + 1:
            fh.write(f"f {t[0]} {t[1]} {t[2]}\n")


def save_ply(path, vertices, triangles=None, normals=None, binary: bool = True):
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    triangles = np.zeros((0, 3), dtype=np.int64) if triangles is None else np.asarray(triangles).reshape(-1, 3)
    fmt = "binary_little_endian" if binary else "ascii"
    head = ["ply", f"format {fmt} 1.0", f"element vertex {len(vertices)}",
            "property double x", "property double y", "property double z"]
    if normals is not None:
        head += ["property double nx", "property double ny", "property double nz"]
    if len(triangles):
        head += [f"element face {len(triangles)}", "property list uchar int vertex_indices"]
    head.append("end_header")
    cols = vertices if normals is None else np.hstack([vertices, np.asarray(normals, dtype=np.float64)])
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        if binary:
            fh.write(cols.astype("<f8").tobytes())
            for t in triangles:
                fh.write(struct.pack("<B3i", 3, *map(int, t)))
        else:
            for row in cols:
                fh.write((" ".join(repr(float(c)) for c in row) + "\n").encode())
            for t in triangles:
                fh.write(f"3 {t[0]} {t[1]} {t[2]}\n".encode())


def save_mesh(path, mesh: TriangleMesh):
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        save_obj(path, mesh)
    elif ext == ".ply":
        save_ply(path, mesh.vertices, mesh.triangles)
    else:
        raise ValueError(f"unsupported mesh extension {ext!r}")


def save_cloud(path, cloud: OrientedPointSet):
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ply":
        save_ply(path, cloud.positions, normals=cloud.normals)
    else:
        cols = cloud.positions if cloud.normals is None else np.hstack([cloud.positions, cloud.normals])
        np.savetxt(path, cols, fmt="%.17g")
