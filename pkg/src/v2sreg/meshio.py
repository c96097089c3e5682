"""Mesh file I/O: ASCII and binary little-endian PLY for surfaces and point
clouds, plus a small ASCII tet-mesh format (`tetmesh v1`)."""

from __future__ import annotations

import struct

import numpy as np

from .geometry import SurfaceMesh, TetMesh


class MeshIOError(RuntimeError):
    pass


_PLY_TYPES = {
    "char": ("b", 1), "int8": ("b", 1),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
}


def write_ply(mesh: SurfaceMesh, path, binary: bool = False) -> None:
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    faces = np.asarray(mesh.triangles, dtype=np.int32)
    header = ["ply",
              "format binary_little_endian 1.0" if binary
              else "format ascii 1.0",
              f"element vertex {len(verts)}",
              "property double x", "property double y", "property double z",
              f"element face {len(faces)}",
              "property list uchar int vertex_indices",
              "end_header"]
    if binary:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            fh.write(verts.astype("<f8").tobytes())
            for tri in faces:
                fh.write(struct.pack("<B3i", 3, *tri))
    else:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(header) + "\n")
            for v in verts:
                fh.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
            for tri in faces:
                fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")


def _parse_ply_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise MeshIOError("not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_name, type, list_count_type|None)])
    while True:
        line = fh.readline()
        if not line:
            raise MeshIOError("unterminated PLY header")
        parts = line.decode("ascii", "replace").strip().split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1][2].append((parts[4], parts[3], parts[2]))
            else:
                elements[-1][2].append((parts[2], parts[1], None))
        elif parts[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshIOError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path):
    """Read a PLY surface or point cloud: returns (vertices, triangles).

    ``triangles`` is empty for a faceless cloud.
    """
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        verts = None
        faces = []
        for name, count, props in elements:
            if fmt == "ascii":
                rows = [fh.readline().split() for _ in range(count)]
                if name == "vertex":
                    cols = {p[0]: i for i, p in enumerate(props)}
                    if not {"x", "y", "z"} <= set(cols):
                        raise MeshIOError("vertex element lacks x/y/z")
                    verts = np.array(
                        [[float(r[cols["x"]]), float(r[cols["y"]]),
                          float(r[cols["z"]])] for r in rows])
                elif name == "face":
                    for r in rows:
                        k = int(r[0])
                        poly = [int(x) for x in r[1:1 + k]]
                        for i in range(1, k - 1):
                            faces.append([poly[0], poly[i], poly[i + 1]])
            else:
                if name == "vertex":
                    codes = []
                    for pname, ptype, plist in props:
                        if plist is not None:
                            raise MeshIOError("list property on vertices")
                        codes.append((pname,) + _PLY_TYPES[ptype])
                    rowfmt = "<" + "".join(c[1] for c in codes)
                    rowsize = struct.calcsize(rowfmt)
                    raw = fh.read(rowsize * count)
                    if len(raw) != rowsize * count:
                        raise MeshIOError("truncated vertex data")
                    cols = {c[0]: i for i, c in enumerate(codes)}
                    data = [struct.unpack_from(rowfmt, raw, i * rowsize)
                            for i in range(count)]
                    verts = np.array(
                        [[row[cols["x"]], row[cols["y"]], row[cols["z"]]]
                         for row in data], dtype=np.float64)
                elif name == "face":
                    pname, ptype, plist = props[0]
                    cfmt, csize = _PLY_TYPES[plist]
                    ifmt, isize = _PLY_TYPES[ptype]
                    for _ in range(count):
                        k = struct.unpack("<" + cfmt, fh.read(csize))[0]
                        poly = struct.unpack("<" + str(k) + ifmt,
                                             fh.read(isize * k))
                        for i in range(1, k - 1):
                            faces.append([poly[0], poly[i], poly[i + 1]])
                else:
                    raise MeshIOError(
                        f"cannot skip unknown binary element {name!r}")
    if verts is None:
        raise MeshIOError("PLY file has no vertex element")
    tris = (np.asarray(faces, dtype=np.int32) if faces
            else np.zeros((0, 3), dtype=np.int32))
    return verts, tris


def read_surface(path) -> SurfaceMesh:
    verts, tris = read_ply(path)
    if len(tris) == 0:
        raise MeshIOError(f"{path}: no faces; expected a surface mesh")
    return SurfaceMesh(verts, tris)


def read_points(path) -> np.ndarray:
    """Point cloud from a PLY (faces ignored) or whitespace xyz text file."""
    p = str(path)
    if p.endswith(".ply"):
        verts, _ = read_ply(path)
        return verts
    pts = np.loadtxt(p, dtype=np.float64, ndmin=2)
    if pts.shape[1] < 3:
        raise MeshIOError(f"{path}: expected at least 3 columns")
    return pts[:, :3]


def write_tetmesh(mesh: TetMesh, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("tetmesh v1\n")
        fh.write(f"{mesh.num_vertices} {mesh.num_tets}\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]!r} {v[1]!r} {v[2]!r}\n")
        for t in mesh.tets:
            fh.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")


def read_tetmesh(path) -> TetMesh:
    from .geometry import _boundary_faces
    with open(path, "r", encoding="ascii") as fh:
        if fh.readline().strip() != "tetmesh v1":
            raise MeshIOError(f"{path}: bad tetmesh header")
        nv, nt = (int(x) for x in fh.readline().split())
        verts = np.array([[float(x) for x in fh.readline().split()]
                          for _ in range(nv)])
        tets = np.array([[int(x) for x in fh.readline().split()]
                         for _ in range(nt)], dtype=np.int32)
    if verts.shape != (nv, 3) or tets.shape != (nt, 4):
        raise MeshIOError(f"{path}: truncated tetmesh data")
    return TetMesh(verts, tets, _boundary_faces(tets))
