"""Backend dispatch for the hot kernels.

The compiled Cython extension (``v2sreg._kernels``) is used when it imported
cleanly; otherwise the pure-numpy twin (``v2sreg._kernels_py``) takes over.
Setting ``V2S_PURE_PYTHON=1`` forces the fallback, which is what the kernel
benchmark and the backend-parity tests use.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py
from .bvh import TriBVH, build as _build_bvh

_compiled = None
if os.environ.get("V2S_PURE_PYTHON", "") != "1":
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def backend() -> str:
    return BACKEND


def _as_tris(vertices, triangles) -> np.ndarray:
    verts = np.ascontiguousarray(vertices, dtype=np.float64)
    faces = np.asarray(triangles)
    return np.ascontiguousarray(verts[faces])


class TriangleIndex:
    """Spatial index over a triangle soup for distance and winding queries.

    Triangles are canonicalized to ascending vertex-index order so queries do
    not depend on the winding of the input; the original orientation survives
    as a per-triangle sign applied to solid angles. A mirrored mesh (negated
    coordinates, reversed winding) therefore runs through bit-identical
    arithmetic, which keeps flipped voxelizations exactly mirror-equal.
    """

    def __init__(self, vertices, triangles):
        if len(triangles) == 0:
            raise ValueError("empty triangle set")
        faces = np.asarray(triangles)
        inversions = ((faces[:, 0] > faces[:, 1]).astype(np.int64)
                      + (faces[:, 0] > faces[:, 2])
                      + (faces[:, 1] > faces[:, 2]))
        self.signs = np.where(inversions % 2 == 0, 1.0, -1.0)
        self.tris = _as_tris(vertices, np.sort(faces, axis=1))
        if _compiled is not None:
            self._bvh: TriBVH | None = _build_bvh(self.tris)
            self._py = None
        else:
            self._bvh = None
            self._py = _kernels_py.TriangleClosest(self.tris)

    def query(self, points):
        """Unsigned distance to the surface: (dist, closest_point, tri_id)."""
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        if _compiled is not None:
            b = self._bvh
            return _compiled.bvh_closest(
                self.tris, b.bb_min, b.bb_max, b.left, b.right,
                b.start, b.count, b.order, pts)
        return self._py.query(pts)

    def winding(self, points):
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        if _compiled is not None:
            return _compiled.winding_numbers(self.tris, self.signs, pts)
        return _kernels_py.winding_numbers(self.tris, self.signs, pts)


def _fem_args(pos, tets, bm, vol):
    return (np.ascontiguousarray(pos, dtype=np.float64),
            np.ascontiguousarray(tets, dtype=np.int32),
            np.ascontiguousarray(bm, dtype=np.float64),
            np.ascontiguousarray(vol, dtype=np.float64))


def nh_energy(pos, tets, bm, vol, mu: float, lam: float):
    mod = _compiled if _compiled is not None else _kernels_py
    return mod.nh_energy(*_fem_args(pos, tets, bm, vol), mu, lam)


def nh_energy_grad(pos, tets, bm, vol, mu: float, lam: float):
    mod = _compiled if _compiled is not None else _kernels_py
    return mod.nh_energy_grad(*_fem_args(pos, tets, bm, vol), mu, lam)


def nh_element_hessians(pos, tets, bm, vol, mu: float, lam: float):
    mod = _compiled if _compiled is not None else _kernels_py
    return mod.nh_element_hessians(*_fem_args(pos, tets, bm, vol), mu, lam)


def splat_scatter(origin, spacing: float, res: int, verts, disp,
                  sigma: float, radius: float):
    mod = _compiled if _compiled is not None else _kernels_py
    return mod.splat_scatter(
        np.ascontiguousarray(origin, dtype=np.float64), float(spacing),
        int(res),
        np.ascontiguousarray(verts, dtype=np.float64),
        np.ascontiguousarray(disp, dtype=np.float64),
        float(sigma), float(radius))
