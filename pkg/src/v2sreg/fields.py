"""Regular-grid representations: signed/unsigned distance fields, the
Gaussian-splatted displacement grid, block-mean downsampling, and flip
augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import kernels
from .geometry import SurfaceMesh, TetMesh
from .scenario import SampleMeta

PIPELINE_RESOLUTIONS = (8, 16, 32, 64)


class OpenSurfaceError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    resolution: int
    origin: tuple  # (x, y, z) meters, first grid point
    spacing: float  # meters, uniform

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        if self.spacing <= 0:
            raise ValueError("spacing must be > 0")
        object.__setattr__(self, "origin",
                           tuple(float(x) for x in self.origin))

    def axes(self):
        r = self.resolution
        return tuple(self.origin[a] + self.spacing * np.arange(r)
                     for a in range(3))

    def points(self) -> np.ndarray:
        """All grid points, shape (r³, 3), x fastest."""
        ax = self.axes()
        z, y, x = np.meshgrid(ax[2], ax[1], ax[0], indexing="ij")
        return np.stack([x, y, z], axis=-1).reshape(-1, 3)

    def extent(self) -> float:
        return self.spacing * (self.resolution - 1)


@dataclass(frozen=True)
class GridField:
    spec: GridSpec
    values: np.ndarray  # (r, r, r, channels) float32, indexed (x, y, z, c)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        r = self.spec.resolution
        if v.shape[:3] != (r, r, r) or v.shape[3] not in (1, 3):
            raise ValueError(f"bad grid shape {v.shape} for resolution {r}")
        if not np.isfinite(v).all():
            raise ValueError("grid contains NaN or Inf")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[3]


@dataclass
class Sample:
    sdf_p: Optional[GridField]
    df_i: Optional[GridField]
    u: Optional[GridField]
    meta: SampleMeta

    def __post_init__(self):
        specs = [g.spec for g in (self.sdf_p, self.df_i, self.u)
                 if g is not None]
        if not specs:
            raise ValueError("sample has no grids")
        if any(s != specs[0] for s in specs):
            raise ValueError("sample grids disagree on GridSpec")

    @property
    def spec(self) -> GridSpec:
        for g in (self.sdf_p, self.df_i, self.u):
            if g is not None:
                return g.spec
        raise AssertionError


def grid_spec_for(preop: SurfaceMesh, intraop: SurfaceMesh,
                  resolution: int = 64) -> GridSpec:
    """Cubic grid over the union bbox of both meshes, padded 10% per side.

    The spacing is rounded up to a 12-bit mantissa and the origin snapped to
    an integer multiple of it, so every grid coordinate is exact in f32 and
    mirroring the scene about a coordinate plane negates the grid points
    bit-for-bit. The snap costs under half a spacing of placement, which the
    10% padding absorbs.
    """
    lo = np.minimum(preop.vertices.min(axis=0), intraop.vertices.min(axis=0))
    hi = np.maximum(preop.vertices.max(axis=0), intraop.vertices.max(axis=0))
    size = hi - lo
    lo = lo - 0.1 * size
    hi = hi + 0.1 * size
    cube = float((hi - lo).max())
    half = (resolution - 1) / 2.0
    m, e = math.frexp(cube / (resolution - 1))
    spacing = math.ldexp(math.ceil(m * 4096.0) / 4096.0, e)
    center = 0.5 * (lo + hi)
    k = np.round(center / spacing - half)
    return GridSpec(resolution=resolution,
                    origin=tuple(float(x * spacing) for x in k),
                    spacing=spacing)


def _grid_unsigned(index: kernels.TriangleIndex, spec: GridSpec) -> np.ndarray:
    dist, _, _ = index.query(spec.points())
    r = spec.resolution
    # points() runs x fastest: reshape to (z, y, x) then transpose
    return np.ascontiguousarray(dist.reshape(r, r, r).transpose(2, 1, 0))


def _grid_inside(index: kernels.TriangleIndex, spec: GridSpec,
                 dist: np.ndarray) -> np.ndarray:
    """Inside mask for all grid points from a few winding evaluations.

    Two grid neighbors p, q with d(p) + d(q) > |p - q| must lie on the same
    side of the surface (the segment cannot reach it); flooding these
    certified edges leaves one winding evaluation per connected component.
    Points near the surface end up as singleton components and are evaluated
    individually.
    """
    r = spec.resolution
    # flat index (x, y, z) C-order, matching dist's layout
    idx = np.arange(r ** 3).reshape(r, r, r)
    dflat = dist.ravel()
    rows, cols = [], []
    thresh = spec.spacing * (1.0 + 1e-9) + 1e-12
    for axis in range(3):
        s0 = [slice(None)] * 3
        s1 = [slice(None)] * 3
        s0[axis] = slice(0, r - 1)
        s1[axis] = slice(1, r)
        a = idx[tuple(s0)].ravel()
        b = idx[tuple(s1)].ravel()
        certain = (dflat[a] + dflat[b]) > thresh
        rows.append(a[certain])
        cols.append(b[certain])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    g = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int8), (rows, cols)),
        shape=(r ** 3, r ** 3))
    ncomp, labels = connected_components(g, directed=False)
    pts = np.stack(np.meshgrid(*spec.axes(), indexing="ij"),
                   axis=-1).reshape(-1, 3)
    # representative = first flat index of each component
    order = np.argsort(labels, kind="stable")
    first = order[np.searchsorted(labels[order], np.arange(ncomp))]
    comp_inside = index.winding(pts[first]) > 0.5
    return comp_inside[labels].reshape(r, r, r)


def signed_distance_grid(surface: SurfaceMesh, spec: GridSpec,
                         index: Optional[kernels.TriangleIndex] = None,
                         return_inside: bool = False):
    """SDF of a closed surface on the grid: negative strictly inside."""
    if not surface.is_watertight():
        raise OpenSurfaceError("signed distance needs a closed surface")
    if index is None:
        index = kernels.TriangleIndex(surface.vertices, surface.triangles)
    dist = _grid_unsigned(index, spec)
    inside = _grid_inside(index, spec, dist)
    signed = np.where(inside, -dist, dist)
    out = GridField(spec, signed.astype(np.float32)[..., None])
    if return_inside:
        return out, inside
    return out


def unsigned_distance_grid(surface, spec: GridSpec) -> GridField:
    """Distance field of a surface, open patch, or point cloud."""
    if isinstance(surface, SurfaceMesh) and surface.num_triangles > 0:
        index = kernels.TriangleIndex(surface.vertices, surface.triangles)
        dist = _grid_unsigned(index, spec)
    else:
        pts = (surface.vertices if isinstance(surface, SurfaceMesh)
               else np.asarray(surface, dtype=np.float64))
        tree = cKDTree(pts)
        d, _ = tree.query(spec.points())
        r = spec.resolution
        dist = np.ascontiguousarray(d.reshape(r, r, r).transpose(2, 1, 0))
    return GridField(spec, dist.astype(np.float32)[..., None])


def splat_displacement(mesh: TetMesh, u, spec: GridSpec,
                       sigma: Optional[float] = None,
                       truncation_sigmas: float = 3.0,
                       inside: Optional[np.ndarray] = None) -> GridField:
    """Gaussian-splat per-vertex displacements onto the grid.

    Interior grid points average vertex displacements with weights
    exp(-d²/2σ²) truncated at ``truncation_sigmas``·σ; interior points with
    no vertex in range copy the nearest vertex's displacement; exterior
    points are zero.
    """
    u = np.asarray(u, dtype=np.float64).reshape(mesh.num_vertices, 3)
    if sigma is None:
        sigma = spec.spacing
    radius = truncation_sigmas * sigma
    if inside is None:
        boundary = mesh.boundary
        _, inside = signed_distance_grid(boundary, spec, return_inside=True)

    wsum, wdisp = kernels.splat_scatter(
        np.asarray(spec.origin), spec.spacing, spec.resolution,
        mesh.vertices, u, sigma, radius)
    values = np.zeros((spec.resolution,) * 3 + (3,), dtype=np.float64)
    supported = wsum > 0.0
    fill = inside & supported
    values[fill] = wdisp[fill] / wsum[fill][..., None]

    empty = inside & ~supported
    if empty.any():
        pts = np.stack(np.meshgrid(*spec.axes(), indexing="ij"), axis=-1)
        holes = pts[empty]
        # nearest vertex with deterministic tie-break on the smaller index
        tree = cKDTree(mesh.vertices)
        k = min(8, mesh.num_vertices)
        _, ii = tree.query(holes, k=k)
        ii = ii.reshape(len(holes), k)
        d2 = np.einsum("hkj,hkj->hk",
                       mesh.vertices[ii] - holes[:, None, :],
                       mesh.vertices[ii] - holes[:, None, :])
        best = np.lexsort((ii, d2), axis=1)[:, 0]
        chosen = ii[np.arange(len(holes)), best]
        values[empty] = u[chosen]
    values[~inside] = 0.0
    # canonicalize signed zeros so mirroring a mesh and flipping a grid
    # agree bitwise
    values = values + 0.0
    return GridField(spec, values.astype(np.float32))


def downsample(field: GridField, to_resolution: int) -> GridField:
    """Block-mean pooling to a divisor resolution."""
    r = field.spec.resolution
    if r % to_resolution != 0:
        raise ValueError(f"{to_resolution} does not divide {r}")
    f = r // to_resolution
    v = field.values.astype(np.float64)
    c = field.channels
    v = v.reshape(to_resolution, f, to_resolution, f, to_resolution, f, c)
    v = v.mean(axis=(1, 3, 5))
    new_spec = GridSpec(
        resolution=to_resolution,
        origin=tuple(np.asarray(field.spec.origin)
                     + 0.5 * (f - 1) * field.spec.spacing),
        spacing=field.spec.spacing * f)
    return GridField(new_spec, v.astype(np.float32))


_AXIS_CODES = "xyz"


def flip_field(field: GridField, axes) -> GridField:
    """Mirror a grid along the given axes; negate flipped vector components."""
    axset = _axes_set(axes)
    v = field.values
    for a in sorted(axset):
        v = np.flip(v, axis=a)
    v = v.copy()
    if field.channels == 3:
        for a in sorted(axset):
            # the trailing + 0.0 keeps zeros positive (bitwise involution)
            v[..., a] = -v[..., a] + np.float32(0.0)
    return GridField(field.spec, v)


def _axes_set(axes):
    out = set()
    for a in axes:
        if isinstance(a, str):
            out.add(_AXIS_CODES.index(a.lower()))
        else:
            out.add(int(a))
    if not out <= {0, 1, 2}:
        raise ValueError(f"bad axes {axes!r}")
    return out


def flip_augment(sample: Sample, axes) -> Sample:
    """Mirror all grids of a sample; metadata records the flip code."""
    axset = _axes_set(axes)
    code = "".join(_AXIS_CODES[a] for a in sorted(axset))
    meta = SampleMeta.from_dict(sample.meta.to_dict())
    meta.flip_code = code
    return Sample(
        sdf_p=None if sample.sdf_p is None else flip_field(sample.sdf_p, axset),
        df_i=None if sample.df_i is None else flip_field(sample.df_i, axset),
        u=None if sample.u is None else flip_field(sample.u, axset),
        meta=meta)


def mls_smooth(points, radius: float = 0.005) -> np.ndarray:
    """Project each point onto a Gaussian-weighted local regression plane.

    Points with fewer than three neighbors inside ``radius`` pass through
    unchanged.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if radius <= 0:
        raise ValueError("radius must be positive")
    tree = cKDTree(pts)
    sigma2 = (radius / 3.0) ** 2
    out = pts.copy()
    for i, nbrs in enumerate(tree.query_ball_point(pts, radius)):
        if len(nbrs) < 3:
            continue
        nb = pts[nbrs]
        d2 = ((nb - pts[i]) ** 2).sum(axis=1)
        w = np.exp(-0.5 * d2 / sigma2)
        w /= w.sum()
        centroid = (w[:, None] * nb).sum(axis=0)
        q = nb - centroid
        cov = (w[:, None, None] * (q[:, :, None] * q[:, None, :])).sum(axis=0)
        evals, evecs = np.linalg.eigh(cov)
        if evals[2] <= 0:
            continue
        normal = evecs[:, 0]
        out[i] = pts[i] - normal * float(normal @ (pts[i] - centroid))
    return out
