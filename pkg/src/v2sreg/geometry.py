"""Random organ-like surface synthesis, tetrahedralization, and point
classification.

Surfaces come from an implicit metaball composition polygonized with
marching cubes and Taubin-smoothed. Volumes come from a body-centered-cubic
lattice of tetrahedra conformed to the surface by vertex warping plus
marching-tetrahedra subdivision of the crossing elements.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from skimage import measure

from . import kernels
from .rng import stream


class GenerationError(RuntimeError):
    """Shape generation could not meet its constraints within the retry budget."""


class MeshingError(RuntimeError):
    """Tetrahedralization could not meet the quality floor."""


@dataclass(frozen=True)
class SurfaceMesh:
    vertices: np.ndarray  # (V, 3) float64, meters
    triangles: np.ndarray  # (T, 3) int32

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int32)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must be (V, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must be (T, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def area(self) -> float:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return float(np.linalg.norm(np.cross(b - a, c - a), axis=1).sum() / 2.0)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return np.linalg.norm(np.cross(b - a, c - a), axis=1) / 2.0

    def signed_volume(self) -> float:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def euler_characteristic(self) -> int:
        v = len(np.unique(self.triangles))
        e = len(self._undirected_edges())
        f = self.num_triangles
        return v - e + f

    def _directed_edges(self) -> np.ndarray:
        t = self.triangles
        return np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])

    def _undirected_edges(self) -> np.ndarray:
        e = np.sort(self._directed_edges(), axis=1)
        return np.unique(e, axis=0)

    def is_closed_manifold(self) -> bool:
        """Every edge shared by exactly two triangles, oppositely directed."""
        if self.num_triangles == 0:
            return False
        de = self._directed_edges()
        # no repeated directed edge (consistent orientation)
        if len(np.unique(de, axis=0)) != len(de):
            return False
        ue, counts = np.unique(np.sort(de, axis=1), axis=0, return_counts=True)
        return bool((counts == 2).all())

    def is_watertight(self) -> bool:
        """Every directed edge is matched by its reverse.

        Weaker than is_closed_manifold: pinched edges shared by four or more
        triangles are allowed as long as orientations cancel, which is what
        winding numbers and the divergence-theorem volume need. Boundaries of
        tet meshes can pinch where sliver drops expose a vertex or edge.
        """
        if self.num_triangles == 0:
            return False
        de = self._directed_edges()
        fwd, fc = np.unique(de, axis=0, return_counts=True)
        rev_sorted = np.lexsort((fwd[:, 0], fwd[:, 1]))
        rev = fwd[rev_sorted][:, ::-1]
        if fwd.shape != rev.shape or not np.array_equal(fwd, rev):
            return False
        return bool(np.array_equal(fc, fc[rev_sorted]))


@dataclass(frozen=True)
class TetMesh:
    vertices: np.ndarray  # (V, 3) float64
    tets: np.ndarray  # (M, 4) int32, positive orientation
    boundary_faces: np.ndarray  # (B, 3) int32 into vertices, outward-oriented

    def __post_init__(self):
        object.__setattr__(self, "vertices",
                           np.asarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "tets", np.asarray(self.tets, dtype=np.int32))
        object.__setattr__(self, "boundary_faces",
                           np.asarray(self.boundary_faces, dtype=np.int32))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_tets(self) -> int:
        return len(self.tets)

    def tet_volumes(self) -> np.ndarray:
        p = self.vertices[self.tets]
        return np.linalg.det(p[:, 1:] - p[:, :1]) / 6.0

    def total_volume(self) -> float:
        return float(self.tet_volumes().sum())

    @property
    def boundary_vertex_ids(self) -> np.ndarray:
        return np.unique(self.boundary_faces)

    @property
    def boundary(self) -> SurfaceMesh:
        """Boundary as a compact SurfaceMesh (vertices renumbered)."""
        ids = self.boundary_vertex_ids
        remap = np.full(self.num_vertices, -1, dtype=np.int32)
        remap[ids] = np.arange(len(ids), dtype=np.int32)
        return SurfaceMesh(self.vertices[ids], remap[self.boundary_faces])

    def boundary_in_tet_ids(self) -> SurfaceMesh:
        """Boundary triangles referencing the tet mesh's own vertex array."""
        return SurfaceMesh(self.vertices, self.boundary_faces)


@dataclass(frozen=True)
class GenParams:
    seed: int
    num_blobs: tuple = (2, 5)
    blob_radius: tuple = (0.03, 0.08)  # meters, pre-rescale
    target_edge_length: float = 0.015
    smoothing_iterations: int = 10
    bbox_diagonal_range: tuple = (0.10, 0.30)
    dent_count: tuple = (0, 2)
    dent_depth: float = 0.8  # relative field strength of subtracted blobs
    max_retries: int = 10

    def validate(self):
        if self.num_blobs[0] > self.num_blobs[1] or self.num_blobs[0] < 1:
            raise ValueError("num_blobs range empty")
        if self.blob_radius[0] > self.blob_radius[1] or self.blob_radius[0] <= 0:
            raise ValueError("blob_radius range empty")
        if self.target_edge_length <= 0:
            raise ValueError("target_edge_length must be > 0")
        if self.bbox_diagonal_range[0] > self.bbox_diagonal_range[1]:
            raise ValueError("bbox_diagonal_range empty")
        if self.dent_count[0] > self.dent_count[1] or self.dent_count[0] < 0:
            raise ValueError("dent_count range empty")


def _largest_component(vertices, triangles):
    ue = np.sort(np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]],
                                 triangles[:, [2, 0]]]), axis=1)
    n = len(vertices)
    g = sparse.coo_matrix((np.ones(len(ue)), (ue[:, 0], ue[:, 1])), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    ref = labels[triangles[:, 0]]
    counts = np.bincount(ref)
    keep = ref == counts.argmax()
    tris = triangles[keep]
    used = np.unique(tris)
    remap = np.full(n, -1, dtype=np.int32)
    remap[used] = np.arange(len(used), dtype=np.int32)
    return vertices[used], remap[tris]


def _taubin_smooth(vertices, triangles, iterations, lam=0.5, mu=-0.53):
    """Shrink-compensated Laplacian smoothing with uniform weights."""
    if iterations <= 0:
        return vertices
    ue = np.sort(np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]],
                                 triangles[:, [2, 0]]]), axis=1)
    ue = np.unique(ue, axis=0)
    n = len(vertices)
    rows = np.concatenate([ue[:, 0], ue[:, 1]])
    cols = np.concatenate([ue[:, 1], ue[:, 0]])
    adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    deg[deg == 0] = 1.0
    v = vertices.copy()
    for _ in range(iterations):
        for step in (lam, mu):
            v = v + step * ((adj @ v) / deg[:, None] - v)
    return v


def _metaball_field(points, centers, radii, dent_centers, dent_radii,
                    dent_depth):
    """Sum of Gaussian blobs; the 0.5 level of one blob is its exact sphere."""
    f = np.zeros(len(points))
    inv = 1.0 / (radii ** 2 / (2.0 * np.log(2.0)))
    for c, s in zip(centers, inv):
        d2 = np.einsum("ij,ij->i", points - c, points - c)
        f += np.exp(-0.5 * d2 * s)
    if len(dent_centers):
        dinv = 1.0 / (dent_radii ** 2 / (2.0 * np.log(2.0)))
        for c, s in zip(dent_centers, dinv):
            d2 = np.einsum("ij,ij->i", points - c, points - c)
            f -= dent_depth * np.exp(-0.5 * d2 * s)
    return f


def gen_random_organ(params: GenParams, return_info: bool = False):
    """Synthesize a random closed organ-like surface mesh.

    Deterministic in ``params.seed``. Returns the mesh, or ``(mesh, info)``
    with the sampled blob configuration when ``return_info`` is set.
    """
    params.validate()
    last_reason = "unknown"
    for attempt in range(params.max_retries):
        rng = stream(params.seed, f"organ#{attempt}")
        n = int(rng.integers(params.num_blobs[0], params.num_blobs[1] + 1))
        radii = rng.uniform(*params.blob_radius, size=n)
        centers = np.zeros((n, 3))
        for i in range(1, n):
            parent = int(rng.integers(0, i))
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            dist = rng.uniform(0.45, 0.80) * radii[parent]
            centers[i] = centers[parent] + dist * direction

        ndents = int(rng.integers(params.dent_count[0], params.dent_count[1] + 1))
        dent_centers = np.zeros((ndents, 3))
        dent_radii = np.zeros(ndents)
        for k in range(ndents):
            host = int(rng.integers(0, n))
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            dent_radii[k] = rng.uniform(0.35, 0.6) * radii[host]
            dent_centers[k] = centers[host] + direction * (
                radii[host] + 0.35 * dent_radii[k])

        # rescale the configuration so the sphere-union bbox diagonal hits a
        # target drawn from the middle of the configured range
        lo, hi = params.bbox_diagonal_range
        target_diag = rng.uniform(lo + 0.15 * (hi - lo), hi - 0.15 * (hi - lo))
        raw_lo = (centers - radii[:, None]).min(axis=0)
        raw_hi = (centers + radii[:, None]).max(axis=0)
        scale = target_diag / float(np.linalg.norm(raw_hi - raw_lo))
        centers *= scale
        radii *= scale
        dent_centers *= scale
        dent_radii *= scale

        h = params.target_edge_length
        margin = 3.0 * h + 0.25 * radii.max()
        g_lo = (centers - radii[:, None]).min(axis=0) - margin
        g_hi = (centers + radii[:, None]).max(axis=0) + margin
        dims = np.maximum(np.ceil((g_hi - g_lo) / h).astype(int) + 1, 8)
        axes = [g_lo[a] + h * np.arange(dims[a]) for a in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        f = _metaball_field(grid.reshape(-1, 3), centers, radii,
                            dent_centers, dent_radii, params.dent_depth)
        f = f.reshape(dims)
        if not (f.max() > 0.5 > f.min()):
            last_reason = "empty level set"
            continue
        verts, faces, _, _ = measure.marching_cubes(f, level=0.5,
                                                    spacing=(h, h, h))
        verts = verts + g_lo
        faces = faces.astype(np.int32)
        verts, faces = _largest_component(verts, faces)
        verts = _taubin_smooth(verts, faces, params.smoothing_iterations)

        mesh = SurfaceMesh(verts, faces)
        if mesh.signed_volume() < 0:
            mesh = SurfaceMesh(verts, faces[:, ::-1].copy())
        if not mesh.is_closed_manifold():
            last_reason = "non-manifold polygonization"
            continue
        if mesh.euler_characteristic() != 2:
            last_reason = "wrong genus"
            continue
        diag = mesh.bbox_diagonal()
        if not (lo <= diag <= hi):
            last_reason = f"bbox diagonal {diag:.3f} outside range"
            continue
        if return_info:
            info = {"attempt": attempt, "radii": radii, "centers": centers,
                    "scale": scale, "target_diag": target_diag,
                    "dent_centers": dent_centers, "dent_radii": dent_radii}
            return mesh, info
        return mesh
    raise GenerationError(
        f"no valid shape after {params.max_retries} attempts ({last_reason})")


def classify_inside(points, surface: SurfaceMesh) -> np.ndarray:
    """True iff the point lies inside the closed surface (ties -> outside)."""
    index = kernels.TriangleIndex(surface.vertices, surface.triangles)
    return index.winding(np.atleast_2d(points)) > 0.5


def _signed_vertex_distances(points, index: "kernels.TriangleIndex"):
    dist, _, _ = index.query(points)
    inside = index.winding(points) > 0.5
    return np.where(inside, -dist, dist)


# ---------------------------------------------------------------------------
# BCC lattice tetrahedralization


def _bcc_lattice(lo, hi, h):
    """Corner+center lattice covering [lo, hi] with one ghost cell ring.

    Returns (vertices, tets) of the space-tiling BCC tetrahedra whose union
    covers the box.
    """
    nc = np.ceil((hi - lo) / h).astype(int) + 3  # cells incl. ghost ring
    base = lo - h  # corner (0,0,0) one cell outside
    cd = nc + 1  # corners per axis
    ci, cj, ck = np.meshgrid(*(np.arange(d) for d in cd), indexing="ij")
    corners = base + h * np.stack([ci, cj, ck], axis=-1).reshape(-1, 3)

    def corner_id(i, j, k):
        return (i * cd[1] + j) * cd[2] + k

    ncorner = cd[0] * cd[1] * cd[2]
    xi, xj, xk = np.meshgrid(*(np.arange(d) for d in nc), indexing="ij")
    centers = base + h * (np.stack([xi, xj, xk], axis=-1).reshape(-1, 3) + 0.5)

    def center_id(i, j, k):
        return ncorner + (i * nc[1] + j) * nc[2] + k

    verts = np.concatenate([corners, centers])

    tets = []
    # internal faces along each axis; 4 tets per face (face edge + 2 centers)
    for axis in range(3):
        shape = nc.copy()
        shape[axis] -= 1  # faces between consecutive cells along this axis
        fi, fj, fk = np.meshgrid(*(np.arange(d) for d in shape), indexing="ij")
        fi, fj, fk = fi.ravel(), fj.ravel(), fk.ravel()
        c1 = center_id(fi, fj, fk)
        nxt = [fi.copy(), fj.copy(), fk.copy()]
        nxt[axis] += 1
        c2 = center_id(*nxt)
        # shared face corners: coordinates of the next cell's low face
        fc = [fi.copy(), fj.copy(), fk.copy()]
        fc[axis] += 1
        a1, a2 = [a for a in range(3) if a != axis]
        quad = []
        for d1, d2 in ((0, 0), (1, 0), (1, 1), (0, 1)):
            idx = [fc[0].copy(), fc[1].copy(), fc[2].copy()]
            idx[a1] += d1
            idx[a2] += d2
            quad.append(corner_id(*idx))
        for e in range(4):
            e0, e1 = quad[e], quad[(e + 1) % 4]
            tets.append(np.stack([e0, e1, c1, c2], axis=1))
    tets = np.concatenate(tets).astype(np.int64)

    # orient positively
    p = verts[tets]
    vol6 = np.linalg.det(p[:, 1:] - p[:, :1])
    flip = vol6 < 0
    tets[flip] = tets[flip][:, [1, 0, 2, 3]]
    return verts, tets


def _tet_quality(verts, tets):
    """Inradius/circumradius ratio per tet (regular tet ~ 1/3)."""
    p = verts[tets]
    a, b, c, d = p[:, 0], p[:, 1], p[:, 2], p[:, 3]
    vol = np.abs(np.linalg.det(p[:, 1:] - p[:, :1])) / 6.0

    def tri_area(u, v, w):
        return np.linalg.norm(np.cross(v - u, w - u), axis=1) / 2.0

    s = (tri_area(b, c, d) + tri_area(a, c, d)
         + tri_area(a, b, d) + tri_area(a, b, c))
    with np.errstate(divide="ignore", invalid="ignore"):
        inr = 3.0 * vol / s
        # circumradius via the Cayley-Menger-free formula
        ba, ca, da = b - a, c - a, d - a
        la = np.einsum("ij,ij->i", ba, ba)
        lb = np.einsum("ij,ij->i", ca, ca)
        lc = np.einsum("ij,ij->i", da, da)
        num = (la[:, None] * np.cross(ca, da)
               + lb[:, None] * np.cross(da, ba)
               + lc[:, None] * np.cross(ba, ca))
        circ = np.linalg.norm(num, axis=1) / (12.0 * vol)
        q = inr / circ
    q[~np.isfinite(q)] = 0.0
    return q, vol


def _tet_quality_one(a, b, c, d) -> float:
    """Scalar twin of _tet_quality for subdivision-time apex selection."""
    ba, ca, da = b - a, c - a, d - a
    cross_cd = np.cross(ca, da)
    vol6 = abs(float(ba @ cross_cd))
    if vol6 <= 0.0:
        return 0.0
    vol = vol6 / 6.0
    s = 0.5 * (np.linalg.norm(np.cross(c - b, d - b))
               + np.linalg.norm(cross_cd)
               + np.linalg.norm(np.cross(ba, da))
               + np.linalg.norm(np.cross(ba, ca)))
    num = (float(ba @ ba) * cross_cd
           + float(ca @ ca) * np.cross(da, ba)
           + float(da @ da) * np.cross(ba, ca))
    circ = float(np.linalg.norm(num)) / (12.0 * vol)
    if circ <= 0.0 or not np.isfinite(circ):
        return 0.0
    return (3.0 * vol / s) / circ


_EDGE_WARP_FRACTION = {"long": 0.28, "short": 0.40}


def tetrahedralize(surface: SurfaceMesh, target_edge: float,
                   quality_floor: float = 0.002) -> TetMesh:
    """Fill a closed surface with tetrahedra on a BCC background lattice.

    Lattice vertices near the zero level of the signed distance are warped
    onto the surface; remaining sign-crossing tets are subdivided by
    marching-tetrahedra stencils so the mesh conforms to the surface.
    The warp keeps almost all elements above quality_floor by construction;
    grazing cuts can still produce a few slivers below it, which are dropped
    under a small volume budget and the exposed vertices pulled back to the
    surface.
    """
    if not surface.is_closed_manifold():
        raise MeshingError("input surface is not a closed manifold")
    if surface.signed_volume() <= 0:
        raise MeshingError("input surface must be outward-oriented")
    h = float(target_edge)
    lo, hi = surface.bbox()
    verts, tets = _bcc_lattice(lo, hi, h)
    index = kernels.TriangleIndex(surface.vertices, surface.triangles)
    dist, cpts, _ = index.query(verts)
    inside = index.winding(verts) > 0.5
    d = np.where(inside, -dist, dist)

    # unique edges of the lattice tets
    e = np.sort(np.concatenate([tets[:, [0, 1]], tets[:, [0, 2]],
                                tets[:, [0, 3]], tets[:, [1, 2]],
                                tets[:, [1, 3]], tets[:, [2, 3]]]), axis=1)
    e = np.unique(e, axis=0)
    crossing = (d[e[:, 0]] < 0) & (d[e[:, 1]] > 0)
    ce = e[crossing]
    elen = np.linalg.norm(verts[ce[:, 1]] - verts[ce[:, 0]], axis=1)
    t_cut = d[ce[:, 0]] / (d[ce[:, 0]] - d[ce[:, 1]])

    # warp pass: a vertex whose nearest incident cut sits within the
    # per-edge-type fraction of the edge length moves to its closest point
    # on the surface (so its distance becomes exactly zero)
    warp = np.zeros(len(verts), dtype=bool)
    if len(ce):
        frac = np.where(elen < 0.95 * h,
                        _EDGE_WARP_FRACTION["short"],
                        _EDGE_WARP_FRACTION["long"])
        near0 = t_cut < frac
        near1 = t_cut > 1.0 - frac
        warp[np.unique(ce[near0, 0])] = True
        warp[np.unique(ce[near1, 1])] = True
    verts = verts.copy()
    verts[warp] = cpts[warp]
    d = d.copy()
    d[warp] = 0.0

    keep_mask = (d[tets] <= 0).all(axis=1)
    cut_mask = ~keep_mask & (d[tets] < 0).any(axis=1)
    out_tets = [tets[keep_mask]]

    if cut_mask.any():
        new_tets, new_verts = _subdivide_crossing(verts, tets[cut_mask], d)
        if len(new_verts):
            verts = np.concatenate([verts, new_verts])
        if len(new_tets):
            out_tets.append(new_tets)
    all_tets = np.concatenate(out_tets)

    # compact vertex numbering
    used = np.unique(all_tets)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = verts[used]
    all_tets = remap[all_tets]

    q, vol = _tet_quality(verts, all_tets)
    tiny = vol < 1e-12 * h ** 3
    all_tets = all_tets[~tiny]
    q, vol = q[~tiny], vol[~tiny]

    total = vol.sum()
    bad = q < quality_floor
    if bad.any():
        if vol[bad].sum() > 1.5e-2 * total:
            raise MeshingError(
                f"quality floor {quality_floor} unreachable: "
                f"{bad.sum()} tets below floor carry "
                f"{vol[bad].sum() / total:.2%} of the volume")
        all_tets = all_tets[~bad]

    # re-compact after drops
    used = np.unique(all_tets)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = verts[used]
    all_tets = remap[all_tets].astype(np.int32)

    p = verts[all_tets]
    vol6 = np.linalg.det(p[:, 1:] - p[:, :1])
    flip = vol6 < 0
    all_tets[flip] = all_tets[flip][:, [1, 0, 2, 3]]

    boundary = _boundary_faces(all_tets)
    verts = _pull_deep_boundary(verts, all_tets, boundary, index, h,
                                quality_floor)
    return TetMesh(verts, all_tets, boundary)


def _pull_deep_boundary(verts, tets, boundary, index, h, floor,
                        sweeps: int = 24):
    """Pull boundary vertices exposed by sliver drops back to the surface.

    Every boundary vertex must end within h/2 of the surface. Deep vertices
    usually cluster and share tets, so the pull relaxes them jointly: many
    sweeps of small line-searched steps, deepest vertex first, each step
    keeping the incident tets above the quality floor.
    """
    bids = np.unique(boundary)
    dist, _, _ = index.query(verts[bids])
    if not (dist > 0.45 * h).any():
        return verts
    # incidence: vertex id -> tet rows touching it
    order = np.argsort(tets.ravel(), kind="stable")
    rows = order // 4
    starts = np.searchsorted(tets.ravel()[order], np.arange(len(verts)))
    ends = np.searchsorted(tets.ravel()[order], np.arange(len(verts)) + 1)

    verts = verts.copy()
    for _ in range(sweeps):
        dist, cpts, _ = index.query(verts[bids])
        deep = np.nonzero(dist > 0.45 * h)[0]
        if not len(deep):
            break
        moved = False
        for k in deep[np.argsort(-dist[deep], kind="stable")]:
            v = int(bids[k])
            incident = tets[rows[starts[v]:ends[v]]]
            start = verts[v].copy()
            for beta in (1.0, 0.6, 0.34, 0.18, 0.08):
                verts[v] = start + beta * (cpts[k] - start)
                q, vol = _tet_quality(verts[incident].reshape(-1, 3),
                                      np.arange(4 * len(incident),
                                                dtype=np.int64).reshape(-1, 4))
                if (vol > 0).all() and (q >= floor).all():
                    moved = True
                    break
            else:
                verts[v] = start
        if not moved:
            break
    dist, _, _ = index.query(verts[bids])
    if (dist > 0.5 * h).any():
        raise MeshingError(
            f"{int((dist > 0.5 * h).sum())} boundary vertices further than "
            f"target_edge/2 from the surface after cleanup")
    return verts


def _boundary_faces(tets) -> np.ndarray:
    """Faces belonging to exactly one tet, oriented outward."""
    # face i is opposite vertex i; order chosen so normals point away
    # from the opposite vertex for a positively oriented tet
    faces = np.concatenate([tets[:, [1, 2, 3]], tets[:, [0, 3, 2]],
                            tets[:, [0, 1, 3]], tets[:, [0, 2, 1]]])
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True,
                               return_counts=True)
    return faces[counts[inv] == 1].astype(np.int32)


def _subdivide_crossing(verts, cut_tets, d):
    """Marching-tetrahedra interior extraction for sign-crossing tets.

    Cut points are shared through an edge registry so neighboring tets agree;
    quads are split by the diagonal through their smallest vertex id. Each
    piece is convex (the cut is a plane of the per-tet linear interpolant),
    so pieces that are not tets are fanned from their smallest vertex.
    """
    nv = len(verts)
    new_verts = []
    cut_ids = {}

    def cut_vertex(u, v):
        nonlocal nv
        key = (u, v) if u < v else (v, u)
        got = cut_ids.get(key)
        if got is not None:
            return got
        du, dv = d[u], d[v]
        t = du / (du - dv)
        p = verts[u] + t * (verts[v] - verts[u])
        cut_ids[key] = nv
        new_verts.append(p)
        nv += 1
        return cut_ids[key]

    out = []

    def emit(a, b, c, dd):
        out.append((a, b, c, dd))

    def tri_quad_faces(poly_faces):
        """Triangulate faces: quads split through their min-id corner."""
        tris = []
        for f in poly_faces:
            if len(f) == 3:
                tris.append(f)
            else:
                k = int(np.argmin(f))
                f = f[k:] + f[:k]
                tris.append([f[0], f[1], f[2]])
                tris.append([f[0], f[2], f[3]])
        return tris

    def pos(i):
        if i < len(verts):
            return verts[i]
        return new_verts[i - len(verts)]

    def emit_polytope(faces_in):
        """Fan a convex polytope from whichever vertex gives the best fan.

        The apex choice is internal to the piece, so neighbors stay
        conforming; only the quad diagonals are shared and those are fixed
        by the min-id rule.
        """
        ids = sorted({i for f in faces_in for i in f})
        if len(ids) < 4:
            return
        if len(ids) == 4:
            emit(*ids)
            return
        tris = tri_quad_faces(faces_in)
        pts = {i: pos(i) for i in ids}
        best = None
        for apex in ids:
            fan = [t for t in tris if apex not in t]
            worst = min(_tet_quality_one(pts[apex], pts[t[0]], pts[t[1]],
                                         pts[t[2]]) for t in fan)
            if best is None or worst > best[0]:
                best = (worst, apex, fan)
        _, apex, fan = best
        for t in fan:
            emit(apex, t[0], t[1], t[2])

    for tet in cut_tets:
        vi = [int(x) for x in tet]
        dv = d[vi]
        ins = [i for i in range(4) if dv[i] <= 0]
        outs = [i for i in range(4) if dv[i] > 0]

        def cv(i_in, i_out):
            # a zero-distance endpoint is its own cut point
            if d[vi[i_in]] == 0.0:
                return vi[i_in]
            return cut_vertex(vi[i_in], vi[i_out])

        if len(ins) == 1:
            a = ins[0]
            p1, p2, p3 = (cv(a, o) for o in outs)
            ids = {vi[a], p1, p2, p3}
            if len(ids) == 4:
                emit(vi[a], p1, p2, p3)
        elif len(ins) == 2:
            a, b = ins
            c, e = outs
            pac, pae = cv(a, c), cv(a, e)
            pbc, pbe = cv(b, c), cv(b, e)
            faces = [
                [vi[a], vi[b], pbc, pac],   # on original face (a, b, c)
                [vi[a], vi[b], pbe, pae],   # on original face (a, b, e)
                [vi[a], pac, pae],          # on original face (a, c, e)
                [vi[b], pbc, pbe],          # on original face (b, c, e)
                [pac, pbc, pbe, pae],       # cut cross-section
            ]
            faces = [_dedupe(f) for f in faces]
            emit_polytope([f for f in faces if len(f) >= 3])
        else:  # len(ins) == 3
            a, b, c = ins
            o = outs[0]
            pa, pb, pc = cv(a, o), cv(b, o), cv(c, o)
            faces = [
                [vi[a], vi[b], vi[c]],
                [vi[a], vi[b], pb, pa],
                [vi[b], vi[c], pc, pb],
                [vi[c], vi[a], pa, pc],
                [pa, pb, pc],
            ]
            faces = [_dedupe(f) for f in faces]
            emit_polytope([f for f in faces if len(f) >= 3])

    if not out:
        return np.zeros((0, 4), dtype=np.int64), np.zeros((0, 3))
    return (np.asarray(out, dtype=np.int64),
            np.asarray(new_verts).reshape(-1, 3))


def _dedupe(face):
    seen = []
    for i in face:
        if i not in seen:
            seen.append(i)
    return seen
