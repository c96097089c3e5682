"""Random scenario sampling, partial-surface extraction, and the sample
acceptance rules."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from .fem import MaterialParams, Scenario
from .geometry import SurfaceMesh, TetMesh
from .rng import stream, substream

MAX_DISPLACEMENT_M = 0.20
MIN_VISIBLE_FRACTION = 0.10


class PatchPlacementError(RuntimeError):
    """Disjoint fixed/load patches could not be placed within the retry budget."""


@dataclass(frozen=True)
class PartialSurfaceParams:
    seed: int
    visible_fraction_range: tuple = (0.1, 0.6)
    resample_spacing: float = 0.002  # meters
    vertex_jitter: float = 0.001  # meters, uniform per axis
    dropout_fraction: float = 0.2
    hole_count_range: tuple = (0, 3)
    hole_radius_range: tuple = (0.005, 0.015)

    def validate(self):
        lo, hi = self.visible_fraction_range
        if lo < MIN_VISIBLE_FRACTION:
            raise ValueError("visible_fraction_range lower bound must be >= 0.1")
        if lo > hi or hi > 1.0:
            raise ValueError("visible_fraction_range empty")
        if not 0.0 <= self.dropout_fraction <= 1.0:
            raise ValueError("dropout_fraction outside [0, 1]")
        if self.hole_count_range[0] > self.hole_count_range[1]:
            raise ValueError("hole_count_range empty")
        if self.hole_radius_range[0] > self.hole_radius_range[1]:
            raise ValueError("hole_radius_range empty")


@dataclass
class SampleMeta:
    seed: int
    youngs_modulus: float = 0.0
    poissons_ratio: float = 0.35
    visible_fraction: float = 0.0
    mean_displacement: float = 0.0
    max_displacement: float = 0.0
    accepted: bool = False
    reason: str = "pending"
    meshing_failed: bool = False
    solver_failed: bool = False
    flip_code: str = ""

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "youngs_modulus": float(self.youngs_modulus),
            "poissons_ratio": float(self.poissons_ratio),
            "visible_fraction": float(self.visible_fraction),
            "mean_displacement": float(self.mean_displacement),
            "max_displacement": float(self.max_displacement),
            "accepted": bool(self.accepted),
            "reason": self.reason,
            "meshing_failed": bool(self.meshing_failed),
            "solver_failed": bool(self.solver_failed),
            "flip_code": self.flip_code,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleMeta":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def _tri_adjacency(triangles: np.ndarray) -> sparse.csr_matrix:
    """Triangle-to-triangle adjacency across shared edges."""
    t = np.arange(len(triangles))
    edges = np.sort(np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]],
                                    triangles[:, [2, 0]]]), axis=1)
    owner = np.concatenate([t, t, t])
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges, owner = edges[order], owner[order]
    same = (edges[1:] == edges[:-1]).all(axis=1)
    a, b = owner[:-1][same], owner[1:][same]
    n = len(triangles)
    return sparse.csr_matrix(
        (np.ones(2 * len(a)), (np.concatenate([a, b]), np.concatenate([b, a]))),
        shape=(n, n))


def _grow_patch(adjacency, areas, seed_tri: int, target_area: float,
                blocked: Optional[np.ndarray] = None):
    """Breadth-first triangle region from seed_tri until target_area is met.

    Blocked triangles are neither collected nor traversed, so the region
    stays contiguous.
    """
    indptr, indices = adjacency.indptr, adjacency.indices
    visited = np.zeros(adjacency.shape[0], dtype=bool)
    if blocked is not None:
        visited |= blocked
    if visited[seed_tri]:
        return np.zeros(0, dtype=np.int64), 0.0
    visited[seed_tri] = True
    queue = deque([seed_tri])
    chosen = []
    acc = 0.0
    while queue:
        t = queue.popleft()
        chosen.append(t)
        acc += areas[t]
        if acc >= target_area:
            break
        for nb in indices[indptr[t]:indptr[t + 1]]:
            if not visited[nb]:
                visited[nb] = True
                queue.append(int(nb))
    return np.asarray(chosen, dtype=np.int64), acc


def sample_scenario(seed: int, mesh: TetMesh, max_retries: int = 20,
                    youngs_modulus_range=(2000.0, 5000.0),
                    poissons_ratio: float = 0.35) -> Scenario:
    """Random material, one fixed patch, and 1-3 vertex-disjoint load patches."""
    faces = mesh.boundary_faces
    adjacency = _tri_adjacency(faces)
    a, b, c = (mesh.vertices[faces[:, k]] for k in range(3))
    areas = np.linalg.norm(np.cross(b - a, c - a), axis=1) / 2.0
    total_area = float(areas.sum())

    mat_rng = stream(seed, "material")
    material = MaterialParams(
        youngs_modulus=float(mat_rng.uniform(*youngs_modulus_range)),
        poissons_ratio=poissons_ratio)

    for attempt in range(max_retries):
        rng = substream(seed, "patches", attempt)
        n_loads = int(rng.integers(1, 4))
        fixed_frac = float(rng.uniform(0.05, 0.15))
        seed_tri = int(rng.integers(0, len(faces)))
        fixed_tris, _ = _grow_patch(adjacency, areas, seed_tri,
                                    fixed_frac * total_area)
        fixed_ids = np.unique(faces[fixed_tris])
        blocked = np.zeros(len(faces), dtype=bool)
        blocked[fixed_tris] = True
        # block every triangle touching a fixed vertex so patches stay
        # vertex-disjoint
        touches = np.isin(faces, fixed_ids).any(axis=1)
        blocked |= touches

        loads = []
        used_ids = set(fixed_ids.tolist())
        ok = True
        for k in range(n_loads):
            frac = float(rng.uniform(0.02, 0.08))
            free_tris = np.flatnonzero(~blocked)
            if len(free_tris) == 0:
                ok = False
                break
            seed_tri = int(free_tris[rng.integers(0, len(free_tris))])
            patch, _ = _grow_patch(adjacency, areas, seed_tri,
                                   frac * total_area, blocked)
            ids = np.unique(faces[patch])
            if len(ids) == 0 or used_ids & set(ids.tolist()):
                ok = False
                break
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            magnitude = float(rng.uniform(0.0, 1.5))
            if magnitude == 0.0:
                magnitude = 1.5e-3  # open interval (0, 1.5]
            loads.append((ids, magnitude * direction))
            used_ids |= set(ids.tolist())
            blocked[patch] = True
            blocked |= np.isin(faces, ids).any(axis=1)
        if not ok:
            continue
        return Scenario(fixed_vertices=fixed_ids, loads=tuple(loads),
                        material=material)
    raise PatchPlacementError(
        f"could not place disjoint patches after {max_retries} attempts")


def _subdivide_to_spacing(verts, tris, spacing: float, max_rounds: int = 6):
    """Longest-edge midpoint subdivision until no edge exceeds spacing."""
    verts = verts.copy()
    tris = tris.copy()
    for _ in range(max_rounds):
        p = verts[tris]
        e = np.stack([np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                      np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                      np.linalg.norm(p[:, 0] - p[:, 2], axis=1)], axis=1)
        long = e.max(axis=1) > spacing
        if not long.any():
            break
        # split the longest edge of each oversized triangle; midpoints are
        # deduplicated through an edge registry to keep the patch conforming
        mid_ids = {}
        new_verts = [verts]
        next_id = len(verts)
        out = [tris[~long]]
        split_edge = e[long].argmax(axis=1)
        for tri, k in zip(tris[long], split_edge):
            i0, i1 = int(tri[k]), int(tri[(k + 1) % 3])
            i2 = int(tri[(k + 2) % 3])
            key = (i0, i1) if i0 < i1 else (i1, i0)
            mid = mid_ids.get(key)
            if mid is None:
                mid = next_id
                mid_ids[key] = mid
                new_verts.append((verts[i0] + verts[i1])[None, :] / 2.0)
                next_id += 1
            out.append(np.array([[i0, mid, i2], [mid, i1, i2]],
                                dtype=tris.dtype))
        verts = np.concatenate(new_verts)
        tris = np.concatenate(out)
    return verts, tris


def extract_partial_surface(deformed_boundary: SurfaceMesh,
                            params: PartialSurfaceParams):
    """Noisy partial patch of a deformed boundary.

    Returns (patch: SurfaceMesh, visible_fraction) where the fraction is the
    patch/total area ratio measured before resampling, dropout, jitter, and
    hole punching.
    """
    params.validate()
    adjacency = _tri_adjacency(deformed_boundary.triangles)
    areas = deformed_boundary.triangle_areas()
    total_area = float(areas.sum())

    for attempt in range(32):
        rng = substream(params.seed, "partial", attempt)
        frac = float(rng.uniform(*params.visible_fraction_range))
        seed_tri = int(rng.integers(0, len(areas)))
        patch_tris, acc = _grow_patch(adjacency, areas, seed_tri,
                                      frac * total_area)
        visible_fraction = acc / total_area
        tris = deformed_boundary.triangles[patch_tris]
        used = np.unique(tris)
        remap = np.full(deformed_boundary.num_vertices, -1, dtype=np.int32)
        remap[used] = np.arange(len(used), dtype=np.int32)
        verts = deformed_boundary.vertices[used]
        tris = remap[tris]

        if params.resample_spacing > 0:
            verts, tris = _subdivide_to_spacing(verts, tris,
                                                params.resample_spacing)
        if params.vertex_jitter > 0:
            verts = verts + rng.uniform(-params.vertex_jitter,
                                        params.vertex_jitter,
                                        size=verts.shape)
        keep = np.ones(len(verts), dtype=bool)
        if params.dropout_fraction > 0:
            keep &= rng.random(len(verts)) >= params.dropout_fraction
        n_holes = int(rng.integers(params.hole_count_range[0],
                                   params.hole_count_range[1] + 1))
        for _ in range(n_holes):
            center = verts[int(rng.integers(0, len(verts)))]
            radius = float(rng.uniform(*params.hole_radius_range))
            d2 = np.einsum("ij,ij->i", verts - center, verts - center)
            keep &= d2 > radius * radius
        if not keep.any():
            continue
        remap2 = np.full(len(verts), -1, dtype=np.int32)
        remap2[keep] = np.arange(int(keep.sum()), dtype=np.int32)
        tris = tris[keep[tris].all(axis=1)]
        tris = remap2[tris]
        verts = verts[keep]
        if len(verts) < 3 or len(tris) == 0:
            continue
        # drop vertices no triangle references
        used = np.unique(tris)
        remap3 = np.full(len(verts), -1, dtype=np.int32)
        remap3[used] = np.arange(len(used), dtype=np.int32)
        return (SurfaceMesh(verts[used], remap3[tris]),
                float(visible_fraction))
    raise RuntimeError("partial surface extraction kept discarding everything")


def accept_sample(meta: SampleMeta):
    """The acceptance rule; returns (accepted, reason)."""
    if meta.meshing_failed:
        return False, "meshing"
    if meta.solver_failed:
        return False, "solver"
    if meta.max_displacement > MAX_DISPLACEMENT_M:
        return False, "displacement"
    if meta.visible_fraction < MIN_VISIBLE_FRACTION:
        return False, "visibility"
    return True, "ok"
