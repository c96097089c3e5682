"""Scoring: per-voxel displacement error over the organ interior, the
marker-transfer protocol, a rigid pre-alignment helper, and CSV report
export."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .fields import GridField
from .geometry import SurfaceMesh


class SpecMismatchError(RuntimeError):
    pass


class MarkerError(RuntimeError):
    pass


class DegenerateCovarianceError(RuntimeError):
    pass


@dataclass
class ErrorStats:
    sample_id: str
    n_points: int
    mean_error: float
    max_error: float
    percentiles: dict  # {50: ..., 90: ..., 95: ..., 99: ...}
    mean_target_displacement: float
    visible_fraction: float = float("nan")


@dataclass(frozen=True)
class MarkerSet:
    labels: tuple
    positions: np.ndarray  # (n, 3) preoperative frame
    reference: Optional[np.ndarray] = None  # (n, 3) deformed frame

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise MarkerError("marker labels must be unique")
        object.__setattr__(self, "positions",
                           np.asarray(self.positions, dtype=np.float64))
        if self.reference is not None:
            object.__setattr__(self, "reference",
                               np.asarray(self.reference, dtype=np.float64))


def displacement_error(u_est: GridField, u_gt: GridField, sdf_p: GridField,
                       sample_id: str = "",
                       visible_fraction: float = float("nan")) -> ErrorStats:
    """Per-voxel |u_est - u_gt| statistics over interior grid points."""
    if u_est.spec != u_gt.spec or u_est.spec != sdf_p.spec:
        raise SpecMismatchError("grids do not share a GridSpec")
    interior = sdf_p.values[..., 0] < 0.0
    diff = (u_est.values.astype(np.float64)
            - u_gt.values.astype(np.float64))[interior]
    err = np.linalg.norm(diff, axis=-1)
    target = np.linalg.norm(u_gt.values.astype(np.float64)[interior], axis=-1)
    if len(err) == 0:
        return ErrorStats(sample_id, 0, 0.0, 0.0,
                          {p: 0.0 for p in (50, 90, 95, 99)}, 0.0,
                          visible_fraction)
    return ErrorStats(
        sample_id=sample_id,
        n_points=int(interior.sum()),
        mean_error=float(err.mean()),
        max_error=float(err.max()),
        percentiles={p: float(np.percentile(err, p)) for p in (50, 90, 95, 99)},
        mean_target_displacement=float(target.mean()),
        visible_fraction=visible_fraction)


def _trilinear(grid: GridField, p) -> np.ndarray:
    spec = grid.spec
    r = spec.resolution
    f = (np.asarray(p) - np.asarray(spec.origin)) / spec.spacing
    i = np.clip(np.floor(f).astype(int), 0, r - 2)
    t = np.clip(f - i, 0.0, 1.0)
    out = np.zeros(grid.values.shape[-1])
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = ((t[0] if dx else 1 - t[0])
                     * (t[1] if dy else 1 - t[1])
                     * (t[2] if dz else 1 - t[2]))
                out += w * grid.values[i[0] + dx, i[1] + dy, i[2] + dz]
    return out


def transfer_markers(u_grid: GridField, markers: MarkerSet,
                     radius: float = 0.01) -> MarkerSet:
    """Displace markers by Gaussian-kernel interpolation of the grid field.

    sigma = radius/3, hard truncation at radius, normalized weights; markers
    whose support is empty fall back to trilinear interpolation.
    """
    if u_grid.channels != 3:
        raise MarkerError("displacement grid must have 3 channels")
    spec = u_grid.spec
    r = spec.resolution
    origin = np.asarray(spec.origin)
    h = spec.spacing
    top = origin + h * (r - 1)
    sigma = radius / 3.0
    axes = spec.axes()
    displaced = np.empty_like(markers.positions)
    for k, p in enumerate(markers.positions):
        if (p < origin - 1e-12).any() or (p > top + 1e-12).any():
            raise MarkerError(
                f"marker {markers.labels[k]!r} outside the grid")
        lo = np.maximum(np.ceil((p - radius - origin) / h).astype(int) - 1, 0)
        hi = np.minimum(np.floor((p + radius - origin) / h).astype(int) + 1,
                        r - 1)
        xs, ys, zs = (axes[a][lo[a]:hi[a] + 1] for a in range(3))
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        d2 = (gx - p[0]) ** 2 + (gy - p[1]) ** 2 + (gz - p[2]) ** 2
        mask = d2 <= radius * radius
        if mask.any():
            w = np.exp(-d2[mask] / (2.0 * sigma * sigma))
            block = u_grid.values[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1,
                                  lo[2]:hi[2] + 1].astype(np.float64)
            disp = (w[:, None] * block[mask]).sum(axis=0) / w.sum()
        else:
            disp = _trilinear(u_grid, p)
        displaced[k] = p + disp
    return MarkerSet(labels=markers.labels, positions=displaced,
                     reference=markers.reference)


def marker_error(displaced: MarkerSet, reference: MarkerSet):
    """Per-label distances plus (mean, max)."""
    ref = {lab: pos for lab, pos in zip(reference.labels,
                                        reference.positions)}
    missing = [lab for lab in displaced.labels if lab not in ref]
    if missing:
        raise MarkerError(f"labels missing from reference: {missing}")
    dists = {}
    for lab, pos in zip(displaced.labels, displaced.positions):
        dists[lab] = float(np.linalg.norm(pos - ref[lab]))
    vals = np.array(list(dists.values()))
    return dists, float(vals.mean()), float(vals.max())


def _weighted_frame(mesh: SurfaceMesh):
    """Area-weighted centroid and principal axes; vertex-weighted fallback."""
    if mesh.num_triangles:
        a, b, c = (mesh.vertices[mesh.triangles[:, k]] for k in range(3))
        w = np.linalg.norm(np.cross(b - a, c - a), axis=1) / 2.0
        pts = (a + b + c) / 3.0
        if w.sum() <= 0:
            w = np.ones(len(pts))
    else:
        pts = mesh.vertices
        w = np.ones(len(pts))
    w = w / w.sum()
    centroid = (w[:, None] * pts).sum(axis=0)
    q = pts - centroid
    cov = (w[:, None, None] * (q[:, :, None] * q[:, None, :])).sum(axis=0)
    evals, evecs = np.linalg.eigh(cov)
    if evals[2] <= 0 or evals[0] / evals[2] < 1e-10:
        raise DegenerateCovarianceError(
            "near-flat input; supply a manual rigid transform")
    # descending eigenvalue order
    return centroid, evecs[:, ::-1]


def rigid_prealign(preop_boundary: SurfaceMesh,
                   intraop: SurfaceMesh) -> np.ndarray:
    """4x4 transform mapping preop into the intraop frame.

    Centroid alignment plus principal-axes rotation; axis signs chosen by
    minimizing the one-sided distance from intraop vertices to the
    transformed preop surface.
    """
    c_p, axes_p = _weighted_frame(preop_boundary)
    c_i, axes_i = _weighted_frame(intraop)
    index = kernels.TriangleIndex(preop_boundary.vertices,
                                  preop_boundary.triangles)
    best = None
    for signs in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
        rot = axes_i @ np.diag(signs) @ axes_p.T
        if np.linalg.det(rot) < 0:
            rot = axes_i @ np.diag([-s for s in signs]) @ axes_p.T
        # score in the preop frame: pull intraop verts back instead of
        # rebuilding the triangle index per candidate
        back = (intraop.vertices - c_i) @ rot + c_p
        dist, _, _ = index.query(back)
        score = float(dist.mean())
        if best is None or score < best[0]:
            best = (score, rot)
    rot = best[1]
    t = c_i - rot @ c_p
    out = np.eye(4)
    out[:3, :3] = rot
    out[:3, 3] = t
    return out


def apply_transform(transform: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ transform[:3, :3].T + transform[:3, 3]


def export_report(stats, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "mean_target_displacement",
                         "visible_fraction", "mean_error", "max_error"])
        for s in stats:
            writer.writerow([s.sample_id, repr(float(s.mean_target_displacement)),
                             repr(float(s.visible_fraction)),
                             repr(float(s.mean_error)),
                             repr(float(s.max_error))])


def write_markers(markers: MarkerSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for lab, pos in zip(markers.labels, markers.positions):
            writer.writerow([lab, repr(float(pos[0])), repr(float(pos[1])),
                             repr(float(pos[2]))])


def read_markers(path) -> MarkerSet:
    labels, rows = [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            labels.append(row[0])
            rows.append([float(x) for x in row[1:4]])
    return MarkerSet(labels=tuple(labels), positions=np.asarray(rows))


def write_transform(transform: np.ndarray, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for row in np.asarray(transform, dtype=np.float64).reshape(4, 4):
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_transform(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            if line.strip():
                rows.append([float(x) for x in line.split()])
    out = np.asarray(rows, dtype=np.float64)
    if out.shape != (4, 4):
        raise ValueError(f"{path}: expected a 4x4 matrix")
    return out


class Stopwatch:
    """Wall-clock lap timer for the informational per-sample timing hook."""

    def __init__(self):
        self._t0 = time.perf_counter()
        self.laps = {}

    def lap(self, name: str) -> float:
        now = time.perf_counter()
        dt = now - self._t0
        self.laps[name] = self.laps.get(name, 0.0) + dt
        self._t0 = now
        return dt
