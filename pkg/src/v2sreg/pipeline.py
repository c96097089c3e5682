"""Per-sample orchestration: organ -> tet mesh -> static solve -> partial
intraop surface -> voxel grids. One call produces one (Sample, SampleMeta)
pair; rejected attempts return the meta alone with the discard reason."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import PipelineConfig
from .fem import (InvertedElementError, Scenario, SolveError,
                  max_displacement, mean_displacement, solve_static)
from .fields import (Sample, grid_spec_for, signed_distance_grid,
                     splat_displacement, unsigned_distance_grid)
from .geometry import (GenerationError, MeshingError, SurfaceMesh, TetMesh,
                       gen_random_organ, tetrahedralize)
from .scenario import (MAX_DISPLACEMENT_M, PatchPlacementError, SampleMeta,
                       accept_sample, extract_partial_surface,
                       sample_scenario)


@dataclass
class SampleRun:
    """Result of one attempted sample plus intermediate artifacts."""

    meta: SampleMeta
    sample: Optional[Sample] = None
    surface: Optional[SurfaceMesh] = None
    tet: Optional[TetMesh] = None
    scenario: Optional[Scenario] = None
    u: Optional[np.ndarray] = None
    deformed_boundary: Optional[SurfaceMesh] = None
    partial: Optional[SurfaceMesh] = None


def run_sample(seed: int, cfg: PipelineConfig,
               keep_intermediates: bool = False) -> SampleRun:
    run = SampleRun(meta=SampleMeta(seed=seed))
    meta = run.meta

    try:
        surface = gen_random_organ(
            dataclasses.replace(cfg.generation, seed=seed))
        tet = tetrahedralize(surface, cfg.generation.target_edge_length)
    except (GenerationError, MeshingError):
        meta.meshing_failed = True
        meta.accepted, meta.reason = accept_sample(meta)
        return run
    if keep_intermediates:
        run.surface, run.tet = surface, tet

    try:
        scn = sample_scenario(
            seed, tet, youngs_modulus_range=cfg.youngs_modulus_range,
            poissons_ratio=cfg.poissons_ratio)
    except PatchPlacementError:
        # boundary too small or fragmented to host the patches
        meta.meshing_failed = True
        meta.accepted, meta.reason = accept_sample(meta)
        return run
    meta.youngs_modulus = scn.material.youngs_modulus
    meta.poissons_ratio = scn.material.poissons_ratio
    if keep_intermediates:
        run.scenario = scn

    try:
        u = solve_static(tet, scn, cfg.solver)
    except (SolveError, InvertedElementError, np.linalg.LinAlgError):
        meta.solver_failed = True
        meta.accepted, meta.reason = accept_sample(meta)
        return run
    meta.max_displacement = max_displacement(u)
    meta.mean_displacement = mean_displacement(u)
    if keep_intermediates:
        run.u = u

    bids = tet.boundary_vertex_ids
    preop = tet.boundary
    deformed = SurfaceMesh(vertices=preop.vertices + u[bids],
                           triangles=preop.triangles)
    if keep_intermediates:
        run.deformed_boundary = deformed

    partial = None
    if meta.max_displacement <= MAX_DISPLACEMENT_M:
        try:
            partial, visible = extract_partial_surface(
                deformed, dataclasses.replace(cfg.partial, seed=seed))
            meta.visible_fraction = visible
        except RuntimeError:
            meta.visible_fraction = 0.0
    if keep_intermediates:
        run.partial = partial

    meta.accepted, meta.reason = accept_sample(meta)
    if not meta.accepted:
        return run

    spec = grid_spec_for(preop, partial, cfg.resolution)
    sdf_p, inside = signed_distance_grid(preop, spec, return_inside=True)
    df_i = unsigned_distance_grid(partial, spec)
    u_grid = splat_displacement(tet, u, spec, inside=inside)
    run.sample = Sample(sdf_p=sdf_p, df_i=df_i, u=u_grid, meta=meta)
    return run
