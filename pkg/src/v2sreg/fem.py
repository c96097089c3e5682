"""Steady-state neo-Hookean finite elements on linear tetrahedra.

Total Lagrangian formulation; Newton with backtracking line search and
incremental load stepping. Produces the per-vertex displacement field used
as ground truth by the dataset pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import kernels
from .geometry import TetMesh


class InvertedElementError(RuntimeError):
    pass


class SolveError(RuntimeError):
    """The solver did not reach the residual tolerance (sample is discarded)."""


def lame_from_elastic(youngs_modulus: float, poissons_ratio: float):
    """(mu, lambda) from (E, nu)."""
    e, nu = float(youngs_modulus), float(poissons_ratio)
    if e <= 0:
        raise ValueError("Young's modulus must be > 0")
    if not 0 <= nu < 0.5:
        raise ValueError("Poisson's ratio must lie in [0, 0.5)")
    mu = e / (2.0 * (1.0 + nu))
    lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return mu, lam


@dataclass(frozen=True)
class MaterialParams:
    youngs_modulus: float  # Pa
    poissons_ratio: float = 0.35

    @property
    def mu(self) -> float:
        return lame_from_elastic(self.youngs_modulus, self.poissons_ratio)[0]

    @property
    def lam(self) -> float:
        return lame_from_elastic(self.youngs_modulus, self.poissons_ratio)[1]


@dataclass(frozen=True)
class Scenario:
    fixed_vertices: np.ndarray  # int indices, zero-displacement BC
    loads: tuple  # ((vertex ids, total force (3,) N), ...)
    material: MaterialParams
    # optional per-fixed-vertex component mask; None fixes all three
    # components (a (len(fixed), 3) bool array enables roller supports)
    fixed_components: Optional[np.ndarray] = None

    def validate(self, num_vertices: int):
        fixed = np.asarray(self.fixed_vertices)
        if fixed.size == 0:
            raise ValueError("fixed vertex set must be non-empty")
        if fixed.min() < 0 or fixed.max() >= num_vertices:
            raise ValueError("fixed vertex index out of range")
        if not 0 <= len(self.loads):
            raise ValueError("loads malformed")
        for ids, force in self.loads:
            ids = np.asarray(ids)
            if ids.size == 0:
                raise ValueError("empty load patch")
            if ids.min() < 0 or ids.max() >= num_vertices:
                raise ValueError("load vertex index out of range")
            if np.shape(force) != (3,):
                raise ValueError("load force must be a 3-vector")
        if self.fixed_components is not None:
            if np.shape(self.fixed_components) != (len(fixed), 3):
                raise ValueError("fixed_components shape mismatch")


@dataclass(frozen=True)
class SolverOpts:
    tolerance: float = 1e-6  # residual max-norm, N
    max_newton_steps: int = 40
    load_steps: int = 5
    max_substep_doublings: int = 4
    max_line_search_halvings: int = 24


def strain_energy_density(f_grad, material: MaterialParams) -> float:
    """W(F) for the compressible neo-Hookean model."""
    f = np.asarray(f_grad, dtype=np.float64)
    j = float(np.linalg.det(f))
    if j <= 0.0:
        raise InvertedElementError("det(F) <= 0")
    mu, lam = material.mu, material.lam
    ic = float(np.einsum("ij,ij->", f, f))
    lnj = np.log(j)
    return 0.5 * mu * (ic - 3.0) - mu * lnj + 0.5 * lam * lnj * lnj


def _precompute(mesh: TetMesh):
    """Reference shape matrices Bm = Dm^-1 and signed volumes per element."""
    p = mesh.vertices[mesh.tets]
    dm = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))  # columns are edges
    vol = np.linalg.det(dm) / 6.0
    if (vol <= 0).any():
        raise InvertedElementError("reference mesh has non-positive tets")
    bm = np.linalg.inv(dm)
    return bm, vol


def _vertex_area_weights(mesh: TetMesh, ids: np.ndarray) -> np.ndarray:
    """Boundary-area weight for each vertex id (1/3 of incident face areas)."""
    faces = mesh.boundary_faces
    a, b, c = (mesh.vertices[faces[:, k]] for k in range(3))
    areas = np.linalg.norm(np.cross(b - a, c - a), axis=1) / 2.0
    acc = np.zeros(mesh.num_vertices)
    for k in range(3):
        np.add.at(acc, faces[:, k], areas / 3.0)
    w = acc[ids]
    if w.sum() <= 0:
        # patch off the boundary: fall back to uniform weights
        return np.full(len(ids), 1.0 / len(ids))
    return w / w.sum()


def external_forces(mesh: TetMesh, scenario: Scenario) -> np.ndarray:
    """Dense (V, 3) nodal load vector; patch totals split by vertex area."""
    f = np.zeros((mesh.num_vertices, 3))
    for ids, force in scenario.loads:
        ids = np.asarray(ids, dtype=np.int64)
        w = _vertex_area_weights(mesh, ids)
        f[ids] += w[:, None] * np.asarray(force, dtype=np.float64)
    return f


def _free_mask(mesh: TetMesh, scenario: Scenario) -> np.ndarray:
    free = np.ones((mesh.num_vertices, 3), dtype=bool)
    fixed = np.asarray(scenario.fixed_vertices, dtype=np.int64)
    if scenario.fixed_components is None:
        free[fixed] = False
    else:
        comp = np.asarray(scenario.fixed_components, dtype=bool)
        for k, vid in enumerate(fixed):
            free[vid, comp[k]] = False
    return free


def assemble_residual(mesh: TetMesh, u, scenario: Scenario) -> np.ndarray:
    """Internal elastic forces minus external loads, fixed rows zeroed."""
    scenario.validate(mesh.num_vertices)
    u = np.asarray(u, dtype=np.float64).reshape(mesh.num_vertices, 3)
    bm, vol = _precompute(mesh)
    m = scenario.material
    energy, grad, minj = kernels.nh_energy_grad(
        mesh.vertices + u, mesh.tets, bm, vol, m.mu, m.lam)
    if not np.isfinite(energy):
        raise InvertedElementError(f"inverted element (min J = {minj:.3e})")
    r = grad - external_forces(mesh, scenario)
    r[~_free_mask(mesh, scenario)] = 0.0
    return r


def _assemble_hessian(pos, mesh, bm, vol, mu, lam, free_flat):
    ke = kernels.nh_element_hessians(pos, mesh.tets, bm, vol, mu, lam)
    dof = (3 * mesh.tets[:, :, None] + np.arange(3)[None, None, :])
    dof = dof.reshape(len(mesh.tets), 12)
    rows = np.repeat(dof, 12, axis=1).ravel()
    cols = np.tile(dof, (1, 12)).ravel()
    n = 3 * mesh.num_vertices
    k = sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsc()
    return k[free_flat][:, free_flat]


def solve_static(mesh: TetMesh, scenario: Scenario,
                 opts: SolverOpts = SolverOpts()) -> np.ndarray:
    """Displacements at static equilibrium; raises SolveError on failure."""
    scenario.validate(mesh.num_vertices)
    bm, vol = _precompute(mesh)
    m = scenario.material
    mu, lam = m.mu, m.lam
    f_ext = external_forces(mesh, scenario)
    free = _free_mask(mesh, scenario)
    free_flat = free.ravel()

    u = np.zeros((mesh.num_vertices, 3))
    n_steps = opts.load_steps
    doublings = 0
    step = 0
    while step < n_steps:
        scale = (step + 1) / n_steps
        target = scale * f_ext
        ok, u_new = _newton(mesh, bm, vol, mu, lam, u, target, free,
                            free_flat, opts)
        if ok:
            u = u_new
            step += 1
            continue
        if doublings >= opts.max_substep_doublings:
            raise SolveError(
                f"no convergence at load fraction {scale:.3f} after "
                f"{doublings} substep doublings")
        # halve the remaining increments and retry from the last good state
        n_steps = 2 * n_steps
        step = 2 * step
        doublings += 1
    return u


def _potential(pos, mesh, bm, vol, mu, lam, target, u):
    energy, minj = kernels.nh_energy(pos, mesh.tets, bm, vol, mu, lam)
    if not np.isfinite(energy):
        return np.inf
    return energy - float(np.sum(target * u))


def _newton(mesh, bm, vol, mu, lam, u0, target, free, free_flat, opts):
    u = u0.copy()
    for _ in range(opts.max_newton_steps):
        pos = mesh.vertices + u
        energy, grad, _ = kernels.nh_energy_grad(
            pos, mesh.tets, bm, vol, mu, lam)
        if not np.isfinite(energy):
            return False, u0  # stepped into inversion; caller substeps
        r = grad - target
        r[~free] = 0.0
        if np.abs(r).max() <= opts.tolerance:
            return True, u
        try:
            k = _assemble_hessian(pos, mesh, bm, vol, mu, lam, free_flat)
        except FloatingPointError:
            return False, u0
        rhs = -r.ravel()[free_flat]
        shift = 0.0
        base = k.diagonal().max()
        for _attempt in range(8):
            try:
                reg = k if shift == 0.0 else (
                    k + shift * sparse.identity(k.shape[0], format="csc"))
                lu = splu(reg.tocsc())
                delta = lu.solve(rhs)
            except RuntimeError:
                shift = max(1e-10 * base, 4.0 * shift, 1e-12)
                continue
            if np.dot(delta, rhs) > 0:
                break
            shift = max(1e-10 * base, 4.0 * shift, 1e-12)
        else:
            return False, u0
        douter = np.zeros(3 * mesh.num_vertices)
        douter[free_flat] = delta
        douter = douter.reshape(-1, 3)

        # backtracking line search on the total potential
        pot0 = energy - float(np.sum(target * u))
        slope = -float(np.dot(delta, rhs))  # d/dt potential along delta
        alpha = 1.0
        for _h in range(opts.max_line_search_halvings):
            u_try = u + alpha * douter
            pot = _potential(mesh.vertices + u_try, mesh, bm, vol, mu, lam,
                             target, u_try)
            if pot <= pot0 + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        else:
            return False, u0
        u = u_try
    return False, u0


def max_displacement(u) -> float:
    return float(np.linalg.norm(np.asarray(u), axis=1).max())


def mean_displacement(u) -> float:
    return float(np.linalg.norm(np.asarray(u), axis=1).mean())
