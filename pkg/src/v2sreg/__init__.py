"""Volume-to-surface registration data pipeline.

Synthesizes random organ-like tetrahedral meshes, deforms them with a
steady-state neo-Hookean finite-element solver, voxelizes pre/intraoperative
geometry into distance-field grids with ground-truth displacement fields, and
scores predicted displacement fields.

Subpackage map:
    geometry   -- random organ surfaces, tetrahedralization, inside tests
    fem        -- hyperelastic static solver
    scenario   -- random boundary conditions, partial-surface extraction,
                  sample acceptance rules
    fields     -- grid representations (signed/unsigned distance, splatting)
    dataset    -- binary sample format, manifest, train/val split
    evaluation -- error metrics, marker transfer, rigid pre-alignment
    cli        -- the `v2s` command line front end
"""

__version__ = "0.1.0"
