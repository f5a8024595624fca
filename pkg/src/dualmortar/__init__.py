"""Dual mortar coupling of multi-patch B-spline discretizations.

The main entry points are re-exported here; see the submodules for details.
"""
from .coupling import (assemble_constraints, condense, coupling_matrices,
                       multiplier_scaling, null_space, null_space_multipatch,
                       null_space_two_patch)
from .dual import (DualBasis, DualKind, build_bezier_dual, build_bezier_dual_modified,
                   build_dual, build_global_dual, build_global_dual_coarsened)
from .errors import (AssemblyError, ConfigurationError, ConvergenceError, DomainError,
                     GeometryError, MeshTooCoarseError)
from .fem import (assemble_biharmonic, assemble_laplace_and_mass, error_norms,
                  h2star_projection, solve_cg, solve_generalized_eigen)
from .manufactured import get_solution
from .model import (MultiPatchModel, gluing_jacobian, gluing_map, load_model, parse_model,
                    validate_model)
from .spline import (SplineSpace1D, TensorSpace2D, bernstein_gramian, extraction_operators,
                     gauss_rule, remove_knots_near_ends, uniform_space)
from .study import StudyConfig, StudyResult, run_study, shipped_configs

__version__ = '0.1.0'
