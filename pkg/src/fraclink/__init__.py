"""fraclink: spectral-Galerkin minimax solver for half-Laplacian problems."""

from .basis import (CoefVec, DomainSpec, QuadratureError, SpectralBasis,
                    SubspaceSplit, basis_from_json_dict, basis_to_json_dict,
                    build_basis, check_split, dump_basis, gram_error,
                    group_eigenvalues, h_inner, h_norm, h_norm_sq, l2_norm_sq,
                    load_basis, lp_norm, point_values, project)
from .config import ConfigError, RunConfig, load_config, parse_config
from .functional import (FunctionalEvaluationError, Nonlinearity, ProblemParams,
                         SampleSpec, apply_K, energy, energy_many,
                         euclidean_gradient, euclidean_hessian, gradient,
                         hessian_apply, hessian_matrix, linear_nonlinearity,
                         make_nonlinearity, power_nonlinearity,
                         residual_h_norm, table_nonlinearity,
                         validate_hypotheses, zero_nonlinearity)
from .geometry import (GapReport, NablaCheckParams, NablaWindowError,
                       check_poincare, classify_solutions, linking_gap,
                       nabla_condition_estimate, scan_cap_radius,
                       scan_lemma_radii, scan_sphere_radius, sup_hj_sweep,
                       third_solution_threshold)
from .minimax import (CriticalPoint, IterateBlowupError, LinkingGapError,
                      LinkingGeometry, MinimaxResult, SolverOptions,
                      dedup_points, linking_solve, morse_index, mountain_pass,
                      newton_deflated, newton_polish, ray_max, sphere_extremum,
                      sup_on_subspace)

__version__ = "0.1.0"
