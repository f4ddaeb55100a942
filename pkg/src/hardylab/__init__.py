"""hardylab: a desk-scale numerical laboratory for optimal Hardy-type
inequalities of the quasilinear operator
Q_{p,A,V}(u) = -div(|grad u|_A^{p-2} A grad u) + V |u|^{p-2} u.

It computes Green potentials by domain exhaustion, builds Hardy weights
via the power transform t -> t^{(p-1)/p}, and verifies criticality,
null-criticality, and coarea-flux identities on 1D-radial and 2D tensor
meshes.
"""
from .mesh import (INNER_BOUNDARY, INTERIOR, OUTER_BOUNDARY, LevelSet, Mesh,
                   ScalarField, VectorFieldOnCells, build_radial_mesh,
                   build_tensor_mesh, exhaustion, gradient, integrate,
                   level_set, nodal_gradient, sphere_area)
from .operator import (EnergyBreakdown, MatrixField, ProblemSpec,
                       X_functional, Y_functional, apply_Q, c_p, energy,
                       energy_sim, norm_A, residual_norm)
from .solver import (EigenResult, SolveOptions, SolveResult,
                     comparison_check, dirichlet_solve, principal_eigen)
from .green import (AssumptionCheck, CriticalitySuspected, GreenPotential,
                    check_assumptions, green_potential, mollified_delta,
                    radial_green_oracle)
from .hardy import (HardyWeight, optimal_pair, perturbed_weight,
                    transform_f, weight_case_gamma, weight_from_green)
from .verify import (TestFunctionFamily, VerificationReport,
                     chain_rule_residual, coarea_flux, hardy_margin,
                     null_criticality_growth, null_sequence_decay,
                     null_sequence_field, simp_equivalence)

__version__ = "0.1.0"
