"""Quasilinear elliptic equations div(a Psi(|grad u|) grad u) = f on
weighted graphs: constructive solvers (eigenbasis Galerkin + monotone
Newton + truncation/regularization continuation) and numerical
verification of the interior regularity estimates."""

from .space import (
    Ball,
    CurvatureMeta,
    GraphSpace,
    SpaceError,
    ball,
    build_annulus2d,
    build_cycle,
    build_grid2d,
    build_path,
    build_space,
    build_weighted_interval,
    carre_du_champ,
    divergence,
    gamma2_form,
    gamma2_pointwise,
    gradient_edge_field,
    gradient_modulus,
    laplacian,
    quasilinear_div,
    read_graph,
    to_graph_text,
    with_curvature,
    write_graph,
)
from .conductivity import (
    Conductivity,
    ConductivityError,
    PhiPotential,
    check_phiM_properties,
    check_psi_basic,
    convexity_gap,
    make_builtin,
    max_composite,
    min_composite,
    minimal_surface,
    monotonicity_gap,
    p_delta,
    p_power,
    phi_of,
    potential_convexity_gap,
    potential_monotonicity_gap,
    psi_M_eta,
    regularize_delta,
    truncate_M,
)
from .variational import (
    DirichletProblem,
    ProblemError,
    SolveReport,
    el_residual,
    energy,
    minimize_direct,
    poincare_constant,
    residual_norm,
    solve_linear,
)
from .galerkin import (
    EigenBasis,
    GalerkinSolution,
    dirichlet_eigenbasis,
    eigenbasis_cached,
    galerkin_convergence_study,
    solve_full_dimension,
    solve_reduced,
)
from .continuation import (
    ContinuationReport,
    FullSolveStrategy,
    delta_regularization_path,
    f_continuity_study,
    m_truncation_path,
    sobolev_distance,
    solve_full,
)
from .verify import (
    EstimateReport,
    bochner_check,
    cd_certify,
    cheng_yau_ratio,
    flux_modulus,
    galerkin_laplacian_bound_ratio,
    gradient_linf_ratio,
    laplacian_l2_ratio,
    refinement_study,
    second_order_ball_ratio,
)

__version__ = "0.1.0"
