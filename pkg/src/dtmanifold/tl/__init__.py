"""Import all solvers, reports and the pipeline from the 'dtmanifold.tl' package."""

from ._configs import (
    DEPENDENCIES,
    STAGES,
    OracleSettings,
    RunConfig,
    Tolerances,
    default_tolerances,
    with_dependencies,
)
from ._dpe import (
    CostField,
    DPEReport,
    cost_field,
    dpe_residual,
    feedback_policy,
    gradient_consistency,
    integrate_cost,
)
from ._grid import GridFn
from ._manifold import (
    ClosednessReport,
    LipschitzDiagnostics,
    ManifoldSolution,
    Trajectory,
    apply_T,
    closedness_check,
    f_psi_eval,
    h_psi_eval,
    implicit_state_step,
    invariance_residual,
    lipschitz_diagnostics,
    phi_eval,
    rollout,
    solve_manifold,
)
from ._oracle import value_iteration_oracle
from ._pipeline import CheckResult, Report, StageResult, run_pipeline
from ._pmp import (
    BidirectionalPoint,
    HamiltonianEval,
    bidirectional_residual,
    hamiltonian_eval,
    nonlinear_remainders,
    optimal_control,
    reduced_hamiltonian_hessian,
)
from ._riccati import (
    StabilizingSolution,
    dtare_residual,
    feedback_gain,
    lyapunov_check,
    solve_dtare,
)
from ._spectral import (
    InvarianceResult,
    PencilSpectrum,
    ReciprocityReport,
    TangentPair,
    bidirectional_tangent_step,
    eigenpair_residuals,
    invariance_check,
    pencil_eigenvalues,
    pencil_matrices,
    propagate_tangents,
    reciprocity_check,
    stable_subspace_graph,
    symplectic_form,
    tangent_step,
)

__all__ = [
    "DEPENDENCIES",
    "STAGES",
    "BidirectionalPoint",
    "CheckResult",
    "ClosednessReport",
    "CostField",
    "DPEReport",
    "GridFn",
    "HamiltonianEval",
    "InvarianceResult",
    "LipschitzDiagnostics",
    "ManifoldSolution",
    "OracleSettings",
    "PencilSpectrum",
    "ReciprocityReport",
    "Report",
    "RunConfig",
    "StabilizingSolution",
    "StageResult",
    "TangentPair",
    "Tolerances",
    "Trajectory",
    "apply_T",
    "bidirectional_residual",
    "bidirectional_tangent_step",
    "closedness_check",
    "cost_field",
    "default_tolerances",
    "dpe_residual",
    "dtare_residual",
    "eigenpair_residuals",
    "f_psi_eval",
    "feedback_gain",
    "feedback_policy",
    "gradient_consistency",
    "h_psi_eval",
    "hamiltonian_eval",
    "implicit_state_step",
    "integrate_cost",
    "invariance_check",
    "invariance_residual",
    "lipschitz_diagnostics",
    "lyapunov_check",
    "nonlinear_remainders",
    "optimal_control",
    "pencil_eigenvalues",
    "pencil_matrices",
    "phi_eval",
    "propagate_tangents",
    "reciprocity_check",
    "reduced_hamiltonian_hessian",
    "rollout",
    "run_pipeline",
    "solve_dtare",
    "solve_manifold",
    "stable_subspace_graph",
    "symplectic_form",
    "tangent_step",
    "value_iteration_oracle",
    "with_dependencies",
]
