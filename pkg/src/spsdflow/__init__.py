"""Riemannian descent and rescaled low-rank gradient flows on fixed-rank SPSD matrices."""

__version__ = "0.1.0"

from .manifold import (
    EigenFrame,
    FactoredPoint,
    GroundTruth,
    TAU_GRAD,
    TAU_ORTH,
    TangentParam,
    complement_basis,
    distance_to_target,
    eigen_frame,
    gradient_norm,
    manifold_dim,
    retract,
    riem_gradient,
    riem_hessian_apply,
    tangent_project,
)
from .spurious import (
    SpuriousPoint,
    SpuriousTuple,
    enumerate_spurious,
    haar_orthonormal,
    make_ground_truth,
    perturb_near,
    sample_spurious_tuple,
    spurious_point,
)
from .flows import (
    FlowDerivative,
    FlowResult,
    FlowState,
    StepControls,
    dlra_rhs,
    integrate,
    rescaled_jacobian,
    rescaled_rhs,
    scaled_inverse,
    scaled_inverse_gradient,
)
from .rgd import (
    GDConfig,
    RgdRun,
    boundary_frame,
    fd_iteration_matrix,
    iteration_jacobian,
    rgd_step,
    run_rgd,
    tangent_coordinate_basis,
    tangent_coordinates,
)
from .oracles import (
    eig_min_derivative,
    fd_directional,
    fd_report,
    sin_theta_check,
    stiefel_chart,
)
from .experiments import (
    ExperimentConfig,
    SummaryReport,
    emit_summary,
    run_experiment,
    run_single,
)

__all__ = [name for name in dir() if not name.startswith("_")]
