"""measureflow: particle-based calculus for conditional measure flows.

Building blocks: seeded Brownian drivers and Euler semimartingales on uniform
grids, equal-weight atom clouds with exact Wasserstein-2, cylindrical
functionals with closed-form measure derivatives, regularized covariation
estimators with ladder verdicts, conditional particle ensembles, the
martingale-integral decomposition of functionals along measure flows, and a
verification toolkit for drift-controlled mean-field dynamics.
"""

__version__ = "0.1.0"

from .config import ConfigError, ExperimentConfig
from .control import (
    BoxControls,
    ControlProblemSpec,
    DualCertificate,
    DualityStats,
    FeedbackPolicy,
    RunningCost,
    ValueModel,
    VerificationReport,
    bruteforce_openloop,
    duality_residual,
    hamiltonian,
    policy_from_value_model,
    rollout_feedback,
    value_model_consistency,
    verify_value,
    word_policy,
)
from .functionals import (
    CylindricalFunctional,
    TestFunction,
    build_functional,
    flat_derivative_check,
    linear_growth_certificate,
    lions_fd_gap,
    validate_functional,
)
from .grids import (
    CoefficientError,
    DecomposedPath,
    SamplePath,
    SemimartingaleSpec,
    TimeGrid,
    build_semimartingale,
    make_grid,
    sample_brownian,
    zero_path,
)
from .ito import (
    ItoDecomposition,
    ItoScenario,
    assemble,
    c2_gamma_oracle,
    corrupt_common_integral,
    gamma_orthogonality,
    standard_scenario,
)
from .measures import (
    EmpiricalMeasure,
    flow_continuity_profile,
    integrate,
    integrate_pair,
    wasserstein2,
)
from .particles import (
    McKeanVlasovSpec,
    ParticleEnsemble,
    conditional_expectation,
    conditional_kernel,
    conditional_law,
    conditional_law_flow,
    simulate_ensemble,
)
from .regularization import (
    ConvergenceReport,
    QCovEstimate,
    deviation_report,
    orthogonality_test,
    qcov,
    sup_deviation,
    weak_dirichlet_check,
)
from .rng import RngKey, pmap
