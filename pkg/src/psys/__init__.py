"""Stationarity of Poisson particle systems driven by Gaussian processes.

Three independent routes to a verdict: closed-form theorem checkers
(:mod:`psys.analytic`), transform and grid-convolution oracles
(:mod:`psys.oracles`) and Monte Carlo simulation (:mod:`psys.simulate`).
"""
__version__ = "0.1.0"

from .analytic import (
    CheckReport,
    Condition,
    LtInvariants,
    check_brown_resnick,
    check_exp_system,
    check_mixture_system,
    check_polyexp_system,
    check_subspace_system,
    check_two_lambda_projection,
    lt_invariants,
    stationarize_drift,
)
from .errors import (
    ConfigError,
    DegenerateCovarianceError,
    EnvelopeError,
    GridTooSmallError,
    MeasureError,
    ModelError,
    PsysError,
    SignedMeasureError,
    UnsupportedModelError,
)
from .gaussian import (
    BrownianMotion,
    CustomModel,
    Deterministic,
    Drift,
    FractionalBM,
    Mix,
    OrnsteinUhlenbeck,
    PathSample,
    ProcessModel,
    Shifted,
    Stack,
    TimeGrid,
    cov_block,
    log_char_shifted,
    log_laplace_fidi,
    model_from_json,
    sample_paths,
    variogram,
)
from .measures import (
    Box,
    ExponentialMeasure,
    FiniteMixture,
    GaussianMeasure,
    PolyExponential,
    SignedMass,
    SubspaceExponential,
    density,
    differentiate_poly,
    mass_on_box,
    measure_from_json,
    membership_E,
    sample_on_box,
)
from .oracles import (
    GridDensity,
    check_deny,
    check_two_sided,
    conv_gaussian,
    fourier_grid_residual,
    fourier_identity_residual,
    slice_intensity_check,
)
from .simulate import (
    MaxStableSample,
    PointConfig,
    TestResult,
    empirical_intensity,
    fidi_cdf_br,
    shift_invariance_test,
    simulate_br,
    simulate_replicates,
    simulate_system,
    stationarity_test_br,
)
