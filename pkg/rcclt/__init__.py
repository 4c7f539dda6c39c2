# -*- coding: utf-8 -*-
__version__ = "0.1.0"

from .Exceptions import (
    RccltError,
    ConfigurationError,
    UsageError,
    ConvergenceError,
    CapacityError,
    NumericalError,
    SegmentRangeError,
    AcceptanceError,
)
from .Environment import (
    Distribution,
    EnvironmentSpec,
    Environment,
    LineEnvironment,
    FieldScalar,
    generate_environment,
    conductance,
    drift_field,
)
from .Corrector import (
    CorrectorField,
    Chi1D,
    solve_corrector,
    v_mu_field,
    sigma_mu_sq,
    w_mu_field,
    d_mu_field,
    chi_1d,
    homogenized_sigma_sq_1d,
)
from .WalkSimulator import (
    McConfig,
    WalkStream,
    Trajectory,
    MartingaleSample,
    MartingaleSamples,
    MonteCarloResult,
    simulate_trajectory,
    accumulate_martingale,
    accumulate_martingale_1d,
    run_monte_carlo,
)
from .SpectralExact import (
    GeneratorMatrix,
    SpectralMeasure,
    build_generator,
    spectral_measure,
    remainder_second_moment_exact,
    spectral_gap,
    semigroup_evolve,
    variance_decay_curve,
)
from .Statistics import ks_distance, estimate_V_J, rate_fit, theorem_rate
from .Experiments import (
    ExperimentReport,
    clt_experiment,
    remainder_experiment,
    sigma_convergence_experiment,
    spatial_average_variance,
    phi_moment_experiment,
    chi_tail_experiment,
    decay_experiment,
)
