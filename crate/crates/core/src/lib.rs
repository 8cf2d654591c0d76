//! Two-region branching-process kinetics: closed-form variance-to-mean
//! ("Feynman-alpha") theory, exact stochastic simulation, and parameter
//! recovery for coupled fast/thermal neutron populations.
//!
//! The crate models a point source feeding a two-region system — particles
//! in region 1 may be captured, cause fission, be detected (destructively),
//! or transfer to region 2; particles in region 2 may be captured, cause
//! fission, or transfer back. All transition intensities are exponential, so
//! the pair population is a Markov branching process and both its first two
//! moments and its exact trajectories are computable.
//!
//! Modules, in pipeline order:
//!
//! * [`model`] — parameter types, JSON (de)serialization, validation.
//! * [`presets`] — the four bundled benchmark configurations.
//! * [`analytic`] — decay constants, stationary moments, closed-form
//!   variance-to-mean curves in canonical and published-formula modes.
//! * [`moments`] — high-accuracy ODE integration of the full transient
//!   moment system; the independent cross-check of [`analytic`].
//! * [`simulator`] — exact event-by-event simulation with reproducible
//!   streams, detection trains, and audit tallies.
//! * [`estimator`] — variance-to-mean statistics, rate estimates, and
//!   consistency tests computed from detection data.
//! * [`fitting`] — nonlinear recovery of decay constants and amplitudes
//!   from sampled curves and die-away histograms.
//! * [`io`] — plot-ready CSV schemas, detection-train files with JSON
//!   sidecars, and atomic writes.

pub mod analytic;
pub mod estimator;
pub mod fitting;
pub mod io;
pub mod model;
pub mod moments;
pub mod presets;
pub mod simulator;

pub use analytic::{
    compare_modes, compare_reference, feynman_curve_canonical, feynman_curve_published,
    nu_eff, omega_roots, stationary_state, y_amplitudes_canonical, AnalyticError,
    CurvePoint, FeynmanCurve, ModeComparison, OmegaPair, ReferenceComparison,
    ReferenceValues, StationaryState, YAmplitudes,
};
pub use estimator::{
    feynman_from_records, feynman_from_train, feynman_from_trains, intensities_from_tallies,
    nu_eff_from_estimate,
    Estimate, EstimatorError, GateMode, GateStatistics, IntensityEstimate, SetupKind,
    TallyInput, Window,
};
pub use fitting::{
    feynman_model, fit_dieaway, fit_feynman, DieAwayFit, FeynmanFit, FitError,
};
pub use io::{
    read_curve_csv, read_decay_csv, read_json, read_train, sidecar_path, write_atomic,
    write_curve_csv, write_decay_csv, write_json, write_residuals_csv, write_train,
    write_trajectory_csv, IoError, TrainMetadata,
};
pub use model::{
    total_intensities, validate, ConfigError, Pmf, Region1Params, Region2Params,
    SourceParams, SystemParams, ValidationReport,
};
pub use moments::{
    integrate_moments, integrate_trajectory, moment_derivatives, stationary_moment_state,
    y_of_t_oracle, y_of_t_oracle_with, InitialCondition, IntegrationOptions, MomentError,
    MomentState,
};
pub use presets::Setup;
pub use simulator::{
    decay_histogram, pooled_tallies, run_ensemble, run_replica, DecayConfig, DecayHistogram,
    DecayPoint, DetectionRecord, EventKind, SimConfig, SimError, TallyTable, GENERATOR_ID,
};
