//! Invariant measures of the fast process, averaged coefficients, the limit
//! ODE, Poisson correctors and the averaging / ergodic error tables.

pub mod measure;
pub mod ode;
pub mod poisson;
pub mod tables;

pub use measure::{
    averaged_drift, averaged_function, averaged_sigma, estimate_invariant_measure,
    from_stationary_density, reference_measure, InvariantMeasureEstimate, MeasureKind,
    MeasureSampling,
};
pub use ode::{solve_limit_ode, LimitTrajectory};
pub use poisson::{
    center_rhs, default_domain, solve_poisson_fd, solve_poisson_fk, FkEstimate, FkSettings,
    PoissonSolution,
};
pub use tables::{
    check_p_admissible, ergodic_error_table, strong_error_table, AveragedObservable,
    ErgodicSettings, ErrorRow, ErrorTable, HBar, Reference, ScalarObservable, StrongErrorSettings,
};
