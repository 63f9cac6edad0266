//! Fortet-Mourier distances, invariant-measure estimates and exponential
//! decay fits.

mod decay;
mod fm;
pub mod transport;

pub use decay::{
    ergodic_decay, fit_decay, invariant_check, invariant_estimate, ConvergenceReport, DecayConfig, DecayFit,
    DecayPoint, FitStatus,
};
pub use fm::{
    fm_distance, fm_distance_bruteforce, fm_two_sample_test, fm_distance_subsampled, fm_distance_with_budget, lipschitz_transport,
    FmProblem, TwoSampleFm, DEFAULT_LP_BUDGET,
};
