//! The corrector `chi`, the martingale decomposition of additive
//! functionals, the functional LIL paths and the distance to the Strassen
//! set, with the ensemble diagnostics around them.

mod chi;
mod martingale;
mod paths;
mod run;
mod strassen;

pub use chi::{center_g, chi_eval, chi_mc, choose_truncation, CenteredG, ChiApprox, ChiConfig, ChiSummary, ChiValue, Seminorm, TailParams};
pub use martingale::{
    chi_identity_checks, martingale_regression, martingale_series, sigma2_estimate, walk_martingale, IdentityCheck,
    MartingaleRegression, MartingaleSeries, SeriesStep, Sigma2Estimate, Sigma2Method,
};
pub use paths::{
    build_paths, dyadic_grid, eta_needed_indices, eta_path, eta_tilde_path, grid_positions, lil_norm, monotone_tail_start,
    needed_indices, path_grid, r_path, running_extremes, EtaSign, GridPos, Hn2Curve, LilPath, PathKind,
    DEFAULT_PATH_POINTS,
};
pub use run::{
    detect_flatness, rhat_trend, run_lil, CesaroEntry, CurvePoint, FlatnessConfig, KDistancePoint, LilConfig, RatioPoint,
    SeriesPartialSums, StrassenResult, TrendConfig, TrendResult, TrendTrajectory,
};
pub use strassen::{k_distance, k_distance_values, min_energy};
