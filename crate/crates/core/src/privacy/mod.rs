//! Clipping, Gaussian noise, noise calibration and two privacy
//! accountants: plain sequential composition and a moments bound that
//! accounts for weighted aggregation across nodes through `ρ̄`.

mod accountant;
mod calibrate;
mod mechanism;

pub use accountant::{
    max_lambda, moments_alpha, moments_epsilon, rho_bar, sequential_composition,
    sequential_epsilon, single_step_epsilon, Accountant, PrivacyParams, PrivacySpent, LAMBDA_CAP,
};
pub use calibrate::{
    sigma_calibrate_formula, sigma_calibrate_numeric, sigma_single_step, CalibrationMode,
    SIGMA_GRID,
};
pub use mechanism::{clip_global, clip_gradient, gaussian_mechanism};
