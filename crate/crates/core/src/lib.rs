//! Wideband massive MIMO channel prediction workbench.
//!
//! The crate simulates the full online re-training loop of an ML-based
//! channel predictor at desk scale:
//!
//! 1. [`channel`] generates temporally correlated MIMO-OFDM channel
//!    trajectories from a geometric multipath model.
//! 2. [`estimation`] produces pilot-based least-squares channel estimates.
//! 3. [`dataset`] turns estimated trajectories into training data, splitting
//!    array-frequency domain channels into array- or frequency-domain
//!    sub-channels and either aggregating them into one dataset or keeping
//!    them separate per sub-channel.
//! 4. [`neural`] is a from-scratch MLP (ReLU hidden layers, linear output,
//!    MSE loss) trained with Adam.
//! 5. [`predictors`] composes the above into the predictor variants
//!    (AL-AD, AL-FD, SL-AD, SL-FD, SL with flip augmentation, and the
//!    outdated-CSI baseline).
//! 6. [`metrics`] provides correlation analysis, NMSE, zero-forcing sum
//!    rates, training-overhead accounting, and a training-cost proxy.
//! 7. [`runner`] orchestrates experiment cycles and sweeps, and persists
//!    results as CSV/JSON.
//!
//! Everything is deterministic given a master seed; see [`seeds`] for the
//! stream-derivation scheme.

pub mod channel;
pub mod dataset;
pub mod error;
pub mod estimation;
pub mod metrics;
pub mod neural;
pub mod predictors;
pub mod runner;
pub mod seeds;

pub use error::{Error, Result};

/// Double-precision complex scalar used for all channel coefficients.
pub type C64 = num_complex::Complex<f64>;
/// Dynamically sized complex matrix (antenna-pair rows x subcarrier columns).
pub type CMat = nalgebra::DMatrix<C64>;
/// Dynamically sized complex column vector (one sub-channel).
pub type CVec = nalgebra::DVector<C64>;

/// Propagation speed used to convert UE velocity into Doppler shift, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
