//! Pilot transmission and least-squares channel estimation.
//!
//! The production path injects the closed-form LS estimation error directly:
//! `G_n = H_n + W~` with i.i.d. CN(0, sigma^2/(rho*tau)) entries. The
//! [`oracle`] submodule carries the explicit pilot/pseudo-inverse pipeline
//! used to cross-check that closed form.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelKind, ChannelTrajectory};
use crate::error::{Error, Result};
use crate::{seeds, C64, CMat};

/// Convert dBm to linear watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Convert linear watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Pilot transmission parameters.
///
/// All powers are configured in dBm; conversions to linear watts are
/// centralized here. Setting `noise_psd_dbm_hz` to a very large negative
/// value (or negative infinity) makes the estimator exactly noiseless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PilotConfig {
    /// Pilot sequence length `tau` in symbols.
    pub pilot_len: usize,
    /// Pilot power `rho` in dBm.
    pub pilot_power_dbm: f64,
    /// Noise power spectral density in dBm/Hz.
    pub noise_psd_dbm_hz: f64,
    /// Subcarrier bandwidth over which the noise power is integrated.
    pub subcarrier_spacing_hz: f64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            pilot_len: 2,
            pilot_power_dbm: 10.0,
            noise_psd_dbm_hz: -174.0,
            subcarrier_spacing_hz: 40e3,
        }
    }
}

impl PilotConfig {
    /// Pilot power in linear watts.
    pub fn pilot_power_w(&self) -> f64 {
        dbm_to_watts(self.pilot_power_dbm)
    }

    /// Noise variance `sigma^2` over one subcarrier, linear watts.
    pub fn noise_variance_w(&self) -> f64 {
        noise_variance(self)
    }

    /// Per-coefficient LS estimation error variance `sigma^2 / (rho * tau)`.
    pub fn estimation_error_variance(&self) -> f64 {
        self.noise_variance_w() / (self.pilot_power_w() * self.pilot_len as f64)
    }

    /// LS solvability requires `tau >= M_UE`.
    pub fn validate(&self, m_ue: usize) -> Result<()> {
        if self.pilot_len < m_ue {
            return Err(Error::InvalidConfig(format!(
                "pilot length {} is below the UE antenna count {m_ue}",
                self.pilot_len
            )));
        }
        if self.subcarrier_spacing_hz <= 0.0 {
            return Err(Error::InvalidConfig("subcarrier spacing must be > 0".into()));
        }
        Ok(())
    }
}

/// Noise power over one subcarrier: `10^((psd + 10*log10(spacing) - 30)/10)` W.
pub fn noise_variance(config: &PilotConfig) -> f64 {
    let dbm = config.noise_psd_dbm_hz + 10.0 * config.subcarrier_spacing_hz.log10();
    dbm_to_watts(dbm)
}

/// First `m_ue` columns of the `tau`-point DFT matrix, so that
/// `Phi^H Phi = tau * I` exactly.
pub fn dft_pilot(tau: usize, m_ue: usize) -> Result<CMat> {
    if tau < m_ue {
        return Err(Error::InvalidConfig(format!(
            "pilot length {tau} is below the UE antenna count {m_ue}"
        )));
    }
    if m_ue == 0 {
        return Err(Error::InvalidConfig("UE antenna count must be >= 1".into()));
    }
    Ok(CMat::from_fn(tau, m_ue, |t, m| {
        C64::from_polar(1.0, -2.0 * std::f64::consts::PI * (t * m) as f64 / tau as f64)
    }))
}

/// Closed-form LS estimate of one array-frequency domain channel matrix:
/// `G = H + W~` with i.i.d. CN(0, sigma^2/(rho*tau)) entries.
pub fn ls_estimate_frame(true_matrix: &CMat, pilot: &PilotConfig, rng: &mut ChaCha8Rng) -> CMat {
    let var = pilot.estimation_error_variance();
    if var == 0.0 {
        return true_matrix.clone();
    }
    let sigma = (var / 2.0).sqrt();
    let mut g = true_matrix.clone();
    for z in g.iter_mut() {
        let (a, b) = seeds::randn_pair(rng);
        *z += C64::new(a * sigma, b * sigma);
    }
    g
}

/// Estimate every slot of a trajectory with independent per-slot noise
/// streams derived from `noise_seed`.
pub fn estimate_trajectory(
    true_traj: &ChannelTrajectory,
    pilot: &PilotConfig,
    noise_seed: u64,
) -> Result<ChannelTrajectory> {
    true_traj.validate()?;
    let slots = true_traj
        .slots
        .iter()
        .enumerate()
        .map(|(n, h)| {
            let mut rng = seeds::stream(noise_seed, "ls-noise", n as u64);
            ls_estimate_frame(h, pilot, &mut rng)
        })
        .collect();
    Ok(ChannelTrajectory { slots, kind: ChannelKind::Estimated, start_slot: true_traj.start_slot })
}

/// Reference implementations of the full pilot/pseudo-inverse LS pipeline.
///
/// These exist to verify the closed-form noise model in `ls_estimate_frame`
/// against the explicit received-signal formulation; they are not used on
/// the production path.
pub mod oracle {
    use super::*;
    use crate::CVec;

    /// Received pilot block `Y = sqrt(rho) * H * Phi^T + W` for one
    /// subcarrier. `h` is M_BS x M_UE, `pilot_matrix` is tau x M_UE, `noise`
    /// is M_BS x tau with CN(0, sigma^2) entries.
    pub fn received_pilot(h: &CMat, pilot_matrix: &CMat, rho_w: f64, noise: &CMat) -> CMat {
        let sqrt_rho = C64::new(rho_w.sqrt(), 0.0);
        h * pilot_matrix.transpose() * sqrt_rho + noise
    }

    /// Explicit LS solve: vectorize `Y`, build `Psi = sqrt(rho)(Phi kron I)`,
    /// and apply `(Psi^H Psi)^{-1} Psi^H`.
    pub fn ls_explicit(y: &CMat, pilot_matrix: &CMat, rho_w: f64) -> Result<CVec> {
        let m_bs = y.nrows();
        let eye = CMat::identity(m_bs, m_bs);
        let psi = pilot_matrix.kronecker(&eye) * C64::new(rho_w.sqrt(), 0.0);
        let gram = psi.adjoint() * &psi;
        let inv = gram
            .try_inverse()
            .ok_or_else(|| Error::RankDeficient("pilot Gram matrix is singular".into()))?;
        let y_vec = CVec::from_column_slice(y.as_slice());
        Ok(inv * psi.adjoint() * y_vec)
    }

    /// Algebraic simplification of the explicit solve for an orthogonal DFT
    /// pilot: `vec(H) + vec(W * conj(Phi)) / (sqrt(rho) * tau)`.
    pub fn ls_closed_form(h: &CMat, pilot_matrix: &CMat, rho_w: f64, noise: &CMat) -> CVec {
        let tau = pilot_matrix.nrows() as f64;
        let filtered = noise * pilot_matrix.conjugate() / C64::new(rho_w.sqrt() * tau, 0.0);
        let mut out = CVec::from_column_slice(h.as_slice());
        out += CVec::from_column_slice(filtered.as_slice());
        out
    }
}
