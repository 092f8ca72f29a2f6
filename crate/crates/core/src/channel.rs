//! Geometric multipath channel generator for wideband MIMO-OFDM links.
//!
//! A channel realization is a sum of `P` plane-wave paths, each with a
//! complex gain, an arrival direction at the BS uniform planar array, a
//! departure angle at the UE uniform linear array, a propagation delay, and
//! a Doppler shift from the UE travel direction. Stacking the per-path
//! contributions over time slots and subcarriers yields an M x L
//! array-frequency domain channel matrix per slot with the three correlation
//! structures the downstream analysis cares about: frequency decorrelation
//! from the delay spread, spatial correlation from the array response, and
//! temporal correlation from Doppler.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{seeds, C64, CMat, CVec, SPEED_OF_LIGHT};

/// BS uniform planar array plus UE uniform linear array.
///
/// Element spacings are in wavelengths. The total number of antenna pairs is
/// `M = M_BS * M_UE`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayGeometry {
    pub bs_rows: usize,
    pub bs_cols: usize,
    pub ue_antennas: usize,
    pub spacing_bs: f64,
    pub spacing_ue: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self { bs_rows: 8, bs_cols: 8, ue_antennas: 2, spacing_bs: 0.5, spacing_ue: 0.5 }
    }
}

impl ArrayGeometry {
    pub fn m_bs(&self) -> usize {
        self.bs_rows * self.bs_cols
    }

    pub fn m_ue(&self) -> usize {
        self.ue_antennas
    }

    /// Total number of antenna pairs, `M = M_BS * M_UE`.
    pub fn m_total(&self) -> usize {
        self.m_bs() * self.m_ue()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bs_rows == 0 || self.bs_cols == 0 || self.ue_antennas == 0 {
            return Err(Error::InvalidGeometry("antenna counts must be >= 1".into()));
        }
        if self.spacing_bs <= 0.0 || self.spacing_ue <= 0.0 {
            return Err(Error::InvalidGeometry("element spacings must be > 0".into()));
        }
        Ok(())
    }
}

/// Scenario-level parameters of the simulated link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    /// Number of OFDM subcarriers, `L`.
    pub num_subcarriers: usize,
    /// Duration of one time slot, `T_dur`.
    pub slot_duration_s: f64,
    pub ue_speed_mps: f64,
    /// Number of propagation paths, `P`.
    pub num_paths: usize,
    /// Mean of the exponential power-delay profile.
    pub delay_spread_s: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 2.53e9,
            subcarrier_spacing_hz: 40e3,
            num_subcarriers: 128,
            slot_duration_s: 2e-3,
            ue_speed_mps: 20.0 / 3.6,
            num_paths: 20,
            delay_spread_s: 100e-9,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Maximum Doppler shift `v * f_c / c`.
    pub fn max_doppler_hz(&self) -> f64 {
        self.ue_speed_mps * self.carrier_hz / SPEED_OF_LIGHT
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subcarriers == 0 {
            return Err(Error::InvalidConfig("num_subcarriers must be >= 1".into()));
        }
        if self.num_paths == 0 {
            return Err(Error::InvalidConfig("num_paths must be >= 1".into()));
        }
        if self.slot_duration_s <= 0.0 {
            return Err(Error::InvalidConfig("slot_duration_s must be > 0".into()));
        }
        if self.carrier_hz <= self.subcarrier_spacing_hz * self.num_subcarriers as f64 {
            return Err(Error::InvalidConfig(
                "carrier frequency must dominate the occupied bandwidth".into(),
            ));
        }
        if self.ue_speed_mps < 0.0 || self.delay_spread_s < 0.0 {
            return Err(Error::InvalidConfig("speed and delay spread must be >= 0".into()));
        }
        Ok(())
    }

    /// Baseband offset of subcarrier `l`, centered so the band midpoint is 0.
    pub fn subcarrier_offset_hz(&self, subcarrier: usize) -> f64 {
        (subcarrier as f64 - (self.num_subcarriers as f64 - 1.0) / 2.0) * self.subcarrier_spacing_hz
    }
}

/// Which end of the link a steering vector is evaluated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArraySide {
    Bs,
    Ue,
}

/// Direction parameters for a steering vector; the variant must match the
/// array type of the requested side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SteeringAngles {
    /// Azimuth/elevation pair for the BS UPA, radians.
    Upa { azimuth: f64, elevation: f64 },
    /// Single angle for the UE ULA, radians.
    Ula { angle: f64 },
}

/// Array response vector with unit-modulus entries.
///
/// Element phases are `-2*pi*spacing*(projection of the direction onto the
/// element position)`. For the UPA the element at row `r`, column `c`
/// (index `r*bs_cols + c`) projects as `r*sin(el) + c*cos(el)*sin(az)`; for
/// the ULA element `m` projects as `m*sin(angle)`.
pub fn steering_vector(
    geometry: &ArrayGeometry,
    side: ArraySide,
    angles: SteeringAngles,
) -> Result<CVec> {
    geometry.validate()?;
    match (side, angles) {
        (ArraySide::Bs, SteeringAngles::Upa { azimuth, elevation }) => {
            let u = elevation.sin();
            let v = elevation.cos() * azimuth.sin();
            let cols = geometry.bs_cols;
            Ok(CVec::from_fn(geometry.m_bs(), |i, _| {
                let (r, c) = (i / cols, i % cols);
                let phase = -2.0 * PI * geometry.spacing_bs * (r as f64 * u + c as f64 * v);
                C64::from_polar(1.0, phase)
            }))
        }
        (ArraySide::Ue, SteeringAngles::Ula { angle }) => {
            let s = angle.sin();
            Ok(CVec::from_fn(geometry.m_ue(), |m, _| {
                let phase = -2.0 * PI * geometry.spacing_ue * m as f64 * s;
                C64::from_polar(1.0, phase)
            }))
        }
        _ => Err(Error::InvalidGeometry(
            "angle variant does not match the requested array side".into(),
        )),
    }
}

/// One propagation path.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub gain: C64,
    pub aoa_azimuth: f64,
    pub aoa_elevation: f64,
    pub aod: f64,
    pub delay_s: f64,
    pub doppler_hz: f64,
}

/// A full multipath realization with unit total power.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Sum of realized path powers; normalized to 1 by construction.
    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }
}

/// Draw a multipath realization.
///
/// Angles are uniform over their supports, delays follow an exponential
/// distribution with mean `delay_spread_s` truncated to four delay spreads,
/// Doppler shifts are `f_D,max * cos(alpha)` with a uniform travel angle, and
/// gains are complex normal weighted by an exponential power-delay profile
/// and normalized so the realized total power is exactly 1.
pub fn generate_paths(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<PathSet> {
    config.validate()?;
    let fd_max = config.max_doppler_hz();
    let ds = config.delay_spread_s;
    // Inverse-CDF sampling of the truncated exponential keeps the draw count
    // per path fixed, which pins the stream layout.
    let trunc = 1.0 - (-4.0f64).exp();

    let mut paths = Vec::with_capacity(config.num_paths);
    let mut raw_gains = Vec::with_capacity(config.num_paths);
    for _ in 0..config.num_paths {
        let aoa_azimuth = rng.gen_range(-PI..PI);
        let aoa_elevation = rng.gen_range(-PI / 2.0..PI / 2.0);
        let aod = rng.gen_range(-PI..PI);
        let delay_s = if ds > 0.0 {
            -ds * (1.0 - rng.gen::<f64>() * trunc).ln()
        } else {
            let _ = rng.gen::<f64>();
            0.0
        };
        let travel = rng.gen_range(0.0..2.0 * PI);
        let doppler_hz = fd_max * travel.cos();
        raw_gains.push(seeds::crandn(rng));
        paths.push(Path { gain: C64::new(0.0, 0.0), aoa_azimuth, aoa_elevation, aod, delay_s, doppler_hz });
    }

    // Exponential power-delay profile, then exact unit-power normalization of
    // the realization.
    let pdp: Vec<f64> = paths
        .iter()
        .map(|p| if ds > 0.0 { (-p.delay_s / ds).exp() } else { 1.0 })
        .collect();
    let pdp_sum: f64 = pdp.iter().sum();
    let realized: f64 = raw_gains
        .iter()
        .zip(&pdp)
        .map(|(g, w)| g.norm_sqr() * w / pdp_sum)
        .sum();
    let scale = if realized > 0.0 { realized.sqrt().recip() } else { 0.0 };
    for ((path, g), w) in paths.iter_mut().zip(&raw_gains).zip(&pdp) {
        path.gain = g * C64::new((w / pdp_sum).sqrt() * scale, 0.0);
    }

    Ok(PathSet { paths })
}

/// Per-path spatial signatures `vec(a_BS * a_UE^T)`, fixed over time and
/// frequency for a given path set.
fn spatial_signatures(paths: &PathSet, geometry: &ArrayGeometry) -> Result<Vec<CVec>> {
    let m_bs = geometry.m_bs();
    let m_ue = geometry.m_ue();
    paths
        .paths
        .iter()
        .map(|p| {
            let a_bs = steering_vector(
                geometry,
                ArraySide::Bs,
                SteeringAngles::Upa { azimuth: p.aoa_azimuth, elevation: p.aoa_elevation },
            )?;
            let a_ue = steering_vector(geometry, ArraySide::Ue, SteeringAngles::Ula { angle: p.aod })?;
            // Column-major vec(): entry (b, u) lands at index u*M_BS + b.
            Ok(CVec::from_fn(m_bs * m_ue, |i, _| a_bs[i % m_bs] * a_ue[i / m_bs]))
        })
        .collect()
}

/// Accumulate the vectorized channel for one (slot, subcarrier) pair from
/// precomputed spatial signatures.
fn channel_from_signatures(
    paths: &PathSet,
    signatures: &[CVec],
    config: &ScenarioConfig,
    slot: usize,
    subcarrier: usize,
) -> CVec {
    let f_l = config.subcarrier_offset_hz(subcarrier);
    let t = slot as f64 * config.slot_duration_s;
    let m = signatures.first().map_or(0, |s| s.len());
    let mut h = CVec::zeros(m);
    for (path, sig) in paths.paths.iter().zip(signatures) {
        let phase = 2.0 * PI * (path.doppler_hz * t - f_l * path.delay_s);
        let coeff = path.gain * C64::from_polar(1.0, phase);
        h.axpy(coeff, sig, C64::new(1.0, 0.0));
    }
    h
}

/// Vectorized channel `h_n^l` of length `M` for one slot and subcarrier.
pub fn channel_at(
    paths: &PathSet,
    geometry: &ArrayGeometry,
    config: &ScenarioConfig,
    slot: usize,
    subcarrier: usize,
) -> Result<CVec> {
    if subcarrier >= config.num_subcarriers {
        return Err(Error::IndexOutOfRange(format!(
            "subcarrier {subcarrier} out of range 0..{}",
            config.num_subcarriers
        )));
    }
    let signatures = spatial_signatures(paths, geometry)?;
    Ok(channel_from_signatures(paths, &signatures, config, slot, subcarrier))
}

/// Whether a trajectory holds true channels `H_n` or estimates `G_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelKind {
    True,
    Estimated,
}

/// Time-indexed sequence of M x L array-frequency domain channel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrajectory {
    /// One M x L matrix per consecutive slot.
    pub slots: Vec<CMat>,
    pub kind: ChannelKind,
    /// Absolute index of `slots[0]`.
    pub start_slot: usize,
}

impl ChannelTrajectory {
    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// (M, L) of every slot matrix.
    pub fn dims(&self) -> (usize, usize) {
        self.slots.first().map_or((0, 0), |m| (m.nrows(), m.ncols()))
    }

    pub fn validate(&self) -> Result<()> {
        let (m, l) = self.dims();
        if m == 0 || l == 0 {
            return Err(Error::InsufficientData("trajectory has no slots".into()));
        }
        if self.slots.iter().any(|s| s.nrows() != m || s.ncols() != l) {
            return Err(Error::ShapeMismatch("trajectory slots differ in shape".into()));
        }
        Ok(())
    }

    /// A copy of `len` consecutive slots starting at relative index `start`.
    pub fn window(&self, start: usize, len: usize) -> Result<ChannelTrajectory> {
        if start + len > self.slots.len() {
            return Err(Error::IndexOutOfRange(format!(
                "window {start}..{} exceeds {} slots",
                start + len,
                self.slots.len()
            )));
        }
        Ok(ChannelTrajectory {
            slots: self.slots[start..start + len].to_vec(),
            kind: self.kind,
            start_slot: self.start_slot + start,
        })
    }
}

/// Generate a true-channel trajectory of `num_slots` consecutive slots.
pub fn generate_trajectory(
    config: &ScenarioConfig,
    geometry: &ArrayGeometry,
    num_slots: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ChannelTrajectory> {
    if num_slots == 0 {
        return Err(Error::InvalidConfig("num_slots must be >= 1".into()));
    }
    let paths = generate_paths(config, rng)?;
    trajectory_from_paths(&paths, geometry, config, num_slots)
}

/// Stack [`channel_at`] over all slots and subcarriers of a fixed path set.
pub fn trajectory_from_paths(
    paths: &PathSet,
    geometry: &ArrayGeometry,
    config: &ScenarioConfig,
    num_slots: usize,
) -> Result<ChannelTrajectory> {
    geometry.validate()?;
    config.validate()?;
    let signatures = spatial_signatures(paths, geometry)?;
    let m = geometry.m_total();
    let l = config.num_subcarriers;
    let slots = (0..num_slots)
        .map(|n| {
            let mut mat = CMat::zeros(m, l);
            for sc in 0..l {
                let h = channel_from_signatures(paths, &signatures, config, n, sc);
                mat.set_column(sc, &h);
            }
            mat
        })
        .collect();
    Ok(ChannelTrajectory { slots, kind: ChannelKind::True, start_slot: 0 })
}
