//! Quantitative instruments: sub-channel correlations, NMSE, zero-forcing
//! sum rates, training-overhead accounting, and a training-cost proxy.
//!
//! All expectations are replaced by sample averages over the slots of the
//! trajectory passed in; callers control the averaging window (the
//! orchestration layer defaults to 100 slots). Normalized correlations are
//! reported as complex values; summaries take magnitudes, since the relative
//! level between domains is what the downstream analysis compares.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelTrajectory;
use crate::dataset::{subchannel, Domain};
use crate::error::{Error, Result};
use crate::estimation::dbm_to_watts;
use crate::neural::MlpArch;
use crate::predictors::PredictorKind;
use crate::{C64, CMat, CVec};

/// Reported dB floor for exact or near-exact matches.
pub const NMSE_DB_FLOOR: f64 = -120.0;

/// Stacked, mean-centered sub-channel data: column `i` is the concatenation
/// over slots of sub-channel `i` minus its per-sub-channel sample mean.
fn centered_subchannel_stack(traj: &ChannelTrajectory, domain: Domain) -> Result<CMat> {
    traj.validate()?;
    let (m, l) = traj.dims();
    let n = traj.num_slots();
    let k1 = domain.k1(m, l);
    let k2 = domain.k2(m, l);
    let mut z = CMat::zeros(n * k1, k2);
    for i in 0..k2 {
        let mut mean = CVec::zeros(k1);
        for slot in &traj.slots {
            mean += subchannel(slot, domain, i)?;
        }
        mean /= C64::new(n as f64, 0.0);
        for (s, slot) in traj.slots.iter().enumerate() {
            let h = subchannel(slot, domain, i)?;
            for j in 0..k1 {
                z[(s * k1 + j, i)] = h[j] - mean[j];
            }
        }
    }
    Ok(z)
}

/// `S^H S` via four real GEMMs; much faster than naive complex products.
fn hermitian_gram(s: &CMat) -> CMat {
    let (rows, cols) = s.shape();
    let a = DMatrix::<f64>::from_fn(rows, cols, |r, c| s[(r, c)].re);
    let b = DMatrix::<f64>::from_fn(rows, cols, |r, c| s[(r, c)].im);
    let re = a.transpose() * &a + b.transpose() * &b;
    let im = a.transpose() * &b - b.transpose() * &a;
    CMat::from_fn(cols, cols, |r, c| C64::new(re[(r, c)], im[(r, c)]))
}

fn normalized(cov: &CMat, i: usize, j: usize) -> C64 {
    let denom = (cov[(i, i)].re * cov[(j, j)].re).sqrt();
    if denom > 0.0 {
        cov[(i, j)] / denom
    } else {
        C64::new(0.0, 0.0)
    }
}

fn check_pair(index: usize, bound: usize, what: &str) -> Result<()> {
    if index >= bound {
        return Err(Error::IndexOutOfRange(format!("{what} {index} out of range 0..{bound}")));
    }
    Ok(())
}

/// Normalized covariance between sub-channels `i` and `i2`, with sample
/// expectations over the trajectory's slots.
pub fn type1_corr(traj: &ChannelTrajectory, domain: Domain, i: usize, i2: usize) -> Result<C64> {
    traj.validate()?;
    if traj.num_slots() < 2 {
        return Err(Error::InsufficientData("at least two slots are needed".into()));
    }
    let (m, l) = traj.dims();
    let k2 = domain.k2(m, l);
    check_pair(i, k2, "sub-channel")?;
    check_pair(i2, k2, "sub-channel")?;

    let n = traj.num_slots() as f64;
    let collect = |idx: usize| -> Result<(Vec<CVec>, CVec)> {
        let vs: Vec<CVec> =
            traj.slots.iter().map(|s| subchannel(s, domain, idx)).collect::<Result<_>>()?;
        let mut mean = CVec::zeros(vs[0].len());
        for v in &vs {
            mean += v;
        }
        mean /= C64::new(n, 0.0);
        Ok((vs, mean))
    };
    let (a, mean_a) = collect(i)?;
    let (b, mean_b) = collect(i2)?;
    let mut cov_ab = C64::new(0.0, 0.0);
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (va, vb) in a.iter().zip(&b) {
        let ca = va - &mean_a;
        let cb = vb - &mean_b;
        cov_ab += ca.dotc(&cb);
        var_a += ca.norm_squared();
        var_b += cb.norm_squared();
    }
    let denom = (var_a * var_b).sqrt();
    if denom == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    Ok(cov_ab / denom)
}

/// Full K2 x K2 normalized Type-I correlation matrix.
pub fn type1_matrix(traj: &ChannelTrajectory, domain: Domain) -> Result<CMat> {
    let z = centered_subchannel_stack(traj, domain)?;
    let cov = hermitian_gram(&z);
    let k2 = cov.nrows();
    Ok(CMat::from_fn(k2, k2, |i, j| normalized(&cov, i, j)))
}

/// Mean magnitude of the Type-I correlation over all ordered pairs of
/// distinct sub-channels.
pub fn type1_average(traj: &ChannelTrajectory, domain: Domain) -> Result<f64> {
    let r = type1_matrix(traj, domain)?;
    let k2 = r.nrows();
    if k2 < 2 {
        return Err(Error::InsufficientData("need at least two sub-channels".into()));
    }
    let mut acc = 0.0;
    for i in 0..k2 {
        for j in 0..k2 {
            if i != j {
                acc += r[(i, j)].norm();
            }
        }
    }
    Ok(acc / (k2 * (k2 - 1)) as f64)
}

/// Element-wise correlation between entries `j` and `j2` of sub-channel `i`.
pub fn type2_corr(
    traj: &ChannelTrajectory,
    domain: Domain,
    i: usize,
    j: usize,
    j2: usize,
) -> Result<C64> {
    traj.validate()?;
    let (m, l) = traj.dims();
    check_pair(i, domain.k2(m, l), "sub-channel")?;
    let k1 = domain.k1(m, l);
    check_pair(j, k1, "element")?;
    check_pair(j2, k1, "element")?;

    let n = traj.num_slots() as f64;
    let series: Vec<(C64, C64)> = traj
        .slots
        .iter()
        .map(|s| {
            let h = subchannel(s, domain, i)?;
            Ok((h[j], h[j2]))
        })
        .collect::<Result<_>>()?;
    let mean_a = series.iter().map(|(a, _)| a).sum::<C64>() / n;
    let mean_b = series.iter().map(|(_, b)| b).sum::<C64>() / n;
    let mut cov = C64::new(0.0, 0.0);
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (a, b) in &series {
        let ca = a - mean_a;
        let cb = b - mean_b;
        cov += ca.conj() * cb;
        var_a += ca.norm_sqr();
        var_b += cb.norm_sqr();
    }
    let denom = (var_a * var_b).sqrt();
    if denom == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    Ok(cov / denom)
}

/// Per-sub-channel element-wise covariance matrices, centered per element.
fn type2_cov_per_subchannel(traj: &ChannelTrajectory, domain: Domain) -> Result<Vec<CMat>> {
    traj.validate()?;
    let (m, l) = traj.dims();
    let n = traj.num_slots();
    let k1 = domain.k1(m, l);
    let k2 = domain.k2(m, l);
    let mut out = Vec::with_capacity(k2);
    for i in 0..k2 {
        let mut s = CMat::zeros(n, k1);
        for (row, slot) in traj.slots.iter().enumerate() {
            let h = subchannel(slot, domain, i)?;
            for j in 0..k1 {
                s[(row, j)] = h[j];
            }
        }
        for mut col in s.column_iter_mut() {
            let mean = col.iter().sum::<C64>() / C64::new(n as f64, 0.0);
            col.apply(|z| *z -= mean);
        }
        out.push(hermitian_gram(&s));
    }
    Ok(out)
}

/// K1 x K1 matrix of Type-II correlations averaged over all sub-channels.
pub fn type2_matrix_averaged(traj: &ChannelTrajectory, domain: Domain) -> Result<CMat> {
    let covs = type2_cov_per_subchannel(traj, domain)?;
    let k1 = covs[0].nrows();
    let mut acc = CMat::zeros(k1, k1);
    for cov in &covs {
        for j in 0..k1 {
            for j2 in 0..k1 {
                acc[(j, j2)] += normalized(cov, j, j2);
            }
        }
    }
    Ok(acc / C64::new(covs.len() as f64, 0.0))
}

/// Type-II correlation averaged over all sub-channels `i` for one element
/// pair.
pub fn type2_corr_averaged(
    traj: &ChannelTrajectory,
    domain: Domain,
    j: usize,
    j2: usize,
) -> Result<C64> {
    let (m, l) = traj.dims();
    let k1 = domain.k1(m, l);
    check_pair(j, k1, "element")?;
    check_pair(j2, k1, "element")?;
    Ok(type2_matrix_averaged(traj, domain)?[(j, j2)])
}

/// Mean magnitude of the Type-II correlation over all distinct element
/// pairs, averaged over sub-channels.
pub fn type2_average(traj: &ChannelTrajectory, domain: Domain) -> Result<f64> {
    let covs = type2_cov_per_subchannel(traj, domain)?;
    let k1 = covs[0].nrows();
    if k1 < 2 {
        return Err(Error::InsufficientData("need at least two elements".into()));
    }
    let mut acc = 0.0;
    for cov in &covs {
        let mut per = 0.0;
        for j in 0..k1 {
            for j2 in 0..k1 {
                if j != j2 {
                    per += normalized(cov, j, j2).norm();
                }
            }
        }
        acc += per / (k1 * (k1 - 1)) as f64;
    }
    Ok(acc / covs.len() as f64)
}

/// Temporal correlation of sub-channel `i` at time shift `k`: the sample
/// mean over `n` of `(h_n^i)^H h_{n+k}^i / ||h_n^i||^2`.
pub fn temporal_corr(traj: &ChannelTrajectory, domain: Domain, i: usize, k: usize) -> Result<C64> {
    traj.validate()?;
    let (m, l) = traj.dims();
    check_pair(i, domain.k2(m, l), "sub-channel")?;
    let n = traj.num_slots();
    if k >= n {
        return Err(Error::IndexOutOfRange(format!("lag {k} needs more than {n} slots")));
    }
    let series: Vec<CVec> =
        traj.slots.iter().map(|s| subchannel(s, domain, i)).collect::<Result<_>>()?;
    let count = n - k;
    let mut acc = C64::new(0.0, 0.0);
    for t in 0..count {
        let denom = series[t].dotc(&series[t]);
        acc += series[t].dotc(&series[t + k]) / denom;
    }
    Ok(acc / count as f64)
}

/// Mean over sub-channels of `|R^i(k)|` for lags `0..=max_lag`.
pub fn temporal_profile(
    traj: &ChannelTrajectory,
    domain: Domain,
    max_lag: usize,
) -> Result<Vec<f64>> {
    let (m, l) = traj.dims();
    let k2 = domain.k2(m, l);
    let mut profile = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let mut acc = 0.0;
        for i in 0..k2 {
            acc += temporal_corr(traj, domain, i, k)?.norm();
        }
        profile.push(acc / k2 as f64);
    }
    Ok(profile)
}

/// Mean over slots of `||H - H_hat||_F^2 / ||H||_F^2`, linear scale.
pub fn nmse(predicted: &[CMat], truth: &[CMat]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions against {} truths",
            predicted.len(),
            truth.len()
        )));
    }
    let mut acc = 0.0;
    for (p, t) in predicted.iter().zip(truth) {
        if p.shape() != t.shape() {
            return Err(Error::ShapeMismatch("prediction and truth shapes differ".into()));
        }
        let power = t.iter().map(|z| z.norm_sqr()).sum::<f64>();
        if power == 0.0 {
            return Err(Error::InvalidConfig("true channel slot has zero power".into()));
        }
        let err = p.iter().zip(t.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        acc += err / power;
    }
    Ok(acc / predicted.len() as f64)
}

/// NMSE in dB, floored at [`NMSE_DB_FLOOR`] so exact matches stay finite.
pub fn nmse_db(nmse_linear: f64) -> f64 {
    if nmse_linear <= 0.0 {
        return NMSE_DB_FLOOR;
    }
    (10.0 * nmse_linear.log10()).max(NMSE_DB_FLOOR)
}

/// Zero-forcing combiner with unit-norm rows.
///
/// `channel_columns` is M x U (one column per UE); the result is U x M with
/// row `u` being the normalized `f_u^T`. Rank deficiency is an error, never
/// silently regularized.
pub fn zf_combiner(channel_columns: &CMat) -> Result<CMat> {
    let (m, u) = channel_columns.shape();
    if u == 0 || u > m {
        return Err(Error::ShapeMismatch(format!(
            "need 1 <= num_ues <= antennas, got U={u}, M={m}"
        )));
    }
    let gram = channel_columns.adjoint() * channel_columns;
    let inv = gram
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("channel Gram matrix is singular".into()))?;
    let residual = (&inv * &gram - CMat::identity(u, u))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if !residual.is_finite() || residual > 1e-6 {
        return Err(Error::RankDeficient(format!(
            "channel matrix is numerically rank deficient (inverse residual {residual:.2e})"
        )));
    }
    let mut combiner = inv * channel_columns.adjoint();
    for mut row in combiner.row_iter_mut() {
        let norm = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::RankDeficient("zero combiner row".into()));
        }
        row.apply(|z| *z /= norm);
    }
    Ok(combiner)
}

/// Multi-user transmission parameters for the sum-rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    /// Number of single-antenna UEs, `U`.
    pub num_ues: usize,
    /// Transmit signal power in dBm.
    pub gamma_dbm: f64,
    /// Noise power in watts.
    pub sigma2_w: f64,
    /// Symbols per slot, `N_s`.
    pub symbols_per_slot: usize,
    /// Pilot symbols per slot, `tau`.
    pub pilot_len: usize,
}

impl RateConfig {
    /// Fraction of each slot carrying payload: `(N_s - tau) / N_s`.
    pub fn alpha(&self) -> f64 {
        (self.symbols_per_slot - self.pilot_len) as f64 / self.symbols_per_slot as f64
    }

    pub fn gamma_w(&self) -> f64 {
        dbm_to_watts(self.gamma_dbm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_ues == 0 {
            return Err(Error::InvalidConfig("num_ues must be >= 1".into()));
        }
        if self.pilot_len >= self.symbols_per_slot {
            return Err(Error::InvalidConfig("pilot symbols must leave room for payload".into()));
        }
        if self.sigma2_w < 0.0 {
            return Err(Error::InvalidConfig("noise power must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-UE and total achievable rates of one transmission slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    /// Rate of each UE under the training-phase (outdated CSI) combiner.
    pub per_ue_training: Vec<f64>,
    /// Rate of each UE under the prediction-phase combiner.
    pub per_ue_prediction: Vec<f64>,
    pub beta: f64,
    /// `sum_u beta*R_tr^u + (1-beta)*R_pr^u`, bits/s/Hz.
    pub sum_rate: f64,
}

fn phase_rates(
    true_channels: &[CMat],
    combiners: &[CMat],
    cfg: &RateConfig,
) -> Result<Vec<f64>> {
    let u_count = true_channels.len();
    let l = true_channels[0].ncols();
    let alpha = cfg.alpha();
    let gamma = cfg.gamma_w();
    let mut rates = vec![0.0; u_count];
    for (sc, combiner) in combiners.iter().enumerate() {
        if combiner.nrows() != u_count || combiner.ncols() != true_channels[0].nrows() {
            return Err(Error::ShapeMismatch("combiner shape does not match channels".into()));
        }
        for u in 0..u_count {
            let row = combiner.row(u);
            // Plain (non-conjugated) products, matching the combiner rows
            // being f^T.
            let signal: C64 = row
                .iter()
                .zip(true_channels[u].column(sc).iter())
                .map(|(f, h)| f * h)
                .sum();
            let mut interference = 0.0;
            for (v, other) in true_channels.iter().enumerate() {
                if v != u {
                    let cross: C64 =
                        row.iter().zip(other.column(sc).iter()).map(|(f, h)| f * h).sum();
                    interference += cross.norm_sqr();
                }
            }
            let sinr = gamma * signal.norm_sqr() / (gamma * interference + cfg.sigma2_w);
            rates[u] += alpha * (1.0 + sinr).log2();
        }
    }
    let _ = sc_count_guard(l, combiners.len())?;
    for r in &mut rates {
        *r /= l as f64;
    }
    Ok(rates)
}

fn sc_count_guard(l: usize, combiners: usize) -> Result<()> {
    if combiners != l {
        return Err(Error::ShapeMismatch(format!(
            "{combiners} combiners for {l} subcarriers"
        )));
    }
    Ok(())
}

/// Achievable sum rate weighted by the training-phase fraction `beta`.
///
/// `true_channels` holds the true M x L channel of each UE at the evaluated
/// slot; `combiners_training` and `combiners_prediction` hold one U x M
/// combiner per subcarrier built from outdated estimates and from predicted
/// channels respectively.
pub fn achievable_sum_rate(
    true_channels: &[CMat],
    combiners_training: &[CMat],
    combiners_prediction: &[CMat],
    cfg: &RateConfig,
    beta: f64,
) -> Result<RateReport> {
    cfg.validate()?;
    if true_channels.len() != cfg.num_ues {
        return Err(Error::ShapeMismatch(format!(
            "{} UE channels for num_ues {}",
            true_channels.len(),
            cfg.num_ues
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidConfig(format!("beta {beta} outside [0, 1]")));
    }
    let (m, l) = true_channels[0].shape();
    if true_channels.iter().any(|h| h.shape() != (m, l)) {
        return Err(Error::ShapeMismatch("UE channels differ in shape".into()));
    }
    sc_count_guard(l, combiners_training.len())?;
    sc_count_guard(l, combiners_prediction.len())?;

    let per_ue_training = phase_rates(true_channels, combiners_training, cfg)?;
    let per_ue_prediction = phase_rates(true_channels, combiners_prediction, cfg)?;
    let sum_rate = per_ue_training
        .iter()
        .zip(&per_ue_prediction)
        .map(|(tr, pr)| beta * tr + (1.0 - beta) * pr)
        .sum();
    Ok(RateReport { per_ue_training, per_ue_prediction, beta, sum_rate })
}

/// Training-phase overhead accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub slot_duration_s: f64,
    pub collection_slots: usize,
    /// Data collection time `T_dur * N`.
    pub t_col_s: f64,
    /// Measured network training time.
    pub t_com_s: f64,
    /// `T_col + T_com`.
    pub t_tot_s: f64,
    /// Re-training cycle period, when configured.
    pub t_cyc_s: Option<f64>,
    /// `T_tot / T_cyc`, when the cycle period is configured.
    pub beta: Option<f64>,
}

/// Assemble an overhead report; errors if a configured cycle period is
/// shorter than the training phase it must contain.
pub fn overhead(
    slot_duration_s: f64,
    collection_slots: usize,
    t_com_s: f64,
    t_cyc_s: Option<f64>,
) -> Result<OverheadReport> {
    if slot_duration_s <= 0.0 || collection_slots == 0 || t_com_s < 0.0 {
        return Err(Error::InvalidConfig(
            "slot duration and collection slots must be positive, training time nonnegative"
                .into(),
        ));
    }
    let t_col_s = slot_duration_s * collection_slots as f64;
    let t_tot_s = t_col_s + t_com_s;
    let beta = match t_cyc_s {
        None => None,
        Some(t_cyc) => {
            if t_cyc <= 0.0 {
                return Err(Error::InvalidConfig("cycle period must be > 0".into()));
            }
            let beta = t_tot_s / t_cyc;
            if beta > 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "training phase ({t_tot_s:.3} s) exceeds the cycle period ({t_cyc:.3} s)"
                )));
            }
            Some(beta)
        }
    };
    Ok(OverheadReport {
        slot_duration_s,
        collection_slots,
        t_col_s,
        t_com_s,
        t_tot_s,
        t_cyc_s,
        beta,
    })
}

/// Big-O training cost proxy of the two-hidden-layer MLP:
/// `N_epoch * N_node * N_train * (N_node + (input + output) / 2)`.
///
/// For one-step sub-channel predictors the trailing term equals
/// `K1 * (I + 1)`. Architectures outside the equal-width two-hidden-layer
/// family are rejected.
pub fn complexity_estimate(arch: &MlpArch, n_epoch: usize, n_train: usize) -> Result<u128> {
    let n_node = match arch.hidden_dims.as_slice() {
        [a, b] if a == b => *a as u128,
        _ => {
            return Err(Error::InvalidConfig(
                "cost proxy covers only two equal-width hidden layers".into(),
            ))
        }
    };
    let tail = n_node + (arch.input_dim as u128 + arch.output_dim as u128) / 2;
    Ok(n_epoch as u128 * n_node * n_train as u128 * tail)
}

/// Cost proxy per predictor kind for a one-step predictor on an M x L
/// channel collected over `n_slots` slots. AL pools `K2 * (N - I)` samples
/// into one network; SL costs are per network; the baseline costs nothing.
pub fn complexity_for_kind(
    kind: PredictorKind,
    m: usize,
    l: usize,
    n_slots: usize,
    input_order: usize,
    n_epoch: usize,
) -> Result<u128> {
    let Some(domain) = kind.domain() else {
        return Ok(0);
    };
    if n_slots <= input_order {
        return Err(Error::InvalidConfig("collection window shorter than the input order".into()));
    }
    let k1 = domain.k1(m, l);
    let k2 = domain.k2(m, l);
    let arch = MlpArch::standard(input_order, 1, k1);
    let n_train = match kind {
        PredictorKind::Aggregated { .. } => k2 * (n_slots - input_order),
        _ => n_slots - input_order,
    };
    complexity_estimate(&arch, n_epoch, n_train)
}
