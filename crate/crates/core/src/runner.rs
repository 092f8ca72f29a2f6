//! Experiment orchestration: re-training cycles, parameter sweeps, and
//! result persistence.
//!
//! One cycle generates a true trajectory, estimates it, trains the requested
//! predictors on the first `N` estimated slots, and evaluates them on a
//! window separated from the training slots by a fixed gap, always using
//! estimated channels as predictor inputs and true channels in the NMSE.
//! Sweeps run the Cartesian product of axis values and seeds; rows are
//! keyed by derived per-seed-index seeds so extending the seed count never
//! changes existing rows.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_trajectory, ArrayGeometry, ChannelTrajectory, ScenarioConfig};
use crate::dataset::Domain;
use crate::error::{Error, Result};
use crate::estimation::{estimate_trajectory, PilotConfig};
use crate::metrics::{
    self, achievable_sum_rate, nmse, nmse_db, overhead, zf_combiner, OverheadReport, RateConfig,
    RateReport,
};
use crate::neural::TrainConfig;
use crate::predictors::{
    predict_horizon, train_predictor, PredictorKind, TrainedPredictor, TrainingTimes,
};
use crate::{seeds, CMat};

/// Prediction-phase evaluation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Idle slots between the training window and the evaluated slots.
    pub gap_slots: usize,
    /// Number of evaluated prediction slots.
    pub eval_slots: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { gap_slots: 100, eval_slots: 100 }
    }
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Collection slots `N`.
    N,
    /// BS and UE element spacing in wavelengths.
    Spacing,
    /// Pilot power in dBm.
    PilotPower,
    /// UE speed in m/s.
    Speed,
    /// Prediction order `p`.
    P,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::N => "n",
            SweepAxis::Spacing => "spacing",
            SweepAxis::PilotPower => "pilot_power",
            SweepAxis::Speed => "speed",
            SweepAxis::P => "p",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "n" => Ok(SweepAxis::N),
            "spacing" => Ok(SweepAxis::Spacing),
            "pilot_power" | "pilot-power" => Ok(SweepAxis::PilotPower),
            "speed" => Ok(SweepAxis::Speed),
            "p" => Ok(SweepAxis::P),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep axis {other:?}; expected n, spacing, pilot_power, speed, or p"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { axis: SweepAxis::N, values: vec![10.0, 20.0, 40.0, 80.0] }
    }
}

/// Sum-rate evaluation parameters; present only when rate results are
/// wanted, since they multiply the training cost by the number of UEs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateSection {
    pub num_ues: usize,
    pub gamma_dbm: f64,
    pub symbols_per_slot: usize,
    /// Noise power override; derived from the pilot config when absent.
    pub sigma2_w: Option<f64>,
    /// Training-phase fractions to evaluate; cycle rows report the first.
    pub betas: Vec<f64>,
}

impl Default for RateSection {
    fn default() -> Self {
        Self {
            num_ues: 5,
            gamma_dbm: 10.0,
            symbols_per_slot: 14,
            sigma2_w: None,
            betas: vec![0.16],
        }
    }
}

/// Fully resolved experiment description; also the config-file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub geometry: ArrayGeometry,
    pub pilot: PilotConfig,
    /// Predictor names (al-ad, al-fd, sl-ad, sl-fd, sl-ad-flip, sl-fd-flip,
    /// out). The outdated baseline is always evaluated even when absent.
    pub predictors: Vec<String>,
    pub input_order: usize,
    pub prediction_order: usize,
    /// Data-collection slots `N`.
    pub collection_slots: usize,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub rate: Option<RateSection>,
    pub sweep: SweepConfig,
    pub master_seed: u64,
    pub num_seeds: usize,
    /// Re-training cycle period for overhead accounting.
    pub t_cyc_s: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            geometry: ArrayGeometry::default(),
            pilot: PilotConfig::default(),
            predictors: vec!["al-fd".into(), "sl-fd".into(), "out".into()],
            input_order: 2,
            prediction_order: 1,
            collection_slots: 40,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            rate: None,
            sweep: SweepConfig::default(),
            master_seed: 1,
            num_seeds: 5,
            t_cyc_s: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    /// Requested predictors plus the always-on outdated baseline.
    pub fn predictor_kinds(&self) -> Result<Vec<PredictorKind>> {
        let mut kinds: Vec<PredictorKind> =
            self.predictors.iter().map(|s| PredictorKind::parse(s)).collect::<Result<_>>()?;
        if !kinds.contains(&PredictorKind::Outdated) {
            kinds.push(PredictorKind::Outdated);
        }
        Ok(kinds)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.geometry.validate()?;
        self.pilot.validate(self.geometry.m_ue())?;
        self.train.validate()?;
        let _ = self.predictor_kinds()?;
        if self.input_order == 0 || self.prediction_order == 0 {
            return Err(Error::InvalidConfig("input and prediction orders must be >= 1".into()));
        }
        if self.collection_slots <= self.input_order + self.prediction_order {
            return Err(Error::InvalidConfig(format!(
                "collection_slots {} must exceed input_order + prediction_order {}",
                self.collection_slots,
                self.input_order + self.prediction_order
            )));
        }
        if self.eval.eval_slots == 0 {
            return Err(Error::InvalidConfig("eval_slots must be >= 1".into()));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::InvalidConfig("sweep values must be non-empty".into()));
        }
        if self.num_seeds == 0 {
            return Err(Error::InvalidConfig("num_seeds must be >= 1".into()));
        }
        Ok(())
    }

    /// Apply one sweep value, returning the resolved per-cell config.
    pub fn with_axis_value(&self, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = self.clone();
        match axis {
            SweepAxis::N => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidConfig(format!("N must be a positive integer, got {value}")));
                }
                cfg.collection_slots = value as usize;
            }
            SweepAxis::Spacing => {
                if value <= 0.0 {
                    return Err(Error::InvalidConfig(format!("spacing must be > 0, got {value}")));
                }
                cfg.geometry.spacing_bs = value;
                cfg.geometry.spacing_ue = value;
            }
            SweepAxis::PilotPower => cfg.pilot.pilot_power_dbm = value,
            SweepAxis::Speed => {
                if value < 0.0 {
                    return Err(Error::InvalidConfig(format!("speed must be >= 0, got {value}")));
                }
                cfg.scenario.ue_speed_mps = value;
            }
            SweepAxis::P => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidConfig(format!("p must be a positive integer, got {value}")));
                }
                cfg.prediction_order = value as usize;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// FNV-1a hash of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", seeds::fnv1a(text.as_bytes()))
    }
}

/// One (predictor, axis value, seed) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRow {
    pub predictor: String,
    pub axis: String,
    pub axis_value: f64,
    /// Derived cycle seed; rerunning `run_cycle` with it reproduces the row.
    pub seed: u64,
    pub nmse_linear: f64,
    pub nmse_db: f64,
    pub t_col_s: f64,
    /// Serial training time (sum over SL networks).
    pub t_com_s: f64,
    /// Longest single network; the parallel-training makespan lower bound.
    pub t_com_parallel_s: f64,
    pub sum_rate: Option<f64>,
    pub config_hash: String,
}

/// Per-cell aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub predictor: String,
    pub axis_value: f64,
    pub n_seeds: usize,
    pub median_nmse_db: f64,
    pub min_nmse_db: f64,
    pub max_nmse_db: f64,
}

/// Table-I style correlation summary of one spacing-sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummaryRow {
    pub axis: String,
    pub axis_value: f64,
    pub seed: u64,
    pub domain: String,
    pub type1_avg: f64,
    pub type2_avg: f64,
}

/// Everything a sweep produced, with full provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub rows: Vec<CycleRow>,
    pub summaries: Vec<CellSummary>,
    pub correlation_rows: Vec<CorrelationSummaryRow>,
}

pub const CSV_HEADER: &str =
    "predictor,axis,axis_value,seed,nmse_linear,nmse_db,t_col_s,t_com_s,sum_rate";

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Slot bookkeeping of one cycle.
///
/// Training uses estimated slots `[0, N)`; slots `[N, N+gap)` are idle; the
/// evaluated predictions are the slots `[N+gap, N+gap+eval)`, each predicted
/// from the `I` estimates immediately before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleWindows {
    pub collection_slots: usize,
    pub gap_slots: usize,
    pub eval_slots: usize,
    pub input_order: usize,
    pub prediction_order: usize,
}

impl CycleWindows {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            collection_slots: cfg.collection_slots,
            gap_slots: cfg.eval.gap_slots,
            eval_slots: cfg.eval.eval_slots,
            input_order: cfg.input_order,
            prediction_order: cfg.prediction_order,
        }
    }

    /// Base slots `n` whose predictions `n+1 ..= n+p` are evaluated.
    pub fn eval_base_slots(&self) -> std::ops::Range<usize> {
        let first_predicted = self.collection_slots + self.gap_slots;
        first_predicted - 1..first_predicted - 1 + self.eval_slots
    }

    /// Total slots the trajectory must cover.
    pub fn total_slots(&self) -> usize {
        self.collection_slots
            + self.gap_slots
            + self.eval_slots
            + self.input_order.max(self.prediction_order)
    }

    /// Slot indices used for training.
    pub fn training_slots(&self) -> std::ops::Range<usize> {
        0..self.collection_slots
    }
}

/// Evaluate a trained predictor over the cycle's evaluation window: sliding
/// estimated inputs, NMSE against the true channels of every predicted step.
pub fn evaluate_predictor(
    pred: &TrainedPredictor,
    truth: &ChannelTrajectory,
    estimated: &ChannelTrajectory,
    windows: &CycleWindows,
) -> Result<f64> {
    let mut predicted_all: Vec<CMat> = Vec::new();
    let mut truth_all: Vec<CMat> = Vec::new();
    for n in windows.eval_base_slots() {
        let recent = &estimated.slots[n + 1 - windows.input_order..=n];
        let horizon = predict_horizon(pred, recent)?;
        for (j, p) in horizon.into_iter().enumerate() {
            predicted_all.push(p);
            truth_all.push(truth.slots[n + 1 + j].clone());
        }
    }
    nmse(&predicted_all, &truth_all)
}

struct CyclePredictorResult {
    kind: PredictorKind,
    nmse_linear: f64,
    times: TrainingTimes,
    sum_rate: Option<f64>,
}

/// Run one training/prediction cycle at a resolved config.
///
/// `axis` and `axis_value` only label the output rows; apply sweep values
/// with [`ExperimentConfig::with_axis_value`] beforehand.
pub fn run_cycle(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    axis_value: f64,
    cycle_seed: u64,
) -> Result<Vec<CycleRow>> {
    cfg.validate()?;
    let windows = CycleWindows::from_config(cfg);
    let kinds = cfg.predictor_kinds()?;

    let mut channel_rng = seeds::stream(cycle_seed, "channel", 0);
    let truth = generate_trajectory(&cfg.scenario, &cfg.geometry, windows.total_slots(), &mut channel_rng)?;
    let noise_seed = seeds::derive(cycle_seed, "noise", 0);
    let estimated = estimate_trajectory(&truth, &cfg.pilot, noise_seed)?;
    let training_window = estimated.window(0, windows.collection_slots)?;

    let config_hash = cfg.hash();
    let mut rows = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let train_cfg = TrainConfig {
            seed: seeds::derive(cycle_seed, &format!("train-{}", kind.name()), 0),
            ..cfg.train
        };
        let (pred, times) = train_predictor(
            kind,
            &training_window,
            cfg.input_order,
            cfg.prediction_order,
            &train_cfg,
        )?;
        let nmse_linear = evaluate_predictor(&pred, &truth, &estimated, &windows)?;
        let sum_rate = match &cfg.rate {
            Some(section) => Some(rate_for_kind(cfg, section, kind, cycle_seed, section.betas[0])?.sum_rate),
            None => None,
        };
        let result = CyclePredictorResult { kind, nmse_linear, times, sum_rate };
        let report = overhead(
            cfg.scenario.slot_duration_s,
            windows.collection_slots,
            result.times.serial_total_s(),
            cfg.t_cyc_s,
        )?;
        rows.push(cycle_row(cfg, axis, axis_value, cycle_seed, &config_hash, &result, &report));
    }
    Ok(rows)
}

fn cycle_row(
    _cfg: &ExperimentConfig,
    axis: SweepAxis,
    axis_value: f64,
    cycle_seed: u64,
    config_hash: &str,
    result: &CyclePredictorResult,
    report: &OverheadReport,
) -> CycleRow {
    CycleRow {
        predictor: result.kind.name(),
        axis: axis.name().into(),
        axis_value,
        seed: cycle_seed,
        nmse_linear: result.nmse_linear,
        nmse_db: nmse_db(result.nmse_linear),
        t_col_s: report.t_col_s,
        t_com_s: report.t_com_s,
        t_com_parallel_s: result.times.parallel_max_s(),
        sum_rate: result.sum_rate,
        config_hash: config_hash.into(),
    }
}

/// Resolve the rate section into a concrete [`RateConfig`].
pub fn resolve_rate_config(cfg: &ExperimentConfig, section: &RateSection) -> Result<RateConfig> {
    if cfg.geometry.m_ue() != 1 {
        return Err(Error::InvalidConfig(
            "sum-rate evaluation assumes single-antenna UEs; set geometry.ue_antennas = 1".into(),
        ));
    }
    if section.num_ues > cfg.geometry.m_bs() {
        return Err(Error::InvalidConfig(format!(
            "num_ues {} exceeds BS antennas {}",
            section.num_ues,
            cfg.geometry.m_bs()
        )));
    }
    if section.betas.is_empty() {
        return Err(Error::InvalidConfig("rate.betas must be non-empty".into()));
    }
    let rate_cfg = RateConfig {
        num_ues: section.num_ues,
        gamma_dbm: section.gamma_dbm,
        sigma2_w: section.sigma2_w.unwrap_or_else(|| cfg.pilot.noise_variance_w()),
        symbols_per_slot: section.symbols_per_slot,
        pilot_len: cfg.pilot.pilot_len,
    };
    rate_cfg.validate()?;
    Ok(rate_cfg)
}

/// Multi-UE sum-rate evaluation of one predictor kind.
///
/// Each UE gets an independent channel (derived seed), its own estimate, and
/// its own trained predictor. Per evaluated slot, the training-phase
/// combiner is built from the most recent (outdated) estimates and the
/// prediction-phase combiner from the predicted channels; both are scored
/// against the true next-slot channels and averaged over the window.
pub fn rate_for_kind(
    cfg: &ExperimentConfig,
    section: &RateSection,
    kind: PredictorKind,
    cycle_seed: u64,
    beta: f64,
) -> Result<RateReport> {
    cfg.validate()?;
    let rate_cfg = resolve_rate_config(cfg, section)?;
    let windows = CycleWindows::from_config(cfg);

    struct UeData {
        truth: ChannelTrajectory,
        estimated: ChannelTrajectory,
        pred: TrainedPredictor,
    }
    let ues: Vec<UeData> = (0..rate_cfg.num_ues as u64)
        .map(|u| {
            let ue_seed = seeds::derive(cycle_seed, "ue", u);
            let mut channel_rng = seeds::stream(ue_seed, "channel", 0);
            let truth = generate_trajectory(
                &cfg.scenario,
                &cfg.geometry,
                windows.total_slots(),
                &mut channel_rng,
            )?;
            let estimated =
                estimate_trajectory(&truth, &cfg.pilot, seeds::derive(ue_seed, "noise", 0))?;
            let train_cfg = TrainConfig {
                seed: seeds::derive(ue_seed, &format!("train-{}", kind.name()), 0),
                ..cfg.train
            };
            let (pred, _) = train_predictor(
                kind,
                &estimated.window(0, windows.collection_slots)?,
                cfg.input_order,
                cfg.prediction_order,
                &train_cfg,
            )?;
            Ok(UeData { truth, estimated, pred })
        })
        .collect::<Result<_>>()?;

    let l = cfg.scenario.num_subcarriers;
    let m = cfg.geometry.m_total();
    let mut acc_training = vec![0.0; rate_cfg.num_ues];
    let mut acc_prediction = vec![0.0; rate_cfg.num_ues];
    let mut slots = 0usize;
    for n in windows.eval_base_slots() {
        let truths: Vec<CMat> = ues.iter().map(|u| u.truth.slots[n + 1].clone()).collect();
        let outdated: Vec<&CMat> = ues.iter().map(|u| &u.estimated.slots[n]).collect();
        let predicted: Vec<CMat> = ues
            .iter()
            .map(|u| {
                let recent = &u.estimated.slots[n + 1 - windows.input_order..=n];
                Ok(predict_horizon(&u.pred, recent)?.remove(0))
            })
            .collect::<Result<_>>()?;

        let stack = |mats: &[&CMat], sc: usize| CMat::from_fn(m, rate_cfg.num_ues, |r, u| mats[u][(r, sc)]);
        let combiners_tr: Vec<CMat> = (0..l)
            .map(|sc| zf_combiner(&stack(&outdated, sc)))
            .collect::<Result<_>>()?;
        let pred_refs: Vec<&CMat> = predicted.iter().collect();
        let combiners_pr: Vec<CMat> = (0..l)
            .map(|sc| zf_combiner(&stack(&pred_refs, sc)))
            .collect::<Result<_>>()?;

        let report = achievable_sum_rate(&truths, &combiners_tr, &combiners_pr, &rate_cfg, beta)?;
        for u in 0..rate_cfg.num_ues {
            acc_training[u] += report.per_ue_training[u];
            acc_prediction[u] += report.per_ue_prediction[u];
        }
        slots += 1;
    }
    for v in acc_training.iter_mut().chain(acc_prediction.iter_mut()) {
        *v /= slots as f64;
    }
    let sum_rate = acc_training
        .iter()
        .zip(&acc_prediction)
        .map(|(tr, pr)| beta * tr + (1.0 - beta) * pr)
        .sum();
    Ok(RateReport {
        per_ue_training: acc_training,
        per_ue_prediction: acc_prediction,
        beta,
        sum_rate,
    })
}

/// Table-I style correlation summaries of the cycle's channel realization.
pub fn correlation_summary(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    axis_value: f64,
    cycle_seed: u64,
    window_slots: usize,
) -> Result<Vec<CorrelationSummaryRow>> {
    let mut channel_rng = seeds::stream(cycle_seed, "channel", 0);
    let traj = generate_trajectory(&cfg.scenario, &cfg.geometry, window_slots, &mut channel_rng)?;
    [Domain::Array, Domain::Frequency]
        .into_iter()
        .map(|domain| {
            Ok(CorrelationSummaryRow {
                axis: axis.name().into(),
                axis_value,
                seed: cycle_seed,
                domain: domain.to_string(),
                type1_avg: metrics::type1_average(&traj, domain)?,
                type2_avg: metrics::type2_average(&traj, domain)?,
            })
        })
        .collect()
}

/// Seed of the `index`-th sweep repetition. Depends only on the master seed
/// and the index, so growing `num_seeds` preserves earlier rows.
pub fn cycle_seed(master_seed: u64, index: usize) -> u64 {
    seeds::derive(master_seed, "cycle-seed", index as u64)
}

/// Run the full sweep: axis values x seeds x predictors.
pub fn sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let axis = cfg.sweep.axis;
    // Resolve every cell config up front so bad sweep values fail fast.
    let cells: Vec<(usize, f64, ExperimentConfig)> = cfg
        .sweep
        .values
        .iter()
        .enumerate()
        .map(|(vi, &value)| Ok((vi, value, cfg.with_axis_value(axis, value)?)))
        .collect::<Result<_>>()?;

    let mut jobs: Vec<(usize, usize, f64, &ExperimentConfig)> = Vec::new();
    for (vi, value, cell_cfg) in &cells {
        for si in 0..cfg.num_seeds {
            jobs.push((*vi, si, *value, cell_cfg));
        }
    }

    let mut keyed_rows: Vec<((usize, usize), Vec<CycleRow>)> = jobs
        .par_iter()
        .map(|&(vi, si, value, cell_cfg)| {
            let seed = cycle_seed(cfg.master_seed, si);
            let rows = run_cycle(cell_cfg, axis, value, seed)?;
            Ok(((vi, si), rows))
        })
        .collect::<Result<_>>()?;
    keyed_rows.sort_by_key(|(key, _)| *key);

    let mut rows: Vec<CycleRow> = Vec::new();
    for (_, mut cell_rows) in keyed_rows {
        cell_rows.sort_by(|a, b| a.predictor.cmp(&b.predictor));
        rows.extend(cell_rows);
    }

    // Per-cell medians over seeds.
    let mut summaries = Vec::new();
    let mut predictors: Vec<String> = rows.iter().map(|r| r.predictor.clone()).collect();
    predictors.sort();
    predictors.dedup();
    for (_, value, _) in &cells {
        for pred in &predictors {
            let mut dbs: Vec<f64> = rows
                .iter()
                .filter(|r| r.axis_value == *value && &r.predictor == pred)
                .map(|r| r.nmse_db)
                .collect();
            if dbs.is_empty() {
                continue;
            }
            let (min, max) = dbs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            summaries.push(CellSummary {
                predictor: pred.clone(),
                axis_value: *value,
                n_seeds: dbs.len(),
                median_nmse_db: median(&mut dbs),
                min_nmse_db: min,
                max_nmse_db: max,
            });
        }
    }

    // Spacing sweeps additionally report the correlation structure that the
    // spacing controls.
    let mut correlation_rows = Vec::new();
    if axis == SweepAxis::Spacing {
        let window = 100;
        let mut keyed: Vec<((usize, usize), Vec<CorrelationSummaryRow>)> = cells
            .par_iter()
            .flat_map(|(vi, value, cell_cfg)| {
                (0..cfg.num_seeds).into_par_iter().map(move |si| {
                    let seed = cycle_seed(cfg.master_seed, si);
                    let rows = correlation_summary(cell_cfg, axis, *value, seed, window)?;
                    Ok(((*vi, si), rows))
                })
            })
            .collect::<Result<_>>()?;
        keyed.sort_by_key(|(key, _)| *key);
        correlation_rows = keyed.into_iter().flat_map(|(_, r)| r).collect();
    }

    Ok(ExperimentReport {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        rows,
        summaries,
        correlation_rows,
    })
}

/// Files written by [`emit`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub correlations_csv: Option<PathBuf>,
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(content.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Render the fixed-schema results CSV.
pub fn render_csv(rows: &[CycleRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let sum_rate = r.sum_rate.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.predictor,
            r.axis,
            r.axis_value,
            r.seed,
            r.nmse_linear,
            r.nmse_db,
            r.t_col_s,
            r.t_com_s,
            sum_rate
        ));
    }
    out
}

fn render_correlations_csv(rows: &[CorrelationSummaryRow]) -> String {
    let mut out = String::from("axis,axis_value,seed,domain,type1_avg,type2_avg\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.axis, r.axis_value, r.seed, r.domain, r.type1_avg, r.type2_avg
        ));
    }
    out
}

/// JSON summary document; the timestamp is the only non-deterministic field.
#[derive(Debug, Serialize, Deserialize)]
pub struct JsonSummary {
    pub tool_version: String,
    pub timestamp_unix_s: u64,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub rows: Vec<CycleRow>,
    pub summaries: Vec<CellSummary>,
    pub correlation_rows: Vec<CorrelationSummaryRow>,
}

/// Write `results.csv`, `summary.json`, and (for spacing sweeps)
/// `correlations.csv` under `out_dir`.
pub fn emit(report: &ExperimentReport, out_dir: &Path) -> Result<EmittedPaths> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let csv = out_dir.join("results.csv");
    write_file(&csv, &render_csv(&report.rows))?;

    let summary = JsonSummary {
        tool_version: report.tool_version.clone(),
        timestamp_unix_s: SystemTime::now()
            .duration_since(SystemTime::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: report.config.clone(),
        config_hash: report.config_hash.clone(),
        rows: report.rows.clone(),
        summaries: report.summaries.clone(),
        correlation_rows: report.correlation_rows.clone(),
    };
    let json = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Persistence(format!("summary serialization: {e}")))?;
    write_file(&json, &text)?;

    let correlations_csv = if report.correlation_rows.is_empty() {
        None
    } else {
        let path = out_dir.join("correlations.csv");
        write_file(&path, &render_correlations_csv(&report.correlation_rows))?;
        Some(path)
    };
    Ok(EmittedPaths { csv, json, correlations_csv })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small config that trains in milliseconds.
    pub(crate) fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            scenario: ScenarioConfig {
                num_subcarriers: 4,
                num_paths: 4,
                ..ScenarioConfig::default()
            },
            geometry: ArrayGeometry {
                bs_rows: 2,
                bs_cols: 1,
                ue_antennas: 1,
                spacing_bs: 0.5,
                spacing_ue: 0.5,
            },
            predictors: vec!["al-fd".into(), "sl-fd".into()],
            collection_slots: 8,
            train: TrainConfig { epochs: 2, ..TrainConfig::default() },
            eval: EvalConfig { gap_slots: 3, eval_slots: 4 },
            sweep: SweepConfig { axis: SweepAxis::N, values: vec![8.0, 10.0] },
            num_seeds: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn windows_are_disjoint_and_gapped() {
        let cfg = tiny_config();
        let w = CycleWindows::from_config(&cfg);
        let train = w.training_slots();
        let eval = w.eval_base_slots();
        // First predicted slot sits exactly gap_slots after the training
        // window.
        assert_eq!(eval.start + 1, train.end + cfg.eval.gap_slots);
        assert!(eval.start >= train.end);
        assert!(w.total_slots() > eval.end + w.prediction_order - 1);
    }

    #[test]
    fn out_baseline_always_present() {
        let mut cfg = tiny_config();
        cfg.predictors = vec!["al-fd".into()];
        let rows = run_cycle(&cfg, SweepAxis::N, 8.0, 42).unwrap();
        assert!(rows.iter().any(|r| r.predictor == "OUT"));
        assert!(rows.iter().any(|r| r.predictor == "AL-FD"));
    }

    #[test]
    fn collection_time_accounting() {
        let mut cfg = tiny_config();
        cfg.collection_slots = 10;
        let rows = run_cycle(&cfg, SweepAxis::N, 10.0, 1).unwrap();
        for r in &rows {
            assert!((r.t_col_s - 0.02).abs() < 1e-12);
        }
    }

    #[test]
    fn cycles_are_reproducible() {
        let cfg = tiny_config();
        let a = run_cycle(&cfg, SweepAxis::N, 8.0, 7).unwrap();
        let b = run_cycle(&cfg, SweepAxis::N, 8.0, 7).unwrap();
        // Everything except the measured wall-clock timings is bit-identical.
        let strip = |rows: &[CycleRow]| {
            rows.iter()
                .map(|r| CycleRow { t_com_s: 0.0, t_com_parallel_s: 0.0, ..r.clone() })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn invalid_collection_window_errors() {
        let mut cfg = tiny_config();
        cfg.collection_slots = cfg.input_order + cfg.prediction_order;
        assert!(run_cycle(&cfg, SweepAxis::N, 3.0, 1).is_err());
    }

    #[test]
    fn sweep_row_counting() {
        let mut cfg = tiny_config();
        cfg.predictors = vec!["al-fd".into(), "sl-fd".into(), "sl-fd-flip".into()];
        // 2 values x 2 seeds x (3 + OUT) predictors.
        let report = sweep(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2 * 2 * 4);
        assert_eq!(report.config_hash, cfg.hash());
        // Summaries: one per (value, predictor).
        assert_eq!(report.summaries.len(), 2 * 4);
    }

    #[test]
    fn sweep_rejects_empty_values() {
        let mut cfg = tiny_config();
        cfg.sweep.values.clear();
        assert!(sweep(&cfg).is_err());
    }

    #[test]
    fn seed_prefix_is_stable() {
        let mut cfg = tiny_config();
        cfg.sweep.values = vec![8.0];
        cfg.num_seeds = 2;
        let small = sweep(&cfg).unwrap();
        cfg.num_seeds = 3;
        let large = sweep(&cfg).unwrap();
        let firsts: Vec<&CycleRow> = large
            .rows
            .iter()
            .filter(|r| small.rows.iter().any(|s| s.seed == r.seed && s.predictor == r.predictor))
            .collect();
        assert_eq!(firsts.len(), small.rows.len());
        for s in &small.rows {
            assert!(large
                .rows
                .iter()
                .any(|r| r.seed == s.seed && r.predictor == s.predictor && r.nmse_db == s.nmse_db));
        }
    }

    #[test]
    fn spacing_sweep_reports_correlations() {
        let mut cfg = tiny_config();
        cfg.sweep = SweepConfig { axis: SweepAxis::Spacing, values: vec![0.1, 0.5] };
        cfg.num_seeds = 1;
        let report = sweep(&cfg).unwrap();
        // Two domains per (value, seed).
        assert_eq!(report.correlation_rows.len(), 2 * 1 * 2);
        assert!(report.correlation_rows.iter().all(|r| r.type1_avg <= 1.0 + 1e-9));
    }

    #[test]
    fn emitted_files_have_the_contracted_shape() {
        let cfg = tiny_config();
        let report = sweep(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = emit(&report, dir.path()).unwrap();

        let csv = std::fs::read_to_string(&paths.csv).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.count(), report.rows.len());

        let text = std::fs::read_to_string(&paths.json).unwrap();
        let parsed: JsonSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.rows, report.rows);
        assert_eq!(parsed.config_hash, report.config_hash);
        assert_eq!(parsed.config, cfg);
    }

    #[test]
    fn reemitting_differs_only_in_timestamp() {
        let cfg = tiny_config();
        let report = sweep(&cfg).unwrap();
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let p1 = emit(&report, dir1.path()).unwrap();
        let p2 = emit(&report, dir2.path()).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p1.csv).unwrap(),
            std::fs::read_to_string(&p2.csv).unwrap()
        );
        let strip = |path: &Path| {
            std::fs::read_to_string(path)
                .unwrap()
                .lines()
                .filter(|l| !l.contains("timestamp_unix_s"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(strip(&p1.json), strip(&p2.json));
    }

    #[test]
    fn rows_reproduce_from_their_own_provenance() {
        let cfg = tiny_config();
        let report = sweep(&cfg).unwrap();
        let row = &report.rows[0];
        // Re-resolve the cell config from the echoed config and re-run.
        let axis = report.config.sweep.axis;
        let cell_cfg = report.config.with_axis_value(axis, row.axis_value).unwrap();
        let rows = run_cycle(&cell_cfg, axis, row.axis_value, row.seed).unwrap();
        let again = rows.iter().find(|r| r.predictor == row.predictor).unwrap();
        assert_eq!(again.nmse_linear, row.nmse_linear);
        assert_eq!(again.nmse_db, row.nmse_db);
    }

    #[test]
    fn config_json_round_trip_with_defaults() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let text = serde_json::to_string(&tiny_config()).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), tiny_config());
    }

    #[test]
    fn rate_cycle_identities() {
        let mut cfg = tiny_config();
        cfg.geometry = ArrayGeometry {
            bs_rows: 4,
            bs_cols: 1,
            ue_antennas: 1,
            spacing_bs: 0.5,
            spacing_ue: 0.5,
        };
        cfg.eval = EvalConfig { gap_slots: 2, eval_slots: 2 };
        let section = RateSection { num_ues: 2, betas: vec![0.0, 0.5, 1.0], ..RateSection::default() };
        cfg.rate = Some(section.clone());
        let kind = PredictorKind::parse("out").unwrap();

        let r0 = rate_for_kind(&cfg, &section, kind, 5, 0.0).unwrap();
        let r1 = rate_for_kind(&cfg, &section, kind, 5, 1.0).unwrap();
        let mid = rate_for_kind(&cfg, &section, kind, 5, 0.5).unwrap();
        assert!((r0.sum_rate - r0.per_ue_prediction.iter().sum::<f64>()).abs() < 1e-12);
        assert!((r1.sum_rate - r1.per_ue_training.iter().sum::<f64>()).abs() < 1e-12);
        assert!((mid.sum_rate - 0.5 * (r0.sum_rate + r1.sum_rate)).abs() < 1e-9);
    }

    #[test]
    fn rate_requires_single_antenna_ues() {
        let mut cfg = tiny_config();
        cfg.geometry.ue_antennas = 2;
        let section = RateSection::default();
        assert!(resolve_rate_config(&cfg, &section).is_err());
    }
}
