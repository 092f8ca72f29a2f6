//! Channel predictor variants built from the dataset and neural modules.
//!
//! - Aggregated learning (AL): one network trained on the pooled sub-channel
//!   dataset, applied to every sub-channel at prediction time.
//! - Separate learning (SL): one independent network per sub-channel, with
//!   optional flip augmentation of each per-sub-channel dataset.
//! - Outdated baseline (OUT): no training, reuses the latest estimate.
//!
//! Both AL and SL exist in the array domain (AD) and frequency domain (FD).

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelTrajectory;
use crate::dataset::{self, Domain};
use crate::error::{Error, Result};
use crate::neural::{self, MlpArch, MlpModel, TrainConfig};
use crate::{seeds, CMat, CVec};

/// Predictor family and pre-processing domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Aggregated learning: a single network for all sub-channels.
    Aggregated { domain: Domain },
    /// Separate learning: one network per sub-channel, optionally with flip
    /// augmentation.
    Separate { domain: Domain, flip: bool },
    /// Outdated-CSI baseline; no training.
    Outdated,
}

impl PredictorKind {
    pub fn domain(&self) -> Option<Domain> {
        match self {
            PredictorKind::Aggregated { domain } => Some(*domain),
            PredictorKind::Separate { domain, .. } => Some(*domain),
            PredictorKind::Outdated => None,
        }
    }

    /// Canonical display name: AL-AD, AL-FD, SL-AD, SL-FD, SL-AD-FLIP,
    /// SL-FD-FLIP, OUT.
    pub fn name(&self) -> String {
        match self {
            PredictorKind::Aggregated { domain } => format!("AL-{}", domain.tag()),
            PredictorKind::Separate { domain, flip: false } => format!("SL-{}", domain.tag()),
            PredictorKind::Separate { domain, flip: true } => format!("SL-{}-FLIP", domain.tag()),
            PredictorKind::Outdated => "OUT".into(),
        }
    }

    /// Parse a case-insensitive predictor name as used on the command line.
    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        let kind = match norm.as_str() {
            "al-ad" => PredictorKind::Aggregated { domain: Domain::Array },
            "al-fd" => PredictorKind::Aggregated { domain: Domain::Frequency },
            "sl-ad" => PredictorKind::Separate { domain: Domain::Array, flip: false },
            "sl-fd" => PredictorKind::Separate { domain: Domain::Frequency, flip: false },
            "sl-ad-flip" => PredictorKind::Separate { domain: Domain::Array, flip: true },
            "sl-fd-flip" => PredictorKind::Separate { domain: Domain::Frequency, flip: true },
            "out" => PredictorKind::Outdated,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown predictor {other:?}; expected one of al-ad, al-fd, sl-ad, sl-fd, \
                     sl-ad-flip, sl-fd-flip, out"
                )))
            }
        };
        Ok(kind)
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// A trained predictor: no models (OUT), one model (AL), or K2 models (SL).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPredictor {
    pub kind: PredictorKind,
    pub models: Vec<MlpModel>,
    pub input_order: usize,
    pub prediction_order: usize,
}

/// Wall-clock cost of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingTimes {
    /// Duration of each network's training, in model index order.
    pub per_model_s: Vec<f64>,
    /// Elapsed wall time of the whole call (equals the parallel makespan
    /// when SL networks train concurrently).
    pub wall_s: f64,
}

impl TrainingTimes {
    /// Total compute time as if trained serially.
    pub fn serial_total_s(&self) -> f64 {
        self.per_model_s.iter().sum()
    }

    /// Longest single network; lower bound of the parallel makespan.
    pub fn parallel_max_s(&self) -> f64 {
        self.per_model_s.iter().fold(0.0, |a, &b| a.max(b))
    }
}

/// Train a predictor of the requested kind on an estimated trajectory.
///
/// SL networks get per-sub-channel seeds derived from the configured master
/// seed, so the set of trained models does not depend on training order and
/// the fan-out can run in parallel.
pub fn train_predictor(
    kind: PredictorKind,
    estimated: &ChannelTrajectory,
    input_order: usize,
    prediction_order: usize,
    config: &TrainConfig,
) -> Result<(TrainedPredictor, TrainingTimes)> {
    estimated.validate()?;
    if estimated.num_slots() < input_order + prediction_order + 1 {
        return Err(Error::InsufficientData(format!(
            "{} slots are not enough for input order {input_order} plus prediction order \
             {prediction_order}",
            estimated.num_slots()
        )));
    }
    let started = Instant::now();
    let (models, per_model_s) = match kind {
        PredictorKind::Outdated => (Vec::new(), Vec::new()),
        PredictorKind::Aggregated { domain } => {
            let pairs = dataset::build_raw(estimated, input_order, prediction_order)?;
            let data = dataset::aggregate_al(&pairs, domain)?;
            let arch = MlpArch::standard(input_order, prediction_order, data.k1());
            let cfg = TrainConfig { seed: seeds::derive(config.seed, "al-train", 0), ..*config };
            let t = Instant::now();
            let model = neural::train(&data, &arch, &cfg)?;
            (vec![model], vec![t.elapsed().as_secs_f64()])
        }
        PredictorKind::Separate { domain, flip } => {
            let pairs = dataset::build_raw(estimated, input_order, prediction_order)?;
            let datasets = dataset::sl_datasets(&pairs, domain)?;
            let results: Vec<(MlpModel, f64)> = datasets
                .par_iter()
                .enumerate()
                .map(|(i, d)| {
                    let data = if flip { dataset::flip_augment(d) } else { d.clone() };
                    let arch = MlpArch::standard(input_order, prediction_order, data.k1());
                    let cfg = TrainConfig {
                        seed: seeds::derive(config.seed, "sl-train", i as u64),
                        ..*config
                    };
                    let t = Instant::now();
                    let model = neural::train(&data, &arch, &cfg)?;
                    Ok((model, t.elapsed().as_secs_f64()))
                })
                .collect::<Result<_>>()?;
            results.into_iter().unzip()
        }
    };
    let times = TrainingTimes { per_model_s, wall_s: started.elapsed().as_secs_f64() };
    Ok((
        TrainedPredictor { kind, models, input_order, prediction_order },
        times,
    ))
}

fn check_recent(pred: &TrainedPredictor, recent: &[CMat]) -> Result<(usize, usize)> {
    if recent.len() != pred.input_order {
        return Err(Error::ShapeMismatch(format!(
            "expected {} recent matrices, got {}",
            pred.input_order,
            recent.len()
        )));
    }
    let (m, l) = (recent[0].nrows(), recent[0].ncols());
    if recent.iter().any(|g| g.nrows() != m || g.ncols() != l) {
        return Err(Error::ShapeMismatch("recent matrices differ in shape".into()));
    }
    if let Some(domain) = pred.kind.domain() {
        let k1 = domain.k1(m, l);
        let k2 = domain.k2(m, l);
        let expected_models = match pred.kind {
            PredictorKind::Aggregated { .. } => 1,
            PredictorKind::Separate { .. } => k2,
            PredictorKind::Outdated => 0,
        };
        if pred.models.len() != expected_models {
            return Err(Error::ShapeMismatch(format!(
                "predictor holds {} models, expected {expected_models}",
                pred.models.len()
            )));
        }
        let input_dim = 2 * pred.input_order * k1;
        if pred.models.iter().any(|mdl| mdl.arch.input_dim != input_dim) {
            return Err(Error::ShapeMismatch(format!(
                "model input dim does not match {input_dim} for these matrices"
            )));
        }
    }
    Ok((m, l))
}

/// Predict the next `p` array-frequency domain channels from the last `I`
/// estimated matrices (oldest first). Output index 0 is the next slot.
pub fn predict_horizon(pred: &TrainedPredictor, recent: &[CMat]) -> Result<Vec<CMat>> {
    let (m, l) = check_recent(pred, recent)?;
    match pred.kind {
        PredictorKind::Outdated => {
            Ok(std::iter::repeat(recent[recent.len() - 1].clone())
                .take(pred.prediction_order)
                .collect())
        }
        PredictorKind::Aggregated { domain } | PredictorKind::Separate { domain, .. } => {
            let k1 = domain.k1(m, l);
            let k2 = domain.k2(m, l);
            // Per sub-channel: pack the I past vectors, run the (shared or
            // per-index) model, unpack the p predicted vectors.
            let mut per_step: Vec<Vec<CVec>> =
                vec![Vec::with_capacity(k2); pred.prediction_order];
            for i in 0..k2 {
                let feature: Vec<CVec> = recent
                    .iter()
                    .map(|g| dataset::subchannel(g, domain, i))
                    .collect::<Result<_>>()?;
                let sample = dataset::SubSample {
                    feature,
                    label: Vec::new(),
                    subchannel_index: i,
                    base_slot: 0,
                };
                let packed = dataset::pack_real(&sample);
                let model = match pred.kind {
                    PredictorKind::Aggregated { .. } => &pred.models[0],
                    _ => &pred.models[i],
                };
                let out = model.predict(&packed.x)?;
                let vectors = dataset::unpack_complex(&out, k1, pred.prediction_order)?;
                for (step, v) in vectors.into_iter().enumerate() {
                    per_step[step].push(v);
                }
            }
            per_step
                .into_iter()
                .map(|vectors| dataset::reconstruct(&vectors, domain))
                .collect()
        }
    }
}

/// One-step prediction; requires a predictor trained with `p = 1`.
pub fn predict_next(pred: &TrainedPredictor, recent: &[CMat]) -> Result<CMat> {
    if pred.prediction_order != 1 {
        return Err(Error::InvalidConfig(format!(
            "predict_next needs prediction order 1, predictor has {}",
            pred.prediction_order
        )));
    }
    Ok(predict_horizon(pred, recent)?.remove(0))
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleMeta {
    kind: PredictorKind,
    input_order: usize,
    prediction_order: usize,
    model_count: usize,
}

/// Save a predictor as a directory: JSON metadata plus one binary per model.
pub fn save_bundle(pred: &TrainedPredictor, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let meta = BundleMeta {
        kind: pred.kind,
        input_order: pred.input_order,
        prediction_order: pred.prediction_order,
        model_count: pred.models.len(),
    };
    let meta_path = dir.join("predictor.json");
    let text = serde_json::to_string_pretty(&meta).expect("bundle metadata serializes");
    std::fs::write(&meta_path, text).map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    for (i, model) in pred.models.iter().enumerate() {
        model.save(&dir.join(format!("model_{i:04}.bin")))?;
    }
    Ok(())
}

/// Load a predictor bundle saved by [`save_bundle`].
pub fn load_bundle(dir: &Path) -> Result<TrainedPredictor> {
    let meta_path = dir.join("predictor.json");
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let meta: BundleMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Persistence(format!("bad bundle metadata: {e}")))?;
    let models = (0..meta.model_count)
        .map(|i| MlpModel::load(&dir.join(format!("model_{i:04}.bin"))))
        .collect::<Result<_>>()?;
    Ok(TrainedPredictor {
        kind: meta.kind,
        models,
        input_order: meta.input_order,
        prediction_order: meta.prediction_order,
    })
}
