//! Training-data construction from estimated channel trajectories.
//!
//! An M x L array-frequency domain channel decomposes into K2 sub-channels
//! of length K1: its columns (array domain, K1 = M, K2 = L) or its
//! transposed rows (frequency domain, K1 = L, K2 = M). Sliding windows over
//! a trajectory give full-matrix (feature, label) pairs; splitting each pair
//! per sub-channel and pooling everything yields the aggregated dataset that
//! trains a single network, while keeping the per-sub-channel groups apart
//! yields one small dataset per sub-channel.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelTrajectory;
use crate::error::{Error, Result};
use crate::{C64, CMat, CVec};

/// Sub-channel decomposition axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Sub-channels are columns: the MIMO channel seen by one subcarrier.
    Array,
    /// Sub-channels are transposed rows: the frequency response of one
    /// antenna pair.
    Frequency,
}

impl Domain {
    /// Size of one sub-channel.
    pub fn k1(&self, m: usize, l: usize) -> usize {
        match self {
            Domain::Array => m,
            Domain::Frequency => l,
        }
    }

    /// Number of sub-channels.
    pub fn k2(&self, m: usize, l: usize) -> usize {
        match self {
            Domain::Array => l,
            Domain::Frequency => m,
        }
    }

    /// Short tag used in predictor names ("AD"/"FD").
    pub fn tag(&self) -> &'static str {
        match self {
            Domain::Array => "AD",
            Domain::Frequency => "FD",
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::Array => write!(f, "array"),
            Domain::Frequency => write!(f, "frequency"),
        }
    }
}

/// Extract sub-channel `i` of one array-frequency domain matrix.
pub fn subchannel(matrix: &CMat, domain: Domain, index: usize) -> Result<CVec> {
    match domain {
        Domain::Array => {
            if index >= matrix.ncols() {
                return Err(Error::IndexOutOfRange(format!(
                    "array-domain sub-channel {index} out of range 0..{}",
                    matrix.ncols()
                )));
            }
            Ok(CVec::from_iterator(matrix.nrows(), matrix.column(index).iter().copied()))
        }
        Domain::Frequency => {
            if index >= matrix.nrows() {
                return Err(Error::IndexOutOfRange(format!(
                    "frequency-domain sub-channel {index} out of range 0..{}",
                    matrix.nrows()
                )));
            }
            Ok(CVec::from_iterator(matrix.ncols(), matrix.row(index).iter().copied()))
        }
    }
}

/// One full-matrix sliding-window training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPair {
    /// `I` consecutive estimated matrices, oldest first.
    pub features: Vec<CMat>,
    /// `p` consecutive label matrices, nearest first.
    pub labels: Vec<CMat>,
    /// Index of the most recent feature slot relative to the trajectory
    /// start.
    pub base_slot: usize,
}

/// Sliding windows over a trajectory: feature slots `n-I+1..=n`, label
/// slots `n+1..=n+p`, for every admissible `n`.
pub fn build_raw(
    traj: &ChannelTrajectory,
    input_order: usize,
    prediction_order: usize,
) -> Result<Vec<RawPair>> {
    traj.validate()?;
    if input_order == 0 || prediction_order == 0 {
        return Err(Error::InvalidConfig("input and prediction orders must be >= 1".into()));
    }
    let n_slots = traj.num_slots();
    if n_slots < input_order + prediction_order {
        return Err(Error::InsufficientData(format!(
            "{n_slots} slots cannot host one window of {input_order} inputs plus \
             {prediction_order} labels; extend the collection time"
        )));
    }
    let pairs = (input_order - 1..n_slots - prediction_order)
        .map(|n| RawPair {
            features: traj.slots[n + 1 - input_order..=n].to_vec(),
            labels: traj.slots[n + 1..=n + prediction_order].to_vec(),
            base_slot: n,
        })
        .collect();
    Ok(pairs)
}

/// One (feature, label) pair over a single sub-channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSample {
    /// `I` past sub-channel vectors, oldest first.
    pub feature: Vec<CVec>,
    /// `p` label vectors, nearest first.
    pub label: Vec<CVec>,
    pub subchannel_index: usize,
    pub base_slot: usize,
}

impl SubSample {
    pub fn k1(&self) -> usize {
        self.feature.first().map_or(0, |v| v.len())
    }
}

/// How a dataset was assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// All sub-channels pooled into one dataset.
    Aggregated,
    /// Only the sub-channel with this index.
    Separate(usize),
    /// Unsplit full-matrix pairs (bookkeeping only).
    Raw,
}

/// Ordered collection of sub-channel training pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SubSample>,
    pub domain: Domain,
    pub input_order: usize,
    pub prediction_order: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn k1(&self) -> usize {
        self.samples.first().map_or(0, |s| s.k1())
    }

    /// Largest complex-coefficient magnitude over all features; the global
    /// normalization scale of a training run.
    pub fn feature_scale(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.feature.iter())
            .flat_map(|v| v.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// Split one full-matrix pair into its K2 per-sub-channel pairs.
pub fn split(pair: &RawPair, domain: Domain) -> Vec<SubSample> {
    let (m, l) = (pair.features[0].nrows(), pair.features[0].ncols());
    let k2 = domain.k2(m, l);
    (0..k2)
        .map(|i| SubSample {
            feature: pair
                .features
                .iter()
                .map(|g| subchannel(g, domain, i).expect("index bounded by k2"))
                .collect(),
            label: pair
                .labels
                .iter()
                .map(|g| subchannel(g, domain, i).expect("index bounded by k2"))
                .collect(),
            subchannel_index: i,
            base_slot: pair.base_slot,
        })
        .collect()
}

/// Pool the split sub-samples of all pairs into one aggregated dataset.
///
/// Ordering is outer loop over base slot, inner loop over sub-channel index,
/// so epoch shuffling is the only source of order randomness downstream.
pub fn aggregate_al(pairs: &[RawPair], domain: Domain) -> Result<Dataset> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InsufficientData("no training pairs to aggregate".into()))?;
    let samples = pairs.iter().flat_map(|p| split(p, domain)).collect();
    Ok(Dataset {
        samples,
        domain,
        input_order: first.features.len(),
        prediction_order: first.labels.len(),
        provenance: Provenance::Aggregated,
    })
}

/// One dataset per sub-channel, each holding that sub-channel's samples in
/// slot order.
pub fn sl_datasets(pairs: &[RawPair], domain: Domain) -> Result<Vec<Dataset>> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InsufficientData("no training pairs to split".into()))?;
    let (m, l) = (first.features[0].nrows(), first.features[0].ncols());
    let k2 = domain.k2(m, l);
    let mut per_sub: Vec<Vec<SubSample>> = (0..k2).map(|_| Vec::with_capacity(pairs.len())).collect();
    for pair in pairs {
        for sample in split(pair, domain) {
            per_sub[sample.subchannel_index].push(sample);
        }
    }
    Ok(per_sub
        .into_iter()
        .enumerate()
        .map(|(i, samples)| Dataset {
            samples,
            domain,
            input_order: first.features.len(),
            prediction_order: first.labels.len(),
            provenance: Provenance::Separate(i),
        })
        .collect())
}

fn reversed(v: &CVec) -> CVec {
    CVec::from_iterator(v.len(), v.iter().rev().copied())
}

/// Append a vertically flipped copy of every sample: feature and label
/// vectors reversed along the K1 axis (antennas in the array domain,
/// subcarriers in the frequency domain). Doubles the dataset.
pub fn flip_augment(dataset: &Dataset) -> Dataset {
    let flipped = dataset.samples.iter().map(|s| SubSample {
        feature: s.feature.iter().map(reversed).collect(),
        label: s.label.iter().map(reversed).collect(),
        subchannel_index: s.subchannel_index,
        base_slot: s.base_slot,
    });
    let mut samples = dataset.samples.clone();
    samples.extend(flipped);
    Dataset { samples, ..dataset.clone() }
}

/// Real-valued packing of one sub-sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedSample {
    /// Feature, length `2*I*K1`.
    pub x: Vec<f64>,
    /// Label, length `2*p*K1`.
    pub y: Vec<f64>,
}

fn pack_vectors(vectors: &[CVec]) -> Vec<f64> {
    let mut out = Vec::with_capacity(vectors.iter().map(|v| 2 * v.len()).sum());
    for v in vectors {
        out.extend(v.iter().map(|z| z.re));
        out.extend(v.iter().map(|z| z.im));
    }
    out
}

/// Pack a sub-sample into real vectors: per time step oldest-first,
/// `[Re(vector); Im(vector)]` concatenated across steps.
pub fn pack_real(sub: &SubSample) -> PackedSample {
    PackedSample { x: pack_vectors(&sub.feature), y: pack_vectors(&sub.label) }
}

/// Invert [`pack_real`] on a label or output vector: `steps` complex vectors
/// of length `k1`.
pub fn unpack_complex(y: &[f64], k1: usize, steps: usize) -> Result<Vec<CVec>> {
    if y.len() != 2 * k1 * steps {
        return Err(Error::ShapeMismatch(format!(
            "packed length {} does not match 2*{k1}*{steps}",
            y.len()
        )));
    }
    Ok((0..steps)
        .map(|s| {
            let base = 2 * k1 * s;
            CVec::from_fn(k1, |j, _| C64::new(y[base + j], y[base + k1 + j]))
        })
        .collect())
}

/// Reassemble an M x L matrix from K2 sub-channel vectors; exact inverse of
/// splitting a matrix along `domain`.
pub fn reconstruct(predictions: &[CVec], domain: Domain) -> Result<CMat> {
    let k2 = predictions.len();
    let k1 = predictions.first().map_or(0, |v| v.len());
    if k2 == 0 || k1 == 0 {
        return Err(Error::ShapeMismatch("no sub-channel predictions to reconstruct".into()));
    }
    if predictions.iter().any(|v| v.len() != k1) {
        return Err(Error::ShapeMismatch("sub-channel predictions differ in length".into()));
    }
    let mat = match domain {
        Domain::Array => CMat::from_fn(k1, k2, |r, c| predictions[c][r]),
        Domain::Frequency => CMat::from_fn(k2, k1, |r, c| predictions[r][c]),
    };
    Ok(mat)
}

/// Header of a dataset dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DumpHeader {
    domain: Domain,
    input_order: usize,
    prediction_order: usize,
    k1: usize,
    k2: usize,
    scale: f64,
    samples: usize,
}

/// Dump packed samples as CSV prefixed by a one-line JSON header. `scale`
/// records the normalization that a training run would apply; it is not
/// applied to the dumped values.
pub fn dump(dataset: &Dataset, scale: f64, path: &Path) -> Result<()> {
    let k1 = dataset.k1();
    let k2 = dataset
        .samples
        .iter()
        .map(|s| s.subchannel_index + 1)
        .max()
        .unwrap_or(0);
    let header = DumpHeader {
        domain: dataset.domain,
        input_order: dataset.input_order,
        prediction_order: dataset.prediction_order,
        k1,
        k2,
        scale,
        samples: dataset.len(),
    };
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut write = |s: String| -> Result<()> {
        file.write_all(s.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    };
    write(serde_json::to_string(&header).expect("header serializes") + "\n")?;
    for sample in &dataset.samples {
        let packed = pack_real(sample);
        let mut row = format!("{},{}", sample.base_slot, sample.subchannel_index);
        for v in packed.x.iter().chain(packed.y.iter()) {
            row.push(',');
            row.push_str(&format!("{v}"));
        }
        row.push('\n');
        write(row)?;
    }
    Ok(())
}

/// Load a dataset dumped by [`dump`]; returns the dataset and the recorded
/// scale.
pub fn load(path: &Path) -> Result<(Dataset, f64)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Persistence("empty dataset dump".into()))?
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let header: DumpHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Persistence(format!("bad dataset header: {e}")))?;

    let x_len = 2 * header.input_order * header.k1;
    let y_len = 2 * header.prediction_order * header.k1;
    let mut samples = Vec::with_capacity(header.samples);
    for line in lines {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + x_len + y_len {
            return Err(Error::Persistence(format!(
                "dataset row has {} fields, expected {}",
                fields.len(),
                2 + x_len + y_len
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| Error::Persistence(format!("bad float {s:?}: {e}")))
        };
        let base_slot = fields[0]
            .parse()
            .map_err(|e| Error::Persistence(format!("bad slot index: {e}")))?;
        let subchannel_index = fields[1]
            .parse()
            .map_err(|e| Error::Persistence(format!("bad sub-channel index: {e}")))?;
        let values: Vec<f64> = fields[2..].iter().map(|s| parse(s)).collect::<Result<_>>()?;
        let feature = unpack_complex(&values[..x_len], header.k1, header.input_order)?;
        let label = unpack_complex(&values[x_len..], header.k1, header.prediction_order)?;
        samples.push(SubSample { feature, label, subchannel_index, base_slot });
    }
    if samples.len() != header.samples {
        return Err(Error::Persistence(format!(
            "dataset dump holds {} samples, header says {}",
            samples.len(),
            header.samples
        )));
    }
    let provenance = Provenance::Aggregated;
    Ok((
        Dataset {
            samples,
            domain: header.domain,
            input_order: header.input_order,
            prediction_order: header.prediction_order,
            provenance,
        },
        header.scale,
    ))
}
