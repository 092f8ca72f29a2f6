//! From-scratch multilayer perceptron: ReLU hidden layers, linear output,
//! MSE loss, Adam optimizer.
//!
//! Training runs in double precision throughout, which keeps the analytic
//! gradients verifiable against central finite differences at tight
//! tolerance. Models carry the global input scale of the dataset they were
//! trained on; [`MlpModel::predict`] applies and inverts it, while
//! [`MlpModel::forward`] is the raw network function.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PackedSample};
use crate::error::{Error, Result};
use crate::seeds;

/// Layer dimensions of an MLP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl MlpArch {
    /// The standard sub-channel predictor: input `2*I*K1`, two hidden layers
    /// of `2*I*K1` nodes, output `2*p*K1`.
    pub fn standard(input_order: usize, prediction_order: usize, k1: usize) -> Self {
        let n_node = 2 * input_order * k1;
        Self {
            input_dim: n_node,
            hidden_dims: vec![n_node, n_node],
            output_dim: 2 * prediction_order * k1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("all layer dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let dims: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(self.output_dim))
            .collect();
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Total trainable parameters: sum over layers of `in*out + out`.
pub fn param_count(arch: &MlpArch) -> usize {
    arch.layer_dims().iter().map(|(i, o)| i * o + o).sum()
}

/// MLP weights plus the input normalization scale of its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub arch: MlpArch,
    /// Per layer, `out x in`.
    pub weights: Vec<DMatrix<f64>>,
    /// Per layer, length `out`.
    pub biases: Vec<DVector<f64>>,
    pub input_scale: f64,
}

/// Glorot-uniform weights, zero biases.
pub fn init_model(arch: &MlpArch, rng: &mut ChaCha8Rng) -> Result<MlpModel> {
    arch.validate()?;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (fan_in, fan_out) in arch.layer_dims() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound)));
        biases.push(DVector::zeros(fan_out));
    }
    Ok(MlpModel { arch: arch.clone(), weights, biases, input_scale: 1.0 })
}

impl MlpModel {
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Raw network function; no input scaling applied.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.arch.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input length {} does not match input_dim {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        let mut a = DVector::from_column_slice(x);
        let last = self.num_layers() - 1;
        for (idx, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * a + b;
            if idx != last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        Ok(a.as_slice().to_vec())
    }

    /// Scaled prediction: `s * forward(x / s)` with `s = input_scale`.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.input_scale;
        let scaled: Vec<f64> = x.iter().map(|v| v / s).collect();
        let mut out = self.forward(&scaled)?;
        for v in &mut out {
            *v *= s;
        }
        Ok(out)
    }

    /// Serialize as a flat little-endian binary: magic, version byte, layer
    /// dimensions, per-layer weights (row-major) and biases, input scale.
    /// Round-trips bit-exactly.
    pub fn save_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(b"MLPB")?;
        w.write_all(&[1u8])?;
        let dims: Vec<usize> = std::iter::once(self.arch.input_dim)
            .chain(self.arch.hidden_dims.iter().copied())
            .chain(std::iter::once(self.arch.output_dim))
            .collect();
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in &dims {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for (weights, biases) in self.weights.iter().zip(&self.biases) {
            for r in 0..weights.nrows() {
                for c in 0..weights.ncols() {
                    w.write_all(&weights[(r, c)].to_bits().to_le_bytes())?;
                }
            }
            for v in biases.iter() {
                w.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
        w.write_all(&self.input_scale.to_bits().to_le_bytes())?;
        Ok(())
    }

    pub fn load_from(r: &mut impl Read) -> Result<MlpModel> {
        let bad = |msg: &str| Error::Persistence(format!("model load: {msg}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != b"MLPB" {
            return Err(bad("bad magic"));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version).map_err(|_| bad("truncated version"))?;
        if version[0] != 1 {
            return Err(bad(&format!("unsupported version {}", version[0])));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(|_| bad("truncated dims"))?;
        let n_dims = u32::from_le_bytes(u32buf) as usize;
        if n_dims < 2 {
            return Err(bad("needs at least input and output dims"));
        }
        let mut u64buf = [0u8; 8];
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            r.read_exact(&mut u64buf).map_err(|_| bad("truncated dims"))?;
            dims.push(u64::from_le_bytes(u64buf) as usize);
        }
        let arch = MlpArch {
            input_dim: dims[0],
            hidden_dims: dims[1..n_dims - 1].to_vec(),
            output_dim: dims[n_dims - 1],
        };
        arch.validate().map_err(|_| bad("zero layer dimension"))?;
        let read_f64 = |r: &mut dyn Read| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| bad("truncated parameters"))?;
            Ok(f64::from_bits(u64::from_le_bytes(b)))
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out) in arch.layer_dims() {
            let mut w = DMatrix::zeros(fan_out, fan_in);
            for row in 0..fan_out {
                for col in 0..fan_in {
                    w[(row, col)] = read_f64(r)?;
                }
            }
            let mut b = DVector::zeros(fan_out);
            for v in b.iter_mut() {
                *v = read_f64(r)?;
            }
            weights.push(w);
            biases.push(b);
        }
        let input_scale = read_f64(r)?;
        Ok(MlpModel { arch, weights, biases, input_scale })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.save_to(&mut file).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<MlpModel> {
        let mut file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::load_from(&mut file)
    }
}

/// Gradients matching a model's parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_weights: Vec<DMatrix<f64>>,
    pub d_biases: Vec<DVector<f64>>,
}

/// Batched forward/backward pass; rows of `x`/`t` are samples.
fn loss_and_grad_matrices(
    model: &MlpModel,
    x: &DMatrix<f64>,
    t: &DMatrix<f64>,
) -> (f64, Gradients) {
    let batch = x.nrows() as f64;
    let last = model.num_layers() - 1;

    // Forward, caching pre-activations and activations.
    let mut activations: Vec<DMatrix<f64>> = vec![x.clone()];
    let mut pre: Vec<DMatrix<f64>> = Vec::with_capacity(model.num_layers());
    for (idx, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        let mut z = activations.last().unwrap() * w.transpose();
        for mut row in z.row_iter_mut() {
            row += b.transpose();
        }
        pre.push(z.clone());
        if idx != last {
            z.apply(|v| *v = v.max(0.0));
        }
        activations.push(z);
    }

    let diff = activations.last().unwrap() - t;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / batch;

    // Backward: mean over the batch of the per-sample squared error.
    let mut d_weights = Vec::with_capacity(model.num_layers());
    let mut d_biases = Vec::with_capacity(model.num_layers());
    let mut delta = diff * (2.0 / batch);
    for idx in (0..model.num_layers()).rev() {
        if idx != last {
            // ReLU gate on the hidden pre-activation.
            delta.zip_apply(&pre[idx], |d, z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        d_weights.push(delta.transpose() * &activations[idx]);
        d_biases.push(delta.row_sum().transpose());
        if idx > 0 {
            delta *= &model.weights[idx];
        }
    }
    d_weights.reverse();
    d_biases.reverse();
    (loss, Gradients { d_weights, d_biases })
}

fn batch_matrices(
    model: &MlpModel,
    samples: &[PackedSample],
    indices: &[usize],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (d_in, d_out) = (model.arch.input_dim, model.arch.output_dim);
    for &i in indices {
        let s = &samples[i];
        if s.x.len() != d_in || s.y.len() != d_out {
            return Err(Error::ShapeMismatch(format!(
                "sample dims ({}, {}) do not match arch ({d_in}, {d_out})",
                s.x.len(),
                s.y.len()
            )));
        }
    }
    let x = DMatrix::from_fn(indices.len(), d_in, |r, c| samples[indices[r]].x[c]);
    let t = DMatrix::from_fn(indices.len(), d_out, |r, c| samples[indices[r]].y[c]);
    Ok((x, t))
}

/// MSE loss over a batch (mean over samples of the squared error norm) and
/// its gradients by reverse-mode differentiation.
pub fn loss_and_grad(model: &MlpModel, batch: &[PackedSample]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let indices: Vec<usize> = (0..batch.len()).collect();
    let (x, t) = batch_matrices(model, batch, &indices)?;
    Ok(loss_and_grad_matrices(model, &x, &t))
}

/// Optimizer hyper-parameters and the training seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 150,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adam first/second moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m_weights: Vec<DMatrix<f64>>,
    pub v_weights: Vec<DMatrix<f64>>,
    pub m_biases: Vec<DVector<f64>>,
    pub v_biases: Vec<DVector<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(model: &MlpModel) -> Self {
        Self {
            m_weights: model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            v_weights: model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            m_biases: model.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            v_biases: model.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            step: 0,
        }
    }
}

fn adam_update(
    param: &mut f64,
    grad: f64,
    m: &mut f64,
    v: &mut f64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bias1: f64,
    bias2: f64,
) {
    *m = beta1 * *m + (1.0 - beta1) * grad;
    *v = beta2 * *v + (1.0 - beta2) * grad * grad;
    let m_hat = *m / bias1;
    let v_hat = *v / bias2;
    *param -= lr * m_hat / (v_hat.sqrt() + eps);
}

/// One bias-corrected Adam step over all parameters.
pub fn adam_step(
    model: &mut MlpModel,
    grads: &Gradients,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if grads.d_weights.len() != model.weights.len() {
        return Err(Error::ShapeMismatch("gradient layer count mismatch".into()));
    }
    state.step += 1;
    let bias1 = 1.0 - config.beta1.powi(state.step as i32);
    let bias2 = 1.0 - config.beta2.powi(state.step as i32);
    for layer in 0..model.weights.len() {
        let (w, gw) = (&mut model.weights[layer], &grads.d_weights[layer]);
        if w.shape() != gw.shape() {
            return Err(Error::ShapeMismatch("gradient shape mismatch".into()));
        }
        let (mw, vw) = (&mut state.m_weights[layer], &mut state.v_weights[layer]);
        for i in 0..w.len() {
            adam_update(
                &mut w[i], gw[i], &mut mw[i], &mut vw[i],
                config.learning_rate, config.beta1, config.beta2, config.epsilon, bias1, bias2,
            );
        }
        let (b, gb) = (&mut model.biases[layer], &grads.d_biases[layer]);
        let (mb, vb) = (&mut state.m_biases[layer], &mut state.v_biases[layer]);
        for i in 0..b.len() {
            adam_update(
                &mut b[i], gb[i], &mut mb[i], &mut vb[i],
                config.learning_rate, config.beta1, config.beta2, config.epsilon, bias1, bias2,
            );
        }
    }
    Ok(())
}

/// Train an MLP on a sub-channel dataset.
///
/// The dataset is packed to real vectors, normalized by its global feature
/// scale, and optimized for `epochs * ceil(n / batch_size)` Adam steps with a
/// fresh shuffle each epoch. The last partial batch is used. No early
/// stopping or validation split; the final-epoch parameters are returned
/// with the scale stored in the model.
pub fn train(dataset: &Dataset, arch: &MlpArch, config: &TrainConfig) -> Result<MlpModel> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData("empty training dataset".into()));
    }
    config.validate()?;
    arch.validate()?;
    let expected_in = 2 * dataset.input_order * dataset.k1();
    let expected_out = 2 * dataset.prediction_order * dataset.k1();
    if arch.input_dim != expected_in || arch.output_dim != expected_out {
        return Err(Error::ShapeMismatch(format!(
            "arch ({}, {}) does not match dataset packing ({expected_in}, {expected_out})",
            arch.input_dim, arch.output_dim
        )));
    }

    let raw_scale = dataset.feature_scale();
    let scale = if raw_scale > 0.0 { raw_scale } else { 1.0 };
    let packed: Vec<PackedSample> = dataset
        .samples
        .iter()
        .map(|s| {
            let p = crate::dataset::pack_real(s);
            PackedSample {
                x: p.x.iter().map(|v| v / scale).collect(),
                y: p.y.iter().map(|v| v / scale).collect(),
            }
        })
        .collect();

    let mut init_rng = seeds::stream(config.seed, "mlp-init", 0);
    let mut shuffle_rng = seeds::stream(config.seed, "mlp-shuffle", 0);
    let mut model = init_model(arch, &mut init_rng)?;
    let mut state = AdamState::zeros(&model);

    let mut order: Vec<usize> = (0..packed.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let (x, t) = batch_matrices(&model, &packed, chunk)?;
            let (_, grads) = loss_and_grad_matrices(&model, &x, &t);
            adam_step(&mut model, &grads, &mut state, config)?;
        }
    }
    model.input_scale = scale;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Domain, Provenance, SubSample};
    use crate::{C64, CVec};

    fn toy_arch() -> MlpArch {
        MlpArch { input_dim: 6, hidden_dims: vec![8, 7], output_dim: 4 }
    }

    fn toy_model(seed: u64) -> MlpModel {
        init_model(&toy_arch(), &mut seeds::stream(seed, "test-init", 0)).unwrap()
    }

    fn random_sample(model: &MlpModel, seed: u64) -> PackedSample {
        let mut rng = seeds::stream(seed, "test-sample", 0);
        PackedSample {
            x: (0..model.arch.input_dim).map(|_| seeds::randn(&mut rng)).collect(),
            y: (0..model.arch.output_dim).map(|_| seeds::randn(&mut rng)).collect(),
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = toy_model(1);
        let b = toy_model(1);
        let c = toy_model(2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (w, (fan_in, fan_out)) in a.weights.iter().zip(a.arch.layer_dims()) {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= bound));
        }
        assert!(a.biases.iter().all(|b| b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn param_count_values() {
        let arch = MlpArch { input_dim: 768, hidden_dims: vec![768, 768], output_dim: 256 };
        assert_eq!(param_count(&arch), 1_378_048);

        let tiny = MlpArch { input_dim: 1, hidden_dims: vec![], output_dim: 1 };
        assert_eq!(param_count(&tiny), 2);
    }

    #[test]
    fn forward_zero_model_is_zero() {
        let mut m = toy_model(3);
        for w in &mut m.weights {
            w.fill(0.0);
        }
        let x = vec![1.0; m.arch.input_dim];
        assert!(m.forward(&x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_layers_pass_positive_input() {
        let arch = MlpArch { input_dim: 3, hidden_dims: vec![3], output_dim: 3 };
        let mut m = init_model(&arch, &mut seeds::stream(0, "x", 0)).unwrap();
        for w in &mut m.weights {
            w.fill(0.0);
            w.fill_diagonal(1.0);
        }
        let x = vec![0.5, 1.0, 2.0];
        let y = m.forward(&x).unwrap();
        assert_eq!(y, x);

        // Negative entries are clamped by the hidden ReLU.
        let y = m.forward(&[-1.0, 2.0, -3.0]).unwrap();
        assert_eq!(y, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn forward_rejects_bad_length() {
        let m = toy_model(4);
        assert!(m.forward(&[0.0; 3]).is_err());
    }

    #[test]
    fn perfect_fit_gives_zero_loss_and_grads() {
        let mut m = toy_model(5);
        for w in &mut m.weights {
            w.fill(0.0);
        }
        let batch = vec![PackedSample { x: vec![1.0; 6], y: vec![0.0; 4] }; 3];
        let (loss, grads) = loss_and_grad(&m, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.d_weights.iter().all(|g| g.iter().all(|v| *v == 0.0)));
        assert!(grads.d_biases.iter().all(|g| g.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn batch_loss_is_mean_of_singles() {
        let m = toy_model(6);
        let batch: Vec<PackedSample> = (0..5).map(|i| random_sample(&m, 100 + i)).collect();
        let (batch_loss, _) = loss_and_grad(&m, &batch).unwrap();
        let mean: f64 = batch
            .iter()
            .map(|s| loss_and_grad(&m, std::slice::from_ref(s)).unwrap().0)
            .sum::<f64>()
            / batch.len() as f64;
        assert!((batch_loss - mean).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_errors() {
        let m = toy_model(7);
        assert!(loss_and_grad(&m, &[]).is_err());
    }

    /// Central finite differences over every parameter of a model.
    fn finite_diff(model: &MlpModel, sample: &PackedSample, h: f64) -> Gradients {
        let eval = |m: &MlpModel| loss_and_grad(m, std::slice::from_ref(sample)).unwrap().0;
        let mut d_weights = Vec::new();
        let mut d_biases = Vec::new();
        for layer in 0..model.num_layers() {
            let mut gw = DMatrix::zeros(model.weights[layer].nrows(), model.weights[layer].ncols());
            for i in 0..gw.len() {
                let mut plus = model.clone();
                plus.weights[layer][i] += h;
                let mut minus = model.clone();
                minus.weights[layer][i] -= h;
                gw[i] = (eval(&plus) - eval(&minus)) / (2.0 * h);
            }
            let mut gb = DVector::zeros(model.biases[layer].len());
            for i in 0..gb.len() {
                let mut plus = model.clone();
                plus.biases[layer][i] += h;
                let mut minus = model.clone();
                minus.biases[layer][i] -= h;
                gb[i] = (eval(&plus) - eval(&minus)) / (2.0 * h);
            }
            d_weights.push(gw);
            d_biases.push(gb);
        }
        Gradients { d_weights, d_biases }
    }

    fn max_rel_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
        let mut worst: f64 = 0.0;
        let pairs = analytic
            .d_weights
            .iter()
            .zip(&numeric.d_weights)
            .flat_map(|(a, n)| a.iter().zip(n.iter()))
            .chain(
                analytic
                    .d_biases
                    .iter()
                    .zip(&numeric.d_biases)
                    .flat_map(|(a, n)| a.iter().zip(n.iter())),
            );
        for (a, n) in pairs {
            let denom = a.abs().max(n.abs());
            if denom > 1e-6 {
                worst = worst.max((a - n).abs() / denom);
            } else {
                worst = worst.max((a - n).abs() * 1e2);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for draw in 0..20u64 {
            let model = toy_model(50 + draw);
            let sample = random_sample(&model, 200 + draw);
            let (_, analytic) = loss_and_grad(&model, std::slice::from_ref(&sample)).unwrap();
            let numeric = finite_diff(&model, &sample, 1e-5);
            let err = max_rel_error(&analytic, &numeric);
            assert!(err < 1e-5, "draw {draw}: max relative error {err:e}");
        }
    }

    #[test]
    fn first_adam_step_is_signed_learning_rate() {
        let mut m = toy_model(8);
        let before = m.clone();
        let mut state = AdamState::zeros(&m);
        let cfg = TrainConfig::default();
        let sample = random_sample(&m, 300);
        let (_, grads) = loss_and_grad(&m, std::slice::from_ref(&sample)).unwrap();
        adam_step(&mut m, &grads, &mut state, &cfg).unwrap();
        for layer in 0..m.num_layers() {
            for i in 0..m.weights[layer].len() {
                let g = grads.d_weights[layer][i];
                if g.abs() > 1e-6 {
                    let delta = m.weights[layer][i] - before.weights[layer][i];
                    assert!((delta + cfg.learning_rate * g.signum()).abs() < cfg.learning_rate * 1e-3);
                }
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = toy_model(9);
        let before = m.clone();
        let mut state = AdamState::zeros(&m);
        let grads = Gradients {
            d_weights: m.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            d_biases: m.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        };
        for _ in 0..10 {
            adam_step(&mut m, &grads, &mut state, &TrainConfig::default()).unwrap();
        }
        assert_eq!(m, before);
    }

    /// Persistence task: the label equals the feature's most recent step.
    fn persistence_dataset(n_samples: usize, k1: usize, seed: u64) -> Dataset {
        let mut rng = seeds::stream(seed, "persistence", 0);
        let samples = (0..n_samples)
            .map(|n| {
                let last = CVec::from_fn(k1, |_, _| seeds::crandn(&mut rng));
                let first = CVec::from_fn(k1, |_, _| seeds::crandn(&mut rng));
                SubSample {
                    feature: vec![first, last.clone()],
                    label: vec![last],
                    subchannel_index: 0,
                    base_slot: n,
                }
            })
            .collect();
        Dataset {
            samples,
            domain: Domain::Array,
            input_order: 2,
            prediction_order: 1,
            provenance: Provenance::Separate(0),
        }
    }

    #[test]
    fn training_learns_the_persistence_task() {
        let data = persistence_dataset(200, 4, 42);
        let arch = MlpArch::standard(2, 1, 4);
        let cfg = TrainConfig { seed: 1, ..TrainConfig::default() };

        let initial = {
            let mut rng = seeds::stream(cfg.seed, "mlp-init", 0);
            let model = init_model(&arch, &mut rng).unwrap();
            mse_on(&model, &data, 1.0)
        };
        let trained = train(&data, &arch, &cfg).unwrap();
        let final_mse = mse_on(&trained, &data, trained.input_scale);
        assert!(
            final_mse < 0.01 * initial,
            "final {final_mse:e} vs initial {initial:e}"
        );
    }

    fn mse_on(model: &MlpModel, data: &Dataset, scale: f64) -> f64 {
        let mut acc = 0.0;
        for s in &data.samples {
            let p = crate::dataset::pack_real(s);
            let x: Vec<f64> = p.x.iter().map(|v| v / scale).collect();
            let out = model.forward(&x).unwrap();
            acc += out
                .iter()
                .zip(p.y.iter().map(|v| v / scale))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        acc / data.len() as f64
    }

    #[test]
    fn zero_epochs_is_rejected() {
        let data = persistence_dataset(8, 2, 1);
        let arch = MlpArch::standard(2, 1, 2);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(train(&data, &arch, &cfg).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data = persistence_dataset(30, 2, 5);
        let arch = MlpArch::standard(2, 1, 2);
        let cfg = TrainConfig { epochs: 5, seed: 9, ..TrainConfig::default() };
        let a = train(&data, &arch, &cfg).unwrap();
        let b = train(&data, &arch, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_is_scale_equivariant() {
        // Scaling the whole dataset by c scales predictions by c exactly.
        let data = persistence_dataset(40, 3, 6);
        let c = 7.5;
        let scaled = Dataset {
            samples: data
                .samples
                .iter()
                .map(|s| SubSample {
                    feature: s.feature.iter().map(|v| v * C64::new(c, 0.0)).collect(),
                    label: s.label.iter().map(|v| v * C64::new(c, 0.0)).collect(),
                    subchannel_index: s.subchannel_index,
                    base_slot: s.base_slot,
                })
                .collect(),
            ..data.clone()
        };
        let arch = MlpArch::standard(2, 1, 3);
        let cfg = TrainConfig { epochs: 10, seed: 3, ..TrainConfig::default() };
        let m1 = train(&data, &arch, &cfg).unwrap();
        let m2 = train(&scaled, &arch, &cfg).unwrap();
        assert!((m2.input_scale / m1.input_scale - c).abs() < 1e-12);

        let probe = crate::dataset::pack_real(&data.samples[0]).x;
        let probe_scaled: Vec<f64> = probe.iter().map(|v| v * c).collect();
        let y1 = m1.predict(&probe).unwrap();
        let y2 = m2.predict(&probe_scaled).unwrap();
        for (a, b) in y1.iter().zip(&y2) {
            assert!((b - a * c).abs() <= 1e-6 * a.abs().max(1.0), "{b} vs {}", a * c);
        }
    }

    #[test]
    fn relu_activity_is_balanced_at_init() {
        let arch = MlpArch { input_dim: 32, hidden_dims: vec![64, 64], output_dim: 16 };
        let model = init_model(&arch, &mut seeds::stream(11, "init", 0)).unwrap();
        let mut rng = seeds::stream(12, "probe", 0);
        let mut active = 0usize;
        let mut total = 0usize;
        for _ in 0..20 {
            let x: Vec<f64> = (0..arch.input_dim).map(|_| seeds::randn(&mut rng)).collect();
            // Walk the hidden layers manually to count activations.
            let mut a = DVector::from_column_slice(&x);
            for layer in 0..arch.hidden_dims.len() {
                let z = &model.weights[layer] * &a + &model.biases[layer];
                active += z.iter().filter(|v| **v > 0.0).count();
                total += z.len();
                a = z.map(|v| v.max(0.0));
            }
        }
        let frac = active as f64 / total as f64;
        assert!(frac > 0.2 && frac < 0.8, "active fraction {frac}");
    }

    #[test]
    fn save_load_round_trips_bit_exact() {
        let mut m = toy_model(13);
        m.input_scale = 3.25;
        let mut buf = Vec::new();
        m.save_to(&mut buf).unwrap();
        let loaded = MlpModel::load_from(&mut buf.as_slice()).unwrap();
        assert_eq!(m, loaded);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        m.save(&path).unwrap();
        assert_eq!(MlpModel::load(&path).unwrap(), m);
    }

    #[test]
    fn load_rejects_corrupt_input() {
        assert!(MlpModel::load_from(&mut &b"NOPE"[..]).is_err());
        let m = toy_model(14);
        let mut buf = Vec::new();
        m.save_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(MlpModel::load_from(&mut buf.as_slice()).is_err());
    }
}
