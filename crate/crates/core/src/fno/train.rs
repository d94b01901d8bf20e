//! Adam training of a surrogate on (parameters, section) pairs.
//!
//! The loss is mean-square error on the normalized output over all nodes and
//! batch members; decoupled weight decay; the learning rate steps down by a
//! fixed factor on a fixed epoch cadence. Everything is sequential with seeded
//! shuffling, so a seed pins the whole run bitwise.

use super::model::{FnoConfig, SurrogateModel};
use crate::error::{Error, Result};
use crate::params::{ParamBounds, ProcessParams};
use crate::plane::PlaneGrid;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// One supervised pair: inputs and the target temperature section (K) on the
/// model grid.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub params: ProcessParams,
    pub target_k: Vec<f64>,
}

/// Standard Adam with bias correction; weight decay is applied by the caller
/// so the same stepper serves training, control, and calibration.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + self.epsilon);
        }
    }
}

/// Mean-square error of the normalized output over a batch; no gradients.
pub fn batch_loss(model: &SurrogateModel, batch: &[&TrainSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let fft = model.fft_for(&model.grid)?;
    let mut scratch = fft.make_scratch();
    let nodes = model.grid.len();
    let inv_scale = 1.0 / model.out_norm.scale_k;
    let mut loss = 0.0;
    for sample in batch {
        let (_, cache) = model.forward_with(&sample.params, &model.grid, &fft, &mut scratch)?;
        for (y, &t) in cache.y_norm.iter().zip(sample.target_k.iter()) {
            let d = y - (t - model.out_norm.offset_k) * inv_scale;
            loss += d * d;
        }
    }
    Ok(loss / (batch.len() * nodes) as f64)
}

/// Loss and the per-sample relative-L2 sum measured on the same pass.
#[derive(Debug, Clone, Copy)]
pub struct BatchStats {
    /// Mean-square error on the normalized output.
    pub mse: f64,
    /// Σ over batch of ‖pred − target‖₂ / ‖target‖₂ on raw temperatures.
    pub rel_l2_sum: f64,
}

/// Loss plus exact reverse-mode gradients for every parameter tensor.
/// `grads` is zeroed first. Errors if the loss stops being finite.
pub fn loss_and_gradients(
    model: &SurrogateModel,
    batch: &[&TrainSample],
    grads: &mut [f64],
) -> Result<BatchStats> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let fft = model.fft_for(&model.grid)?;
    let mut scratch = fft.make_scratch();
    let nodes = model.grid.len();
    let inv_scale = 1.0 / model.out_norm.scale_k;
    let denom = (batch.len() * nodes) as f64;
    grads.fill(0.0);
    let mut loss = 0.0;
    let mut rel_sum = 0.0;
    let mut d_y = vec![0.0; nodes];
    for sample in batch {
        if sample.target_k.len() != nodes {
            return Err(Error::Shape {
                expected: format!("{nodes} target values"),
                got: format!("{}", sample.target_k.len()),
            });
        }
        let (_, cache) = model.forward_with(&sample.params, &model.grid, &fft, &mut scratch)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for ((dy, y), &t) in d_y.iter_mut().zip(cache.y_norm.iter()).zip(sample.target_k.iter()) {
            let tn = (t - model.out_norm.offset_k) * inv_scale;
            let d = y - tn;
            loss += d * d;
            *dy = 2.0 * d / denom;
            num += d * d;
            den += t * t;
        }
        // raw-kelvin relative error: the numerator difference scales back up
        rel_sum += model.out_norm.scale_k * (num / den.max(1e-300)).sqrt();
        model.backward_with(&cache, &d_y, Some(grads), &fft, &mut scratch)?;
    }
    let loss = loss / denom;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok(BatchStats { mse: loss, rel_l2_sum: rel_sum })
}

/// Per-sample mean of ‖pred − target‖₂ / ‖target‖₂ on raw temperatures.
pub fn relative_l2(model: &SurrogateModel, set: &[TrainSample]) -> Result<f64> {
    let fft = model.fft_for(&model.grid)?;
    let mut scratch = fft.make_scratch();
    let mut total = 0.0;
    for sample in set {
        let (section, _) = model.forward_with(&sample.params, &model.grid, &fft, &mut scratch)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (&p, &t) in section.values_k.iter().zip(sample.target_k.iter()) {
            num += (p - t) * (p - t);
            den += t * t;
        }
        total += (num / den.max(1e-300)).sqrt();
    }
    Ok(total / set.len().max(1) as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_mse: Vec<f64>,
    pub train_rel_l2: Vec<f64>,
    pub val_rel_l2: Vec<f64>,
    pub lr_trace: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_rel_l2: f64,
    pub wall_time_s: f64,
}

impl TrainReport {
    /// Loss-curve CSV: one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_mse,train_rel_l2,val_rel_l2\n");
        for e in 0..self.epochs_run {
            out.push_str(&format!(
                "{},{:.8e},{:.8e},{:.8e},{:.8e}\n",
                e, self.lr_trace[e], self.train_mse[e], self.train_rel_l2[e], self.val_rel_l2[e]
            ));
        }
        out
    }
}

/// Train a fresh model; returns the best-validation checkpoint.
pub fn train(
    config: &FnoConfig,
    grid: PlaneGrid,
    bounds: ParamBounds,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
) -> Result<(SurrogateModel, TrainReport)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("train and validation splits must be nonempty".into()));
    }
    let start = Instant::now();
    let mut model = SurrogateModel::new(*config, grid, bounds)?;
    let n_params = model.params_flat.len();
    let mut adam = Adam::new(n_params);
    let mut grads = vec![0.0; n_params];
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut report = TrainReport {
        epochs_run: 0,
        train_mse: Vec::new(),
        train_rel_l2: Vec::new(),
        val_rel_l2: Vec::new(),
        lr_trace: Vec::new(),
        best_epoch: 0,
        best_val_rel_l2: f64::INFINITY,
        wall_time_s: 0.0,
    };
    let mut best_params = model.params_flat.clone();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate * config.lr_decay.powi((epoch / config.decay_every) as i32);
        // seeded per-epoch shuffle
        let mut rng =
            ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut epoch_rel = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let stats = loss_and_gradients(&model, &batch, &mut grads)?;
            // decoupled weight decay, then the Adam step
            if config.weight_decay > 0.0 {
                for p in model.params_flat.iter_mut() {
                    *p -= lr * config.weight_decay * *p;
                }
            }
            adam.step(&mut model.params_flat, &grads, lr);
            epoch_loss += stats.mse * chunk.len() as f64;
            epoch_rel += stats.rel_l2_sum;
            seen += chunk.len();
        }
        let train_mse = epoch_loss / seen as f64;
        // training relative L2 is measured on the same pass, so it reflects
        // the weights as they moved through the epoch
        let train_rel = epoch_rel / seen as f64;
        let val_rel = relative_l2(&model, val_set)?;
        report.train_mse.push(train_mse);
        report.train_rel_l2.push(train_rel);
        report.val_rel_l2.push(val_rel);
        report.lr_trace.push(lr);
        report.epochs_run = epoch + 1;
        if val_rel < report.best_val_rel_l2 {
            report.best_val_rel_l2 = val_rel;
            report.best_epoch = epoch;
            best_params.copy_from_slice(&model.params_flat);
        }
        if let Some(stop) = config.early_stop_val_rel {
            if val_rel <= stop {
                break;
            }
        }
    }
    model.params_flat = best_params;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((model, report))
}
