//! The conditional noise-prediction network and the noisy-input classifier.
//!
//! The denoiser sees `[x_t, fourier(t/T), embedding(c)]`, where the
//! embedding table has one row per class plus a trailing null row used for
//! unconditional prediction. Training drops the condition to the null row
//! with probability `p_uncond`, so one network yields both `ε_c` and `ε_∅`.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::neural::{Activation, Adam, Gradients, Mlp, ParamSlot};
use crate::schedule::NoiseSchedule;
use crate::toydata::LabeledSet;

/// Class id or the null (unconditional) token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Class(usize),
    Null,
}

/// `x_t = √ᾱ_t · x_0 + √(1 − ᾱ_t) · ε`.
pub fn noisify(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    check_dim(x0.len(), eps.len())?;
    let ab = sched.alpha_bar(t)?;
    sched.check_step(t)?;
    Ok(noisify_with(x0, ab, eps))
}

fn noisify_with(x0: &[f64], alpha_bar: f64, eps: &[f64]) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// Sinusoidal features of `u = t/T` at frequencies `π·2^k`, `k < n`.
pub fn time_features(t: usize, total: usize, frequencies: usize) -> Vec<f64> {
    let u = t as f64 / total as f64;
    let mut out = Vec::with_capacity(2 * frequencies);
    for k in 0..frequencies {
        let w = PI * (1u64 << k) as f64;
        out.push((w * u).sin());
        out.push((w * u).cos());
    }
    out
}

fn fill_time_features(dst: &mut Array2<f64>, col: usize, ts: &[usize], total: usize, frequencies: usize) {
    for (r, &t) in ts.iter().enumerate() {
        for (k, v) in time_features(t, total, frequencies).into_iter().enumerate() {
            dst[[r, col + k]] = v;
        }
    }
}

/// Hyperparameters of the denoiser training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Final learning rate as a fraction of the initial one (cosine decay).
    pub final_lr_fraction: f64,
    pub p_uncond: f64,
    pub hidden: Vec<usize>,
    pub frequencies: usize,
    pub embed_dim: usize,
    pub validation_fraction: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            steps: 30_000,
            batch_size: 256,
            learning_rate: 2e-3,
            final_lr_fraction: 0.05,
            p_uncond: 0.1,
            hidden: vec![128, 128, 128],
            frequencies: 8,
            embed_dim: 4,
            validation_fraction: 0.1,
        }
    }
}

/// Hyperparameters of the classifier training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    pub hidden: Vec<usize>,
    pub frequencies: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch_size: 256,
            learning_rate: 2e-3,
            final_lr_fraction: 0.05,
            hidden: vec![64, 64],
            frequencies: 8,
        }
    }
}

/// Loss history of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub steps: usize,
    /// Per-step mini-batch loss.
    pub losses: Vec<f64>,
    /// Mean loss over the last tenth of the steps.
    pub final_loss: f64,
    pub initial_validation_loss: f64,
    pub validation_loss: f64,
}

impl TrainReport {
    fn new(seed: u64, losses: Vec<f64>, initial_validation_loss: f64, validation_loss: f64) -> Self {
        let tail = (losses.len() / 10).max(1);
        let final_loss = losses[losses.len() - tail..].iter().sum::<f64>() / tail as f64;
        Self {
            seed,
            steps: losses.len(),
            losses,
            final_loss,
            initial_validation_loss,
            validation_loss,
        }
    }
}

fn cosine_lr(base: f64, final_fraction: f64, step: usize, total: usize) -> f64 {
    let progress = step as f64 / total.max(1) as f64;
    let floor = base * final_fraction;
    floor + 0.5 * (base - floor) * (1.0 + (PI * progress).cos())
}

/// Deterministic train/validation split by shuffled index.
fn split_indices(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Conditional ε-prediction model `ε_θ(x_t, t, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub net: Mlp,
    /// `(n_classes + 1) × embed_dim`; the last row is the null token.
    pub embedding: Array2<f64>,
    pub schedule: NoiseSchedule,
    pub n_classes: usize,
    pub frequencies: usize,
    pub p_uncond: f64,
}

impl Denoiser {
    pub fn new(
        net: Mlp,
        embedding: Array2<f64>,
        schedule: NoiseSchedule,
        n_classes: usize,
        frequencies: usize,
        p_uncond: f64,
    ) -> Result<Self> {
        if embedding.nrows() != n_classes + 1 {
            return Err(Error::InvalidParameter(format!(
                "embedding needs {} rows (classes plus null), has {}",
                n_classes + 1,
                embedding.nrows()
            )));
        }
        let data_dim = net.out_dim();
        check_dim(data_dim + 2 * frequencies + embedding.ncols(), net.in_dim())?;
        Ok(Self {
            net,
            embedding: embedding.as_standard_layout().into_owned(),
            schedule,
            n_classes,
            frequencies,
            p_uncond,
        })
    }

    /// Data dimensionality `D`.
    pub fn data_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn null_token(&self) -> usize {
        self.n_classes
    }

    fn condition_row(&self, c: Condition) -> Result<usize> {
        match c {
            Condition::Null => Ok(self.n_classes),
            Condition::Class(k) if k < self.n_classes => Ok(k),
            Condition::Class(k) => Err(Error::UnknownClass {
                class: k,
                n_classes: self.n_classes,
            }),
        }
    }

    fn assemble(&self, x: ArrayView2<f64>, ts: &[usize], rows: &[usize]) -> Array2<f64> {
        let d = self.data_dim();
        let f = 2 * self.frequencies;
        let mut input = Array2::zeros((x.nrows(), self.net.in_dim()));
        input.slice_mut(s![.., ..d]).assign(&x);
        fill_time_features(&mut input, d, ts, self.schedule.len(), self.frequencies);
        for (r, &row) in rows.iter().enumerate() {
            input.slice_mut(s![r, d + f..]).assign(&self.embedding.row(row));
        }
        input
    }

    /// Noise prediction for a single point.
    pub fn predict_eps(&self, x_t: &[f64], t: usize, c: Condition) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x_t.len()), x_t).map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(self.predict_eps_batch(x, t, c)?.into_raw_vec_and_offset().0)
    }

    /// Noise prediction for a batch of points sharing `t` and `c`.
    pub fn predict_eps_batch(&self, x_t: ArrayView2<f64>, t: usize, c: Condition) -> Result<Array2<f64>> {
        self.schedule.check_step(t)?;
        check_dim(self.data_dim(), x_t.ncols())?;
        let row = self.condition_row(c)?;
        let n = x_t.nrows();
        let input = self.assemble(x_t, &vec![t; n], &vec![row; n]);
        self.net.forward_batch(input.view())
    }

    /// Training loss `mean ‖ε − ε_θ‖²` over rows and coordinates, with its
    /// gradients for the network and for the embedding table. `rows` are
    /// embedding rows, the null token being `n_classes`.
    pub fn loss_gradients(
        &self,
        x_t: ArrayView2<f64>,
        ts: &[usize],
        rows: &[usize],
        eps: ArrayView2<f64>,
    ) -> Result<(f64, Gradients, Array2<f64>)> {
        let (n, d) = (x_t.nrows(), self.data_dim());
        check_dim(d, x_t.ncols())?;
        check_dim(n, ts.len())?;
        check_dim(n, rows.len())?;
        check_dim(n * d, eps.len())?;
        if let Some(&bad) = rows.iter().find(|&&r| r > self.n_classes) {
            return Err(Error::UnknownClass {
                class: bad,
                n_classes: self.n_classes,
            });
        }
        for &t in ts {
            self.schedule.check_step(t)?;
        }
        let input = self.assemble(x_t, ts, rows);
        let trace = self.net.forward_traced(input.view())?;
        let diff = &trace.output - &eps;
        let loss = diff.mapv(|v| v * v).mean().unwrap_or(f64::NAN);
        let upstream = diff * (2.0 / (n * d) as f64);
        let (grads, dx) = self.net.backward(&trace, upstream.view())?;
        let first = d + 2 * self.frequencies;
        let mut emb_grad = Array2::<f64>::zeros(self.embedding.raw_dim());
        for (r, &row) in rows.iter().enumerate() {
            let mut dst = emb_grad.row_mut(row);
            dst += &dx.slice(s![r, first..]);
        }
        Ok((loss, grads, emb_grad))
    }

    /// Mean squared ε error (per coordinate) on fixed draws.
    pub fn epsilon_mse(&self, data: &LabeledSet, idx: &[usize], seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = draw_noisy_batch(data, idx, &self.schedule, &mut rng);
        let rows: Vec<usize> = batch.labels.clone();
        let input = self.assemble(batch.x_t.view(), &batch.ts, &rows);
        let pred = self.net.forward_batch(input.view())?;
        let diff = &pred - &batch.eps;
        Ok(diff.mapv(|v| v * v).mean().unwrap_or(f64::NAN))
    }
}

struct NoisyBatch {
    x_t: Array2<f64>,
    eps: Array2<f64>,
    ts: Vec<usize>,
    labels: Vec<usize>,
}

fn draw_noisy_batch(data: &LabeledSet, idx: &[usize], sched: &NoiseSchedule, rng: &mut ChaCha8Rng) -> NoisyBatch {
    let d = data.dim();
    let mut x_t = Array2::zeros((idx.len(), d));
    let mut eps = Array2::zeros((idx.len(), d));
    let mut ts = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        let t = rng.random_range(1..=sched.len());
        let e: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let x0 = data.points.row(i);
        let ab = sched.alpha_bar(t).expect("t drawn in range");
        let xt = noisify_with(x0.as_slice().expect("standard layout"), ab, &e);
        x_t.row_mut(r).assign(&Array1::from(xt));
        eps.row_mut(r).assign(&Array1::from(e));
        ts.push(t);
        labels.push(data.labels[i]);
    }
    NoisyBatch { x_t, eps, ts, labels }
}

fn check_training_data(data: &LabeledSet) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let present = data.class_counts().iter().filter(|&&n| n > 0).count();
    if present < 2 {
        return Err(Error::InvalidParameter(
            "training data needs at least two classes".into(),
        ));
    }
    Ok(())
}

/// Fits the conditional denoiser on `‖ε − ε_θ(x_t, t, c)‖²` with
/// `t ~ U{1..T}` and condition dropout.
pub fn train_denoiser(
    data: &LabeledSet,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<(Denoiser, TrainReport)> {
    check_training_data(data)?;
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidParameter(
            "training needs steps >= 1 and batch_size >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.p_uncond) {
        return Err(Error::InvalidParameter(format!(
            "p_uncond must be in [0, 1], got {}",
            cfg.p_uncond
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = data.dim();
    let mut dims = vec![d + 2 * cfg.frequencies + cfg.embed_dim];
    dims.extend(&cfg.hidden);
    dims.push(d);
    let net = Mlp::init(&dims, Activation::Silu, &mut rng)?;
    let embedding = Array2::from_shape_fn((data.n_classes + 1, cfg.embed_dim), |_| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let mut model = Denoiser::new(
        net,
        embedding,
        sched.clone(),
        data.n_classes,
        cfg.frequencies,
        cfg.p_uncond,
    )?;

    let (train_idx, val_idx) = split_indices(data.len(), cfg.validation_fraction, &mut rng);
    let val_idx = if val_idx.is_empty() { train_idx.clone() } else { val_idx };
    let val_seed = seed ^ 0x5eed_7a11;
    let initial_val = model.epsilon_mse(data, &val_idx, val_seed)?;

    let mut opt = Adam::new(cfg.learning_rate);
    let mut names = model.net.param_names();
    names.push("embedding".into());
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut batch_idx = vec![0usize; cfg.batch_size];

    for step in 0..cfg.steps {
        for slot in batch_idx.iter_mut() {
            *slot = train_idx[rng.random_range(0..train_idx.len())];
        }
        let batch = draw_noisy_batch(data, &batch_idx, sched, &mut rng);
        let rows: Vec<usize> = batch
            .labels
            .iter()
            .map(|&l| {
                if rng.random::<f64>() < cfg.p_uncond {
                    model.null_token()
                } else {
                    l
                }
            })
            .collect();
        let (loss, grads, emb_grad) = model.loss_gradients(batch.x_t.view(), &batch.ts, &rows, batch.eps.view())?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                last_finite: losses.last().copied(),
            });
        }
        losses.push(loss);

        opt.learning_rate = cosine_lr(cfg.learning_rate, cfg.final_lr_fraction, step, cfg.steps);
        let grad_tensors = grads.tensors();
        let mut slots: Vec<ParamSlot<'_>> = model
            .net
            .params_mut()
            .into_iter()
            .zip(&grad_tensors)
            .zip(&names)
            .map(|((value, grad), name)| ParamSlot { name, value, grad })
            .collect();
        slots.push(ParamSlot {
            name: "embedding",
            value: model.embedding.as_slice_mut().expect("standard layout"),
            grad: emb_grad.as_slice().expect("standard layout"),
        });
        opt.step(&mut slots)?;
    }

    let val = model.epsilon_mse(data, &val_idx, val_seed)?;
    Ok((model, TrainReport::new(seed, losses, initial_val, val)))
}

/// `p(y | x_t)` for noisy inputs, used by classifier guidance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyClassifier {
    pub net: Mlp,
    pub schedule: NoiseSchedule,
    pub n_classes: usize,
    pub frequencies: usize,
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl NoisyClassifier {
    pub fn new(net: Mlp, schedule: NoiseSchedule, n_classes: usize, frequencies: usize) -> Result<Self> {
        check_dim(n_classes, net.out_dim())?;
        if net.in_dim() <= 2 * frequencies {
            return Err(Error::InvalidParameter(
                "classifier input too narrow for its time features".into(),
            ));
        }
        Ok(Self {
            net,
            schedule,
            n_classes,
            frequencies,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.net.in_dim() - 2 * self.frequencies
    }

    fn assemble(&self, x: ArrayView2<f64>, ts: &[usize]) -> Array2<f64> {
        let d = self.data_dim();
        let mut input = Array2::zeros((x.nrows(), self.net.in_dim()));
        input.slice_mut(s![.., ..d]).assign(&x);
        fill_time_features(&mut input, d, ts, self.schedule.len(), self.frequencies);
        input
    }

    pub fn logits_batch(&self, x_t: ArrayView2<f64>, t: usize) -> Result<Array2<f64>> {
        self.schedule.check_step(t)?;
        check_dim(self.data_dim(), x_t.ncols())?;
        let input = self.assemble(x_t, &vec![t; x_t.nrows()]);
        self.net.forward_batch(input.view())
    }

    pub fn probabilities_batch(&self, x_t: ArrayView2<f64>, t: usize) -> Result<Array2<f64>> {
        Ok(log_softmax_rows(&self.logits_batch(x_t, t)?).mapv(f64::exp))
    }

    pub fn predict_batch(&self, x_t: ArrayView2<f64>, t: usize) -> Result<Vec<usize>> {
        let logits = self.logits_batch(x_t, t)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                    )
                    .0
            })
            .collect())
    }

    /// Mean cross-entropy over rows and its parameter gradients.
    pub fn loss_gradients(&self, x_t: ArrayView2<f64>, ts: &[usize], labels: &[usize]) -> Result<(f64, Gradients)> {
        let n = x_t.nrows();
        check_dim(self.data_dim(), x_t.ncols())?;
        check_dim(n, ts.len())?;
        check_dim(n, labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::UnknownClass {
                class: bad,
                n_classes: self.n_classes,
            });
        }
        for &t in ts {
            self.schedule.check_step(t)?;
        }
        let input = self.assemble(x_t, ts);
        let trace = self.net.forward_traced(input.view())?;
        let logp = log_softmax_rows(&trace.output);
        let loss = -labels.iter().enumerate().map(|(r, &y)| logp[[r, y]]).sum::<f64>() / n as f64;
        let mut upstream = logp.mapv(f64::exp);
        for (r, &y) in labels.iter().enumerate() {
            upstream[[r, y]] -= 1.0;
        }
        upstream /= n as f64;
        let (grads, _) = self.net.backward(&trace, upstream.view())?;
        Ok((loss, grads))
    }

    /// Returns `log p(y | x_t)` and `∇_{x_t} log p(y | x_t)` for every row.
    pub fn grad_log_prob_batch(&self, x_t: ArrayView2<f64>, t: usize, y: usize) -> Result<(Array1<f64>, Array2<f64>)> {
        if y >= self.n_classes {
            return Err(Error::UnknownClass {
                class: y,
                n_classes: self.n_classes,
            });
        }
        self.schedule.check_step(t)?;
        check_dim(self.data_dim(), x_t.ncols())?;
        let input = self.assemble(x_t, &vec![t; x_t.nrows()]);
        let trace = self.net.forward_traced(input.view())?;
        let logp = log_softmax_rows(&trace.output);
        // ∂ log softmax_y / ∂ logits = onehot(y) − softmax
        let mut upstream = logp.mapv(|v| -v.exp());
        upstream.column_mut(y).mapv_inplace(|v| v + 1.0);
        let (_, dx) = self.net.backward(&trace, upstream.view())?;
        let d = self.data_dim();
        Ok((logp.column(y).to_owned(), dx.slice(s![.., ..d]).to_owned()))
    }

    /// `∇_{x_t} log p(y | x_t)` for one point.
    pub fn grad_log_prob(&self, x_t: &[f64], t: usize, y: usize) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x_t.len()), x_t).map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(self.grad_log_prob_batch(x, t, y)?.1.into_raw_vec_and_offset().0)
    }

    /// Fraction of `idx` classified correctly after noising to exactly step `t`.
    pub fn accuracy_at(&self, data: &LabeledSet, idx: &[usize], t: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ab = self.schedule.alpha_bar(t)?;
        let d = data.dim();
        let mut x = Array2::zeros((idx.len(), d));
        for (r, &i) in idx.iter().enumerate() {
            let e: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let xt = noisify_with(data.points.row(i).as_slice().expect("standard layout"), ab, &e);
            x.row_mut(r).assign(&Array1::from(xt));
        }
        let pred = self.predict_batch(x.view(), t)?;
        let correct = pred.iter().zip(idx).filter(|(p, &i)| **p == data.labels[i]).count();
        Ok(correct as f64 / idx.len().max(1) as f64)
    }
}

/// Fits the classifier by cross-entropy on `(noisify(x_0, t, ε), y)` with
/// `t ~ U{1..T}`.
pub fn train_classifier(
    data: &LabeledSet,
    cfg: &ClassifierConfig,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<(NoisyClassifier, TrainReport)> {
    check_training_data(data)?;
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidParameter(
            "training needs steps >= 1 and batch_size >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = data.dim();
    let mut dims = vec![d + 2 * cfg.frequencies];
    dims.extend(&cfg.hidden);
    dims.push(data.n_classes);
    let net = Mlp::init(&dims, Activation::Silu, &mut rng)?;
    let mut model = NoisyClassifier::new(net, sched.clone(), data.n_classes, cfg.frequencies)?;

    let (train_idx, val_idx) = split_indices(data.len(), 0.1, &mut rng);
    let val_idx = if val_idx.is_empty() { train_idx.clone() } else { val_idx };
    let val_seed = seed ^ 0x5eed_7a11;
    let initial_val = model.cross_entropy(data, &val_idx, val_seed)?;

    let mut opt = Adam::new(cfg.learning_rate);
    let names = model.net.param_names();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut batch_idx = vec![0usize; cfg.batch_size];
    for step in 0..cfg.steps {
        for slot in batch_idx.iter_mut() {
            *slot = train_idx[rng.random_range(0..train_idx.len())];
        }
        let batch = draw_noisy_batch(data, &batch_idx, sched, &mut rng);
        let (loss, grads) = model.loss_gradients(batch.x_t.view(), &batch.ts, &batch.labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                last_finite: losses.last().copied(),
            });
        }
        losses.push(loss);
        opt.learning_rate = cosine_lr(cfg.learning_rate, cfg.final_lr_fraction, step, cfg.steps);
        let grad_tensors = grads.tensors();
        let mut slots: Vec<ParamSlot<'_>> = model
            .net
            .params_mut()
            .into_iter()
            .zip(&grad_tensors)
            .zip(&names)
            .map(|((value, grad), name)| ParamSlot { name, value, grad })
            .collect();
        opt.step(&mut slots)?;
    }
    let val = model.cross_entropy(data, &val_idx, val_seed)?;
    Ok((model, TrainReport::new(seed, losses, initial_val, val)))
}

impl NoisyClassifier {
    fn cross_entropy(&self, data: &LabeledSet, idx: &[usize], seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = draw_noisy_batch(data, idx, &self.schedule, &mut rng);
        let input = self.assemble(batch.x_t.view(), &batch.ts);
        let logp = log_softmax_rows(&self.net.forward_batch(input.view())?);
        Ok(-batch.labels.iter().enumerate().map(|(r, &y)| logp[[r, y]]).sum::<f64>() / idx.len().max(1) as f64)
    }
}
