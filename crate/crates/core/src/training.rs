//! Composite loss, Adam, learning-rate schedule and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::{Batch, TrainingSet};
use crate::error::{param_err, shape_err, Error, Result};
use crate::model::{AdrnModel, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Optimisation and architecture settings for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Adjacent bands `K` fed to the spectral branch.
    pub spectral_bands: usize,
    /// Attention reduction ratio `r`.
    pub reduction: usize,
    pub channels: usize,
    pub path_channels: usize,
    pub depth: usize,
    pub attention: bool,
    /// Weight of the reconstruction term.
    pub lambda: f64,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_every: u64,
    pub lr_decay_rate: f64,
    pub total_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub patch: usize,
    pub stride: usize,
    /// Record a loss row every this many steps.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl TrainConfig {
    /// Full-scale settings: K = 64, r = 10, lambda = 10, batch 382,
    /// Adam(0.9, 0.999, 1e-8) from lr 1e-4 for 300k steps.
    pub fn full() -> Self {
        let model = ModelConfig::default();
        Self {
            spectral_bands: model.spectral_bands,
            reduction: model.reduction,
            channels: model.channels,
            path_channels: model.path_channels,
            depth: model.depth,
            attention: true,
            lambda: 10.0,
            batch_size: 382,
            lr0: 1e-4,
            lr_decay_every: 5000,
            lr_decay_rate: 0.9,
            total_steps: 300_000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            patch: 20,
            stride: 5,
            log_every: 1,
        }
    }

    /// Small network that trains on a laptop CPU in minutes.
    pub fn desk() -> Self {
        Self {
            spectral_bands: 8,
            channels: 16,
            path_channels: 4,
            depth: 3,
            batch_size: 32,
            total_steps: 5000,
            lr0: 1e-3,
            lr_decay_every: 1000,
            ..Self::full()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            channels: self.channels,
            path_channels: self.path_channels,
            depth: self.depth,
            spectral_bands: self.spectral_bands,
            reduction: self.reduction,
            attention: self.attention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        let checks = [
            (self.batch_size > 0, "batch_size must be > 0"),
            (self.lr_decay_every > 0, "lr_decay_every must be > 0"),
            (self.patch > 0 && self.stride > 0, "patch and stride must be > 0"),
            (self.log_every > 0, "log_every must be > 0"),
            (self.lambda >= 0.0, "lambda must be >= 0"),
            (self.lr0 >= 0.0, "lr0 must be >= 0"),
            (self.lr_decay_rate > 0.0, "lr_decay_rate must be > 0"),
            (self.epsilon > 0.0, "epsilon must be > 0"),
            (
                self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0,
                "beta1 and beta2 must lie in (0, 1)",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(param_err!("{msg}")),
            None => Ok(()),
        }
    }

    /// `lr0 * rate ^ floor(step / every)`.
    pub fn learning_rate(&self, step: u64) -> f64 {
        self.lr0 * self.lr_decay_rate.powi((step / self.lr_decay_every) as i32)
    }
}

/// Mean squared error over every pixel of the batch.
pub fn loss_rec<T: Scalar>(x_hat: &Tensor4<T>, x: &Tensor4<T>) -> Result<T> {
    let d = x_hat.zip_map(x, |a, b| a - b)?;
    Ok(d.data().iter().map(|&v| v * v).sum::<T>() / T::of(d.len() as f64))
}

/// Squared grand mean of the residual.
pub fn loss_reg<T: Scalar>(residual: &Tensor4<T>) -> T {
    let m = residual.mean();
    m * m
}

/// `lambda * rec + reg`.
pub fn loss_total<T: Scalar>(rec: T, reg: T, lambda: T) -> T {
    lambda * rec + reg
}

/// The three loss terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub rec: Var,
    pub reg: Var,
}

pub fn loss_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x_hat: Var,
    x: Var,
    residual: Var,
    lambda: T,
) -> Result<LossVars> {
    let d = tape.sub(x_hat, x)?;
    let sq = tape.mul(d, d)?;
    let rec = tape.mean(sq);
    let m = tape.mean(residual);
    let reg = tape.mul(m, m)?;
    let weighted = tape.scale(rec, lambda);
    let total = tape.add(weighted, reg)?;
    Ok(LossVars { total, rec, reg })
}

/// Loss values of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub rec: f64,
    pub reg: f64,
}

/// Forward pass, composite loss and parameter gradients (same layout as
/// [`AdrnModel::params`]).
pub fn loss_and_grad<T: Scalar>(
    model: &AdrnModel<T>,
    batch: &Batch<T>,
    lambda: T,
) -> Result<(LossParts, Vec<Vec<T>>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let ys = tape.constant(batch.y_spatial.clone());
    let yp = tape.constant(batch.y_spectral.clone());
    let x = tape.constant(batch.x_clean.clone());
    let out = model.forward_tape(&mut tape, &vars, ys, yp)?;
    let x_hat = tape.sub(ys, out.residual)?;
    let loss = loss_tape(&mut tape, x_hat, x, out.residual, lambda)?;
    let parts = LossParts {
        total: tape.value(loss.total).data()[0].as_f64(),
        rec: tape.value(loss.rec).data()[0].as_f64(),
        reg: tape.value(loss.reg).data()[0].as_f64(),
    };
    let mut grads = tape.backward(loss.total)?;
    let flat = vars
        .iter()
        .flat_map(|cv| [cv.weight, cv.bias])
        .map(|v| grads.take(v).into_vec())
        .collect();
    Ok((parts, flat))
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(sizes: &[usize], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: &[Vec<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        self.t += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let c1 = T::of(1.0 - self.beta1);
        let c2 = T::of(1.0 - self.beta2);
        let bc1 = T::of(1.0 / (1.0 - self.beta1.powi(self.t as i32)));
        let bc2 = T::of(1.0 / (1.0 - self.beta2.powi(self.t as i32)));
        let lr = T::of(lr);
        let eps = T::of(self.epsilon);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(shape_err!("parameter of {} values got {} gradients", p.len(), g.len()));
            }
            for i in 0..p.len() {
                m[i] = b1 * m[i] + c1 * g[i];
                v[i] = b2 * v[i] + c2 * g[i] * g[i];
                let m_hat = m[i] * bc1;
                let v_hat = v[i] * bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// One row of the loss history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_rec: f64,
    pub loss_reg: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,lr,loss_total,loss_rec,loss_reg";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.step, self.lr, self.loss_total, self.loss_rec, self.loss_reg
        )
    }
}

pub fn loss_history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Progress notifications delivered by [`Trainer::run`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainEvent {
    Logged(LossRecord),
    /// The learning rate is about to drop; `step` steps have completed.
    DecayBoundary { step: u64 },
    /// The loss at `step` was not finite; parameters are those before it.
    Diverged { step: u64 },
}

/// Owns a model and its optimizer state between steps.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: AdrnModel<T>,
    pub config: TrainConfig,
    pub adam: Adam<T>,
    step: u64,
    order: Option<(u64, Vec<usize>)>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: AdrnModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if model.config != config.model_config() {
            return Err(Error::ConfigMismatch(format!(
                "model {:?} vs training config {:?}",
                model.config,
                config.model_config()
            )));
        }
        let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        let adam = Adam::new(&sizes, config.beta1, config.beta2, config.epsilon);
        Ok(Self {
            model,
            config,
            adam,
            step: 0,
            order: None,
        })
    }

    /// Continue from a saved model, optimizer state and step counter.
    pub fn resume(model: AdrnModel<T>, adam: Adam<T>, step: u64, config: TrainConfig) -> Result<Self> {
        let mut t = Self::new(model, config)?;
        let expected: Vec<usize> = t.model.params().iter().map(|p| p.len()).collect();
        let got: Vec<usize> = adam.m.iter().map(Vec::len).collect();
        if expected != got {
            return Err(Error::ConfigMismatch("optimizer state does not match model".into()));
        }
        t.adam = adam;
        t.step = step;
        Ok(t)
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Dataset indices of the batch used at `step`. Each epoch is a fresh
    /// seeded permutation, so the sequence depends only on the seed.
    fn batch_indices(&mut self, len: usize) -> Vec<usize> {
        let bs = self.config.batch_size;
        let start = self.step as usize * bs;
        (start..start + bs)
            .map(|pos| {
                let epoch = (pos / len) as u64;
                if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
                    rng.set_stream(epoch);
                    let mut perm: Vec<usize> = (0..len).collect();
                    perm.shuffle(&mut rng);
                    self.order = Some((epoch, perm));
                }
                self.order.as_ref().expect("order set above").1[pos % len]
            })
            .collect()
    }

    /// One optimisation step on the next batch.
    pub fn step(&mut self, data: &TrainingSet<T>) -> Result<LossRecord> {
        if data.is_empty() {
            return Err(param_err!("training set is empty"));
        }
        let indices = self.batch_indices(data.len());
        let batch = data.batch(&indices)?;
        self.step_batch(&batch)
    }

    pub fn step_batch(&mut self, batch: &Batch<T>) -> Result<LossRecord> {
        let lr = self.config.learning_rate(self.step);
        let (loss, grads) = loss_and_grad(&self.model, batch, T::of(self.config.lambda))?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                loss: loss.total,
            });
        }
        self.adam.step(self.model.params_mut(), &grads, lr)?;
        let record = LossRecord {
            step: self.step,
            lr,
            loss_total: loss.total,
            loss_rec: loss.rec,
            loss_reg: loss.reg,
        };
        self.step += 1;
        Ok(record)
    }

    /// Train until `config.total_steps` steps have completed, returning the
    /// logged loss rows.
    pub fn run<F>(&mut self, data: &TrainingSet<T>, mut on_event: F) -> Result<Vec<LossRecord>>
    where
        F: FnMut(&Self, TrainEvent) -> Result<()>,
    {
        let mut history = Vec::new();
        while self.step < self.config.total_steps {
            let record = match self.step(data) {
                Ok(r) => r,
                Err(e @ Error::Divergence { step, .. }) => {
                    on_event(self, TrainEvent::Diverged { step })?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            if record.step % self.config.log_every == 0 || self.step == self.config.total_steps {
                history.push(record);
                on_event(self, TrainEvent::Logged(record))?;
            }
            if self.step.is_multiple_of(self.config.lr_decay_every) && self.step < self.config.total_steps {
                on_event(self, TrainEvent::DecayBoundary { step: self.step })?;
            }
        }
        Ok(history)
    }
}

/// Train a model from its current parameters for `config.total_steps`.
pub fn train<T: Scalar>(
    model: AdrnModel<T>,
    data: &TrainingSet<T>,
    config: &TrainConfig,
) -> Result<(AdrnModel<T>, Vec<LossRecord>)> {
    let mut trainer = Trainer::new(model, config.clone())?;
    let history = trainer.run(data, |_, _| Ok(()))?;
    Ok((trainer.model, history))
}
