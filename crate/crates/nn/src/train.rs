//! MSE training with Adam, elementwise gradient clipping, a sampling-point
//! curriculum and learning-rate halving on validation plateaus.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shtrans_core::dataset::{homogeneous_batches, mix_seed};
use shtrans_core::{Error, Result};

use crate::model::{ModelConfig, PreparedExample, TtNet};
use crate::params::ParamEntry;

const CHECKPOINT_FORMAT: &str = "shtrans-checkpoint-1";

/// Order in which sampling-point counts are introduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Curriculum {
    /// Start with the largest `Q` and add smaller counts stage by stage.
    #[default]
    Lrg2Sml,
    /// Start with the smallest `Q` and add larger counts.
    Sml2Lrg,
    /// Every stage sees all examples.
    None,
}

impl Curriculum {
    /// Stage thresholds for the `Q` values present in `qs`. Stage `s`
    /// trains on the examples admitted by [`Curriculum::admits`].
    pub fn stages(self, qs: &[usize]) -> Vec<usize> {
        let mut distinct = qs.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        match self {
            Curriculum::Lrg2Sml => distinct.into_iter().rev().collect(),
            Curriculum::Sml2Lrg => distinct,
            Curriculum::None => vec![0],
        }
    }

    pub fn admits(self, threshold: usize, q: usize) -> bool {
        match self {
            Curriculum::Lrg2Sml => q >= threshold,
            Curriculum::Sml2Lrg => q <= threshold,
            Curriculum::None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_per_stage: usize,
    /// Stop after this many optimiser steps, even mid-schedule.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients are clipped elementwise to `[-clip, clip]`.
    pub clip: f64,
    /// Epochs without improvement before the rate halves; 0 disables halving.
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub curriculum: Curriculum,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_stage: 5,
            max_steps: None,
            batch_size: 8,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 1.0,
            plateau_patience: 3,
            plateau_min_delta: 1e-5,
            curriculum: Curriculum::Lrg2Sml,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 || self.epochs_per_stage == 0 {
            return bad("batch_size and epochs_per_stage must be positive");
        }
        if !(self.lr > 0.0 && self.clip > 0.0 && self.eps > 0.0) {
            return bad("lr, clip and eps must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }
}

pub fn clip_elementwise(grads: &mut [f64], bound: f64) {
    for g in grads {
        *g = g.clamp(-bound, bound);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Progress that must survive a checkpoint for training to resume exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl TrainState {
    pub fn new(lr: f64) -> Self {
        Self {
            epoch: 0,
            step: 0,
            lr,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Feeds one validation loss; halves the learning rate after
    /// `patience` epochs without an improvement larger than `min_delta`
    /// (never when `patience` is 0). Returns whether the rate was halved.
    pub fn observe(&mut self, loss: f64, patience: usize, min_delta: f64) -> bool {
        match self.best {
            Some(b) if loss >= b - min_delta => {
                self.bad_epochs += 1;
                if patience > 0 && self.bad_epochs >= patience {
                    self.lr *= 0.5;
                    self.bad_epochs = 0;
                    return true;
                }
            }
            _ => {
                self.best = Some(loss);
                self.bad_epochs = 0;
            }
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub split: String,
    pub mse: f64,
    pub lr: f64,
    /// Curriculum threshold in effect (0 without a curriculum).
    pub q_stage: usize,
}

pub fn write_loss_csv<W: Write>(mut w: W, curve: &[LossRecord]) -> Result<()> {
    writeln!(w, "epoch,split,mse,lr,q_stage")?;
    for r in curve {
        writeln!(w, "{},{},{:e},{:e},{}", r.epoch, r.split, r.mse, r.lr, r.q_stage)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
    pub state: TrainState,
    pub adam_t: u64,
    pub params: Vec<ParamEntry>,
    pub curve: Vec<LossRecord>,
}

fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 8 {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

pub struct Trainer {
    pub model: TtNet,
    pub cfg: TrainConfig,
    pub init_seed: u64,
    pub state: TrainState,
    pub adam: Adam,
    pub curve: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(model: TtNet, cfg: TrainConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            adam: Adam::new(model.params.len()),
            state: TrainState::new(cfg.lr),
            model,
            cfg,
            init_seed,
            curve: Vec::new(),
        })
    }

    /// Total epochs of the schedule for a training set with these `Q` values.
    pub fn total_epochs(&self, train: &[PreparedExample]) -> usize {
        let qs: Vec<usize> = train.iter().map(PreparedExample::q).collect();
        self.cfg.curriculum.stages(&qs).len() * self.cfg.epochs_per_stage
    }

    pub fn finished(&self, train: &[PreparedExample]) -> bool {
        self.state.epoch >= self.total_epochs(train) || self.cfg.max_steps.is_some_and(|m| self.state.step >= m)
    }

    /// Mean example loss over `set`.
    pub fn evaluate(&self, set: &[PreparedExample]) -> Result<f64> {
        if set.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for ex in set {
            total += self.model.loss(ex)?;
        }
        Ok(total / set.len() as f64)
    }

    /// One optimiser step on the mean loss of `batch`; returns that loss.
    pub fn step(&mut self, batch: &[&PreparedExample]) -> Result<f64> {
        let n = self.model.params.len();
        let mut grad = vec![0.0; n];
        let mut loss = 0.0;
        for ex in batch {
            let (l, g) = self.model.loss_and_grad(ex, false)?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        loss *= inv;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite training loss at epoch {} step {}",
                self.state.epoch, self.state.step
            )));
        }
        grad.iter_mut().for_each(|g| *g *= inv);
        clip_elementwise(&mut grad, self.cfg.clip);
        self.adam.step(self.model.params.values_mut(), &grad, self.state.lr, &self.cfg);
        self.state.step += 1;
        Ok(loss)
    }

    /// Runs the next epoch of the schedule. Returns `false` when the
    /// schedule was already complete.
    pub fn run_epoch(&mut self, train: &[PreparedExample], val: &[PreparedExample]) -> Result<bool> {
        if train.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        if self.finished(train) {
            return Ok(false);
        }
        let qs: Vec<usize> = train.iter().map(PreparedExample::q).collect();
        let stages = self.cfg.curriculum.stages(&qs);
        let stage = stages[(self.state.epoch / self.cfg.epochs_per_stage).min(stages.len() - 1)];
        let admitted: Vec<usize> = (0..train.len()).filter(|&i| self.cfg.curriculum.admits(stage, qs[i])).collect();
        let admitted_qs: Vec<usize> = admitted.iter().map(|&i| qs[i]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, self.state.epoch as u64));
        let batches = homogeneous_batches(&admitted_qs, self.cfg.batch_size, &mut rng);
        let lr = self.state.lr;
        let (mut total, mut seen) = (0.0, 0usize);
        for batch in batches {
            if self.cfg.max_steps.is_some_and(|m| self.state.step >= m) {
                break;
            }
            let exs: Vec<&PreparedExample> = batch.iter().map(|&j| &train[admitted[j]]).collect();
            total += self.step(&exs)? * exs.len() as f64;
            seen += exs.len();
        }
        let epoch = self.state.epoch;
        let train_mse = total / seen.max(1) as f64;
        self.curve.push(LossRecord {
            epoch,
            split: "train".into(),
            mse: train_mse,
            lr,
            q_stage: stage,
        });
        let monitored = if val.is_empty() {
            train_mse
        } else {
            let v = self.evaluate(val)?;
            self.curve.push(LossRecord {
                epoch,
                split: "val".into(),
                mse: v,
                lr,
                q_stage: stage,
            });
            v
        };
        if !monitored.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation loss after epoch {epoch}")));
        }
        self.state.observe(monitored, self.cfg.plateau_patience, self.cfg.plateau_min_delta);
        self.state.epoch += 1;
        Ok(true)
    }

    /// Runs epochs until the schedule (or the step budget) is exhausted.
    pub fn train(&mut self, train: &[PreparedExample], val: &[PreparedExample]) -> Result<()> {
        while self.run_epoch(train, val)? {}
        Ok(())
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.into(),
            model: self.model.config.clone(),
            train: self.cfg.clone(),
            init_seed: self.init_seed,
            state: self.state.clone(),
            adam_t: self.adam.t,
            params: self.model.params.entries().to_vec(),
            curve: self.curve.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        write_f64s(&dir.join("params.bin"), self.model.params.values())?;
        let mut opt = self.adam.m.clone();
        opt.extend_from_slice(&self.adam.v);
        write_f64s(&dir.join("optimizer.bin"), &opt)
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format {}", manifest.format)));
        }
        let mut model = TtNet::new(manifest.model.clone(), manifest.init_seed)?;
        let layout: Vec<(&str, usize, usize)> = model.params.entries().iter().map(|e| (e.name.as_str(), e.rows, e.cols)).collect();
        let stored: Vec<(&str, usize, usize)> = manifest.params.iter().map(|e| (e.name.as_str(), e.rows, e.cols)).collect();
        if layout != stored {
            return Err(Error::Format("checkpoint parameter layout does not match its model config".into()));
        }
        let n = model.params.len();
        model.params.set_values(read_f64s(&dir.join("params.bin"), n)?).map_err(Error::Format)?;
        if !model.params.all_finite() {
            return Err(Error::Format("checkpoint holds non-finite parameters".into()));
        }
        let opt = read_f64s(&dir.join("optimizer.bin"), 2 * n)?;
        let adam = Adam {
            m: opt[..n].to_vec(),
            v: opt[n..].to_vec(),
            t: manifest.adam_t,
        };
        let mut trainer = Self::new(model, manifest.train, manifest.init_seed)?;
        trainer.state = manifest.state;
        trainer.adam = adam;
        trainer.curve = manifest.curve;
        Ok(trainer)
    }
}

/// Loads only the model of a checkpoint.
pub fn load_model(dir: &Path) -> Result<TtNet> {
    Ok(Trainer::load_checkpoint(dir)?.model)
}
