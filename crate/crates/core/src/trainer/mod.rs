//! Joint optimisation of both networks: batch sampling, Adam, the step
//! schedule, loss logging and checkpoints.

mod adam;
mod checkpoint;
mod schedule;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use schedule::{learning_rate, TrainConfig};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::frames::{augment, sample_patch_pair, Dihedral, Frame, FrameClip, TrainingSample};
use crate::model::{ClipTensors, LossParts, Model};
use crate::nn::Params;

/// An LR sequence with its HR ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair {
    pub lr: Vec<Frame>,
    pub hr: Vec<Frame>,
}

/// Training sequences from which windows and patches are drawn.
#[derive(Debug, Clone)]
pub struct Dataset {
    sequences: Vec<SequencePair>,
    scale: usize,
    radius: usize,
}

impl Dataset {
    pub fn new(sequences: Vec<SequencePair>, scale: usize, radius: usize) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::invalid("dataset has no sequences"));
        }
        for (k, s) in sequences.iter().enumerate() {
            if s.lr.len() != s.hr.len() {
                return Err(Error::shape(format!(
                    "sequence {k}: {} LR frames but {} HR frames",
                    s.lr.len(),
                    s.hr.len()
                )));
            }
            if s.lr.len() < 2 * radius + 1 {
                return Err(Error::invalid(format!(
                    "sequence {k} has {} frames, fewer than a {}-frame window",
                    s.lr.len(),
                    2 * radius + 1
                )));
            }
            let (h, w) = s.lr[0].dims();
            if s.hr[0].dims() != (h * scale, w * scale) {
                return Err(Error::shape(format!("sequence {k}: HR is not {scale}x the LR size")));
            }
        }
        Ok(Self {
            sequences,
            scale,
            radius,
        })
    }

    pub fn sequences(&self) -> &[SequencePair] {
        &self.sequences
    }

    /// One augmented patch sample: random sequence, window, patch and symmetry.
    pub fn sample<R: Rng + ?Sized>(&self, patch: usize, rng: &mut R) -> Result<TrainingSample> {
        let seq = &self.sequences[rng.gen_range(0..self.sequences.len())];
        let t = 2 * self.radius + 1;
        let start = rng.gen_range(0..=seq.lr.len() - t);
        let lr = FrameClip::new(seq.lr[start..start + t].to_vec())?;
        let hr = FrameClip::new(seq.hr[start..start + t].to_vec())?;
        let sample = sample_patch_pair(&lr, &hr, patch, self.scale, rng)?;
        let choice = Dihedral::ALL[rng.gen_range(0..8)];
        Ok(augment(&sample, choice))
    }

    /// The batch for `step`; a pure function of `(seed, step)` so resumed
    /// runs see the same data.
    pub fn batch(&self, cfg: &TrainConfig, step: u64) -> Result<Vec<TrainingSample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(step);
        (0..cfg.batch_size).map(|_| self.sample(cfg.patch_size, &mut rng)).collect()
    }
}

/// Losses and learning rate of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub sr: f64,
    pub ofr: f64,
    pub total: f64,
    pub lr: f64,
}

pub const LOSS_LOG_HEADER: &str = "step,sr_loss,ofr_loss,total_loss,learning_rate";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.sr, self.ofr, self.total, self.lr)
    }
}

/// Model, optimiser state and step counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    pub step: u64,
}

impl Trainer {
    pub fn new(network: NetworkConfig, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let model = Model::for_training(network, train.seed)?;
        let adam = Adam::new(model.num_params(), train.adam_beta1, train.adam_beta2, train.adam_epsilon);
        Ok(Self {
            network,
            train,
            model,
            adam,
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.train.validate()?;
        Ok(Self {
            network: ck.network,
            train: ck.train,
            model: ck.model,
            adam: ck.adam,
            step: ck.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            network: self.network,
            train: self.train,
            model: self.model.clone(),
            adam: self.adam.clone(),
        }
    }

    /// Mean loss and gradient over `batch`, then one Adam update.
    pub fn train_step(&mut self, batch: &[TrainingSample]) -> Result<LossRecord> {
        if self.step >= self.train.max_steps {
            return Err(Error::invalid(format!(
                "step {} reached max_steps {}",
                self.step, self.train.max_steps
            )));
        }
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let weights = self.train.weights;
        let model = &self.model;
        let per_sample: Vec<(LossParts, Vec<f32>)> = batch
            .par_iter()
            .map(|sample| {
                let mut grads = model.zeros_like();
                let parts = model.loss_and_grad(&ClipTensors::from_sample(sample), &weights, &mut grads)?;
                Ok((parts, grads.flatten()))
            })
            .collect::<Result<_>>()?;

        let inv = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0f32; self.adam.m.len()];
        let mut mean = LossParts::default();
        for (parts, g) in &per_sample {
            mean.sr += parts.sr * inv;
            mean.ofr += parts.ofr * inv;
            mean.total += parts.total * inv;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += *b;
            }
        }
        let lr = learning_rate(self.step, &self.train);
        let record = LossRecord {
            step: self.step,
            sr: mean.sr,
            ofr: mean.ofr,
            total: mean.total,
            lr,
        };
        if !(mean.total.is_finite() && grad.iter().all(|g| g.is_finite())) {
            return Err(Error::NonFinite {
                step: self.step,
                sr: mean.sr,
                ofr: mean.ofr,
                total: mean.total,
            });
        }
        let inv = inv as f32;
        grad.iter_mut().for_each(|g| *g *= inv);
        let mut params = self.model.flatten();
        self.adam.update(&mut params, &grad, lr);
        self.model.load_flat(&params);
        self.step += 1;
        Ok(record)
    }

    /// Trains until `max_steps`, logging every step and checkpointing every
    /// `checkpoint_every` steps and at the end.
    pub fn run(
        &mut self,
        data: &Dataset,
        log: &mut dyn Write,
        checkpoint_dir: Option<&Path>,
        mut on_step: impl FnMut(&LossRecord),
    ) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        while self.step < self.train.max_steps {
            let batch = data.batch(&self.train, self.step)?;
            let record = self.train_step(&batch)?;
            writeln!(log, "{}", record.csv_row())?;
            on_step(&record);
            let every = self.train.checkpoint_every;
            let last = self.step == self.train.max_steps;
            if let Some(dir) = checkpoint_dir {
                if last || (every > 0 && self.step % every == 0) {
                    let path = dir.join(format!("step_{:08}.ckpt", self.step));
                    save_checkpoint(&self.checkpoint(), &path)?;
                    written.push(path);
                }
            }
        }
        log.flush()?;
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(scale: usize) -> Dataset {
        let seq = |phase: f64| {
            let hr: Vec<Frame> = (0..4)
                .map(|t| {
                    Frame::from_fn(16 * scale, 16 * scale, |y, x| {
                        0.5 + 0.3 * ((x as f64 + t as f64 + phase) * 0.4).sin() * (y as f64 * 0.3).cos()
                    })
                })
                .collect();
            let lr = hr
                .iter()
                .map(|f| crate::degradation::degrade_bi(f, scale).unwrap())
                .collect();
            SequencePair { lr, hr }
        };
        Dataset::new(vec![seq(0.0), seq(1.3)], scale, 1).unwrap()
    }

    fn small() -> (NetworkConfig, TrainConfig) {
        (
            NetworkConfig::desk(2).with_channels(8),
            TrainConfig {
                batch_size: 2,
                patch_size: 8,
                max_steps: 100,
                ..TrainConfig::desk()
            },
        )
    }

    #[test]
    fn batches_depend_only_on_seed_and_step() {
        let data = toy_dataset(2);
        let (_, cfg) = small();
        assert_eq!(data.batch(&cfg, 5).unwrap(), data.batch(&cfg, 5).unwrap());
        assert_ne!(data.batch(&cfg, 5).unwrap(), data.batch(&cfg, 6).unwrap());
    }

    #[test]
    fn overfits_one_sample_without_flow_loss() {
        let data = toy_dataset(2);
        let (net, mut cfg) = small();
        cfg.weights.lambda4 = 0.0;
        let batch = data.batch(&cfg, 0).unwrap()[..1].to_vec();
        let mut tr = Trainer::new(net, cfg).unwrap();
        let first = tr.train_step(&batch).unwrap().total;
        let mut last = first;
        for _ in 1..100 {
            last = tr.train_step(&batch).unwrap().total;
        }
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn same_seed_same_trace() {
        let data = toy_dataset(2);
        let (net, cfg) = small();
        let trace = || {
            let mut tr = Trainer::new(net, TrainConfig { max_steps: 3, ..cfg }).unwrap();
            let mut log = Vec::new();
            tr.run(&data, &mut log, None, |_| {}).unwrap();
            (String::from_utf8(log).unwrap(), tr.model)
        };
        let (a, ma) = trace();
        let (b, mb) = trace();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(a.lines().count(), 3);
    }

    #[test]
    fn step_limit() {
        let data = toy_dataset(2);
        let (net, cfg) = small();
        let mut tr = Trainer::new(net, TrainConfig { max_steps: 1, ..cfg }).unwrap();
        let batch = data.batch(&tr.train, 0).unwrap();
        tr.train_step(&batch).unwrap();
        assert!(tr.train_step(&batch).is_err());
    }
}
