//! The training loop.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{collate, preprocess, Dataset, Prepared};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::head::{HeadResult, Mode};
use crate::losses::{multi_output_loss, LossConfig};
use crate::model::LeanStereo;
use crate::nn::BufferId;
use crate::optim::{LrSchedule, OptimConfig, Optimizer};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Explicit decay iterations; `None` uses `2N/3, 7N/9, 8N/9`.
    pub lr_milestones: Option<Vec<usize>>,
    pub lr_gamma: f64,
    /// Training crop (H, W); multiples of 32.
    pub crop: (usize, usize),
    /// Validate every this many iterations (0 disables).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 900_000,
            batch_size: 4,
            lr: 1e-3,
            lr_milestones: Some(vec![600_000, 700_000, 800_000]),
            lr_gamma: 0.5,
            crop: (256, 512),
            val_every: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        match &self.lr_milestones {
            Some(m) => LrSchedule {
                initial: self.lr,
                milestones: m.clone(),
                gamma: self.lr_gamma,
            },
            None => LrSchedule {
                gamma: self.lr_gamma,
                ..LrSchedule::proportional(self.lr, self.iterations)
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "train.iterations and train.batch_size must be positive",
            ));
        }
        let (h, w) = self.crop;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::config(format!(
                "train.crop {}x{} must be a positive multiple of 32",
                h, w
            )));
        }
        self.schedule().validate()
    }
}

/// Model plus optimizer state.
pub struct Trainer {
    pub model: LeanStereo,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
    pub loss: LossConfig,
    pub iteration: usize,
}

impl Trainer {
    pub fn new(
        model: LeanStereo,
        optim: OptimConfig,
        schedule: LrSchedule,
        loss: LossConfig,
    ) -> Result<Self> {
        schedule.validate()?;
        loss.validate()?;
        Ok(Trainer {
            model,
            optimizer: Optimizer::new(optim)?,
            schedule,
            loss,
            iteration: 0,
        })
    }

    /// Forward, backward and one optimizer update; returns the loss.
    pub fn step(&mut self, batch: &Prepared) -> Result<f64> {
        let mut g = Graph::training();
        let l = g.input(batch.left.data().clone());
        let r = g.input(batch.right.data().clone());
        let outs = match self.model.forward(&mut g, l, r, Mode::Train, true)? {
            HeadResult::Train(o) => o,
            HeadResult::Eval(_) => unreachable!("train mode yields three outputs"),
        };
        let loss = multi_output_loss(&mut g, &outs, &batch.gt, &batch.valid, &self.loss)?;
        let value = g.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::contract(format!(
                "non-finite loss at iteration {}",
                self.iteration
            )));
        }
        let grads = g.backward(loss).param_grads();
        let lr = self.schedule.lr_at(self.iteration);
        self.optimizer.step(&mut self.model.store, &grads, lr);
        self.model.store.apply_norm_updates(g.norm_updates());
        self.iteration += 1;
        Ok(value)
    }
}

/// Shuffled epochs of random crops, reproducible from one seed.
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    crop: (usize, usize),
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(len: usize, crop: (usize, usize), batch_size: usize, seed: u64) -> Self {
        BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
            cursor: len,
            crop,
            batch_size,
        }
    }

    pub fn next_batch(&mut self, ds: &Dataset) -> Result<Prepared> {
        let mut items = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            if self.cursor >= self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let s = ds.load(self.order[self.cursor])?;
            self.cursor += 1;
            items.push(preprocess(&s, self.crop, true, &mut self.rng)?);
        }
        collate(&items)
    }
}

/// Replace every running normalization statistic by population estimates
/// over `ds` at the current weights: the mean of the per-sample means, and
/// the mean within-sample variance plus the variance of the sample means.
pub fn recalibrate_batch_norm(model: &mut LeanStereo, ds: &Dataset) -> Result<()> {
    struct Acc {
        mean: BufferId,
        var: BufferId,
        m: Vec<f64>,
        m2: Vec<f64>,
        v: Vec<f64>,
        n: usize,
    }
    let mut accs: HashMap<BufferId, Acc> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for i in 0..ds.len() {
        let s = ds.load(i)?;
        let p = preprocess(&s, s.hw(), false, &mut rng)?;
        let mut g = Graph::new(false);
        let l = g.input(p.left.into_data());
        let r = g.input(p.right.into_data());
        model.forward(&mut g, l, r, Mode::Eval, true)?;
        for u in g.norm_updates() {
            let c = u.mean.len();
            let a = accs.entry(u.running_mean).or_insert_with(|| Acc {
                mean: u.running_mean,
                var: u.running_var,
                m: vec![0.0; c],
                m2: vec![0.0; c],
                v: vec![0.0; c],
                n: 0,
            });
            for k in 0..c {
                let mk = u.mean[k] as f64;
                a.m[k] += mk;
                a.m2[k] += mk * mk;
                a.v[k] += u.unbiased_var[k] as f64;
            }
            a.n += 1;
        }
    }
    for a in accs.into_values() {
        let n = a.n as f64;
        let mean: Vec<f32> = a.m.iter().map(|&s| (s / n) as f32).collect();
        let var: Vec<f32> = (0..a.m.len())
            .map(|k| {
                let mu = a.m[k] / n;
                (a.v[k] / n + (a.m2[k] / n - mu * mu).max(0.0)) as f32
            })
            .collect();
        model
            .store
            .buffer_mut(a.mean)
            .data_mut()
            .copy_from_slice(&mean);
        model
            .store
            .buffer_mut(a.var)
            .data_mut()
            .copy_from_slice(&var);
    }
    Ok(())
}
