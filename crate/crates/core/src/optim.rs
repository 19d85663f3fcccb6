//! First-order optimizers and the step learning-rate schedule.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    AdamW,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::config(format!(
                "unknown optimizer '{}' (expected adam, adamw, sgd)",
                s
            ))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty for adam and sgd, decoupled decay for adamw.
    pub weight_decay: f64,
    /// Heavy-ball momentum for sgd.
    pub momentum: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            momentum: 0.9,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.beta1) || !unit(self.beta2) || !unit(self.momentum) {
            return Err(Error::config(
                "optimizer betas and momentum must lie in [0, 1)",
            ));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config(
                "optimizer eps must be positive and weight decay non-negative",
            ));
        }
        Ok(())
    }
}

/// Piecewise-constant schedule: multiply by `gamma` at each milestone.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl LrSchedule {
    /// Halve at `2N/3`, `7N/9` and `8N/9`; milestones that coincide on
    /// very short runs are merged.
    pub fn proportional(initial: f64, iterations: usize) -> Self {
        let mut milestones = vec![2 * iterations / 3, 7 * iterations / 9, 8 * iterations / 9];
        milestones.dedup();
        LrSchedule {
            initial,
            milestones,
            gamma: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::config(
                "learning rate and decay factor must be positive",
            ));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "schedule milestones must be strictly increasing, got {:?}",
                self.milestones
            )));
        }
        Ok(())
    }

    /// Rate used for the update at zero-based iteration `iter`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| iter >= m).count();
        self.initial * self.gamma.powi(k as i32)
    }
}

#[derive(Clone, Debug)]
struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub cfg: OptimConfig,
    pub steps: u64,
    slots: Vec<Option<Slot>>,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer {
            cfg,
            steps: 0,
            slots: Vec::new(),
        })
    }

    /// One update of every parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) {
        self.steps += 1;
        if self.slots.len() < store.num_params() {
            self.slots.resize(store.num_params(), None);
        }
        let c = &self.cfg;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (id, g) in grads {
            let p = store.param_mut(*id);
            let n = p.numel();
            let slot = self.slots[id.0].get_or_insert_with(|| Slot {
                m: vec![0.0; n],
                v: if c.kind == OptimizerKind::Sgd {
                    Vec::new()
                } else {
                    vec![0.0; n]
                },
            });
            let pd = p.data_mut();
            match c.kind {
                OptimizerKind::Sgd => {
                    for i in 0..n {
                        let gi = g.data()[i] as f64 + c.weight_decay * pd[i] as f64;
                        let m = c.momentum * slot.m[i] as f64 + gi;
                        slot.m[i] = m as f32;
                        pd[i] -= (lr * m) as f32;
                    }
                }
                OptimizerKind::Adam | OptimizerKind::AdamW => {
                    let decoupled = c.kind == OptimizerKind::AdamW;
                    for i in 0..n {
                        let mut gi = g.data()[i] as f64;
                        if decoupled {
                            pd[i] -= (lr * c.weight_decay * pd[i] as f64) as f32;
                        } else {
                            gi += c.weight_decay * pd[i] as f64;
                        }
                        let m = c.beta1 * slot.m[i] as f64 + (1.0 - c.beta1) * gi;
                        let v = c.beta2 * slot.v[i] as f64 + (1.0 - c.beta2) * gi * gi;
                        slot.m[i] = m as f32;
                        slot.v[i] = v as f32;
                        let upd = lr * (m / bc1) / ((v / bc2).sqrt() + c.eps);
                        pd[i] -= upd as f32;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_after_first_step() {
        let s = LrSchedule::proportional(1e-3, 900);
        assert_eq!(s.milestones, vec![600, 700, 800]);
        assert_eq!(s.lr_at(599), 1e-3);
        assert_eq!(s.lr_at(600), 0.5e-3);
        assert_eq!(s.lr_at(899), 0.125e-3);
        let bad = LrSchedule {
            milestones: vec![5, 5],
            ..s
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add_param("w".into(), Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap());
        let mut opt = Optimizer::new(OptimConfig::default()).unwrap();
        let g = Tensor::from_vec(&[2], vec![3.0, -0.2]).unwrap();
        opt.step(&mut store, &[(id, g)], 0.1);
        let p = store.param(id).data();
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn sgd_descends_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add_param("w".into(), Tensor::scalar(4.0));
        let mut opt = Optimizer::new(OptimConfig {
            kind: OptimizerKind::Sgd,
            momentum: 0.0,
            ..Default::default()
        })
        .unwrap();
        for _ in 0..50 {
            let w = store.param(id).data()[0];
            opt.step(&mut store, &[(id, Tensor::scalar(2.0 * w))], 0.1);
        }
        assert!(store.param(id).data()[0].abs() < 1e-3);
    }
}
