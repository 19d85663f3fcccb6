//! Masked disparity losses and multi-output supervision.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::head::HeadOutputs;
use crate::ops;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    LogL1,
    SmoothL1,
    L1,
    L2,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logl1" => Ok(LossKind::LogL1),
            "smooth_l1" => Ok(LossKind::SmoothL1),
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            other => Err(Error::config(format!(
                "unknown loss kind '{}' (expected logl1, smooth_l1, l1, l2)",
                other
            ))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::LogL1 => "logl1",
            LossKind::SmoothL1 => "smooth_l1",
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub epsilon: f64,
    /// Weights for Out0, Out1, Out2.
    pub output_weights: [f64; 3],
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::LogL1,
            epsilon: 1.0,
            output_weights: [0.5, 0.7, 1.0],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config("loss.epsilon must be positive"));
        }
        if self.output_weights.iter().any(|&w| !(w >= 0.0))
            || self.output_weights.iter().all(|&w| w == 0.0)
        {
            return Err(Error::config(
                "loss.output_weights must be non-negative and not all zero",
            ));
        }
        Ok(())
    }
}

/// Per-pixel loss of the signed error `e = pred - gt`.
pub fn pointwise(kind: LossKind, e: f64, epsilon: f64) -> f64 {
    match kind {
        LossKind::LogL1 => (e.abs() + epsilon).ln(),
        LossKind::L1 => e.abs(),
        LossKind::L2 => e * e,
        LossKind::SmoothL1 => {
            if e.abs() < 1.0 {
                0.5 * e * e
            } else {
                e.abs() - 0.5
            }
        }
    }
}

/// Derivative of [`pointwise`] with respect to the prediction. The
/// subgradient at `e = 0` is 0 for the non-smooth kinds.
pub fn pointwise_grad(kind: LossKind, e: f64, epsilon: f64) -> f64 {
    let sign = if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    };
    match kind {
        LossKind::LogL1 => sign / (e.abs() + epsilon),
        LossKind::L1 => sign,
        LossKind::L2 => 2.0 * e,
        LossKind::SmoothL1 => {
            if e.abs() < 1.0 {
                e
            } else {
                sign
            }
        }
    }
}

/// True where `0 < gt < max_disparity`.
pub fn validity_mask(gt: &Tensor, max_disparity: f32) -> Vec<bool> {
    gt.data()
        .iter()
        .map(|&d| d > 0.0 && d < max_disparity)
        .collect()
}

fn check_inputs(pred: &Tensor, gt: &Tensor, mask: &[bool]) -> Result<usize> {
    if pred.shape() != gt.shape() || mask.len() != gt.numel() {
        return Err(Error::shape(format!(
            "prediction {:?}, ground truth {:?} and mask of {} must agree",
            pred.shape(),
            gt.shape(),
            mask.len()
        )));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::EmptyMask("loss over zero valid pixels"));
    }
    Ok(n)
}

/// Mean pointwise loss over masked pixels.
pub fn masked_loss_value(
    pred: &Tensor,
    gt: &Tensor,
    mask: &[bool],
    kind: LossKind,
    epsilon: f64,
) -> Result<f64> {
    let n = check_inputs(pred, gt, mask)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &q), _)| pointwise(kind, p as f64 - q as f64, epsilon))
        .sum();
    Ok(s / n as f64)
}

/// Differentiable masked mean loss; `gt` and `mask` are constants.
pub fn masked_loss(
    g: &mut Graph,
    pred: Var,
    gt: &Tensor,
    mask: &[bool],
    kind: LossKind,
    epsilon: f64,
) -> Result<Var> {
    let value = masked_loss_value(g.value(pred), gt, mask, kind, epsilon)?;
    let n = mask.iter().filter(|&&m| m).count() as f64;
    let gt = gt.clone();
    let mask = mask.to_vec();
    Ok(g.push(Tensor::scalar(value as f32), &[pred], move |ctx| {
        let scale = ctx.grad.data()[0] as f64 / n;
        let p = ctx.value(pred);
        let data = p
            .data()
            .iter()
            .zip(gt.data())
            .zip(&mask)
            .map(|((&a, &b), &m)| {
                if m {
                    (scale * pointwise_grad(kind, a as f64 - b as f64, epsilon)) as f32
                } else {
                    0.0
                }
            })
            .collect();
        vec![Some(Tensor::from_vec(p.shape(), data).expect("loss grad"))]
    }))
}

/// `sum_k w_k * loss(out_k)`.
pub fn multi_output_loss(
    g: &mut Graph,
    outs: &HeadOutputs,
    gt: &Tensor,
    mask: &[bool],
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let mut total: Option<Var> = None;
    for (&o, &w) in outs.as_array().iter().zip(&cfg.output_weights) {
        let l = masked_loss(g, o, gt, mask, cfg.kind, cfg.epsilon)?;
        let l = ops::scale(g, l, w as f32);
        total = Some(match total {
            Some(t) => ops::add(g, t, l),
            None => l,
        });
    }
    Ok(total.expect("three outputs"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn logl1_examples() {
        let gt = t(&[5.0, 7.0]);
        let all = [true, true];
        assert_eq!(
            masked_loss_value(&gt, &gt, &all, LossKind::LogL1, 1.0).unwrap(),
            0.0
        );
        let e = std::f64::consts::E - 1.0;
        let one = masked_loss_value(
            &t(&[5.0 + e as f32]),
            &t(&[5.0]),
            &[true],
            LossKind::LogL1,
            1.0,
        )
        .unwrap();
        assert!((one - 1.0).abs() < 1e-6);
        let two = masked_loss_value(&t(&[7.0, 7.0]), &gt, &all, LossKind::LogL1, 1.0).unwrap();
        assert!((two - 3f64.ln() / 2.0).abs() < 1e-7);
    }

    #[test]
    fn baseline_examples() {
        for (e, sl1, l1, l2) in [(0.0, 0.0, 0.0, 0.0), (0.5, 0.125, 0.5, 0.25)] {
            assert_eq!(pointwise(LossKind::SmoothL1, e, 1.0), sl1);
            assert_eq!(pointwise(LossKind::L1, e, 1.0), l1);
            assert_eq!(pointwise(LossKind::L2, e, 1.0), l2);
        }
        assert_eq!(pointwise(LossKind::SmoothL1, 2.0, 1.0), 1.5);
        assert!("huber".parse::<LossKind>().is_err());
    }

    #[test]
    fn mask_rule() {
        let m = validity_mask(&t(&[0.0, 95.5, 192.0, 191.9]), 192.0);
        assert_eq!(m, vec![false, true, false, true]);
        let r = masked_loss_value(&t(&[1.0]), &t(&[0.0]), &[false], LossKind::L1, 1.0);
        assert!(matches!(r, Err(Error::EmptyMask(_))));
    }
}
