//! Padded eval-mode inference and pooled metrics over a dataset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::preprocess::unpad;
use crate::data::{preprocess, Dataset, StereoSample};
use crate::error::Result;
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::model::LeanStereo;
use crate::tensor::Tensor;

/// Eval-mode disparity `[H, W]` at the sample's original size.
pub fn predict_sample(model: &LeanStereo, s: &StereoSample) -> Result<Tensor> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = preprocess(s, s.hw(), false, &mut rng)?;
    let pred = model.predict(&p.left, &p.right)?;
    let (ph, pw) = p.padding.padded_hw();
    unpad(&pred.reshape(&[ph, pw])?, &p.padding)
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    /// Pixels of all samples pooled.
    pub pooled: MetricsReport,
    /// Per-sample reports; `None` where a sample has no valid pixel.
    pub per_sample: Vec<Option<MetricsReport>>,
}

/// Run `predictor` on every sample and pool the metrics pixel-wise.
pub fn evaluate_with(
    ds: &Dataset,
    mut predictor: impl FnMut(&StereoSample) -> Result<Tensor>,
) -> Result<EvalOutcome> {
    let mut pooled = MetricsAccumulator::default();
    let mut per_sample = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let s = ds.load(i)?;
        let pred = predictor(&s)?;
        let mut acc = MetricsAccumulator::default();
        acc.add(&pred, &s.gt, &s.valid)?;
        per_sample.push(acc.report().ok());
        pooled.merge(&acc);
        log::debug!("sample {}: {:?}", i, per_sample.last());
    }
    Ok(EvalOutcome {
        pooled: pooled.report()?,
        per_sample,
    })
}

pub fn evaluate(model: &LeanStereo, ds: &Dataset) -> Result<EvalOutcome> {
    evaluate_with(ds, |s| predict_sample(model, s))
}
