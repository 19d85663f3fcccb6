//! EPE, k-pixel error and D1 over valid pixels.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::losses::validity_mask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub epe: f64,
    pub d1: f64,
    pub px3: f64,
    pub px2: f64,
    pub px1: f64,
    pub valid_count: u64,
}

impl MetricsReport {
    pub const HEADER: &'static str = "EPE(px)    D1(%)    3px(%)    2px(%)    1px(%)    valid";

    /// One table row, columns as in [`Self::HEADER`].
    pub fn row(&self) -> String {
        format!(
            "{:>7.2} {:>8.2} {:>9.2} {:>9.2} {:>9.2} {:>8}",
            self.epe, self.d1, self.px3, self.px2, self.px1, self.valid_count
        )
    }

    pub fn to_table(&self) -> String {
        format!("{}\n{}\n", Self::HEADER, self.row())
    }

    pub fn to_records(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epe={:.6}", self.epe);
        let _ = writeln!(s, "d1={:.6}", self.d1);
        let _ = writeln!(s, "px3={:.6}", self.px3);
        let _ = writeln!(s, "px2={:.6}", self.px2);
        let _ = writeln!(s, "px1={:.6}", self.px1);
        let _ = writeln!(s, "valid_count={}", self.valid_count);
        s
    }
}

/// Pixel counts from which every metric follows; merging two accumulators
/// pools their pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsAccumulator {
    pub abs_err_sum: f64,
    pub count: u64,
    pub over1: u64,
    pub over2: u64,
    pub over3: u64,
    pub d1: u64,
}

impl MetricsAccumulator {
    pub fn add_pixel(&mut self, pred: f32, gt: f32) {
        let e = (pred as f64 - gt as f64).abs();
        self.abs_err_sum += e;
        self.count += 1;
        self.over1 += u64::from(e > 1.0);
        self.over2 += u64::from(e > 2.0);
        self.over3 += u64::from(e > 3.0);
        self.d1 += u64::from(is_d1_outlier(e, gt as f64));
    }

    pub fn add(&mut self, pred: &Tensor, gt: &Tensor, mask: &[bool]) -> Result<()> {
        check(pred, gt, mask)?;
        for ((&p, &q), &m) in pred.data().iter().zip(gt.data()).zip(mask) {
            if m {
                self.add_pixel(p, q);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        self.abs_err_sum += other.abs_err_sum;
        self.count += other.count;
        self.over1 += other.over1;
        self.over2 += other.over2;
        self.over3 += other.over3;
        self.d1 += other.d1;
    }

    pub fn report(&self) -> Result<MetricsReport> {
        if self.count == 0 {
            return Err(Error::EmptyMask("metrics over zero valid pixels"));
        }
        let n = self.count as f64;
        let pct = |k: u64| 100.0 * k as f64 / n;
        Ok(MetricsReport {
            epe: self.abs_err_sum / n,
            d1: pct(self.d1),
            px3: pct(self.over3),
            px2: pct(self.over2),
            px1: pct(self.over1),
            valid_count: self.count,
        })
    }
}

/// D1 outlier: error above 3 px and above 5% of the true disparity.
pub fn is_d1_outlier(abs_err: f64, gt: f64) -> bool {
    abs_err > 3.0 && abs_err > 0.05 * gt
}

fn check(pred: &Tensor, gt: &Tensor, mask: &[bool]) -> Result<()> {
    if pred.shape() != gt.shape() || mask.len() != gt.numel() {
        return Err(Error::shape(format!(
            "prediction {:?}, ground truth {:?} and mask of {} must agree",
            pred.shape(),
            gt.shape(),
            mask.len()
        )));
    }
    Ok(())
}

fn accumulate(pred: &Tensor, gt: &Tensor, mask: &[bool]) -> Result<MetricsAccumulator> {
    let mut acc = MetricsAccumulator::default();
    acc.add(pred, gt, mask)?;
    if acc.count == 0 {
        return Err(Error::EmptyMask("metrics over zero valid pixels"));
    }
    Ok(acc)
}

pub fn compute_epe(pred: &Tensor, gt: &Tensor, mask: &[bool]) -> Result<f64> {
    Ok(accumulate(pred, gt, mask)?.report()?.epe)
}

/// Percentage of masked pixels with error strictly greater than `k`.
pub fn compute_kpx(pred: &Tensor, gt: &Tensor, mask: &[bool], k: u32) -> Result<f64> {
    let r = accumulate(pred, gt, mask)?.report()?;
    match k {
        1 => Ok(r.px1),
        2 => Ok(r.px2),
        3 => Ok(r.px3),
        _ => Err(Error::config(format!(
            "k-px threshold must be 1, 2 or 3, got {}",
            k
        ))),
    }
}

pub fn compute_d1(pred: &Tensor, gt: &Tensor, mask: &[bool]) -> Result<f64> {
    Ok(accumulate(pred, gt, mask)?.report()?.d1)
}

/// All metrics over pixels with `0 < gt < max_disparity`.
pub fn metrics_report(pred: &Tensor, gt: &Tensor, max_disparity: f32) -> Result<MetricsReport> {
    let mask = validity_mask(gt, max_disparity);
    accumulate(pred, gt, &mask)?.report()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn examples() {
        let gt = t(&[10.0, 20.0]);
        let m = [true, true];
        assert_eq!(compute_epe(&gt, &gt, &m).unwrap(), 0.0);
        assert_eq!(compute_epe(&t(&[12.0, 22.0]), &gt, &m).unwrap(), 2.0);
        assert_eq!(compute_epe(&t(&[11.0, 23.0]), &gt, &m).unwrap(), 2.0);
        assert_eq!(compute_kpx(&t(&[14.0, 20.0]), &gt, &m, 3).unwrap(), 50.0);
        assert_eq!(
            compute_kpx(&t(&[13.0]), &t(&[10.0]), &[true], 3).unwrap(),
            0.0
        );
        assert_eq!(
            compute_d1(&t(&[104.0]), &t(&[100.0]), &[true]).unwrap(),
            0.0
        );
        assert_eq!(
            compute_d1(&t(&[14.0]), &t(&[10.0]), &[true]).unwrap(),
            100.0
        );
        assert!(matches!(
            compute_epe(&gt, &gt, &[false, false]),
            Err(Error::EmptyMask(_))
        ));
    }

    #[test]
    fn table_has_column_order() {
        let r = metrics_report(&t(&[1.0]), &t(&[1.0]), 192.0).unwrap();
        assert!(r
            .to_table()
            .starts_with("EPE(px)    D1(%)    3px(%)    2px(%)    1px(%)"));
        assert_eq!(
            (r.epe, r.d1, r.px3, r.px2, r.px1),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }
}
