//! Disparity-indexed matching volumes.
//!
//! Bin `d` compares left column `x` with right column `x - d * bin_shift`.
//! Integer shifts copy exactly; fractional shifts interpolate linearly
//! between neighbouring right columns. Entries whose match position falls
//! left of column 0 are zero.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Right-image sampling for one `(bin, column)` pair.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f32,
    w1: f32,
}

/// `taps[d * w + x]`, `None` where `x - shift < 0`.
fn shift_taps(bins: usize, w: usize, bin_shift: f32) -> Vec<Option<Tap>> {
    let mut out = Vec::with_capacity(bins * w);
    for d in 0..bins {
        let s = d as f64 * bin_shift as f64;
        for x in 0..w {
            let p = x as f64 - s;
            if p < -1e-9 {
                out.push(None);
                continue;
            }
            let p = p.max(0.0);
            let i0 = p.floor() as usize;
            let frac = (p - i0 as f64) as f32;
            let i1 = (i0 + 1).min(w - 1);
            out.push(Some(Tap {
                i0,
                i1,
                w0: 1.0 - frac,
                w1: frac,
            }));
        }
    }
    out
}

fn check_pair(l: &Tensor, r: &Tensor) -> Result<[usize; 4]> {
    if l.shape() != r.shape() {
        return Err(Error::shape(format!(
            "left features {:?} vs right features {:?}",
            l.shape(),
            r.shape()
        )));
    }
    match *l.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::shape(format!(
            "features must be [N,C,H,W], got {:?}",
            l.shape()
        ))),
    }
}

#[inline]
fn sample(row: &[f32], t: Tap) -> f32 {
    t.w0 * row[t.i0] + t.w1 * row[t.i1]
}

/// `[N, 2C, bins, H, W]`: left features in the first `C` channels, shifted
/// right features in the rest.
pub fn concat_volume_apply(l: &Tensor, r: &Tensor, bins: usize, bin_shift: f32) -> Result<Tensor> {
    let [n, c, h, w] = check_pair(l, r)?;
    let taps = shift_taps(bins, w, bin_shift);
    let mut out = Tensor::zeros(&[n, 2 * c, bins, h, w]);
    let od = out.data_mut();
    let plane = h * w;
    for ni in 0..n {
        for ci in 0..c {
            let lp = &l.data()[(ni * c + ci) * plane..][..plane];
            let rp = &r.data()[(ni * c + ci) * plane..][..plane];
            for d in 0..bins {
                let lo = ((ni * 2 * c + ci) * bins + d) * plane;
                let ro = ((ni * 2 * c + c + ci) * bins + d) * plane;
                for y in 0..h {
                    for x in 0..w {
                        if let Some(t) = taps[d * w + x] {
                            od[lo + y * w + x] = lp[y * w + x];
                            od[ro + y * w + x] = sample(&rp[y * w..][..w], t);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn concat_volume(g: &mut Graph, l: Var, r: Var, bins: usize, bin_shift: f32) -> Result<Var> {
    let y = concat_volume_apply(g.value(l), g.value(r), bins, bin_shift)?;
    let [n, c, h, w] = check_pair(g.value(l), g.value(r))?;
    Ok(g.push(y, &[l, r], move |ctx| {
        let taps = shift_taps(bins, w, bin_shift);
        let gd = ctx.grad.data();
        let plane = h * w;
        let mut dl = Tensor::zeros(&[n, c, h, w]);
        let mut dr = Tensor::zeros(&[n, c, h, w]);
        for ni in 0..n {
            for ci in 0..c {
                let dlp = &mut dl.data_mut()[(ni * c + ci) * plane..][..plane];
                let drp = &mut dr.data_mut()[(ni * c + ci) * plane..][..plane];
                for d in 0..bins {
                    let lo = ((ni * 2 * c + ci) * bins + d) * plane;
                    let ro = ((ni * 2 * c + c + ci) * bins + d) * plane;
                    for y in 0..h {
                        for x in 0..w {
                            if let Some(t) = taps[d * w + x] {
                                dlp[y * w + x] += gd[lo + y * w + x];
                                let gv = gd[ro + y * w + x];
                                drp[y * w + t.i0] += t.w0 * gv;
                                drp[y * w + t.i1] += t.w1 * gv;
                            }
                        }
                    }
                }
            }
        }
        vec![Some(dl), Some(dr)]
    }))
}

/// `[N, groups, bins, H, W]` group-wise mean correlation.
pub fn gwc_volume_apply(
    l: &Tensor,
    r: &Tensor,
    groups: usize,
    bins: usize,
    bin_shift: f32,
) -> Result<Tensor> {
    let [n, c, h, w] = check_pair(l, r)?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::config(format!(
            "num_groups {} must divide feature channels {}",
            groups, c
        )));
    }
    let cg = c / groups;
    let inv = 1.0 / cg as f32;
    let taps = shift_taps(bins, w, bin_shift);
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, groups, bins, h, w]);
    let od = out.data_mut();
    for ni in 0..n {
        for gi in 0..groups {
            for d in 0..bins {
                let o = ((ni * groups + gi) * bins + d) * plane;
                for k in 0..cg {
                    let ch = ni * c + gi * cg + k;
                    let lp = &l.data()[ch * plane..][..plane];
                    let rp = &r.data()[ch * plane..][..plane];
                    for y in 0..h {
                        let rrow = &rp[y * w..][..w];
                        for x in 0..w {
                            if let Some(t) = taps[d * w + x] {
                                od[o + y * w + x] += lp[y * w + x] * sample(rrow, t);
                            }
                        }
                    }
                }
                for v in &mut od[o..o + plane] {
                    *v *= inv;
                }
            }
        }
    }
    Ok(out)
}

pub fn gwc_volume(
    g: &mut Graph,
    l: Var,
    r: Var,
    groups: usize,
    bins: usize,
    bin_shift: f32,
) -> Result<Var> {
    let y = gwc_volume_apply(g.value(l), g.value(r), groups, bins, bin_shift)?;
    let [n, c, h, w] = check_pair(g.value(l), g.value(r))?;
    Ok(g.push(y, &[l, r], move |ctx| {
        let cg = c / groups;
        let inv = 1.0 / cg as f32;
        let taps = shift_taps(bins, w, bin_shift);
        let plane = h * w;
        let gd = ctx.grad.data();
        let (lv, rv) = (ctx.value(l).data(), ctx.value(r).data());
        let mut dl = Tensor::zeros(&[n, c, h, w]);
        let mut dr = Tensor::zeros(&[n, c, h, w]);
        for ni in 0..n {
            for gi in 0..groups {
                for d in 0..bins {
                    let o = ((ni * groups + gi) * bins + d) * plane;
                    for k in 0..cg {
                        let ch = ni * c + gi * cg + k;
                        let lp = &lv[ch * plane..][..plane];
                        let rp = &rv[ch * plane..][..plane];
                        for y in 0..h {
                            for x in 0..w {
                                let Some(t) = taps[d * w + x] else { continue };
                                let gv = gd[o + y * w + x] * inv;
                                dl.data_mut()[ch * plane + y * w + x] +=
                                    gv * sample(&rp[y * w..][..w], t);
                                let lx = gv * lp[y * w + x];
                                let drp = &mut dr.data_mut()[ch * plane + y * w..][..w];
                                drp[t.i0] += t.w0 * lx;
                                drp[t.i1] += t.w1 * lx;
                            }
                        }
                    }
                }
            }
        }
        vec![Some(dl), Some(dr)]
    }))
}
