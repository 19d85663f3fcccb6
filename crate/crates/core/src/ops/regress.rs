//! Fused upsample + disparity softmax + expectation.
//!
//! A `[N, 1, Dv, h, w]` logit volume is linearly upsampled to `[D, H, W]`,
//! normalized by a softmax over the disparity axis, and reduced to the
//! expected disparity `sum_d d * p_d`. The full-resolution probability volume
//! is never stored; the backward pass recomputes it plane by plane.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::resize::{interp_axis, interp_axis_adjoint, linear_taps};
use crate::tensor::Tensor;

fn check_logits(t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, 1, dv, h, w] => Ok([n, dv, h, w]),
        _ => Err(Error::shape(format!(
            "regression expects [N,1,D,H,W] logits, got {:?}",
            t.shape()
        ))),
    }
}

/// Upsample the spatial axes of one sample: `[Dv, h, w] -> [Dv, H, W]`.
fn spatial_up(src: &[f32], dv: usize, h: usize, w: usize, hh: usize, ww: usize) -> Vec<f32> {
    let a = if h == hh {
        src.to_vec()
    } else {
        interp_axis(src, dv, h, w, &linear_taps(h, hh))
    };
    if w == ww {
        a
    } else {
        interp_axis(&a, dv * hh, w, 1, &linear_taps(w, ww))
    }
}

fn spatial_up_adjoint(
    grad: &[f32],
    dv: usize,
    h: usize,
    w: usize,
    hh: usize,
    ww: usize,
) -> Vec<f32> {
    let a = if w == ww {
        grad.to_vec()
    } else {
        interp_axis_adjoint(grad, dv * hh, w, 1, &linear_taps(w, ww))
    };
    if h == hh {
        a
    } else {
        interp_axis_adjoint(&a, dv, h, w, &linear_taps(h, hh))
    }
}

/// Per-pixel softmax pieces over `d` planes: running max, normalizer and
/// (when `want_mean`) the expectation numerator.
struct SoftmaxPlanes {
    max: Vec<f32>,
    z: Vec<f32>,
    mean: Vec<f32>,
}

fn softmax_planes(s: &[f32], plane: usize, taps: &[(usize, usize, f32, f32)]) -> SoftmaxPlanes {
    let dv = s.len() / plane;
    let mut max = vec![f32::NEG_INFINITY; plane];
    for k in 0..dv {
        for (m, &v) in max.iter_mut().zip(&s[k * plane..][..plane]) {
            *m = m.max(v);
        }
    }
    let mut z = vec![0.0f32; plane];
    let mut num = vec![0.0f32; plane];
    for (j, &(i0, i1, w0, w1)) in taps.iter().enumerate() {
        let (a, b) = (&s[i0 * plane..][..plane], &s[i1 * plane..][..plane]);
        let jf = j as f32;
        for p in 0..plane {
            let e = (w0 * a[p] + w1 * b[p] - max[p]).exp();
            z[p] += e;
            num[p] += jf * e;
        }
    }
    let mean = num.iter().zip(&z).map(|(n, z)| n / z).collect();
    SoftmaxPlanes { max, z, mean }
}

/// Disparity probabilities `[N, D, H, W]` (materialized; for inspection and tests).
pub fn disparity_probabilities(
    logits: &Tensor,
    out_hw: (usize, usize),
    max_disparity: usize,
) -> Result<Tensor> {
    let [n, dv, h, w] = check_logits(logits)?;
    let (hh, ww) = out_hw;
    let plane = hh * ww;
    let taps = linear_taps(dv, max_disparity);
    let mut out = Tensor::zeros(&[n, max_disparity, hh, ww]);
    for ni in 0..n {
        let s = spatial_up(
            &logits.data()[ni * dv * h * w..][..dv * h * w],
            dv,
            h,
            w,
            hh,
            ww,
        );
        let sm = softmax_planes(&s, plane, &taps);
        for (j, &(i0, i1, w0, w1)) in taps.iter().enumerate() {
            let o = &mut out.data_mut()[(ni * max_disparity + j) * plane..][..plane];
            for p in 0..plane {
                let l = w0 * s[i0 * plane + p] + w1 * s[i1 * plane + p];
                o[p] = (l - sm.max[p]).exp() / sm.z[p];
            }
        }
    }
    Ok(out)
}

/// Expected disparity from explicit probabilities `[N, D, H, W]` -> `[N, H, W]`.
pub fn soft_argmax(probs: &Tensor) -> Result<Tensor> {
    let [n, d, h, w] = match *probs.shape() {
        [n, d, h, w] => [n, d, h, w],
        _ => return Err(Error::shape("soft_argmax expects [N,D,H,W]")),
    };
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, h, w]);
    for ni in 0..n {
        for j in 0..d {
            let pj = &probs.data()[(ni * d + j) * plane..][..plane];
            for (o, &p) in out.data_mut()[ni * plane..][..plane].iter_mut().zip(pj) {
                *o += j as f32 * p;
            }
        }
    }
    Ok(out)
}

pub fn regress_apply(
    logits: &Tensor,
    out_hw: (usize, usize),
    max_disparity: usize,
) -> Result<Tensor> {
    let [n, dv, h, w] = check_logits(logits)?;
    let (hh, ww) = out_hw;
    let taps = linear_taps(dv, max_disparity);
    let mut out = Tensor::zeros(&[n, hh, ww]);
    for ni in 0..n {
        let s = spatial_up(
            &logits.data()[ni * dv * h * w..][..dv * h * w],
            dv,
            h,
            w,
            hh,
            ww,
        );
        let sm = softmax_planes(&s, hh * ww, &taps);
        out.data_mut()[ni * hh * ww..][..hh * ww].copy_from_slice(&sm.mean);
    }
    Ok(out)
}

/// Differentiable regression: `[N, 1, Dv, h, w]` logits -> `[N, H, W]` disparities.
pub fn regress(
    g: &mut Graph,
    logits: Var,
    out_hw: (usize, usize),
    max_disparity: usize,
) -> Result<Var> {
    if max_disparity == 0 {
        return Err(Error::config("max_disparity must be positive"));
    }
    let y = regress_apply(g.value(logits), out_hw, max_disparity)?;
    g.stats_mut().regress_calls += 1;
    Ok(g.push(y, &[logits], move |ctx| {
        let lv = ctx.value(logits);
        let [n, dv, h, w] = check_logits(lv).expect("checked in forward");
        let (hh, ww) = out_hw;
        let plane = hh * ww;
        let taps = linear_taps(dv, max_disparity);
        let mut dlogits = Tensor::zeros(lv.shape());
        for ni in 0..n {
            let s = spatial_up(
                &lv.data()[ni * dv * h * w..][..dv * h * w],
                dv,
                h,
                w,
                hh,
                ww,
            );
            let sm = softmax_planes(&s, plane, &taps);
            let gy = &ctx.grad.data()[ni * plane..][..plane];
            let mut ds = vec![0.0f32; s.len()];
            for (j, &(i0, i1, w0, w1)) in taps.iter().enumerate() {
                let jf = j as f32;
                for p in 0..plane {
                    let l = w0 * s[i0 * plane + p] + w1 * s[i1 * plane + p];
                    let prob = (l - sm.max[p]).exp() / sm.z[p];
                    let dl = gy[p] * prob * (jf - sm.mean[p]);
                    ds[i0 * plane + p] += w0 * dl;
                    ds[i1 * plane + p] += w1 * dl;
                }
            }
            let dsrc = spatial_up_adjoint(&ds, dv, h, w, hh, ww);
            dlogits.data_mut()[ni * dv * h * w..][..dv * h * w].copy_from_slice(&dsrc);
        }
        vec![Some(dlogits)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::testing::{gradcheck, rand_tensor};

    #[test]
    fn fused_matches_materialized_path() {
        let logits = rand_tensor(&[2, 1, 3, 2, 4], 1).map(|v| 3.0 * v);
        let fused = regress_apply(&logits, (8, 16), 12).unwrap();
        let probs = disparity_probabilities(&logits, (8, 16), 12).unwrap();
        let explicit = soft_argmax(&probs).unwrap();
        assert!(fused.max_abs_diff(&explicit) < 1e-5);
    }

    #[test]
    fn regress_gradient() {
        gradcheck(&[rand_tensor(&[1, 1, 3, 2, 3], 2)], |g, v| {
            regress(g, v[0], (4, 6), 6).unwrap()
        });
    }
}
