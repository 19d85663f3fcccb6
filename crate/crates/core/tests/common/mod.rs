//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use leanstereo::Tensor;

/// `[N, 2C, D, H, W]` concatenation volume by explicit loops, integer shifts.
pub fn concat_volume_loop(l: &Tensor, r: &Tensor, bins: usize) -> Tensor {
    let [n, c, h, w] = [l.dim(0), l.dim(1), l.dim(2), l.dim(3)];
    let mut out = Tensor::zeros(&[n, 2 * c, bins, h, w]);
    for ni in 0..n {
        for d in 0..bins {
            for y in 0..h {
                for x in d..w {
                    for ch in 0..c {
                        out.set(&[ni, ch, d, y, x], l.at(&[ni, ch, y, x]));
                        out.set(&[ni, c + ch, d, y, x], r.at(&[ni, ch, y, x - d]));
                    }
                }
            }
        }
    }
    out
}

/// `[N, G, D, H, W]` group-wise mean correlation by explicit loops.
pub fn gwc_volume_loop(l: &Tensor, r: &Tensor, groups: usize, bins: usize) -> Tensor {
    let [n, c, h, w] = [l.dim(0), l.dim(1), l.dim(2), l.dim(3)];
    let cg = c / groups;
    let mut out = Tensor::zeros(&[n, groups, bins, h, w]);
    for ni in 0..n {
        for g in 0..groups {
            for d in 0..bins {
                for y in 0..h {
                    for x in d..w {
                        let mut s = 0.0f64;
                        for k in 0..cg {
                            let ch = g * cg + k;
                            s += l.at(&[ni, ch, y, x]) as f64 * r.at(&[ni, ch, y, x - d]) as f64;
                        }
                        out.set(&[ni, g, d, y, x], (s / cg as f64) as f32);
                    }
                }
            }
        }
    }
    out
}

/// Naive per-pixel metrics: `(epe, d1, px3, px2, px1, count)` in percent.
pub fn metrics_loop(pred: &[f32], gt: &[f32], max_disp: f32) -> Option<[f64; 6]> {
    let (mut sum, mut n, mut d1, mut p3, mut p2, mut p1) = (0.0f64, 0u64, 0u64, 0u64, 0u64, 0u64);
    for (&p, &g) in pred.iter().zip(gt) {
        if !(g > 0.0 && g < max_disp) {
            continue;
        }
        let e = (p as f64 - g as f64).abs();
        sum += e;
        n += 1;
        if e > 3.0 && e > 0.05 * g as f64 {
            d1 += 1;
        }
        if e > 3.0 {
            p3 += 1;
        }
        if e > 2.0 {
            p2 += 1;
        }
        if e > 1.0 {
            p1 += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let pct = |k: u64| 100.0 * k as f64 / n as f64;
    Some([sum / n as f64, pct(d1), pct(p3), pct(p2), pct(p1), n as f64])
}
