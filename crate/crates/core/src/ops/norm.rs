//! Batch normalization over `[N, C, ...]` tensors.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Per-channel batch statistics from a training-mode forward.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    /// Unbiased variance (biased when only one value per channel).
    pub unbiased_var: Vec<f32>,
}

fn channel_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, c, sp) = (x.dim(0), x.dim(1), x.spatial_len());
    let m = (n * sp) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ci in 0..c {
        let mut s = 0.0f64;
        for ni in 0..n {
            s += x.data()[(ni * c + ci) * sp..][..sp]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
        let mu = s / m;
        let mut q = 0.0f64;
        for ni in 0..n {
            q += x.data()[(ni * c + ci) * sp..][..sp]
                .iter()
                .map(|&v| (v as f64 - mu).powi(2))
                .sum::<f64>();
        }
        mean[ci] = mu;
        var[ci] = q / m;
    }
    (mean, var)
}

/// Normalize with batch statistics. Returns the output and the statistics to
/// fold into running estimates.
pub fn batch_norm_train(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: f32,
) -> (Var, BatchStats) {
    let xv = g.value(x);
    let (n, c, sp) = (xv.dim(0), xv.dim(1), xv.spatial_len());
    let m = n * sp;
    let (mean, var) = channel_moments(xv);
    let inv_std: Vec<f32> = var
        .iter()
        .map(|&v| (1.0 / (v + eps as f64).sqrt()) as f32)
        .collect();
    let mean32: Vec<f32> = mean.iter().map(|&v| v as f32).collect();
    let gam = g.value(gamma).data().to_vec();
    let bet = g.value(beta).data().to_vec();
    let mut y = xv.clone();
    for ni in 0..n {
        for ci in 0..c {
            let (mu, is, ga, be) = (mean32[ci], inv_std[ci], gam[ci], bet[ci]);
            for v in &mut y.data_mut()[(ni * c + ci) * sp..][..sp] {
                *v = (*v - mu) * is * ga + be;
            }
        }
    }
    let stats = BatchStats {
        mean: mean32.clone(),
        unbiased_var: var
            .iter()
            .map(|&v| {
                if m > 1 {
                    (v * m as f64 / (m - 1) as f64) as f32
                } else {
                    v as f32
                }
            })
            .collect(),
    };
    let out = g.push(y, &[x, gamma, beta], move |ctx| {
        let xd = ctx.value(x).data();
        let gam = ctx.value(gamma).data();
        let gd = ctx.grad.data();
        let mut dgamma = vec![0.0f32; c];
        let mut dbeta = vec![0.0f32; c];
        let mut dx = ctx.needs(0).then(|| Tensor::zeros(ctx.value(x).shape()));
        for ci in 0..c {
            let (mu, is) = (mean32[ci], inv_std[ci]);
            let (mut sdy, mut sdyx) = (0.0f64, 0.0f64);
            for ni in 0..n {
                let o = (ni * c + ci) * sp;
                for i in 0..sp {
                    let xh = (xd[o + i] - mu) * is;
                    sdy += gd[o + i] as f64;
                    sdyx += (gd[o + i] * xh) as f64;
                }
            }
            dgamma[ci] = sdyx as f32;
            dbeta[ci] = sdy as f32;
            if let Some(dx) = dx.as_mut() {
                let mdy = (sdy / m as f64) as f32;
                let mdyx = (sdyx / m as f64) as f32;
                let k = gam[ci] * is;
                for ni in 0..n {
                    let o = (ni * c + ci) * sp;
                    for i in 0..sp {
                        let xh = (xd[o + i] - mu) * is;
                        dx.data_mut()[o + i] = k * (gd[o + i] - mdy - xh * mdyx);
                    }
                }
            }
        }
        vec![
            dx,
            Some(Tensor::from_vec(&[c], dgamma).expect("dgamma")),
            Some(Tensor::from_vec(&[c], dbeta).expect("dbeta")),
        ]
    });
    (out, stats)
}

/// Normalize with fixed (running) statistics: a per-channel affine map.
pub fn batch_norm_eval(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Var {
    let xv = g.value(x);
    let (n, c, sp) = (xv.dim(0), xv.dim(1), xv.spatial_len());
    let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mean = mean.to_vec();
    let gam = g.value(gamma).data().to_vec();
    let bet = g.value(beta).data().to_vec();
    let mut y = xv.clone();
    for ni in 0..n {
        for ci in 0..c {
            let k = gam[ci] * inv_std[ci];
            let b = bet[ci] - mean[ci] * k;
            for v in &mut y.data_mut()[(ni * c + ci) * sp..][..sp] {
                *v = *v * k + b;
            }
        }
    }
    g.push(y, &[x, gamma, beta], move |ctx| {
        let xd = ctx.value(x).data();
        let gam = ctx.value(gamma).data();
        let gd = ctx.grad.data();
        let mut dgamma = vec![0.0f32; c];
        let mut dbeta = vec![0.0f32; c];
        let mut dx = Tensor::zeros(ctx.value(x).shape());
        for ni in 0..n {
            for ci in 0..c {
                let o = (ni * c + ci) * sp;
                let k = gam[ci] * inv_std[ci];
                for i in 0..sp {
                    let xh = (xd[o + i] - mean[ci]) * inv_std[ci];
                    dgamma[ci] += gd[o + i] * xh;
                    dbeta[ci] += gd[o + i];
                    dx.data_mut()[o + i] = gd[o + i] * k;
                }
            }
        }
        vec![
            Some(dx),
            Some(Tensor::from_vec(&[c], dgamma).expect("dgamma")),
            Some(Tensor::from_vec(&[c], dbeta).expect("dbeta")),
        ]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::testing::{gradcheck, rand_tensor};

    #[test]
    fn train_output_is_standardized() {
        let mut g = Graph::inference();
        let x = g.input(rand_tensor(&[2, 3, 4, 5], 1));
        let gamma = g.input(Tensor::ones(&[3]));
        let beta = g.input(Tensor::zeros(&[3]));
        let (y, stats) = batch_norm_train(&mut g, x, gamma, beta, 1e-5);
        let (mean, var) = channel_moments(g.value(y));
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-5);
            assert!((var[c] - 1.0).abs() < 1e-3);
        }
        assert_eq!(stats.mean.len(), 3);
    }

    #[test]
    fn train_and_eval_gradients() {
        let x = rand_tensor(&[2, 2, 3, 3], 2);
        let gamma = rand_tensor(&[2], 3);
        let beta = rand_tensor(&[2], 4);
        gradcheck(&[x.clone(), gamma.clone(), beta.clone()], |g, v| {
            batch_norm_train(g, v[0], v[1], v[2], 1e-5).0
        });
        gradcheck(&[x, gamma, beta], |g, v| {
            batch_norm_eval(g, v[0], v[1], v[2], &[0.1, -0.2], &[0.5, 2.0], 1e-5)
        });
    }
}
