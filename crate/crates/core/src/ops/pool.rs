//! 2D max/average pooling and global average pooling.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

fn pooled_len(i: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    if i + 2 * p < k {
        return Err(Error::shape(format!(
            "pool window {} exceeds extent {}",
            k, i
        )));
    }
    Ok((i + 2 * p - k) / s + 1)
}

fn dims4(t: &Tensor) -> Result<[usize; 4]> {
    match t.shape() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        s => Err(Error::shape(format!(
            "2D pooling expects [N,C,H,W], got {:?}",
            s
        ))),
    }
}

/// Max pooling with square window `k`, stride `s`, padding `p` (padding never wins).
pub fn max_pool2d(g: &mut Graph, x: Var, k: usize, s: usize, p: usize) -> Result<Var> {
    let [n, c, h, w] = dims4(g.value(x))?;
    let (oh, ow) = (pooled_len(h, k, s, p)?, pooled_len(w, k, s, p)?);
    let xd = g.value(x).data();
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    for plane in 0..n * c {
        let xp = &xd[plane * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut bi = 0;
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i = iy as usize * w + ix as usize;
                        if xp[i] > best {
                            best = xp[i];
                            bi = i;
                        }
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                y.data_mut()[o] = best;
                argmax[o] = plane * h * w + bi;
            }
        }
    }
    Ok(g.push(y, &[x], move |ctx| {
        let mut dx = Tensor::zeros(ctx.value(x).shape());
        for (o, &i) in argmax.iter().enumerate() {
            dx.data_mut()[i] += ctx.grad.data()[o];
        }
        vec![Some(dx)]
    }))
}

/// Average pooling; padded positions count toward the divisor (`k*k`).
pub fn avg_pool2d(g: &mut Graph, x: Var, k: usize, s: usize, p: usize) -> Result<Var> {
    let [n, c, h, w] = dims4(g.value(x))?;
    let (oh, ow) = (pooled_len(h, k, s, p)?, pooled_len(w, k, s, p)?);
    let inv = 1.0 / (k * k) as f32;
    let visit = move |oy: usize, ox: usize, f: &mut dyn FnMut(usize)| {
        for ky in 0..k {
            let iy = (oy * s + ky) as isize - p as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            for kx in 0..k {
                let ix = (ox * s + kx) as isize - p as isize;
                if ix >= 0 && ix < w as isize {
                    f(iy as usize * w + ix as usize);
                }
            }
        }
    };
    let xd = g.value(x).data();
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    for plane in 0..n * c {
        let xp = &xd[plane * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                visit(oy, ox, &mut |i| acc += xp[i]);
                y.data_mut()[(plane * oh + oy) * ow + ox] = acc * inv;
            }
        }
    }
    Ok(g.push(y, &[x], move |ctx| {
        let mut dx = Tensor::zeros(ctx.value(x).shape());
        for plane in 0..n * c {
            let dp = &mut dx.data_mut()[plane * h * w..][..h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = ctx.grad.data()[(plane * oh + oy) * ow + ox] * inv;
                    visit(oy, ox, &mut |i| dp[i] += gv);
                }
            }
        }
        vec![Some(dx)]
    }))
}

/// Mean over all spatial dims; output keeps rank with unit spatial extents.
pub fn global_avg_pool(g: &mut Graph, x: Var) -> Var {
    let xv = g.value(x);
    let sp = xv.spatial_len();
    let mut shape = xv.shape().to_vec();
    for d in &mut shape[2..] {
        *d = 1;
    }
    let data: Vec<f32> = xv
        .data()
        .chunks(sp)
        .map(|ch| (ch.iter().map(|&v| v as f64).sum::<f64>() / sp as f64) as f32)
        .collect();
    let y = Tensor::from_vec(&shape, data).expect("pooled shape");
    g.push(y, &[x], move |ctx| {
        let mut dx = Tensor::zeros(ctx.value(x).shape());
        let inv = 1.0 / sp as f32;
        for (ch, &gv) in dx.data_mut().chunks_mut(sp).zip(ctx.grad.data()) {
            ch.fill(gv * inv);
        }
        vec![Some(dx)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::testing::{gradcheck, rand_tensor};

    #[test]
    fn pool_shapes_halve() {
        let mut g = Graph::inference();
        let x = g.input(rand_tensor(&[1, 2, 8, 6], 1));
        let m = max_pool2d(&mut g, x, 3, 2, 1).unwrap();
        let a = avg_pool2d(&mut g, x, 3, 2, 1).unwrap();
        assert_eq!(g.value(m).shape(), &[1, 2, 4, 3]);
        assert_eq!(g.value(a).shape(), &[1, 2, 4, 3]);
        let gp = global_avg_pool(&mut g, x);
        assert_eq!(g.value(gp).shape(), &[1, 2, 1, 1]);
    }

    #[test]
    fn pool_gradients() {
        let x = rand_tensor(&[1, 2, 5, 4], 2);
        gradcheck(&[x.clone()], |g, v| max_pool2d(g, v[0], 3, 2, 1).unwrap());
        gradcheck(&[x.clone()], |g, v| avg_pool2d(g, v[0], 3, 2, 1).unwrap());
        gradcheck(&[x], |g, v| global_avg_pool(g, v[0]));
    }
}
