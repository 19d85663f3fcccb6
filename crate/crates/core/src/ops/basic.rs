//! Elementwise, broadcast and channel-structural ops.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub fn add(g: &mut Graph, a: Var, b: Var) -> Var {
    let y = g.value(a).zip_map(g.value(b), |x, y| x + y);
    g.push(y, &[a, b], |ctx| {
        vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
    })
}

pub fn sub(g: &mut Graph, a: Var, b: Var) -> Var {
    let y = g.value(a).zip_map(g.value(b), |x, y| x - y);
    g.push(y, &[a, b], |ctx| {
        vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|v| -v))]
    })
}

pub fn mul(g: &mut Graph, a: Var, b: Var) -> Var {
    let y = g.value(a).zip_map(g.value(b), |x, y| x * y);
    g.push(y, &[a, b], move |ctx| {
        vec![
            ctx.needs(0)
                .then(|| ctx.grad.zip_map(ctx.value(b), |g, v| g * v)),
            ctx.needs(1)
                .then(|| ctx.grad.zip_map(ctx.value(a), |g, v| g * v)),
        ]
    })
}

pub fn scale(g: &mut Graph, a: Var, s: f32) -> Var {
    let y = g.value(a).map(|v| v * s);
    g.push(y, &[a], move |ctx| vec![Some(ctx.grad.map(|v| v * s))])
}

pub fn relu(g: &mut Graph, a: Var) -> Var {
    let y = g.value(a).map(|v| v.max(0.0));
    g.push(y, &[a], |ctx| {
        vec![Some(ctx.grad.zip_map(ctx.output(), |g, y| {
            if y > 0.0 {
                g
            } else {
                0.0
            }
        }))]
    })
}

#[inline]
pub fn sigmoid_scalar(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn sigmoid(g: &mut Graph, a: Var) -> Var {
    let y = g.value(a).map(sigmoid_scalar);
    g.push(y, &[a], |ctx| {
        vec![Some(
            ctx.grad.zip_map(ctx.output(), |g, y| g * y * (1.0 - y)),
        )]
    })
}

/// Sum of all elements, as a one-element tensor.
pub fn sum_all(g: &mut Graph, a: Var) -> Var {
    let s = g.value(a).sum() as f32;
    g.push(Tensor::scalar(s), &[a], move |ctx| {
        let shape = ctx.value(a).shape().to_vec();
        vec![Some(Tensor::full(&shape, ctx.grad.data()[0]))]
    })
}

/// `x * att` where `att` has a single channel broadcast over the channels of `x`.
pub fn mul_channel_broadcast(g: &mut Graph, x: Var, att: Var) -> Result<Var> {
    let (xs, as_) = (g.value(x).shape().to_vec(), g.value(att).shape().to_vec());
    if xs.len() < 3
        || as_.len() != xs.len()
        || as_[0] != xs[0]
        || as_[1] != 1
        || as_[2..] != xs[2..]
    {
        return Err(Error::shape(format!(
            "cannot broadcast {:?} over channels of {:?}",
            as_, xs
        )));
    }
    let (n, c, sp) = (xs[0], xs[1], g.value(x).spatial_len());
    let mut y = g.value(x).clone();
    {
        let a = g.value(att).data().to_vec();
        let yd = y.data_mut();
        for ni in 0..n {
            let w = &a[ni * sp..(ni + 1) * sp];
            for ci in 0..c {
                for (v, &wv) in yd[(ni * c + ci) * sp..][..sp].iter_mut().zip(w) {
                    *v *= wv;
                }
            }
        }
    }
    Ok(g.push(y, &[x, att], move |ctx| {
        let gd = ctx.grad.data();
        let dx = ctx.needs(0).then(|| {
            let a = ctx.value(att).data();
            let mut dx = ctx.grad.clone();
            let d = dx.data_mut();
            for ni in 0..n {
                for ci in 0..c {
                    for (v, &wv) in d[(ni * c + ci) * sp..][..sp].iter_mut().zip(&a[ni * sp..]) {
                        *v *= wv;
                    }
                }
            }
            dx
        });
        let da = ctx.needs(1).then(|| {
            let xd = ctx.value(x).data();
            let mut da = Tensor::zeros(ctx.value(att).shape());
            let d = da.data_mut();
            for ni in 0..n {
                for ci in 0..c {
                    let o = (ni * c + ci) * sp;
                    for (i, v) in d[ni * sp..(ni + 1) * sp].iter_mut().enumerate() {
                        *v += gd[o + i] * xd[o + i];
                    }
                }
            }
            da
        });
        vec![dx, da]
    }))
}

/// `x + v` where `v` is `[N, C, 1, ...]` broadcast over the spatial dims of `x`.
pub fn add_spatial_broadcast(g: &mut Graph, x: Var, v: Var) -> Result<Var> {
    let (xs, vs) = (g.value(x).shape().to_vec(), g.value(v).shape().to_vec());
    if vs.len() != xs.len() || vs[..2] != xs[..2] || g.value(v).spatial_len() != 1 {
        return Err(Error::shape(format!(
            "cannot broadcast {:?} over spatial dims of {:?}",
            vs, xs
        )));
    }
    let sp = g.value(x).spatial_len();
    let mut y = g.value(x).clone();
    {
        let vd = g.value(v).data().to_vec();
        for (i, chunk) in y.data_mut().chunks_mut(sp).enumerate() {
            for e in chunk {
                *e += vd[i];
            }
        }
    }
    Ok(g.push(y, &[x, v], move |ctx| {
        let dv = ctx.needs(1).then(|| {
            let mut dv = Tensor::zeros(ctx.value(v).shape());
            for (i, chunk) in ctx.grad.data().chunks(sp).enumerate() {
                dv.data_mut()[i] = chunk.iter().sum();
            }
            dv
        });
        vec![Some(ctx.grad.clone()), dv]
    }))
}

/// Concatenate `[N, Ci, ...]` tensors along the channel dim.
pub fn concat_channels(g: &mut Graph, parts: &[Var]) -> Result<Var> {
    let first = g.value(parts[0]).shape().to_vec();
    let mut chans = Vec::with_capacity(parts.len());
    for &p in parts {
        let s = g.value(p).shape();
        if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
            return Err(Error::shape(format!("concat of {:?} with {:?}", first, s)));
        }
        chans.push(s[1]);
    }
    let n = first[0];
    let sp: usize = first[2..].iter().product();
    let ctot: usize = chans.iter().sum();
    let mut shape = first.clone();
    shape[1] = ctot;
    let mut data = Vec::with_capacity(n * ctot * sp);
    for ni in 0..n {
        for (&p, &c) in parts.iter().zip(&chans) {
            data.extend_from_slice(&g.value(p).data()[ni * c * sp..(ni + 1) * c * sp]);
        }
    }
    let y = Tensor::from_vec(&shape, data)?;
    let chans2 = chans.clone();
    Ok(g.push(y, parts, move |ctx| {
        let gd = ctx.grad.data();
        let mut off = 0;
        let mut out = Vec::with_capacity(chans2.len());
        for (i, &c) in chans2.iter().enumerate() {
            if !ctx.needs(i) {
                out.push(None);
                off += c;
                continue;
            }
            let mut s = shape.clone();
            s[1] = c;
            let mut d = Vec::with_capacity(n * c * sp);
            for ni in 0..n {
                d.extend_from_slice(&gd[(ni * ctot + off) * sp..(ni * ctot + off + c) * sp]);
            }
            out.push(Some(Tensor::from_vec(&s, d).expect("concat grad shape")));
            off += c;
        }
        out
    }))
}

/// Channels `c0..c1` of an `[N, C, ...]` tensor.
pub fn slice_channels(g: &mut Graph, x: Var, c0: usize, c1: usize) -> Result<Var> {
    let xs = g.value(x).shape().to_vec();
    if c0 >= c1 || c1 > xs[1] {
        return Err(Error::shape(format!(
            "channel slice {}..{} of {:?}",
            c0, c1, xs
        )));
    }
    let (n, c) = (xs[0], xs[1]);
    let sp = g.value(x).spatial_len();
    let mut shape = xs.clone();
    shape[1] = c1 - c0;
    let mut data = Vec::with_capacity(n * (c1 - c0) * sp);
    for ni in 0..n {
        data.extend_from_slice(&g.value(x).data()[(ni * c + c0) * sp..(ni * c + c1) * sp]);
    }
    let y = Tensor::from_vec(&shape, data)?;
    Ok(g.push(y, &[x], move |ctx| {
        let mut dx = Tensor::zeros(&xs);
        let w = (c1 - c0) * sp;
        for ni in 0..n {
            dx.data_mut()[(ni * c + c0) * sp..(ni * c + c1) * sp]
                .copy_from_slice(&ctx.grad.data()[ni * w..(ni + 1) * w]);
        }
        vec![Some(dx)]
    }))
}

/// Reinterpret the shape without moving data.
pub fn reshape(g: &mut Graph, x: Var, shape: &[usize]) -> Result<Var> {
    let orig = g.value(x).shape().to_vec();
    let y = g.value(x).clone().reshape(shape)?;
    Ok(g.push(y, &[x], move |ctx| {
        vec![Some(ctx.grad.clone().reshape(&orig).expect("reshape grad"))]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::testing::{gradcheck, rand_tensor};

    #[test]
    fn elementwise_gradients() {
        let a = rand_tensor(&[2, 3, 4], 1);
        let b = rand_tensor(&[2, 3, 4], 2);
        gradcheck(&[a.clone(), b.clone()], |g, v| add(g, v[0], v[1]));
        gradcheck(&[a.clone(), b.clone()], |g, v| sub(g, v[0], v[1]));
        gradcheck(&[a.clone(), b.clone()], |g, v| mul(g, v[0], v[1]));
        gradcheck(&[a.clone()], |g, v| scale(g, v[0], -1.5));
        gradcheck(&[a.clone()], |g, v| sigmoid(g, v[0]));
        gradcheck(&[a.clone()], |g, v| sum_all(g, v[0]));
        // Keep inputs clear of the kink.
        let off_kink = a.map(|v| v + 0.1 * v.signum());
        gradcheck(&[off_kink], |g, v| relu(g, v[0]));
    }

    #[test]
    fn broadcast_gradients() {
        let x = rand_tensor(&[2, 3, 2, 2, 3], 3);
        let att = rand_tensor(&[2, 1, 2, 2, 3], 4);
        gradcheck(&[x, att], |g, v| {
            mul_channel_broadcast(g, v[0], v[1]).unwrap()
        });
        let x = rand_tensor(&[2, 3, 4, 5], 5);
        let s = rand_tensor(&[2, 3, 1, 1], 6);
        gradcheck(&[x, s], |g, v| {
            add_spatial_broadcast(g, v[0], v[1]).unwrap()
        });
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let mut g = Graph::inference();
        let a = g.input(rand_tensor(&[2, 3, 4], 7));
        let b = g.input(rand_tensor(&[2, 2, 4], 8));
        let c = concat_channels(&mut g, &[a, b]).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 5, 4]);
        let back = slice_channels(&mut g, c, 3, 5).unwrap();
        assert_eq!(g.value(back), g.value(b));
        let x = rand_tensor(&[2, 3, 4], 9);
        let y = rand_tensor(&[2, 1, 4], 10);
        gradcheck(&[x, y], |g, v| {
            let c = concat_channels(g, &[v[0], v[1]]).unwrap();
            slice_channels(g, c, 1, 4).unwrap()
        });
    }

    #[test]
    fn broadcast_shape_errors() {
        let mut g = Graph::inference();
        let x = g.input(Tensor::zeros(&[1, 3, 2, 2]));
        let bad = g.input(Tensor::zeros(&[1, 2, 2, 2]));
        assert!(mul_channel_broadcast(&mut g, x, bad).is_err());
        assert!(add_spatial_broadcast(&mut g, x, bad).is_err());
    }
}
