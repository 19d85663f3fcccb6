//! Separable (bi/tri)linear resizing with half-pixel centers.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Source taps for each output index: `(i0, i1, w0, w1)`.
///
/// Uses `src = (dst + 0.5) * in / out - 0.5`, clamped below at 0, with the
/// upper neighbour clamped to the last index.
pub fn linear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let l1 = (src - i0 as f64) as f32;
            (i0, i1, 1.0 - l1, l1)
        })
        .collect()
}

/// Interpolate one axis of a row-major buffer. `outer` and `inner` are the
/// products of the dims before and after the axis.
pub(crate) fn interp_axis(
    src: &[f32],
    outer: usize,
    in_len: usize,
    inner: usize,
    taps: &[(usize, usize, f32, f32)],
) -> Vec<f32> {
    let out_len = taps.len();
    let mut dst = vec![0.0f32; outer * out_len * inner];
    for o in 0..outer {
        let s = &src[o * in_len * inner..][..in_len * inner];
        let d = &mut dst[o * out_len * inner..][..out_len * inner];
        for (j, &(i0, i1, w0, w1)) in taps.iter().enumerate() {
            let (a, b) = (&s[i0 * inner..][..inner], &s[i1 * inner..][..inner]);
            for ((dv, &av), &bv) in d[j * inner..][..inner].iter_mut().zip(a).zip(b) {
                *dv = w0 * av + w1 * bv;
            }
        }
    }
    dst
}

/// Adjoint of [`interp_axis`].
pub(crate) fn interp_axis_adjoint(
    grad: &[f32],
    outer: usize,
    in_len: usize,
    inner: usize,
    taps: &[(usize, usize, f32, f32)],
) -> Vec<f32> {
    let out_len = taps.len();
    let mut dsrc = vec![0.0f32; outer * in_len * inner];
    for o in 0..outer {
        let gsl = &grad[o * out_len * inner..][..out_len * inner];
        let d = &mut dsrc[o * in_len * inner..][..in_len * inner];
        for (j, &(i0, i1, w0, w1)) in taps.iter().enumerate() {
            let gj = &gsl[j * inner..][..inner];
            for (k, &gv) in gj.iter().enumerate() {
                d[i0 * inner + k] += w0 * gv;
                d[i1 * inner + k] += w1 * gv;
            }
        }
    }
    dsrc
}

/// Resize the spatial dims of an `[N, C, ...]` tensor to `out` by linear
/// interpolation along every spatial axis.
pub fn resize_linear_apply(x: &Tensor, out: &[usize]) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != out.len() + 2 || out.contains(&0) {
        return Err(Error::shape(format!(
            "cannot resize {:?} to spatial {:?}",
            shape, out
        )));
    }
    let mut cur_shape = shape.to_vec();
    let mut cur = x.data().to_vec();
    for (a, &len) in out.iter().enumerate() {
        let axis = a + 2;
        if cur_shape[axis] == len {
            continue;
        }
        let outer: usize = cur_shape[..axis].iter().product();
        let inner: usize = cur_shape[axis + 1..].iter().product();
        let taps = linear_taps(cur_shape[axis], len);
        cur = interp_axis(&cur, outer, cur_shape[axis], inner, &taps);
        cur_shape[axis] = len;
    }
    Tensor::from_vec(&cur_shape, cur)
}

pub fn resize_linear(g: &mut Graph, x: Var, out: &[usize]) -> Result<Var> {
    let y = resize_linear_apply(g.value(x), out)?;
    let in_shape = g.value(x).shape().to_vec();
    Ok(g.push(y, &[x], move |ctx| {
        // Replay the forward axis order in reverse.
        let mut shapes = vec![in_shape.clone()];
        let mut s = in_shape.clone();
        for (a, &len) in ctx.grad.shape()[2..].iter().enumerate() {
            s[a + 2] = len;
            shapes.push(s.clone());
        }
        let mut grad = ctx.grad.data().to_vec();
        for a in (0..in_shape.len() - 2).rev() {
            let axis = a + 2;
            let before = &shapes[a];
            let after = &shapes[a + 1];
            if before[axis] == after[axis] {
                continue;
            }
            let outer: usize = before[..axis].iter().product();
            let inner: usize = after[axis + 1..].iter().product();
            let taps = linear_taps(before[axis], after[axis]);
            grad = interp_axis_adjoint(&grad, outer, before[axis], inner, &taps);
        }
        vec![Some(
            Tensor::from_vec(&in_shape, grad).expect("resize grad"),
        )]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::testing::{gradcheck, rand_tensor};

    #[test]
    fn doubling_taps_match_half_pixel_rule() {
        // in 2 -> out 4: src = -0.25, 0.25, 0.75, 1.25
        let taps = linear_taps(2, 4);
        assert_eq!(taps[0], (0, 1, 1.0, 0.0));
        assert_eq!(taps[1], (0, 1, 0.75, 0.25));
        assert_eq!(taps[2], (0, 1, 0.25, 0.75));
        assert_eq!(taps[3], (1, 1, 0.75, 0.25));
    }

    #[test]
    fn constant_field_is_preserved() {
        let x = Tensor::full(&[1, 2, 3, 2, 5], 0.7);
        let y = resize_linear_apply(&x, &[12, 8, 20]).unwrap();
        assert_eq!(y.shape(), &[1, 2, 12, 8, 20]);
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn resize_gradients() {
        gradcheck(&[rand_tensor(&[1, 2, 3, 4], 1)], |g, v| {
            resize_linear(g, v[0], &[6, 8]).unwrap()
        });
        gradcheck(&[rand_tensor(&[1, 1, 2, 3, 2], 2)], |g, v| {
            resize_linear(g, v[0], &[4, 5, 8]).unwrap()
        });
    }
}
