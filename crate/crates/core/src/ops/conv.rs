//! 2D/3D grouped convolution and transposed convolution.
//!
//! Everything is lowered to a 3D problem (`[N, C, D, H, W]`; 2D inputs use
//! `D = 1` and a depth-1 kernel). The forward pass is im2col + GEMM over
//! chunks of output rows. A transposed convolution is the data-gradient of the
//! convolution whose input grid is the transposed output grid, so the same
//! three kernels serve both.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Upper bound on im2col buffer elements per chunk.
const COL_CHUNK_ELEMS: usize = 1 << 21;

/// Static description of a convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    /// 2 or 3 spatial dims.
    pub rank: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
    pub transposed: bool,
    pub output_padding: [usize; 3],
    pub bias: bool,
}

impl ConvSpec {
    pub fn conv2d(cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            rank: 2,
            in_channels: cin,
            out_channels: cout,
            kernel: [1, k, k],
            stride: [1, stride, stride],
            padding: [0, pad, pad],
            groups: 1,
            transposed: false,
            output_padding: [0; 3],
            bias: false,
        }
    }

    pub fn conv3d(cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            rank: 3,
            in_channels: cin,
            out_channels: cout,
            kernel: [k; 3],
            stride: [stride; 3],
            padding: [pad; 3],
            groups: 1,
            transposed: false,
            output_padding: [0; 3],
            bias: false,
        }
    }

    /// Stride-2 transposed 3D conv with kernel 3, padding 1 and output
    /// padding 1, which exactly doubles every spatial dim.
    pub fn deconv3d_x2(cin: usize, cout: usize) -> Self {
        ConvSpec {
            rank: 3,
            in_channels: cin,
            out_channels: cout,
            kernel: [3; 3],
            stride: [2; 3],
            padding: [1; 3],
            groups: 1,
            transposed: true,
            output_padding: [1; 3],
            bias: false,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Weight shape: `[Cout, Cin/groups, k...]` for convolutions and
    /// `[Cin, Cout/groups, k...]` for transposed convolutions.
    pub fn weight_shape(&self) -> Vec<usize> {
        let (a, b) = if self.transposed {
            (self.in_channels, self.out_channels / self.groups)
        } else {
            (self.out_channels, self.in_channels / self.groups)
        };
        let mut s = vec![a, b];
        s.extend_from_slice(&self.kernel[3 - self.rank..]);
        s
    }

    pub fn weight_numel(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank != 2 && self.rank != 3 {
            return Err(Error::config(format!(
                "conv rank {} unsupported",
                self.rank
            )));
        }
        if self.rank == 2 && (self.kernel[0] != 1 || self.stride[0] != 1 || self.padding[0] != 0) {
            return Err(Error::config("2D conv must have a unit depth axis"));
        }
        if self.groups == 0
            || self.in_channels % self.groups != 0
            || self.out_channels % self.groups != 0
        {
            return Err(Error::config(format!(
                "groups {} must divide channels {}->{}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        if self.stride.contains(&0) || self.kernel.contains(&0) {
            return Err(Error::config("kernel and stride must be positive"));
        }
        Ok(())
    }

    /// Output spatial dims (always three; 2D convs keep depth 1).
    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let (i, k, s, p) = (input[a], self.kernel[a], self.stride[a], self.padding[a]);
            out[a] = if self.transposed {
                ((i - 1) * s + k + self.output_padding[a])
                    .checked_sub(2 * p)
                    .ok_or_else(|| Error::shape("transposed conv output underflow"))?
            } else {
                let span = i + 2 * p;
                if span < k {
                    return Err(Error::shape(format!(
                        "input extent {} (padded {}) smaller than kernel {}",
                        i, span, k
                    )));
                }
                (span - k) / s + 1
            };
        }
        Ok(out)
    }

    /// Multiply-accumulates for one sample. Transposed convolutions are
    /// charged on their input grid: every input voxel scatters
    /// `Cout/groups * kernel` products, which is the true number of MACs.
    pub fn macs(&self, input: [usize; 3], output: [usize; 3]) -> u64 {
        let kv = self.kernel_volume() as u64;
        if self.transposed {
            let sp: u64 = input.iter().map(|&v| v as u64).product();
            self.in_channels as u64 * (self.out_channels / self.groups) as u64 * kv * sp
        } else {
            let sp: u64 = output.iter().map(|&v| v as u64).product();
            (self.in_channels / self.groups) as u64 * self.out_channels as u64 * kv * sp
        }
    }
}

/// A plain (non-transposed) convolution problem in the kernels' terms.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvProblem {
    pub n: usize,
    pub groups: usize,
    pub cin_g: usize,
    pub cout_g: usize,
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
    pub k: [usize; 3],
    pub s: [usize; 3],
    pub p: [usize; 3],
}

impl ConvProblem {
    fn kvol(&self) -> usize {
        self.k.iter().product()
    }
    fn in_sp(&self) -> usize {
        self.in_dims.iter().product()
    }
    fn out_sp(&self) -> usize {
        self.out_dims.iter().product()
    }
    fn wcols(&self) -> usize {
        self.cin_g * self.kvol()
    }
    fn pointwise(&self) -> bool {
        self.k == [1, 1, 1] && self.s == [1, 1, 1] && self.p == [0, 0, 0]
    }
    /// Output rows (one `(oz, oy)` pair each) per im2col chunk.
    fn chunk_rows(&self) -> usize {
        let per_row = self.wcols() * self.out_dims[2];
        (COL_CHUNK_ELEMS / per_row.max(1)).max(1)
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the debug assertions above spell out the extent each matrix
    // touches; every caller passes slices covering those extents.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Fill `col` (`wcols x nrows*ow`, row-major) for output rows `row0..row0+nrows`.
fn im2col(pb: &ConvProblem, x: &[f32], row0: usize, nrows: usize, col: &mut [f32]) {
    let [id, ih, iw] = pb.in_dims;
    let [_, oh, ow] = pb.out_dims;
    let [kd, kh, kw] = pb.k;
    let [sd, sh, sw] = pb.s;
    let [pd, ph, pw] = pb.p;
    let pc = nrows * ow;
    let in_sp = pb.in_sp();
    let mut r = 0;
    for c in 0..pb.cin_g {
        let xc = &x[c * in_sp..(c + 1) * in_sp];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut col[r * pc..(r + 1) * pc];
                    for lr in 0..nrows {
                        let row = row0 + lr;
                        let (oz, oy) = (row / oh, row % oh);
                        let iz = (oz * sd + kz) as isize - pd as isize;
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        let seg = &mut dst[lr * ow..(lr + 1) * ow];
                        if iz < 0 || iz >= id as isize || iy < 0 || iy >= ih as isize {
                            seg.fill(0.0);
                            continue;
                        }
                        let src = &xc[(iz as usize * ih + iy as usize) * iw..][..iw];
                        if sw == 1 {
                            // ix = ox + kx - pw
                            let lo = pw.saturating_sub(kx).min(ow);
                            let hi = (iw + pw).saturating_sub(kx).min(ow).max(lo);
                            seg[..lo].fill(0.0);
                            seg[hi..].fill(0.0);
                            let start = lo + kx - pw;
                            seg[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        } else {
                            for (ox, v) in seg.iter_mut().enumerate() {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                *v = if ix >= 0 && (ix as usize) < iw {
                                    src[ix as usize]
                                } else {
                                    0.0
                                };
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// Scatter-add `col` back into `dx` (the adjoint of [`im2col`]).
fn col2im(pb: &ConvProblem, col: &[f32], row0: usize, nrows: usize, dx: &mut [f32]) {
    let [id, ih, iw] = pb.in_dims;
    let [_, oh, ow] = pb.out_dims;
    let [kd, kh, kw] = pb.k;
    let [sd, sh, sw] = pb.s;
    let [pd, ph, pw] = pb.p;
    let pc = nrows * ow;
    let in_sp = pb.in_sp();
    let mut r = 0;
    for c in 0..pb.cin_g {
        let xc = &mut dx[c * in_sp..(c + 1) * in_sp];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &col[r * pc..(r + 1) * pc];
                    for lr in 0..nrows {
                        let row = row0 + lr;
                        let (oz, oy) = (row / oh, row % oh);
                        let iz = (oz * sd + kz) as isize - pd as isize;
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iz < 0 || iz >= id as isize || iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let seg = &src[lr * ow..(lr + 1) * ow];
                        let dst = &mut xc[(iz as usize * ih + iy as usize) * iw..][..iw];
                        if sw == 1 {
                            let lo = pw.saturating_sub(kx).min(ow);
                            let hi = (iw + pw).saturating_sub(kx).min(ow).max(lo);
                            let start = lo + kx - pw;
                            for (d, s) in dst[start..start + (hi - lo)].iter_mut().zip(&seg[lo..hi])
                            {
                                *d += s;
                            }
                        } else {
                            for (ox, s) in seg.iter().enumerate() {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if ix >= 0 && (ix as usize) < iw {
                                    dst[ix as usize] += s;
                                }
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// `y = conv(x, w)`; `y` is overwritten.
pub(crate) fn conv_forward(pb: &ConvProblem, x: &[f32], w: &[f32], y: &mut [f32]) {
    let (in_sp, out_sp, wc) = (pb.in_sp(), pb.out_sp(), pb.wcols());
    let ow = pb.out_dims[2];
    let total_rows = pb.out_dims[0] * pb.out_dims[1];
    let chunk = pb.chunk_rows();
    let mut col = if pb.pointwise() {
        Vec::new()
    } else {
        vec![0.0f32; wc * chunk.min(total_rows) * ow]
    };
    for n in 0..pb.n {
        for g in 0..pb.groups {
            let xg = &x[(n * pb.groups + g) * pb.cin_g * in_sp..][..pb.cin_g * in_sp];
            let wg = &w[g * pb.cout_g * wc..][..pb.cout_g * wc];
            let yg = &mut y[(n * pb.groups + g) * pb.cout_g * out_sp..][..pb.cout_g * out_sp];
            if pb.pointwise() {
                sgemm(
                    pb.cout_g, wc, out_sp, 1.0, wg, wc, 1, xg, in_sp, 1, 0.0, yg, out_sp, 1,
                );
                continue;
            }
            let mut row0 = 0;
            while row0 < total_rows {
                let nrows = chunk.min(total_rows - row0);
                let pc = nrows * ow;
                let col = &mut col[..wc * pc];
                im2col(pb, xg, row0, nrows, col);
                let p0 = row0 * ow;
                sgemm(
                    pb.cout_g,
                    wc,
                    pc,
                    1.0,
                    wg,
                    wc,
                    1,
                    col,
                    pc,
                    1,
                    0.0,
                    &mut yg[p0..],
                    out_sp,
                    1,
                );
                row0 += nrows;
            }
        }
    }
}

/// `dx += conv_input_grad(dy, w)`.
pub(crate) fn conv_backward_data(pb: &ConvProblem, dy: &[f32], w: &[f32], dx: &mut [f32]) {
    let (in_sp, out_sp, wc) = (pb.in_sp(), pb.out_sp(), pb.wcols());
    let ow = pb.out_dims[2];
    let total_rows = pb.out_dims[0] * pb.out_dims[1];
    let chunk = pb.chunk_rows();
    let mut col = if pb.pointwise() {
        Vec::new()
    } else {
        vec![0.0f32; wc * chunk.min(total_rows) * ow]
    };
    for n in 0..pb.n {
        for g in 0..pb.groups {
            let dyg = &dy[(n * pb.groups + g) * pb.cout_g * out_sp..][..pb.cout_g * out_sp];
            let wg = &w[g * pb.cout_g * wc..][..pb.cout_g * wc];
            let dxg = &mut dx[(n * pb.groups + g) * pb.cin_g * in_sp..][..pb.cin_g * in_sp];
            if pb.pointwise() {
                // dx[c, p] += sum_o w[o, c] dy[o, p]
                sgemm(
                    wc, pb.cout_g, out_sp, 1.0, wg, 1, wc, dyg, out_sp, 1, 1.0, dxg, in_sp, 1,
                );
                continue;
            }
            let mut row0 = 0;
            while row0 < total_rows {
                let nrows = chunk.min(total_rows - row0);
                let pc = nrows * ow;
                let col = &mut col[..wc * pc];
                let p0 = row0 * ow;
                sgemm(
                    wc,
                    pb.cout_g,
                    pc,
                    1.0,
                    wg,
                    1,
                    wc,
                    &dyg[p0..],
                    out_sp,
                    1,
                    0.0,
                    col,
                    pc,
                    1,
                );
                col2im(pb, col, row0, nrows, dxg);
                row0 += nrows;
            }
        }
    }
}

/// `dw += conv_weight_grad(x, dy)`.
pub(crate) fn conv_backward_weight(pb: &ConvProblem, x: &[f32], dy: &[f32], dw: &mut [f32]) {
    let (in_sp, out_sp, wc) = (pb.in_sp(), pb.out_sp(), pb.wcols());
    let ow = pb.out_dims[2];
    let total_rows = pb.out_dims[0] * pb.out_dims[1];
    let chunk = pb.chunk_rows();
    let mut col = if pb.pointwise() {
        Vec::new()
    } else {
        vec![0.0f32; wc * chunk.min(total_rows) * ow]
    };
    for n in 0..pb.n {
        for g in 0..pb.groups {
            let xg = &x[(n * pb.groups + g) * pb.cin_g * in_sp..][..pb.cin_g * in_sp];
            let dyg = &dy[(n * pb.groups + g) * pb.cout_g * out_sp..][..pb.cout_g * out_sp];
            let dwg = &mut dw[g * pb.cout_g * wc..][..pb.cout_g * wc];
            if pb.pointwise() {
                // dw[o, c] += sum_p dy[o, p] x[c, p]
                sgemm(
                    pb.cout_g, out_sp, wc, 1.0, dyg, out_sp, 1, xg, 1, in_sp, 1.0, dwg, wc, 1,
                );
                continue;
            }
            let mut row0 = 0;
            while row0 < total_rows {
                let nrows = chunk.min(total_rows - row0);
                let pc = nrows * ow;
                let col = &mut col[..wc * pc];
                im2col(pb, xg, row0, nrows, col);
                let p0 = row0 * ow;
                sgemm(
                    pb.cout_g,
                    pc,
                    wc,
                    1.0,
                    &dyg[p0..],
                    out_sp,
                    1,
                    col,
                    1,
                    pc,
                    1.0,
                    dwg,
                    wc,
                    1,
                );
                row0 += nrows;
            }
        }
    }
}

fn spatial3(t: &Tensor, rank: usize) -> Result<[usize; 3]> {
    match (rank, t.shape()) {
        (2, [_, _, h, w]) => Ok([1, *h, *w]),
        (3, [_, _, d, h, w]) => Ok([*d, *h, *w]),
        _ => Err(Error::shape(format!(
            "conv{}d expects a rank-{} tensor, got {:?}",
            rank,
            rank + 2,
            t.shape()
        ))),
    }
}

fn with_spatial(n: usize, c: usize, dims: [usize; 3], rank: usize) -> Vec<usize> {
    if rank == 2 {
        vec![n, c, dims[1], dims[2]]
    } else {
        vec![n, c, dims[0], dims[1], dims[2]]
    }
}

/// Problem seen by the kernels. For a transposed conv the kernels' "input"
/// is the layer's output grid.
fn problem(spec: &ConvSpec, n: usize, layer_in: [usize; 3], layer_out: [usize; 3]) -> ConvProblem {
    if spec.transposed {
        ConvProblem {
            n,
            groups: spec.groups,
            cin_g: spec.out_channels / spec.groups,
            cout_g: spec.in_channels / spec.groups,
            in_dims: layer_out,
            out_dims: layer_in,
            k: spec.kernel,
            s: spec.stride,
            p: spec.padding,
        }
    } else {
        ConvProblem {
            n,
            groups: spec.groups,
            cin_g: spec.in_channels / spec.groups,
            cout_g: spec.out_channels / spec.groups,
            in_dims: layer_in,
            out_dims: layer_out,
            k: spec.kernel,
            s: spec.stride,
            p: spec.padding,
        }
    }
}

/// Pure (graph-free) convolution, used by the graph op and by tests.
pub fn conv_apply(spec: &ConvSpec, x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    spec.validate()?;
    let in_dims = spatial3(x, spec.rank)?;
    if x.dim(1) != spec.in_channels {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {:?}",
            spec.in_channels,
            x.shape()
        )));
    }
    if w.shape() != spec.weight_shape().as_slice() {
        return Err(Error::shape(format!(
            "conv weight {:?} does not match {:?}",
            w.shape(),
            spec.weight_shape()
        )));
    }
    let n = x.dim(0);
    let out_dims = spec.output_dims(in_dims)?;
    let pb = problem(spec, n, in_dims, out_dims);
    let mut y = Tensor::zeros(&with_spatial(n, spec.out_channels, out_dims, spec.rank));
    if spec.transposed {
        conv_backward_data(&pb, x.data(), w.data(), y.data_mut());
    } else {
        conv_forward(&pb, x.data(), w.data(), y.data_mut());
    }
    if let Some(b) = b {
        add_channel_bias(&mut y, b.data());
    }
    Ok(y)
}

pub(crate) fn add_channel_bias(y: &mut Tensor, b: &[f32]) {
    let (n, c, sp) = (y.dim(0), y.dim(1), y.spatial_len());
    let data = y.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            for v in &mut data[(ni * c + ci) * sp..][..sp] {
                *v += b[ci];
            }
        }
    }
}

/// Differentiable convolution (or transposed convolution) with optional bias.
pub fn conv(g: &mut Graph, spec: ConvSpec, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = conv_apply(&spec, g.value(x), g.value(w), b.map(|b| g.value(b)))?;
    let in_dims = spatial3(g.value(x), spec.rank)?;
    let out_dims = spec.output_dims(in_dims)?;
    let n = g.value(x).dim(0);
    {
        let st = g.stats_mut();
        st.conv_calls += 1;
        st.conv_macs += n as u64 * spec.macs(in_dims, out_dims);
    }
    let mut parents = vec![x, w];
    if let Some(b) = b {
        parents.push(b);
    }
    let pb = problem(&spec, n, in_dims, out_dims);
    Ok(g.push(y, &parents, move |ctx| {
        let xv = ctx.value(x);
        let wv = ctx.value(w);
        let dy = ctx.grad;
        let dx = ctx.needs(0).then(|| {
            let mut dx = Tensor::zeros(xv.shape());
            if spec.transposed {
                conv_forward(&pb, dy.data(), wv.data(), dx.data_mut());
            } else {
                conv_backward_data(&pb, dy.data(), wv.data(), dx.data_mut());
            }
            dx
        });
        let dw = ctx.needs(1).then(|| {
            let mut dw = Tensor::zeros(wv.shape());
            if spec.transposed {
                conv_backward_weight(&pb, dy.data(), xv.data(), dw.data_mut());
            } else {
                conv_backward_weight(&pb, xv.data(), dy.data(), dw.data_mut());
            }
            dw
        });
        let mut out = vec![dx, dw];
        if b.is_some() {
            let db = ctx.needs(2).then(|| {
                let (n, c, sp) = (dy.dim(0), dy.dim(1), dy.spatial_len());
                let mut db = Tensor::zeros(&[c]);
                for ni in 0..n {
                    for ci in 0..c {
                        let s: f32 = dy.data()[(ni * c + ci) * sp..][..sp].iter().sum();
                        db.data_mut()[ci] += s;
                    }
                }
                db
            });
            out.push(db);
        }
        out
    }))
}
