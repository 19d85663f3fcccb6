//! 3D cost aggregation (pre-convolutions + two hourglasses) and regression.

use crate::cost_volume::CostVolume;
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::nn::{Builder, Conv, ConvBn, Fwd};
use crate::ops::{self, ConvSpec};
use crate::profiler::LayerSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub base_width: usize,
    /// Replace the hourglass 3D convs with depthwise + pointwise pairs.
    pub separable: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            base_width: 32,
            separable: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Disparity maps `[N, H, W]` from the three supervision points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadOutputs {
    pub out0: Var,
    pub out1: Var,
    pub out2: Var,
}

impl HeadOutputs {
    pub fn as_array(&self) -> [Var; 3] {
        [self.out0, self.out1, self.out2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadResult {
    Train(HeadOutputs),
    Eval(Var),
}

impl HeadResult {
    /// The final prediction (Out2) in either mode.
    pub fn final_output(&self) -> Var {
        match self {
            HeadResult::Train(o) => o.out2,
            HeadResult::Eval(v) => *v,
        }
    }
}

/// A 3x3x3 ConvBnReLU, or its depthwise + pointwise factorization.
#[derive(Clone, Debug)]
pub enum Unit3d {
    Full(ConvBn),
    Separable { dw: ConvBn, pw: ConvBn },
}

impl Unit3d {
    fn new(
        b: &mut Builder,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        separable: bool,
    ) -> Self {
        if separable {
            b.scoped(name, |b| Unit3d::Separable {
                dw: ConvBn::new(
                    b,
                    "dw",
                    ConvSpec::conv3d(cin, cin, 3, stride, 1).with_groups(cin),
                    true,
                ),
                pw: ConvBn::new(b, "pw", ConvSpec::conv3d(cin, cout, 1, 1, 0), true),
            })
        } else {
            Unit3d::Full(ConvBn::new(
                b,
                name,
                ConvSpec::conv3d(cin, cout, 3, stride, 1),
                true,
            ))
        }
    }

    fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        match self {
            Unit3d::Full(c) => c.forward(f, x),
            Unit3d::Separable { dw, pw } => {
                let y = dw.forward(f, x)?;
                pw.forward(f, y)
            }
        }
    }

    fn describe(&self, d: [usize; 3], out: &mut Vec<LayerSpec>) -> Result<[usize; 3]> {
        match self {
            Unit3d::Full(c) => c.describe(d, out),
            Unit3d::Separable { dw, pw } => {
                let d = dw.describe(d, out)?;
                pw.describe(d, out)
            }
        }
    }
}

fn cbr3(b: &mut Builder, name: &str, cin: usize, cout: usize, relu: bool) -> ConvBn {
    ConvBn::new(b, name, ConvSpec::conv3d(cin, cout, 3, 1, 1), relu)
}

/// Four stride-1 3D convs with a residual over the second pair.
#[derive(Clone, Debug)]
pub struct PreAggregate {
    pub convs: [ConvBn; 4],
}

impl PreAggregate {
    fn new(b: &mut Builder, cin: usize, c: usize) -> Self {
        b.scoped("pre", |b| PreAggregate {
            convs: [
                cbr3(b, "conv0", cin, c, true),
                cbr3(b, "conv1", c, c, true),
                cbr3(b, "conv2", c, c, true),
                cbr3(b, "conv3", c, c, false),
            ],
        })
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let a = self.convs[0].forward(f, x)?;
        let a = self.convs[1].forward(f, a)?;
        let b = self.convs[2].forward(f, a)?;
        let b = self.convs[3].forward(f, b)?;
        Ok(ops::add(f.g, a, b))
    }

    fn describe(&self, mut d: [usize; 3], out: &mut Vec<LayerSpec>) -> Result<[usize; 3]> {
        for c in &self.convs {
            d = c.describe(d, out)?;
        }
        Ok(d)
    }
}

/// Encoder-decoder over the volume; output shape equals input shape.
#[derive(Clone, Debug)]
pub struct Hourglass {
    pub down: [Unit3d; 4],
    pub up5: ConvBn,
    pub up6: ConvBn,
    pub redir1: ConvBn,
    pub redir2: ConvBn,
}

impl Hourglass {
    fn new(b: &mut Builder, name: &str, c: usize, separable: bool) -> Self {
        b.scoped(name, |b| Hourglass {
            down: [
                Unit3d::new(b, "conv1", c, 2 * c, 2, separable),
                Unit3d::new(b, "conv2", 2 * c, 2 * c, 1, separable),
                Unit3d::new(b, "conv3", 2 * c, 4 * c, 2, separable),
                Unit3d::new(b, "conv4", 4 * c, 4 * c, 1, separable),
            ],
            up5: ConvBn::new(b, "conv5", ConvSpec::deconv3d_x2(4 * c, 2 * c), false),
            up6: ConvBn::new(b, "conv6", ConvSpec::deconv3d_x2(2 * c, c), false),
            redir1: ConvBn::new(b, "redir1", ConvSpec::conv3d(c, c, 1, 1, 0), false),
            redir2: ConvBn::new(b, "redir2", ConvSpec::conv3d(2 * c, 2 * c, 1, 1, 0), false),
        })
    }

    /// Returns the output and the bottleneck activation.
    pub fn forward_with_bottleneck(&self, f: &mut Fwd, x: Var) -> Result<(Var, Var)> {
        let s = f.g.value(x).shape().to_vec();
        if s.len() != 5 || s[2..].iter().any(|&v| v % 4 != 0 || v == 0) {
            return Err(Error::config(format!(
                "hourglass needs disparity and spatial dims divisible by 4, got {:?}",
                s
            )));
        }
        let c1 = self.down[0].forward(f, x)?;
        let c2 = self.down[1].forward(f, c1)?;
        let c3 = self.down[2].forward(f, c2)?;
        let c4 = self.down[3].forward(f, c3)?;
        let u5 = self.up5.forward(f, c4)?;
        let r2 = self.redir2.forward(f, c2)?;
        let c5 = ops::add(f.g, u5, r2);
        let c5 = ops::relu(f.g, c5);
        let u6 = self.up6.forward(f, c5)?;
        let r1 = self.redir1.forward(f, x)?;
        let c6 = ops::add(f.g, u6, r1);
        Ok((ops::relu(f.g, c6), c4))
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        Ok(self.forward_with_bottleneck(f, x)?.0)
    }

    fn describe(&self, d: [usize; 3], out: &mut Vec<LayerSpec>) -> Result<[usize; 3]> {
        let d1 = self.down[0].describe(d, out)?;
        let d2 = self.down[1].describe(d1, out)?;
        let d3 = self.down[2].describe(d2, out)?;
        let d4 = self.down[3].describe(d3, out)?;
        self.up5.describe(d4, out)?;
        self.redir2.describe(d2, out)?;
        self.up6.describe(d2, out)?;
        self.redir1.describe(d, out)?;
        Ok(d)
    }
}

/// `32 -> 32 -> 1` logits head.
#[derive(Clone, Debug)]
pub struct ClassifHead {
    pub conv: ConvBn,
    pub out: Conv,
}

impl ClassifHead {
    fn new(b: &mut Builder, name: &str, c: usize) -> Self {
        b.scoped(name, |b| ClassifHead {
            conv: cbr3(b, "conv", c, c, true),
            out: Conv::new(b, "out", ConvSpec::conv3d(c, 1, 3, 1, 1)),
        })
    }

    pub fn logits(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        self.out.forward(f, y)
    }

    fn describe(&self, d: [usize; 3], out: &mut Vec<LayerSpec>, executions: u64) -> Result<()> {
        let start = out.len();
        let d = self.conv.describe(d, out)?;
        self.out.describe(d, out)?;
        for l in &mut out[start..] {
            l.executions = executions;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AggregationHead {
    pub cfg: HeadConfig,
    pub pre: PreAggregate,
    pub hourglass: [Hourglass; 2],
    pub heads: [ClassifHead; 3],
}

impl AggregationHead {
    pub fn new(b: &mut Builder, cfg: &HeadConfig, in_channels: usize) -> Result<Self> {
        if cfg.base_width == 0 {
            return Err(Error::config("head.base_width must be positive"));
        }
        let c = cfg.base_width;
        Ok(b.scoped("head", |b| AggregationHead {
            cfg: cfg.clone(),
            pre: PreAggregate::new(b, in_channels, c),
            hourglass: [
                Hourglass::new(b, "hourglass1", c, cfg.separable),
                Hourglass::new(b, "hourglass2", c, cfg.separable),
            ],
            heads: [
                ClassifHead::new(b, "classif0", c),
                ClassifHead::new(b, "classif1", c),
                ClassifHead::new(b, "classif2", c),
            ],
        }))
    }

    /// Aggregate the volume and regress full-resolution disparity.
    pub fn forward(
        &self,
        f: &mut Fwd,
        vol: CostVolume,
        out_hw: (usize, usize),
        max_disparity: usize,
        mode: Mode,
    ) -> Result<HeadResult> {
        let c0 = self.pre.forward(f, vol.var)?;
        let c1 = self.hourglass[0].forward(f, c0)?;
        let c2 = self.hourglass[1].forward(f, c1)?;
        let regress = |f: &mut Fwd, i: usize, x: Var| -> Result<Var> {
            let l = self.heads[i].logits(f, x)?;
            ops::regress(f.g, l, out_hw, max_disparity)
        };
        match mode {
            Mode::Eval => Ok(HeadResult::Eval(regress(f, 2, c2)?)),
            Mode::Train => Ok(HeadResult::Train(HeadOutputs {
                out0: regress(f, 0, c0)?,
                out1: regress(f, 1, c1)?,
                out2: regress(f, 2, c2)?,
            })),
        }
    }

    pub fn describe(&self, grid: [usize; 3], mode: Mode, out: &mut Vec<LayerSpec>) -> Result<()> {
        let d = self.pre.describe(grid, out)?;
        let d = self.hourglass[0].describe(d, out)?;
        let d = self.hourglass[1].describe(d, out)?;
        let aux = if mode == Mode::Train { 1 } else { 0 };
        self.heads[0].describe(d, out, aux)?;
        self.heads[1].describe(d, out, aux)?;
        self.heads[2].describe(d, out, 1)
    }
}
