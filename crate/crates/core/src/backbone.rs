//! Two-branch feature extractor.
//!
//! The shallow branch keeps spatial detail with plain 3x3 convolutions down
//! to 1/8 resolution. The deep branch reaches 1/32 through a stem and
//! gather-and-expansion (GE) layers, then adds a global context vector. The
//! aggregation layer gates each branch with the other and fuses them at 1/8.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Builder, Conv, ConvBn, Fwd, ParamStore};
use crate::ops::{self, ConvSpec};
use crate::profiler::{LayerKind, LayerSpec};
use crate::tensor::Tensor;

/// Per-channel ImageNet statistics used for standardization.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Input images must be divisible by this (five stride-2 stages).
pub const SIZE_DIVISOR: usize = 32;

/// A standardized `[N, 3, H, W]` batch whose H and W are multiples of 32.
#[derive(Clone, Debug)]
pub struct ImageBatch {
    data: Tensor,
    /// Size before padding.
    pub orig_hw: (usize, usize),
}

impl ImageBatch {
    pub fn new(data: Tensor, orig_hw: (usize, usize)) -> Result<Self> {
        match *data.shape() {
            [_, 3, h, w] if h % SIZE_DIVISOR == 0 && w % SIZE_DIVISOR == 0 && h > 0 && w > 0 => {
                if orig_hw.0 > h || orig_hw.1 > w {
                    return Err(Error::contract(format!(
                        "original size {:?} exceeds padded size {}x{}",
                        orig_hw, h, w
                    )));
                }
                Ok(ImageBatch { data, orig_hw })
            }
            _ => Err(Error::contract(format!(
                "image batch must be [N,3,H,W] with H,W divisible by {}, got {:?}",
                SIZE_DIVISOR,
                data.shape()
            ))),
        }
    }

    /// Batch whose padded and original sizes coincide.
    pub fn unpadded(data: Tensor) -> Result<Self> {
        let hw = match *data.shape() {
            [_, _, h, w] => (h, w),
            _ => (0, 0),
        };
        Self::new(data, hw)
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.data.dim(2), self.data.dim(3))
    }
}

/// A feature tensor recorded on a graph, at scale `1 / 2^level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureMap {
    pub var: Var,
    pub level: u32,
}

impl FeatureMap {
    /// Check `spatial * 2^level == input size`.
    pub fn check_scale(&self, g: &Graph, input_hw: (usize, usize)) -> Result<()> {
        let s = g.value(self.var).shape();
        let f = 1usize << self.level;
        if s.len() != 4 || s[2] * f != input_hw.0 || s[3] * f != input_hw.1 {
            return Err(Error::contract(format!(
                "feature map {:?} at level {} does not match input {:?}",
                s, self.level, input_hw
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// Widths of the three shallow stages (levels 1..3).
    pub shallow_channels: [usize; 3],
    /// Widths at levels 2 (stem), 3, 4 and 5.
    pub deep_channels: [usize; 4],
    pub ge_expansion: usize,
    pub out_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            shallow_channels: [64, 64, 128],
            deep_channels: [16, 32, 64, 128],
            ge_expansion: 6,
            out_channels: 128,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shallow_channels.contains(&0)
            || self.deep_channels.contains(&0)
            || self.ge_expansion == 0
            || self.out_channels == 0
        {
            return Err(Error::config("backbone widths must be positive"));
        }
        if self.shallow_channels[2] != self.deep_channels[3] {
            return Err(Error::config(format!(
                "shallow ({}) and deep ({}) output widths must match for aggregation",
                self.shallow_channels[2], self.deep_channels[3]
            )));
        }
        if self.deep_channels[0] < 2 {
            return Err(Error::config("stem width must be at least 2"));
        }
        Ok(())
    }
}

fn c3x3(cin: usize, cout: usize, stride: usize) -> ConvSpec {
    ConvSpec::conv2d(cin, cout, 3, stride, 1)
}

fn c1x1(cin: usize, cout: usize) -> ConvSpec {
    ConvSpec::conv2d(cin, cout, 1, 1, 0)
}

fn dw3x3(cin: usize, mult: usize, stride: usize) -> ConvSpec {
    ConvSpec::conv2d(cin, cin * mult, 3, stride, 1).with_groups(cin)
}

fn run_seq(layers: &[ConvBn], f: &mut Fwd, mut x: Var) -> Result<Var> {
    for l in layers {
        x = l.forward(f, x)?;
    }
    Ok(x)
}

fn describe_seq(
    layers: &[ConvBn],
    mut d: [usize; 3],
    out: &mut Vec<LayerSpec>,
) -> Result<[usize; 3]> {
    for l in layers {
        d = l.describe(d, out)?;
    }
    Ok(d)
}

/// Eight 3x3 ConvBnReLU layers: strides 2,1 | 2,1,1 | 2,1,1.
#[derive(Clone, Debug)]
pub struct ShallowBranch {
    pub layers: Vec<ConvBn>,
}

impl ShallowBranch {
    pub fn new(b: &mut Builder, cfg: &BackboneConfig) -> Self {
        let [c1, c2, c3] = cfg.shallow_channels;
        let plan = [
            (3, c1, 2),
            (c1, c1, 1),
            (c1, c2, 2),
            (c2, c2, 1),
            (c2, c2, 1),
            (c2, c3, 2),
            (c3, c3, 1),
            (c3, c3, 1),
        ];
        let layers = b.scoped("shallow", |b| {
            plan.iter()
                .enumerate()
                .map(|(i, &(ci, co, s))| {
                    ConvBn::new(b, &format!("conv{}", i), c3x3(ci, co, s), true)
                })
                .collect()
        });
        ShallowBranch { layers }
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<FeatureMap> {
        Ok(FeatureMap {
            var: run_seq(&self.layers, f, x)?,
            level: 3,
        })
    }

    pub fn describe(&self, d: [usize; 3], out: &mut Vec<LayerSpec>) -> Result<[usize; 3]> {
        describe_seq(&self.layers, d, out)
    }
}

/// Stride-4 stem with parallel conv and max-pool paths.
#[derive(Clone, Debug)]
pub struct Stem {
    pub conv: ConvBn,
    pub left: [ConvBn; 2],
    pub fuse: ConvBn,
    name: String,
}

impl Stem {
    fn new(b: &mut Builder, c: usize) -> Self {
        b.scoped("stem", |b| Stem {
            conv: ConvBn::new(b, "conv", c3x3(3, c, 2), true),
            left: [
                ConvBn::new(b, "left0", c1x1(c, c / 2), true),
                ConvBn::new(b, "left1", c3x3(c / 2, c, 2), true),
            ],
            fuse: ConvBn::new(b, "fuse", c3x3(2 * c, c, 1), true),
            name: b.prefix(),
        })
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let x = self.conv.forward(f, x)?;
        let l = run_seq(&self.left, f, x)?;
        let r = ops::max_pool2d(f.g, x, 3, 2, 1)?;
        let cat = ops::concat_channels(f.g, &[l, r])?;
        self.fuse.forward(f, cat)
    }

    fn describe(&self, d: [usize; 3], out: &mut Vec<LayerSpec>) -> Result<[usize; 3]> {
        let d1 = self.conv.describe(d, out)?;
        let d2 = describe_seq(&self.left, d1, out)?;
        let c = self.conv.conv.spec.out_channels;
        out.push(LayerSpec::reshaping(
            &format!("{}.pool", self.name),
            LayerKind::Pool,
            c,
            2,
            d1,
            d2,
        ));
        self.fuse.describe(d2, out)
    }
}

/// Gather-and-expansion layer. With `stride == 2` it halves the resolution
/// through two depthwise convs and a depthwise+pointwise shortcut; with
/// `stride == 1` it keeps shape and uses an identity shortcut.
#[derive(Clone, Debug)]
pub struct GeLayer {
    pub conv: ConvBn,
    pub dw: Vec<ConvBn>,
    pub project: ConvBn,
    pub shortcut: Vec<ConvBn>,
}

impl GeLayer {
    fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, stride: usize, e: usize) -> Self {
        let mid = cin * e;
        b.scoped(name, |b| {
            let conv = ConvBn::new(b, "conv", c3x3(cin, cin, 1), true);
            let (dw, shortcut) = if stride == 2 {
                (
                    vec![
                        ConvBn::new(b, "dw0", dw3x3(cin, e, 2), false),
                        ConvBn::new(b, "dw1", dw3x3(mid, 1, 1), true),
                    ],
                    vec![
                        ConvBn::new(b, "short_dw", dw3x3(cin, 1, 2), false),
                        ConvBn::new(b, "short_pw", c1x1(cin, cout), false),
                    ],
                )
            } else {
                (
                    vec![ConvBn::new(b, "dw0", dw3x3(cin, e, 1), true)],
                    Vec::new(),
                )
            };
            GeLayer {
                conv,
                dw,
                project: ConvBn::new(b, "project", c1x1(mid, cout), false),
                shortcut,
            }
        })
    }

    fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        let y = run_seq(&self.dw, f, y)?;
        let y = self.project.forward(f, y)?;
        let s = if self.shortcut.is_empty() {
            x
        } else {
            run_seq(&self.shortcut, f, x)?
        };
        let sum = ops::add(f.g, y, s);
        Ok(ops::relu(f.g, sum))
    }

    fn describe(&self, d: [usize; 3], out: &mut Vec<LayerSpec>) -> Result<[usize; 3]> {
        let d1 = self.conv.describe(d, out)?;
        let d2 = describe_seq(&self.dw, d1, out)?;
        let d3 = self.project.describe(d2, out)?;
        describe_seq(&self.shortcut, d, out)?;
        Ok(d3)
    }
}

/// Global context: pool, 1x1 conv (with bias), broadcast add, 3x3 ConvBnReLU.
///
/// The pooled vector is not batch-normalized: with one sample per batch its
/// batch statistics are degenerate (zero variance).
#[derive(Clone, Debug)]
pub struct ContextBlock {
    pub gap_conv: Conv,
    pub last: ConvBn,
    name: String,
}

impl ContextBlock {
    fn new(b: &mut Builder, c: usize) -> Self {
        b.scoped("context", |b| ContextBlock {
            gap_conv: Conv::new(b, "gap_conv", c1x1(c, c).with_bias(true)),
            last: ConvBn::new(b, "last", c3x3(c, c, 1), true),
            name: b.prefix(),
        })
    }

    fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let p = ops::global_avg_pool(f.g, x);
        let p = self.gap_conv.forward(f, p)?;
        let p = ops::relu(f.g, p);
        let y = ops::add_spatial_broadcast(f.g, x, p)?;
        self.last.forward(f, y)
    }

    fn describe(&self, d: [usize; 3], out: &mut Vec<LayerSpec>) -> Result<[usize; 3]> {
        let c = self.gap_conv.spec.in_channels;
        out.push(LayerSpec::reshaping(
            &format!("{}.gap", self.name),
            LayerKind::Pool,
            c,
            2,
            d,
            [1, 1, 1],
        ));
        self.gap_conv.describe([1, 1, 1], out)?;
        out.push(LayerSpec::elementwise(
            &format!("{}.gap_relu", self.name),
            LayerKind::Activation,
            c,
            2,
            [1, 1, 1],
        ));
        self.last.describe(d, out)
    }
}

#[derive(Clone, Debug)]
pub struct DeepBranch {
    pub stem: Stem,
    pub ge: Vec<GeLayer>,
    pub context: ContextBlock,
}

impl DeepBranch {
    pub fn new(b: &mut Builder, cfg: &BackboneConfig) -> Self {
        let [c2, c3, c4, c5] = cfg.deep_channels;
        let e = cfg.ge_expansion;
        b.scoped("deep", |b| {
            let stem = Stem::new(b, c2);
            let plan = [
                (c2, c3, 2),
                (c3, c3, 1),
                (c3, c4, 2),
                (c4, c4, 1),
                (c4, c5, 2),
                (c5, c5, 1),
                (c5, c5, 1),
                (c5, c5, 1),
            ];
            let ge = plan
                .iter()
                .enumerate()
                .map(|(i, &(ci, co, s))| GeLayer::new(b, &format!("ge{}", i), ci, co, s, e))
                .collect();
            DeepBranch {
                stem,
                ge,
                context: ContextBlock::new(b, c5),
            }
        })
    }

    pub fn stem_forward(&self, f: &mut Fwd, x: Var) -> Result<FeatureMap> {
        Ok(FeatureMap {
            var: self.stem.forward(f, x)?,
            level: 2,
        })
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<FeatureMap> {
        let mut y = self.stem.forward(f, x)?;
        for l in &self.ge {
            y = l.forward(f, y)?;
        }
        Ok(FeatureMap {
            var: self.context.forward(f, y)?,
            level: 5,
        })
    }

    pub fn describe(&self, d: [usize; 3], out: &mut Vec<LayerSpec>) -> Result<[usize; 3]> {
        let mut d = self.stem.describe(d, out)?;
        for l in &self.ge {
            d = l.describe(d, out)?;
        }
        self.context.describe(d, out)
    }
}

/// Mutual gating of the two branches, fused at level 3.
#[derive(Clone, Debug)]
pub struct Aggregation {
    /// Deep features -> gate for the shallow branch.
    pub deep_gate: ConvBn,
    /// Shallow features -> stride-2 conv (then avg-pool) -> gate for the deep branch.
    pub shallow_down: ConvBn,
    pub fuse: ConvBn,
    name: String,
}

impl Aggregation {
    pub fn new(b: &mut Builder, cfg: &BackboneConfig) -> Self {
        let c = cfg.shallow_channels[2];
        b.scoped("aggregate", |b| Aggregation {
            deep_gate: ConvBn::new(b, "deep_gate", c3x3(c, c, 1), false),
            shallow_down: ConvBn::new(b, "shallow_down", c3x3(c, c, 2), false),
            fuse: ConvBn::new(b, "fuse", c3x3(c, cfg.out_channels, 1), true),
            name: b.prefix(),
        })
    }

    /// Gate applied to the shallow branch: `sigmoid(up4(conv(deep)))`.
    pub fn shallow_gate(&self, f: &mut Fwd, deep: Var, out_hw: (usize, usize)) -> Result<Var> {
        let a = self.deep_gate.forward(f, deep)?;
        let a = ops::resize_linear(f.g, a, &[out_hw.0, out_hw.1])?;
        Ok(ops::sigmoid(f.g, a))
    }

    pub fn forward(
        &self,
        f: &mut Fwd,
        shallow: FeatureMap,
        deep: FeatureMap,
    ) -> Result<FeatureMap> {
        let (ss, ds) = (
            f.g.value(shallow.var).shape().to_vec(),
            f.g.value(deep.var).shape().to_vec(),
        );
        let c = self.deep_gate.conv.spec.in_channels;
        if shallow.level != 3
            || deep.level != 5
            || ss.len() != 4
            || ds.len() != 4
            || ss[1] != c
            || ds[1] != c
            || ss[0] != ds[0]
            || ss[2] != ds[2] * 4
            || ss[3] != ds[3] * 4
        {
            return Err(Error::contract(format!(
                "aggregation needs level-3 and level-5 maps with {} channels, got {:?}@{} and {:?}@{}",
                c, ss, shallow.level, ds, deep.level
            )));
        }
        let gate_a = self.shallow_gate(f, deep.var, (ss[2], ss[3]))?;
        let a = ops::mul(f.g, shallow.var, gate_a);
        let b = self.shallow_down.forward(f, shallow.var)?;
        let b = ops::avg_pool2d(f.g, b, 3, 2, 1)?;
        let gate_b = ops::sigmoid(f.g, b);
        let b = ops::mul(f.g, deep.var, gate_b);
        let b = ops::resize_linear(f.g, b, &[ss[2], ss[3]])?;
        let sum = ops::add(f.g, a, b);
        Ok(FeatureMap {
            var: self.fuse.forward(f, sum)?,
            level: 3,
        })
    }

    pub fn describe(
        &self,
        shallow: [usize; 3],
        deep: [usize; 3],
        out: &mut Vec<LayerSpec>,
    ) -> Result<[usize; 3]> {
        let c = self.deep_gate.conv.spec.in_channels;
        let d = self.deep_gate.describe(deep, out)?;
        out.push(LayerSpec::reshaping(
            &format!("{}.up_gate", self.name),
            LayerKind::Upsample,
            c,
            2,
            d,
            shallow,
        ));
        out.push(LayerSpec::elementwise(
            &format!("{}.sigmoid_a", self.name),
            LayerKind::Activation,
            c,
            2,
            shallow,
        ));
        let d4 = self.shallow_down.describe(shallow, out)?;
        let d5 = [1, (d4[1] - 1) / 2 + 1, (d4[2] - 1) / 2 + 1];
        out.push(LayerSpec::reshaping(
            &format!("{}.pool", self.name),
            LayerKind::Pool,
            c,
            2,
            d4,
            d5,
        ));
        out.push(LayerSpec::elementwise(
            &format!("{}.sigmoid_b", self.name),
            LayerKind::Activation,
            c,
            2,
            d5,
        ));
        out.push(LayerSpec::reshaping(
            &format!("{}.up_b", self.name),
            LayerKind::Upsample,
            c,
            2,
            d5,
            shallow,
        ));
        self.fuse.describe(shallow, out)
    }
}

/// Weight-shared two-branch backbone.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub shallow: ShallowBranch,
    pub deep: DeepBranch,
    pub aggregate: Aggregation,
}

impl Backbone {
    pub fn new(b: &mut Builder, cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(b.scoped("backbone", |b| Backbone {
            cfg: cfg.clone(),
            shallow: ShallowBranch::new(b, cfg),
            deep: DeepBranch::new(b, cfg),
            aggregate: Aggregation::new(b, cfg),
        }))
    }

    /// Features of one image batch at level 3.
    pub fn forward_one(&self, f: &mut Fwd, img: Var) -> Result<FeatureMap> {
        let s = f.g.value(img).shape().to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] % SIZE_DIVISOR != 0 || s[3] % SIZE_DIVISOR != 0 {
            return Err(Error::contract(format!(
                "backbone input must be [N,3,H,W] with H,W divisible by {}, got {:?}",
                SIZE_DIVISOR, s
            )));
        }
        let sh = self.shallow.forward(f, img)?;
        let dp = self.deep.forward(f, img)?;
        self.aggregate.forward(f, sh, dp)
    }

    /// `(LF, RF)` from the same weights.
    pub fn forward(&self, f: &mut Fwd, left: Var, right: Var) -> Result<(FeatureMap, FeatureMap)> {
        if f.g.value(left).shape() != f.g.value(right).shape() {
            return Err(Error::shape(format!(
                "left {:?} and right {:?} differ",
                f.g.value(left).shape(),
                f.g.value(right).shape()
            )));
        }
        Ok((self.forward_one(f, left)?, self.forward_one(f, right)?))
    }

    pub fn param_count(&self, store: &ParamStore) -> usize {
        store.count_prefix("backbone.")
    }

    /// Layer specs for one image of size `hw`.
    pub fn describe(&self, hw: (usize, usize), out: &mut Vec<LayerSpec>) -> Result<[usize; 3]> {
        let d = [1, hw.0, hw.1];
        let s = self.shallow.describe(d, out)?;
        let dp = self.deep.describe(d, out)?;
        self.aggregate.describe(s, dp, out)
    }
}

/// Convenience: run one batch through the backbone on a fresh graph.
pub fn extract(
    backbone: &Backbone,
    store: &ParamStore,
    img: &ImageBatch,
    training: bool,
) -> Result<Tensor> {
    let mut g = Graph::new(false);
    let x = g.input(img.data().clone());
    let mut f = Fwd::new(&mut g, store, training);
    let fm = backbone.forward_one(&mut f, x)?;
    fm.check_scale(&g, img.hw())?;
    Ok(g.take_value(fm.var))
}
