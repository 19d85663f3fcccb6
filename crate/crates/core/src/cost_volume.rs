//! Concatenation and group-wise correlation volumes plus learned attention.

use crate::backbone::FeatureMap;
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::nn::{Builder, Conv, ConvBn, Fwd};
use crate::ops::{self, ConvSpec};
use crate::profiler::{LayerKind, LayerSpec};

/// Feature level the volumes are built at.
pub const VOLUME_LEVEL: u32 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct CostVolumeConfig {
    pub max_disparity: usize,
    pub num_groups: usize,
    /// Per-image compressed width of the concatenation volume.
    pub concat_channels: usize,
    pub num_subgroups: usize,
    /// Full-resolution pixels per disparity bin (default `2^level` = 8).
    pub disp_stride: usize,
    /// Filter the concatenation volume with learned attention weights.
    pub attention: bool,
    /// Widths of the two strided convs in each attention block.
    pub attention_widths: [usize; 2],
}

impl Default for CostVolumeConfig {
    fn default() -> Self {
        CostVolumeConfig {
            max_disparity: 192,
            num_groups: 32,
            concat_channels: 12,
            num_subgroups: 3,
            disp_stride: 1 << VOLUME_LEVEL,
            attention: true,
            attention_widths: [64, 128],
        }
    }
}

impl CostVolumeConfig {
    /// Disparity bins in the volume.
    pub fn bins(&self) -> usize {
        self.max_disparity / self.disp_stride
    }

    /// Feature-pixel shift between consecutive bins.
    pub fn bin_shift(&self) -> f32 {
        self.disp_stride as f32 / (1u32 << VOLUME_LEVEL) as f32
    }

    pub fn validate(&self, feature_channels: usize) -> Result<()> {
        if self.disp_stride == 0
            || self.max_disparity == 0
            || self.max_disparity % self.disp_stride != 0
        {
            return Err(Error::config(format!(
                "max_disparity {} must be a positive multiple of disp_stride {}",
                self.max_disparity, self.disp_stride
            )));
        }
        if self.bins() % 4 != 0 {
            return Err(Error::config(format!(
                "disparity bins ({}) must be divisible by 4 for the strided 3D stages",
                self.bins()
            )));
        }
        if self.num_groups == 0 || feature_channels % self.num_groups != 0 {
            return Err(Error::config(format!(
                "num_groups {} must divide feature channels {}",
                self.num_groups, feature_channels
            )));
        }
        if self.num_subgroups == 0 || self.num_subgroups > self.num_groups {
            return Err(Error::config(format!(
                "num_subgroups {} must lie in 1..={}",
                self.num_subgroups, self.num_groups
            )));
        }
        if self.concat_channels == 0 || self.attention_widths.contains(&0) {
            return Err(Error::config("cost volume widths must be positive"));
        }
        Ok(())
    }
}

/// Contiguous channel blocks: the first `c % k` blocks get one extra channel.
pub fn subgroup_sizes(c: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| c / k + usize::from(i < c % k)).collect()
}

/// A `[N, C, bins, H, W]` volume at a feature level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostVolume {
    pub var: Var,
    pub level: u32,
    pub disp_stride: usize,
}

/// `[N, 1, bins, H, W]` gating weights in (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionWeights {
    pub var: Var,
}

fn check_pair(f: &Fwd, lf: FeatureMap, rf: FeatureMap) -> Result<()> {
    if lf.level != rf.level {
        return Err(Error::contract(format!(
            "feature levels differ: {} vs {}",
            lf.level, rf.level
        )));
    }
    if f.g.value(lf.var).shape() != f.g.value(rf.var).shape() {
        return Err(Error::shape(format!(
            "left {:?} vs right {:?}",
            f.g.value(lf.var).shape(),
            f.g.value(rf.var).shape()
        )));
    }
    Ok(())
}

/// Group-wise correlation volume (no learned weights).
pub fn build_gwc_volume(
    f: &mut Fwd,
    lf: FeatureMap,
    rf: FeatureMap,
    cfg: &CostVolumeConfig,
) -> Result<CostVolume> {
    check_pair(f, lf, rf)?;
    let v = ops::gwc_volume(
        f.g,
        lf.var,
        rf.var,
        cfg.num_groups,
        cfg.bins(),
        cfg.bin_shift(),
    )?;
    Ok(CostVolume {
        var: v,
        level: lf.level,
        disp_stride: cfg.disp_stride,
    })
}

/// Broadcast the single attention channel over every volume channel.
pub fn apply_attention(f: &mut Fwd, pre: CostVolume, att: AttentionWeights) -> Result<CostVolume> {
    Ok(CostVolume {
        var: ops::mul_channel_broadcast(f.g, pre.var, att.var)?,
        ..pre
    })
}

/// Per-subgroup encoder: two stride-2 3D ConvBnReLU layers.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub convs: [ConvBn; 2],
}

#[derive(Clone, Debug)]
pub struct AttentionNet {
    pub sizes: Vec<usize>,
    pub blocks: Vec<AttentionBlock>,
    pub merge: ConvBn,
    pub out: Conv,
    name: String,
}

impl AttentionNet {
    fn new(b: &mut Builder, cfg: &CostVolumeConfig) -> Self {
        let [w0, w1] = cfg.attention_widths;
        let sizes = subgroup_sizes(cfg.num_groups, cfg.num_subgroups);
        b.scoped("attention", |b| {
            let blocks = sizes
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    b.scoped(&format!("block{}", i), |b| AttentionBlock {
                        convs: [
                            ConvBn::new(b, "conv0", ConvSpec::conv3d(c, w0, 3, 2, 1), true),
                            ConvBn::new(b, "conv1", ConvSpec::conv3d(w0, w1, 3, 2, 1), true),
                        ],
                    })
                })
                .collect();
            AttentionNet {
                sizes: sizes.clone(),
                blocks,
                merge: ConvBn::new(b, "merge", ConvSpec::conv3d(w1, w1, 3, 1, 1), true),
                out: Conv::new(b, "out", ConvSpec::conv3d(w1, 1, 3, 1, 1)),
                name: b.prefix(),
            }
        })
    }

    /// Correlation volume -> attention weights on the same grid.
    pub fn forward(&self, f: &mut Fwd, corr: CostVolume) -> Result<AttentionWeights> {
        let shape = f.g.value(corr.var).shape().to_vec();
        let total: usize = self.sizes.iter().sum();
        if shape.len() != 5 || shape[1] != total {
            return Err(Error::shape(format!(
                "attention expects [N,{},D,H,W], got {:?}",
                total, shape
            )));
        }
        let mut acc: Option<Var> = None;
        let mut c0 = 0;
        for (blk, &c) in self.blocks.iter().zip(&self.sizes) {
            let part = ops::slice_channels(f.g, corr.var, c0, c0 + c)?;
            c0 += c;
            let y = blk.convs[0].forward(f, part)?;
            let y = blk.convs[1].forward(f, y)?;
            acc = Some(match acc {
                Some(a) => ops::add(f.g, a, y),
                None => y,
            });
        }
        let y = self.merge.forward(f, acc.expect("at least one subgroup"))?;
        let y = self.out.forward(f, y)?;
        let y = ops::resize_linear(f.g, y, &shape[2..])?;
        Ok(AttentionWeights {
            var: ops::sigmoid(f.g, y),
        })
    }

    fn describe(&self, grid: [usize; 3], out: &mut Vec<LayerSpec>) -> Result<()> {
        let mut low = grid;
        for blk in &self.blocks {
            let d = blk.convs[0].describe(grid, out)?;
            low = blk.convs[1].describe(d, out)?;
        }
        let d = self.merge.describe(low, out)?;
        let d = self.out.describe(d, out)?;
        out.push(LayerSpec::reshaping(
            &format!("{}.upsample", self.name),
            LayerKind::Upsample,
            1,
            3,
            d,
            grid,
        ));
        out.push(LayerSpec::elementwise(
            &format!("{}.sigmoid", self.name),
            LayerKind::Activation,
            1,
            3,
            grid,
        ));
        Ok(())
    }
}

/// Learned part of the cost-volume stage.
#[derive(Clone, Debug)]
pub struct CostVolumeNet {
    pub cfg: CostVolumeConfig,
    /// 1x1 compression shared by both views.
    pub compress: Conv,
    pub attention: Option<AttentionNet>,
}

impl CostVolumeNet {
    pub fn new(b: &mut Builder, cfg: &CostVolumeConfig, feature_channels: usize) -> Result<Self> {
        cfg.validate(feature_channels)?;
        Ok(b.scoped("cost_volume", |b| CostVolumeNet {
            cfg: cfg.clone(),
            compress: Conv::new(
                b,
                "compress",
                ConvSpec::conv2d(feature_channels, cfg.concat_channels, 1, 1, 0),
            ),
            attention: cfg.attention.then(|| AttentionNet::new(b, cfg)),
        }))
    }

    /// Concatenation volume of the compressed features.
    pub fn build_concat_volume(
        &self,
        f: &mut Fwd,
        lf: FeatureMap,
        rf: FeatureMap,
    ) -> Result<CostVolume> {
        check_pair(f, lf, rf)?;
        let lc = self.compress.forward(f, lf.var)?;
        let rc = self.compress.forward(f, rf.var)?;
        let v = ops::concat_volume(f.g, lc, rc, self.cfg.bins(), self.cfg.bin_shift())?;
        Ok(CostVolume {
            var: v,
            level: lf.level,
            disp_stride: self.cfg.disp_stride,
        })
    }

    pub fn compute_attention_weights(
        &self,
        f: &mut Fwd,
        corr: CostVolume,
    ) -> Result<AttentionWeights> {
        self.attention
            .as_ref()
            .ok_or_else(|| Error::config("attention is disabled"))?
            .forward(f, corr)
    }

    /// The volume handed to aggregation: attention-filtered, or the raw
    /// concatenation volume when attention is disabled.
    pub fn forward(&self, f: &mut Fwd, lf: FeatureMap, rf: FeatureMap) -> Result<CostVolume> {
        let pre = self.build_concat_volume(f, lf, rf)?;
        match &self.attention {
            None => Ok(pre),
            Some(net) => {
                let corr = build_gwc_volume(f, lf, rf, &self.cfg)?;
                let att = net.forward(f, corr)?;
                apply_attention(f, pre, att)
            }
        }
    }

    /// Output channels of the volume handed to aggregation.
    pub fn out_channels(&self) -> usize {
        2 * self.cfg.concat_channels
    }

    /// Layer specs for level-3 features of spatial size `feat`. The
    /// compression conv runs once per view.
    pub fn describe(&self, feat: [usize; 3], out: &mut Vec<LayerSpec>) -> Result<[usize; 3]> {
        self.compress.describe(feat, out)?;
        if let Some(l) = out.last_mut() {
            l.executions = 2;
        }
        let grid = [self.cfg.bins(), feat[1], feat[2]];
        if let Some(net) = &self.attention {
            net.describe(grid, out)?;
        }
        Ok(grid)
    }
}
