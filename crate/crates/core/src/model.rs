//! The full stereo network: backbone, cost volume, aggregation head.

use crate::backbone::{Backbone, BackboneConfig, ImageBatch};
use crate::cost_volume::{CostVolumeConfig, CostVolumeNet};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::head::{AggregationHead, HeadConfig, HeadResult, Mode};
use crate::nn::{Builder, Fwd, ParamStore};
use crate::profiler::{build_report, LayerSpec, ProfileReport};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub cost_volume: CostVolumeConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    /// Reduced widths and disparity range for CPU-scale training.
    pub fn desk() -> Self {
        ModelConfig {
            backbone: BackboneConfig {
                shallow_channels: [16, 16, 32],
                deep_channels: [8, 16, 32, 32],
                ge_expansion: 4,
                out_channels: 32,
            },
            cost_volume: CostVolumeConfig {
                max_disparity: 64,
                num_groups: 8,
                concat_channels: 4,
                num_subgroups: 3,
                disp_stride: 8,
                attention: true,
                attention_widths: [8, 16],
            },
            head: HeadConfig {
                base_width: 16,
                separable: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.cost_volume.validate(self.backbone.out_channels)
    }
}

/// Parameters plus module structure. Forward passes borrow it immutably.
#[derive(Clone, Debug)]
pub struct LeanStereo {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub cost_volume: CostVolumeNet,
    pub head: AggregationHead,
}

impl LeanStereo {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, seed);
        let backbone = Backbone::new(&mut b, &cfg.backbone)?;
        let cost_volume = CostVolumeNet::new(&mut b, &cfg.cost_volume, cfg.backbone.out_channels)?;
        let head = AggregationHead::new(&mut b, &cfg.head, cost_volume.out_channels())?;
        Ok(LeanStereo {
            cfg: cfg.clone(),
            store,
            backbone,
            cost_volume,
            head,
        })
    }

    pub fn max_disparity(&self) -> usize {
        self.cfg.cost_volume.max_disparity
    }

    /// Record a forward pass. `batch_stats` selects batch-statistics
    /// normalization (training) over running statistics.
    pub fn forward(
        &self,
        g: &mut Graph,
        left: Var,
        right: Var,
        mode: Mode,
        batch_stats: bool,
    ) -> Result<HeadResult> {
        let s = g.value(left).shape().to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!(
                "expected [N,3,H,W] images, got {:?}",
                s
            )));
        }
        let mut f = Fwd::new(g, &self.store, batch_stats);
        let (lf, rf) = self.backbone.forward(&mut f, left, right)?;
        let vol = self.cost_volume.forward(&mut f, lf, rf)?;
        self.head
            .forward(&mut f, vol, (s[2], s[3]), self.max_disparity(), mode)
    }

    /// Eval-mode disparity `[N, H, W]` at the padded input size.
    pub fn predict(&self, left: &ImageBatch, right: &ImageBatch) -> Result<Tensor> {
        let mut g = Graph::inference();
        let l = g.input(left.data().clone());
        let r = g.input(right.data().clone());
        let out = self
            .forward(&mut g, l, r, Mode::Eval, false)?
            .final_output();
        Ok(g.take_value(out))
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Flat layer list for one forward pass on an `hw` input pair.
    pub fn describe(&self, hw: (usize, usize), mode: Mode) -> Result<Vec<LayerSpec>> {
        let div = crate::backbone::SIZE_DIVISOR;
        if hw.0 == 0 || hw.1 == 0 || hw.0 % div != 0 || hw.1 % div != 0 {
            return Err(Error::shape(format!(
                "input {}x{} is not a positive multiple of {}",
                hw.0, hw.1, div
            )));
        }
        let mut out = Vec::new();
        let feat = self.backbone.describe(hw, &mut out)?;
        for l in &mut out {
            l.executions = 2;
        }
        let grid = self.cost_volume.describe(feat, &mut out)?;
        self.head.describe(grid, mode, &mut out)?;
        Ok(out)
    }

    pub fn profile(&self, hw: (usize, usize), mode: Mode, batch: usize) -> Result<ProfileReport> {
        build_report(self.describe(hw, mode)?, hw, batch)
    }

    /// Parameters in everything after the 2D backbone (cost-volume
    /// learning plus aggregation and heads).
    pub fn volume_stage_params(&self) -> usize {
        self.store.count_prefix("cost_volume.") + self.store.count_prefix("head.")
    }
}
