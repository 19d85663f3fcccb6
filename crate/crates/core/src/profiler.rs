//! Analytic parameter/MAC accounting and the inference timing protocol.
//!
//! A model describes its eval (or train) path as a flat list of
//! [`LayerSpec`]s with resolved shapes. Parameters are counted once per
//! layer; MACs are multiplied by the number of times the layer executes in
//! one forward pass (the backbone runs once per image).
//!
//! Convolution MACs are `(Cin/groups) * Cout * prod(kernel) * prod(out)`.
//! Transposed convolutions are charged on their input grid,
//! `Cin * (Cout/groups) * prod(kernel) * prod(in)`, which is the number of
//! multiply-accumulates actually performed. Norm, activation, pooling and
//! resampling layers cost 0 MACs.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::ops::ConvSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Conv3d,
    Transpose3d,
    Depthwise,
    Pointwise,
    Linear,
    Norm,
    Activation,
    Pool,
    Upsample,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Conv3d => "conv3d",
            LayerKind::Transpose3d => "transpose3d",
            LayerKind::Depthwise => "depthwise",
            LayerKind::Pointwise => "pointwise",
            LayerKind::Linear => "linear",
            LayerKind::Norm => "norm",
            LayerKind::Activation => "activation",
            LayerKind::Pool => "pool",
            LayerKind::Upsample => "upsample",
        }
    }

    fn is_conv(self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d
                | LayerKind::Conv3d
                | LayerKind::Transpose3d
                | LayerKind::Depthwise
                | LayerKind::Pointwise
        )
    }
}

/// One layer with resolved shapes. Spatial dims are depth-height-width
/// triples; 2D layers use depth 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub rank: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output_padding: [usize; 3],
    pub groups: usize,
    pub bias: bool,
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
    /// Times this layer runs per forward pass (0 = built but skipped).
    pub executions: u64,
}

impl LayerSpec {
    pub fn from_conv(name: &str, spec: &ConvSpec, input: [usize; 3], output: [usize; 3]) -> Self {
        let kind = if spec.transposed {
            LayerKind::Transpose3d
        } else if spec.groups > 1 && spec.groups == spec.in_channels {
            LayerKind::Depthwise
        } else if spec.kernel_volume() == 1 && spec.groups == 1 {
            LayerKind::Pointwise
        } else if spec.rank == 2 {
            LayerKind::Conv2d
        } else {
            LayerKind::Conv3d
        };
        LayerSpec {
            name: name.to_string(),
            kind,
            rank: spec.rank,
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
            output_padding: spec.output_padding,
            groups: spec.groups,
            bias: spec.bias,
            in_dims: input,
            out_dims: output,
            executions: 1,
        }
    }

    /// Zero-MAC layer that preserves channels (norm, activation).
    pub fn elementwise(
        name: &str,
        kind: LayerKind,
        channels: usize,
        rank: usize,
        dims: [usize; 3],
    ) -> Self {
        Self::reshaping(name, kind, channels, rank, dims, dims)
    }

    /// Zero-MAC layer that may change spatial dims (pool, upsample).
    pub fn reshaping(
        name: &str,
        kind: LayerKind,
        channels: usize,
        rank: usize,
        input: [usize; 3],
        output: [usize; 3],
    ) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind,
            rank,
            in_channels: channels,
            out_channels: channels,
            kernel: [1; 3],
            stride: [1; 3],
            padding: [0; 3],
            output_padding: [0; 3],
            groups: 1,
            bias: false,
            in_dims: input,
            out_dims: output,
            executions: 1,
        }
    }

    fn conv_spec(&self) -> ConvSpec {
        ConvSpec {
            rank: self.rank,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            groups: self.groups,
            transposed: self.kind == LayerKind::Transpose3d,
            output_padding: self.output_padding,
            bias: self.bias,
        }
    }

    /// Learnable scalars in this layer.
    pub fn params(&self) -> u64 {
        match self.kind {
            k if k.is_conv() => {
                let s = self.conv_spec();
                (s.weight_numel() + if s.bias { s.out_channels } else { 0 }) as u64
            }
            LayerKind::Linear => {
                (self.in_channels * self.out_channels
                    + if self.bias { self.out_channels } else { 0 }) as u64
            }
            LayerKind::Norm => 2 * self.out_channels as u64,
            _ => 0,
        }
    }

    /// MACs for one execution on a batch of one.
    pub fn macs_once(&self) -> u64 {
        match self.kind {
            k if k.is_conv() => self.conv_spec().macs(self.in_dims, self.out_dims),
            LayerKind::Linear => (self.in_channels * self.out_channels) as u64,
            _ => 0,
        }
    }

    /// Check that the recorded output dims follow from the stride arithmetic.
    pub fn validate(&self) -> Result<()> {
        if self.kind.is_conv() {
            let s = self.conv_spec();
            s.validate()?;
            let o = s.output_dims(self.in_dims)?;
            if o != self.out_dims {
                return Err(Error::shape(format!(
                    "{}: recorded output {:?}, stride arithmetic gives {:?}",
                    self.name, self.out_dims, o
                )));
            }
        }
        if self.in_dims.contains(&0) || self.out_dims.contains(&0) {
            return Err(Error::shape(format!(
                "{}: unresolved spatial dims",
                self.name
            )));
        }
        Ok(())
    }
}

/// Per-layer parameter and MAC totals.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileEntry {
    pub layer: LayerSpec,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileReport {
    pub input_hw: (usize, usize),
    pub batch: usize,
    pub entries: Vec<ProfileEntry>,
    pub total_params: u64,
    pub total_macs: u64,
}

impl ProfileReport {
    pub fn params_m(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn gmacs(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    /// Totals for layers whose name starts with `prefix`.
    pub fn subtotal(&self, prefix: &str) -> (u64, u64) {
        self.entries
            .iter()
            .filter(|e| e.layer.name.starts_with(prefix))
            .fold((0, 0), |(p, m), e| (p + e.params, m + e.macs))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<48} {:<12} {:>5} {:>5} {:>18} {:>10} {:>14}",
            "layer", "kind", "cin", "cout", "out(DxHxW)", "params", "MACs"
        );
        for e in &self.entries {
            let l = &e.layer;
            let _ = writeln!(
                s,
                "{:<48} {:<12} {:>5} {:>5} {:>18} {:>10} {:>14}",
                l.name,
                l.kind.as_str(),
                l.in_channels,
                l.out_channels,
                format!("{}x{}x{}", l.out_dims[0], l.out_dims[1], l.out_dims[2]),
                e.params,
                e.macs
            );
        }
        let _ = writeln!(
            s,
            "total: {:.4} M params, {:.3} GMACs at {}x{} (batch {})",
            self.params_m(),
            self.gmacs(),
            self.input_hw.0,
            self.input_hw.1,
            self.batch
        );
        s
    }

    pub fn to_records(&self) -> String {
        format!(
            "input_height={}\ninput_width={}\nbatch={}\nlayers={}\nparams={}\nmacs={}\nparams_m={:.6}\ngmacs={:.6}\n",
            self.input_hw.0,
            self.input_hw.1,
            self.batch,
            self.entries.len(),
            self.total_params,
            self.total_macs,
            self.params_m(),
            self.gmacs()
        )
    }
}

/// Exact count of learnable scalars across layer specs.
pub fn count_parameters(layers: &[LayerSpec]) -> u64 {
    layers.iter().map(LayerSpec::params).sum()
}

/// Total MACs for `batch` samples.
pub fn count_macs(layers: &[LayerSpec], batch: usize) -> Result<u64> {
    let mut total = 0u64;
    for l in layers {
        l.validate()?;
        total += l.macs_once() * l.executions * batch as u64;
    }
    Ok(total)
}

pub fn build_report(
    layers: Vec<LayerSpec>,
    input_hw: (usize, usize),
    batch: usize,
) -> Result<ProfileReport> {
    let mut entries = Vec::with_capacity(layers.len());
    for l in layers {
        l.validate()?;
        let params = l.params();
        let macs = l.macs_once() * l.executions * batch as u64;
        entries.push(ProfileEntry {
            layer: l,
            params,
            macs,
        });
    }
    let total_params = entries.iter().map(|e| e.params).sum();
    let total_macs = entries.iter().map(|e| e.macs).sum();
    Ok(ProfileReport {
        input_hw,
        batch,
        entries,
        total_params,
        total_macs,
    })
}

/// Compute device selection. Only the CPU backend exists.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Device {
    Cpu,
}

pub const DEVICE_ENV: &str = "LEANSTEREO_DEVICE";

/// Resolve the device from an explicit flag, else the environment, else CPU.
pub fn resolve_device(explicit: Option<&str>) -> Result<Device> {
    let env = std::env::var(DEVICE_ENV).ok();
    let name = explicit.map(str::to_string).or(env);
    match name.as_deref().map(str::trim) {
        None | Some("") | Some("cpu") => Ok(Device::Cpu),
        Some(other) => Err(Error::Device(format!(
            "'{}' is not available (supported: cpu)",
            other
        ))),
    }
}

/// Something that can run one inference pass.
pub trait InferenceTarget {
    fn infer(&mut self) -> Result<()>;

    /// Block until all submitted work is complete.
    fn synchronize(&mut self) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchmarkProtocol {
    pub warmup: usize,
    pub timed: usize,
    pub runs: usize,
}

impl Default for BenchmarkProtocol {
    fn default() -> Self {
        BenchmarkProtocol {
            warmup: 20,
            timed: 400,
            runs: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub warmup_passes: usize,
    pub timed_passes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkResult {
    pub runs: Vec<RunStats>,
    /// Mean of the per-run means.
    pub overall_mean_ms: f64,
}

impl BenchmarkResult {
    pub fn run_means(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.mean_ms).collect()
    }

    pub fn to_records(&self) -> String {
        let mut s = String::new();
        for (i, r) in self.runs.iter().enumerate() {
            let _ = writeln!(
                s,
                "run={} warmup={} timed={} mean_ms={:.4} std_ms={:.4}",
                i, r.warmup_passes, r.timed_passes, r.mean_ms, r.std_ms
            );
        }
        let _ = writeln!(s, "overall_mean_ms={:.4}", self.overall_mean_ms);
        s
    }
}

/// Per run: `warmup` untimed passes, then `timed` passes each measured from
/// submission through synchronization. Repeats `runs` times.
pub fn benchmark_inference<T: InferenceTarget + ?Sized>(
    target: &mut T,
    protocol: BenchmarkProtocol,
) -> Result<BenchmarkResult> {
    if protocol.runs == 0 || protocol.timed == 0 {
        return Err(Error::config(
            "benchmark needs at least one run and one timed pass",
        ));
    }
    let mut runs = Vec::with_capacity(protocol.runs);
    for _ in 0..protocol.runs {
        for _ in 0..protocol.warmup {
            target.infer()?;
        }
        target.synchronize()?;
        let mut samples = Vec::with_capacity(protocol.timed);
        for _ in 0..protocol.timed {
            let t0 = Instant::now();
            target.infer()?;
            target.synchronize()?;
            samples.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        runs.push(RunStats {
            mean_ms: mean,
            std_ms: var.sqrt(),
            warmup_passes: protocol.warmup,
            timed_passes: protocol.timed,
        });
    }
    let overall = runs.iter().map(|r| r.mean_ms).sum::<f64>() / runs.len() as f64;
    Ok(BenchmarkResult {
        runs,
        overall_mean_ms: overall,
    })
}

/// Test double that sleeps a fixed time per pass and counts calls.
#[derive(Clone, Debug)]
pub struct ConstantLatencyStub {
    pub latency: Duration,
    /// Extra latency for the first `slow_calls` passes.
    pub slow_latency: Duration,
    pub slow_calls: usize,
    pub calls: usize,
    pub syncs: usize,
}

impl ConstantLatencyStub {
    pub fn new(latency: Duration) -> Self {
        ConstantLatencyStub {
            latency,
            slow_latency: latency,
            slow_calls: 0,
            calls: 0,
            syncs: 0,
        }
    }
}

impl InferenceTarget for ConstantLatencyStub {
    fn infer(&mut self) -> Result<()> {
        let d = if self.calls < self.slow_calls {
            self.slow_latency
        } else {
            self.latency
        };
        self.calls += 1;
        let t0 = Instant::now();
        // Spin rather than sleep: sleep granularity would dominate small latencies.
        while t0.elapsed() < d {
            std::hint::spin_loop();
        }
        Ok(())
    }

    fn synchronize(&mut self) -> Result<()> {
        self.syncs += 1;
        Ok(())
    }
}
