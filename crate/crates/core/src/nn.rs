//! Parameter storage and the basic layers the model is assembled from.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, NormStatUpdate, Var};
use crate::ops::{self, ConvSpec};
use crate::profiler::{LayerKind, LayerSpec};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// Named learnable parameters and non-learnable buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<(String, Tensor)>,
    buffers: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: String, value: Tensor) -> ParamId {
        self.params.push((name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: String, value: Tensor) -> BufferId {
        self.buffers.push((name, value));
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].1
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].1
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].1
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor {
        &mut self.buffers[id.0].1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (BufferId, &str, &Tensor)> {
        self.buffers
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (BufferId(i), n.as_str(), t))
    }

    /// Total learnable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Learnable scalars whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Fold batch statistics into running estimates:
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn apply_norm_updates(&mut self, updates: &[NormStatUpdate]) {
        for u in updates {
            let m = u.momentum;
            for (r, &b) in self.buffers[u.running_mean.0]
                .1
                .data_mut()
                .iter_mut()
                .zip(&u.mean)
            {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, &b) in self.buffers[u.running_var.0]
                .1
                .data_mut()
                .iter_mut()
                .zip(&u.unbiased_var)
            {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }

    /// Replace every tensor by name; names and shapes must match exactly.
    pub fn load_named(
        &mut self,
        params: Vec<(String, Tensor)>,
        buffers: Vec<(String, Tensor)>,
    ) -> Result<()> {
        fn fill(
            dst: &mut [(String, Tensor)],
            src: Vec<(String, Tensor)>,
            what: &str,
        ) -> Result<()> {
            if dst.len() != src.len() {
                return Err(Error::Checkpoint(format!(
                    "expected {} {}, found {}",
                    dst.len(),
                    what,
                    src.len()
                )));
            }
            for ((dn, dt), (sn, st)) in dst.iter_mut().zip(src) {
                if *dn != sn {
                    return Err(Error::Checkpoint(format!(
                        "expected {} '{}', found '{}'",
                        what, dn, sn
                    )));
                }
                if dt.shape() != st.shape() {
                    return Err(Error::Checkpoint(format!(
                        "{} '{}' has shape {:?}, checkpoint has {:?}",
                        what,
                        dn,
                        dt.shape(),
                        st.shape()
                    )));
                }
                *dt = st;
            }
            Ok(())
        }
        fill(&mut self.params, params, "parameter")?;
        fill(&mut self.buffers, buffers, "buffer")
    }
}

/// Allocates and initializes parameters under a hierarchical name prefix.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Builder {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, leaf: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(leaf);
        s
    }

    pub fn prefix(&self) -> String {
        self.prefix.join(".")
    }

    /// Kaiming-normal weights with `std = sqrt(2 / fan_in)`.
    pub fn kaiming(&mut self, leaf: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let std = (2.0 / fan_in.max(1) as f64).sqrt() as f32;
        let dist = Normal::new(0.0f32, std).expect("finite std");
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| dist.sample(rng));
        let name = self.full_name(leaf);
        self.store.add_param(name, t)
    }

    pub fn constant(&mut self, leaf: &str, shape: &[usize], value: f32) -> ParamId {
        let name = self.full_name(leaf);
        self.store.add_param(name, Tensor::full(shape, value))
    }

    pub fn buffer(&mut self, leaf: &str, shape: &[usize], value: f32) -> BufferId {
        let name = self.full_name(leaf);
        self.store.add_buffer(name, Tensor::full(shape, value))
    }
}

/// Forward-pass context.
pub struct Fwd<'a> {
    pub g: &'a mut Graph,
    pub store: &'a ParamStore,
    pub training: bool,
}

impl<'a> Fwd<'a> {
    pub fn new(g: &'a mut Graph, store: &'a ParamStore, training: bool) -> Self {
        Fwd { g, store, training }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.g.param(self.store, id)
    }
}

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Convolution layer (any [`ConvSpec`]).
#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    pub fn new(b: &mut Builder, name: &str, spec: ConvSpec) -> Self {
        spec.validate().expect("static conv spec");
        let ws = spec.weight_shape();
        let fan_in = ws[1] * spec.kernel_volume();
        let (weight, bias, full) = b.scoped(name, |b| {
            let w = b.kaiming("weight", &ws, fan_in);
            let bias = spec
                .bias
                .then(|| b.constant("bias", &[spec.out_channels], 0.0));
            (w, bias, b.prefix())
        });
        Conv {
            name: full,
            spec,
            weight,
            bias,
        }
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        ops::conv(f.g, self.spec, x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.spec.weight_numel()
            + if self.spec.bias {
                self.spec.out_channels
            } else {
                0
            }
    }

    pub fn describe(&self, input: [usize; 3], out: &mut Vec<LayerSpec>) -> Result<[usize; 3]> {
        let o = self.spec.output_dims(input)?;
        out.push(LayerSpec::from_conv(&self.name, &self.spec, input, o));
        Ok(o)
    }
}

/// Batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub rank: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new(b: &mut Builder, name: &str, channels: usize, rank: usize) -> Self {
        b.scoped(name, |b| BatchNorm {
            name: b.prefix(),
            channels,
            rank,
            gamma: b.constant("weight", &[channels], 1.0),
            beta: b.constant("bias", &[channels], 0.0),
            running_mean: b.buffer("running_mean", &[channels], 0.0),
            running_var: b.buffer("running_var", &[channels], 1.0),
        })
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        if f.g.value(x).dim(1) != self.channels {
            return Err(Error::shape(format!(
                "{}: expected {} channels, got {:?}",
                self.name,
                self.channels,
                f.g.value(x).shape()
            )));
        }
        let gamma = f.param(self.gamma);
        let beta = f.param(self.beta);
        if f.training {
            let (y, stats) = ops::batch_norm_train(f.g, x, gamma, beta, BN_EPS);
            f.g.record_norm_update(NormStatUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                mean: stats.mean,
                unbiased_var: stats.unbiased_var,
                momentum: BN_MOMENTUM,
            });
            Ok(y)
        } else {
            let mean = f.store.buffer(self.running_mean).data();
            let var = f.store.buffer(self.running_var).data();
            Ok(ops::batch_norm_eval(f.g, x, gamma, beta, mean, var, BN_EPS))
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn describe(&self, dims: [usize; 3], out: &mut Vec<LayerSpec>) {
        out.push(LayerSpec::elementwise(
            &self.name,
            LayerKind::Norm,
            self.channels,
            self.rank,
            dims,
        ));
    }
}

/// Convolution followed by batch normalization and an optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn new(b: &mut Builder, name: &str, spec: ConvSpec, relu: bool) -> Self {
        b.scoped(name, |b| ConvBn {
            conv: Conv::new(b, "conv", spec),
            bn: BatchNorm::new(b, "bn", spec.out_channels, spec.rank),
            relu,
        })
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        let y = self.bn.forward(f, y)?;
        Ok(if self.relu { ops::relu(f.g, y) } else { y })
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }

    pub fn describe(&self, input: [usize; 3], out: &mut Vec<LayerSpec>) -> Result<[usize; 3]> {
        let o = self.conv.describe(input, out)?;
        self.bn.describe(o, out);
        if self.relu {
            out.push(LayerSpec::elementwise(
                &format!("{}.relu", self.bn.name.trim_end_matches(".bn")),
                LayerKind::Activation,
                self.conv.spec.out_channels,
                self.conv.spec.rank,
                o,
            ));
        }
        Ok(o)
    }
}

/// Spatial dims of an `[N, C, ...]` tensor as a depth-height-width triple.
pub fn dims3(t: &Tensor) -> [usize; 3] {
    match t.shape() {
        [_, _, h, w] => [1, *h, *w],
        [_, _, d, h, w] => [*d, *h, *w],
        s => panic!("dims3 on rank-{} tensor", s.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_names_are_hierarchical() {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, 0);
        let cb = b.scoped("stem", |b| {
            ConvBn::new(b, "c0", ConvSpec::conv2d(3, 4, 3, 1, 1), true)
        });
        assert_eq!(cb.conv.name, "stem.c0.conv");
        let names: Vec<_> = store.params().map(|(_, n, _)| n.to_string()).collect();
        assert_eq!(
            names,
            [
                "stem.c0.conv.weight",
                "stem.c0.bn.weight",
                "stem.c0.bn.bias"
            ]
        );
        assert_eq!(store.count(), 3 * 4 * 9 + 8);
        assert_eq!(cb.param_count(), store.count());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut Builder::new(&mut store, 0), "bn", 1, 2);
        let upd = NormStatUpdate {
            running_mean: bn.running_mean,
            running_var: bn.running_var,
            mean: vec![2.0],
            unbiased_var: vec![3.0],
            momentum: 0.1,
        };
        store.apply_norm_updates(&[upd]);
        assert!((store.buffer(bn.running_mean).data()[0] - 0.2).abs() < 1e-7);
        assert!((store.buffer(bn.running_var).data()[0] - 1.2).abs() < 1e-6);
    }
}
