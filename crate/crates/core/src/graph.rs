//! Reverse-mode automatic differentiation over a recorded op tape.
//!
//! A [`Graph`] owns every intermediate value of one forward pass. Ops push a
//! node holding their output and, when gradients are enabled and some parent
//! requires a gradient, a closure computing parent gradients from the output
//! gradient. [`Graph::backward`] replays the tape in reverse.

use std::collections::HashMap;

use crate::nn::{BufferId, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
}

/// What an op's backward closure can see.
pub struct BackwardCtx<'a> {
    pub grad: &'a Tensor,
    graph: &'a Graph,
    needs: Vec<bool>,
    output: Var,
}

impl BackwardCtx<'_> {
    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    pub fn output(&self) -> &Tensor {
        self.graph.value(self.output)
    }

    /// Whether parent `i` (in push order) needs a gradient.
    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }
}

/// Batch statistics observed by a training-mode normalization layer, to be
/// folded into the running estimates once the step is committed.
#[derive(Clone, Debug)]
pub struct NormStatUpdate {
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub mean: Vec<f32>,
    pub unbiased_var: Vec<f32>,
    pub momentum: f32,
}

/// Counters for executed work, used to cross-check analytic accounting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub conv_calls: usize,
    pub conv_macs: u64,
    pub regress_calls: usize,
}

pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    norm_updates: Vec<NormStatUpdate>,
    stats: ExecStats,
}

/// Gradients produced by [`Graph::backward`] for leaves that required them.
pub struct Gradients {
    by_node: HashMap<usize, Tensor>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(&v.0)
    }

    /// Per-parameter gradients; parameters used more than once in the graph
    /// have their contributions summed.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = Vec::new();
        for &(pid, node) in &self.params {
            let Some(g) = self.by_node.get(&node) else {
                continue;
            };
            match out.iter_mut().find(|(id, _)| *id == pid) {
                Some((_, acc)) => acc.add_assign(g),
                None => out.push((pid, g.clone())),
            }
        }
        out
    }
}

impl Graph {
    pub fn new(grad_enabled: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled,
            norm_updates: Vec::new(),
            stats: ExecStats::default(),
        }
    }

    /// A graph that records backward closures.
    pub fn training() -> Self {
        Self::new(true)
    }

    /// A graph for inference: values only.
    pub fn inference() -> Self {
        Self::new(false)
    }

    #[inline]
    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stats(&self) -> &ExecStats {
        &self.stats
    }

    pub(crate) fn stats_mut(&mut self) -> &mut ExecStats {
        &mut self.stats
    }

    pub fn norm_updates(&self) -> &[NormStatUpdate] {
        &self.norm_updates
    }

    pub(crate) fn record_norm_update(&mut self, u: NormStatUpdate) {
        self.norm_updates.push(u);
    }

    /// Constant or differentiable input.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: requires_grad && self.grad_enabled,
            parents: Vec::new(),
            backward: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.leaf(store.param(id).clone(), true);
        self.nodes[v.0].param = Some(id);
        v
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an op result. The closure is dropped unless gradients are
    /// enabled and some parent requires one.
    pub fn push<F>(&mut self, value: Tensor, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>> + 'static,
    {
        let requires_grad =
            self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let (parents, backward): (Vec<Var>, Option<BackwardFn>) = if requires_grad {
            (parents.to_vec(), Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        self.nodes.push(Node {
            value,
            requires_grad,
            parents,
            backward,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Push a value with no gradient path (e.g. a constant derived from data).
    pub fn push_constant(&mut self, value: Tensor) -> Var {
        self.input(value)
    }

    /// Backpropagate from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let seed = Tensor::ones(self.value(root).shape());
        self.backward_with(root, seed)
    }

    pub fn backward_with(&self, root: Var, seed: Tensor) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(seed);
        let mut by_node = HashMap::new();
        let mut params = Vec::new();

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            match &node.backward {
                None => {
                    if let Some(pid) = node.param {
                        params.push((pid, i));
                    }
                    by_node.insert(i, g);
                }
                Some(f) => {
                    let needs = node
                        .parents
                        .iter()
                        .map(|p| self.nodes[p.0].requires_grad)
                        .collect();
                    let ctx = BackwardCtx {
                        grad: &g,
                        graph: self,
                        needs,
                        output: Var(i),
                    };
                    let parent_grads = f(&ctx);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !self.nodes[p.0].requires_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), self.nodes[p.0].value.shape());
                        match &mut grads[p.0] {
                            Some(acc) => acc.add_assign(&pg),
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
            }
        }
        Gradients { by_node, params }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn shared_leaf_accumulates_gradient() {
        let mut g = Graph::training();
        let x = g.leaf(Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap(), true);
        let y = ops::mul(&mut g, x, x);
        let s = ops::sum_all(&mut g, y);
        let grads = g.backward(s);
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn inference_graph_records_no_backward() {
        let mut g = Graph::inference();
        let x = g.leaf(Tensor::ones(&[3]), true);
        let y = ops::relu(&mut g, x);
        assert!(!g.requires_grad(x));
        assert!(!g.requires_grad(y));
    }
}
