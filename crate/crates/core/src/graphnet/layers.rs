//! Graph convolution, Graph Res-blocks and the refinement heads.

use std::sync::Arc;

use rand::Rng;

use super::graph::SkeletonGraph;
use crate::autodiff::{glorot_uniform, BlockMap, ParamId, ParamStore, Session, Tensor, Var};
use crate::error::Result;
use crate::handmodel::skeleton::NUM_JOINTS;
use crate::nn::Linear;

/// `Â X W + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl GcnLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), glorot_uniform(in_dim, out_dim, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), Tensor::zeros(&[in_dim, out_dim])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    /// `x` is `[B·n, in_dim]` with `n` nodes per graph.
    pub fn forward(&self, s: &mut Session, x: Var, graph: &SkeletonGraph) -> Result<Var> {
        self.forward_scaled(s, x, graph, None)
    }

    pub fn forward_scaled(
        &self,
        s: &mut Session,
        x: Var,
        graph: &SkeletonGraph,
        weight_scale: Option<f64>,
    ) -> Result<Var> {
        let mut w = s.param(self.weight)?;
        if let Some(c) = weight_scale {
            w = s.tape.scale(w, c)?;
        }
        let b = s.param(self.bias)?;
        let ax = s.tape.block_map(x, graph.propagation_map())?;
        let y = s.tape.matmul(ax, w)?;
        s.tape.add_bias(y, b)
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Learnable gain and bias of one layer normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParams {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl NormParams {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[dim])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
            dim,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let g = s.param(self.gain)?;
        let b = s.param(self.bias)?;
        s.tape.layer_norm(x, g, b)
    }
}

/// `N(g(N(g(X)))) + skip(X)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphResBlock {
    pub g1: GcnLayer,
    pub n1: NormParams,
    pub g2: GcnLayer,
    pub n2: NormParams,
    pub skip: GcnLayer,
}

impl GraphResBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            g1: GcnLayer::new(store, &format!("{name}.g1"), dim, dim, rng),
            n1: NormParams::new(store, &format!("{name}.n1"), dim),
            g2: GcnLayer::new(store, &format!("{name}.g2"), dim, dim, rng),
            n2: NormParams::new(store, &format!("{name}.n2"), dim),
            skip: GcnLayer::new(store, &format!("{name}.skip"), dim, dim, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var, graph: &SkeletonGraph) -> Result<Var> {
        let h = self.g1.forward(s, x, graph)?;
        let h = self.n1.forward(s, h)?;
        let h = self.g2.forward(s, h, graph)?;
        let h = self.n2.forward(s, h)?;
        let k = self.skip.forward(s, x, graph)?;
        s.tape.add(h, k)
    }

    pub fn param_count(&self) -> usize {
        self.g1.param_count() + self.g2.param_count() + self.skip.param_count() + 2 * 2 * self.n1.dim
    }
}

/// Width and depth of the refinement network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineDims {
    pub feature_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    /// Relu after each residual addition.
    pub block_relu: bool,
}

/// Broadcasts the image feature to every joint and concatenates it with the
/// joint coordinates: `[B,63]`, `[B,F]` → `[B·21, 3+F]`.
pub fn node_inputs(s: &mut Session, prior: Var, feature: Var) -> Result<Var> {
    let b = s.tape.value(prior).rows();
    let coords = s.tape.reshape(prior, &[b * NUM_JOINTS, 3])?;
    let spread = Arc::new(BlockMap::broadcast(NUM_JOINTS));
    let f = s.tape.block_map(feature, &spread)?;
    s.tape.concat_cols(coords, f)
}

/// Graph network predicting a per-joint deformation.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementNet {
    pub input: GcnLayer,
    pub blocks: Vec<GraphResBlock>,
    pub output: GcnLayer,
    pub block_relu: bool,
}

impl RefinementNet {
    /// The output layer starts at zero, so an untrained net returns the
    /// prior unchanged.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: RefineDims, rng: &mut R) -> Self {
        let input = GcnLayer::new(store, &format!("{name}.input"), 3 + dims.feature_dim, dims.hidden, rng);
        let blocks = (0..dims.blocks)
            .map(|i| GraphResBlock::new(store, &format!("{name}.block{i}"), dims.hidden, rng))
            .collect();
        let output = GcnLayer::zeroed(store, &format!("{name}.output"), dims.hidden, 3);
        Self {
            input,
            blocks,
            output,
            block_relu: dims.block_relu,
        }
    }

    /// Deformation `[B·21, 3]` from node inputs `[B·21, 3+F]`.
    pub fn deformation(&self, s: &mut Session, nodes: Var, graph: &SkeletonGraph) -> Result<Var> {
        let mut h = self.input.forward(s, nodes, graph)?;
        for block in &self.blocks {
            h = block.forward(s, h, graph)?;
            if self.block_relu {
                h = s.tape.relu(h)?;
            }
        }
        self.output.forward(s, h, graph)
    }

    pub fn param_count(&self) -> usize {
        self.input.param_count()
            + self.blocks.iter().map(GraphResBlock::param_count).sum::<usize>()
            + self.output.param_count()
    }
}

/// Two-layer perceptron over the flattened `21×(3+F)` node inputs; the
/// non-graph baseline for ablations.
#[derive(Debug, Clone, PartialEq)]
pub struct FcRefinement {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FcRefinement {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, feature_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let in_dim = NUM_JOINTS * (3 + feature_dim);
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), in_dim, hidden, rng),
            fc2: Linear::zeroed(store, &format!("{name}.fc2"), hidden, 3 * NUM_JOINTS),
        }
    }

    /// Hidden width whose parameter count is closest to `budget`.
    pub fn hidden_for_budget(feature_dim: usize, budget: usize) -> usize {
        let in_dim = NUM_JOINTS * (3 + feature_dim);
        let out = 3 * NUM_JOINTS;
        // in·h + h + h·out + out
        let h = (budget.saturating_sub(out) as f64 / (in_dim + 1 + out) as f64).round() as usize;
        h.max(1)
    }

    pub fn deformation(&self, s: &mut Session, nodes: Var) -> Result<Var> {
        let rows = s.tape.value(nodes).rows();
        let cols = s.tape.value(nodes).cols();
        let b = rows / NUM_JOINTS;
        let flat = s.tape.reshape(nodes, &[b, NUM_JOINTS * cols])?;
        let h = self.fc1.forward(s, flat)?;
        let h = s.tape.relu(h)?;
        let d = self.fc2.forward(s, h)?;
        s.tape.reshape(d, &[rows, 3])
    }

    pub fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }
}

/// Refinement head used by a generator.
#[derive(Debug, Clone, PartialEq)]
pub enum Refiner {
    Gcn(RefinementNet),
    Fc(FcRefinement),
}

impl Refiner {
    /// `P̂ = P̃ + net(P̃ ⊕ f)`; `prior` is `[B,63]`, `feature` `[B,F]`.
    pub fn refine(&self, s: &mut Session, prior: Var, feature: Var, graph: &SkeletonGraph) -> Result<Var> {
        let delta = self.deformation(s, prior, feature, graph)?;
        s.tape.add(prior, delta)
    }

    /// The deformation alone, shaped `[B,63]`.
    pub fn deformation(&self, s: &mut Session, prior: Var, feature: Var, graph: &SkeletonGraph) -> Result<Var> {
        let b = s.tape.value(prior).rows();
        let nodes = node_inputs(s, prior, feature)?;
        let d = match self {
            Refiner::Gcn(net) => net.deformation(s, nodes, graph)?,
            Refiner::Fc(net) => net.deformation(s, nodes)?,
        };
        s.tape.reshape(d, &[b, 3 * NUM_JOINTS])
    }

    pub fn param_count(&self) -> usize {
        match self {
            Refiner::Gcn(n) => n.param_count(),
            Refiner::Fc(n) => n.param_count(),
        }
    }
}
