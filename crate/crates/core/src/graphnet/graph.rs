//! The 21-node hand skeleton graph.

use std::sync::Arc;

use crate::autodiff::{BlockMap, Tensor};
use crate::error::{Error, Result};
use crate::handmodel::skeleton::{bones, NUM_BONES, NUM_JOINTS};

/// Adjacency, its symmetric normalization and the bone incidence matrix.
/// Built once and shared read-only by every forward pass.
#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    pub adjacency: Tensor,
    pub normalized: Tensor,
    /// `20×21`; row `i` is `+1` at the child and `-1` at the parent of bone
    /// `i`.
    pub incidence: Tensor,
    propagate: Arc<BlockMap>,
    bones: Arc<BlockMap>,
}

impl SkeletonGraph {
    pub fn propagation_map(&self) -> &Arc<BlockMap> {
        &self.propagate
    }

    pub fn incidence_map(&self) -> &Arc<BlockMap> {
        &self.bones
    }

    /// Graph over an arbitrary adjacency (no incidence rows). Used for
    /// tests and toy graphs.
    pub fn from_adjacency(adjacency: Tensor) -> Result<Self> {
        let normalized = normalize_adjacency(&adjacency)?;
        let n = adjacency.rows();
        let incidence = Tensor::zeros(&[1, n]);
        Ok(Self {
            propagate: Arc::new(BlockMap::from_dense(&normalized)),
            bones: Arc::new(BlockMap::from_dense(&incidence)),
            adjacency,
            normalized,
            incidence,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }
}

/// Wrist to each MCP plus the three in-finger links of each finger.
pub fn build_hand_graph() -> SkeletonGraph {
    let mut adjacency = Tensor::zeros(&[NUM_JOINTS, NUM_JOINTS]);
    let mut incidence = Tensor::zeros(&[NUM_BONES, NUM_JOINTS]);
    for (i, (child, parent)) in bones().into_iter().enumerate() {
        adjacency.set2(child, parent, 1.0);
        adjacency.set2(parent, child, 1.0);
        incidence.set2(i, child, 1.0);
        incidence.set2(i, parent, -1.0);
    }
    let normalized = normalize_adjacency(&adjacency).expect("hand adjacency is valid");
    SkeletonGraph {
        propagate: Arc::new(BlockMap::from_dense(&normalized)),
        bones: Arc::new(BlockMap::from_dense(&incidence)),
        adjacency,
        normalized,
        incidence,
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the degrees of `A + I`.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!("adjacency must be square, got {:?}", a.shape())));
    }
    for i in 0..n {
        for j in 0..n {
            let v = a.get2(i, j);
            if v != 0.0 && v != 1.0 {
                return Err(Error::Invalid(format!("adjacency entry ({i},{j}) = {v} is not binary")));
            }
            if v != a.get2(j, i) {
                return Err(Error::Invalid("adjacency is not symmetric".into()));
            }
        }
    }
    let deg: Vec<f64> = (0..n)
        .map(|i| 1.0 + (0..n).filter(|&j| j != i).map(|j| a.get2(i, j)).sum::<f64>())
        .collect();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let aij = if i == j { 1.0 } else { a.get2(i, j) };
            if aij != 0.0 {
                out.set2(i, j, aij / (deg[i] * deg[j]).sqrt());
            }
        }
    }
    Ok(out)
}
