//! Graph refinement of the prior pose.

mod graph;
mod layers;

pub use graph::{build_hand_graph, normalize_adjacency, SkeletonGraph};
pub use layers::{
    node_inputs, FcRefinement, GcnLayer, GraphResBlock, NormParams, RefineDims, Refiner,
    RefinementNet,
};
