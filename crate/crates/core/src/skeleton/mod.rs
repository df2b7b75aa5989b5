//! Centerline extraction: 3D thinning plus branch-graph decomposition.

mod graph;
mod thinning;

pub use graph::{
    assign_generations, build_graph, estimate_diameters, extract_graph, terminal_branches, Branch,
    CenterlineGraph, Node, NodeKind,
};
pub use thinning::skeletonize;
