//! Graph structure-feature co-refinement with differentiable Ollivier-Ricci
//! curvature, backward Ricci flow and gyrovector random features.

pub mod curvature;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod feature_map;
pub mod flow;
pub mod graph;
pub mod manifold;
pub mod nn;
pub mod refine;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::Graph;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
