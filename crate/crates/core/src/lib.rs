//! Explanation subgraphs for GCN node classification on text-attributed
//! graphs, with a language model deciding which computation-tree nodes
//! support each prediction.

// Checks like `!(x > 0.0)` are written that way on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod gcn;
pub mod graph;
pub mod optim;
pub mod projector;
pub mod prompt;
pub mod backend;
pub mod explain;
pub mod eval;
pub mod synthetic;
