//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod check;
mod graph;
mod optim;

pub use check::{finite_diff_check, finite_diff_check_against};
pub use graph::{Gradients, Graph, NodeId};
pub use optim::{lr_schedule, OptimizerState};

pub(crate) use graph::{log_sum_exp, softplus};
