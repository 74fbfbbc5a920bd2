//! Central finite-difference verification of reverse-mode gradients.

use super::graph::{Gradients, Graph, NodeId};
use crate::error::{Error, Result};

/// Maximum relative error between the analytic gradient of the scalar `root`
/// and central differences, over every entry of every parameter.
///
/// The relative error of one entry is `|analytic − numeric| / max(1, |numeric|)`.
/// Detached nodes keep their cached values while perturbing, matching the
/// function the backward pass differentiates.
pub fn finite_diff_check(graph: &mut Graph, root: NodeId, eps: f64) -> Result<f64> {
    let grads = graph.backward(root)?;
    finite_diff_check_against(graph, root, &grads, eps)
}

/// Like [`finite_diff_check`], comparing against caller-supplied gradients.
pub fn finite_diff_check_against(graph: &mut Graph, root: NodeId, grads: &Gradients, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::InvalidArgument(format!("finite-difference step must lie in (0, 1e-3], got {eps}")));
    }
    if graph.value(root).numel() != 1 {
        return Err(Error::shape("finite_diff_check", "root must be scalar"));
    }
    let params: Vec<NodeId> = graph.params().to_vec();
    let mut worst: f64 = 0.0;
    for p in params {
        let original = graph.value(p).clone();
        let analytic = grads.wrt(graph, p);
        for j in 0..original.numel() {
            let mut plus = original.clone();
            plus.data_mut()[j] += eps;
            graph.set_leaf(p, plus);
            graph.replay(&[], true)?;
            let f_plus = graph.value(root).item()?;

            let mut minus = original.clone();
            minus.data_mut()[j] -= eps;
            graph.set_leaf(p, minus);
            graph.replay(&[], true)?;
            let f_minus = graph.value(root).item()?;

            graph.set_leaf(p, original.clone());
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let err = (analytic.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    graph.replay(&[], true)?;
    Ok(worst)
}
