use nalgebra::DVector;

use crate::belief::{softmax, BeliefState};
use crate::error::{Error, Result};
use crate::model::ProblemModel;
use crate::tree::{HistoryPath, TrajectoryTree};

/// `sum_z b(z) l(x, u, z)` at a belief state.
pub fn expected_running_cost(model: &dyn ProblemModel, s: &BeliefState, u: &DVector<f64>) -> f64 {
    let b = softmax(&s.beta.0);
    (0..b.len())
        .map(|z| b[z] * model.running_cost(&s.x, u, z))
        .sum()
}

/// `E_{z ~ b}[l_f(x, z)]` at a terminal belief state.
pub fn expected_final_cost(model: &dyn ProblemModel, s: &BeliefState) -> f64 {
    let b = softmax(&s.beta.0);
    (0..b.len()).map(|z| b[z] * model.final_cost(&s.x, z)).sum()
}

/// Expected cost of the tree: each node adds its segment's running cost
/// plus the belief-weighted cost of its branches; branches past the horizon
/// contribute the expected final cost at their outcome.
pub fn evaluate_tree_cost(model: &dyn ProblemModel, tree: &TrajectoryTree) -> Result<f64> {
    node_cost(model, tree, &HistoryPath::root())
}

pub fn node_cost(model: &dyn ProblemModel, tree: &TrajectoryTree, h: &HistoryPath) -> Result<f64> {
    let node = tree
        .node(h)
        .ok_or_else(|| Error::StructuralCorruption(format!("missing node \"{}\"", h.key())))?;
    let mut cost: f64 = node
        .states
        .iter()
        .zip(&node.controls)
        .map(|(s, u)| expected_running_cost(model, s, u))
        .sum();
    let last = node
        .states
        .last()
        .ok_or_else(|| Error::StructuralCorruption(format!("node \"{}\" is empty", h.key())))?;
    let b = softmax(&last.beta.0);
    for (z, outcome) in node.outcomes.iter().enumerate() {
        let branch = if tree.has_children(h) {
            node_cost(model, tree, &h.child(z))?
        } else {
            expected_final_cost(model, outcome)
        };
        cost += b[z] * branch;
    }
    Ok(cost)
}
